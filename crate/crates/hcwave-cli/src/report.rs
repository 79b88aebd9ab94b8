//! Deterministic artifact writing: CSV tables, field and trace dumps, and
//! a run manifest tying every output to the exact configuration bytes.
//!
//! All files use LF line endings and 17-significant-digit floats, and the
//! manifest carries no timestamps, so a rerun with the same configuration
//! and seed reproduces every artifact byte for byte.

use hcwave::discretization::fmt_f64;
use hcwave::Result;
use sha2::{Digest, Sha256};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub struct Reporter {
    outdir: PathBuf,
    artifacts: Vec<String>,
}

impl Reporter {
    pub fn new(outdir: &Path) -> Result<Self> {
        fs::create_dir_all(outdir)?;
        Ok(Reporter {
            outdir: outdir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.outdir.join(name)
    }

    /// Open an artifact for writing and record it for the manifest.
    pub fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let f = File::create(self.path(name))?;
        self.artifacts.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    pub fn write_csv(&mut self, name: &str, header: &str, rows: &[Vec<String>]) -> Result<()> {
        let mut w = self.create(name)?;
        writeln!(w, "{header}")?;
        for row in rows {
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Seal the run: the manifest lists the tool version, the subcommand,
    /// the sha256 of the configuration bytes, the effective seed, and every
    /// artifact in write order.
    pub fn finish(mut self, command: &str, config_bytes: &[u8], seed: u64) -> Result<()> {
        let digest = Sha256::digest(config_bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        let names = self.artifacts.clone();
        let mut w = self.create("manifest.txt")?;
        writeln!(w, "tool = hcwave {}", env!("CARGO_PKG_VERSION"))?;
        writeln!(w, "command = {command}")?;
        writeln!(w, "config_sha256 = {hex}")?;
        writeln!(w, "seed = {seed}")?;
        for name in &names {
            writeln!(w, "artifact = {name}")?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn cell(v: f64) -> String {
    fmt_f64(v)
}

pub fn cell_bool(b: bool) -> String {
    b.to_string()
}

pub fn cell_usize(n: usize) -> String {
    n.to_string()
}

/// CSV-quote free text: wrap in double quotes, double any inner quotes.
pub fn quote(s: &str) -> String {
    let mut q = String::with_capacity(s.len() + 2);
    q.push('"');
    for ch in s.chars() {
        if ch == '"' {
            q.push('"');
        }
        q.push(ch);
    }
    q.push('"');
    q
}
