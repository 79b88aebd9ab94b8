//! Run configuration: a TOML file with one-level sections plus a small
//! analytic mini-language for initial data, targets, and traces.
//!
//! Unknown keys anywhere in the file are rejected so typos fail loudly
//! instead of silently falling back to defaults. Spatial entries accept
//! `zero`, `sin:<n>[:<amp>]`, `poly:<c0>,<c1>,...`, or `file:<path>`;
//! time traces use `sin_t` and `poly_t` with the same shapes. Relative
//! file paths resolve against the directory of the config file.

use hcwave::discretization::{BoundaryTrace, Field, Grid, Side};
use hcwave::follower::{CgOptions, FixedPointOptions};
use hcwave::geometry::BoundaryProfile;
use hcwave::leader::LeaderOptions;
use hcwave::{Error, Result};
use serde::Deserialize;
use std::f64::consts::PI;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub profile: ProfileSection,
    pub grid: GridSection,
    pub control: ControlSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl Config {
    /// Parse a config file, returning the raw bytes alongside so runs can
    /// be fingerprinted by the exact input.
    pub fn load(path: &Path) -> Result<(Config, Vec<u8>)> {
        let bytes = fs::read(path)
            .map_err(|e| Error::Parse(format!("cannot read config {}: {e}", path.display())))?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| Error::Parse(format!("config {} is not UTF-8", path.display())))?;
        let cfg: Config =
            toml::from_str(&text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        Ok((cfg, bytes))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    /// `affine`, `arctan_drift`, or `constant`.
    pub kind: String,
    /// Affine slope.
    pub k: Option<f64>,
    /// Arctan drift divisor.
    pub c: Option<f64>,
    pub m: Option<f64>,
    pub big_m: Option<f64>,
}

impl ProfileSection {
    pub fn build(&self) -> Result<BoundaryProfile> {
        let window = || -> Result<(f64, f64)> {
            match (self.m, self.big_m) {
                (Some(m), Some(mm)) => Ok((m, mm)),
                _ => Err(Error::InvalidParameter(format!(
                    "the {} profile needs both m and big_m",
                    self.kind
                ))),
            }
        };
        let reject = |key: &str, set: bool| -> Result<()> {
            if set {
                return Err(Error::InvalidParameter(format!(
                    "key {key} does not apply to the {} profile",
                    self.kind
                )));
            }
            Ok(())
        };
        match self.kind.as_str() {
            "affine" => {
                reject("c", self.c.is_some())?;
                let (m, mm) = window()?;
                let k = self.k.ok_or_else(|| {
                    Error::InvalidParameter("the affine profile needs the slope k".into())
                })?;
                BoundaryProfile::affine(k, m, mm)
            }
            "arctan_drift" => {
                reject("k", self.k.is_some())?;
                let (m, mm) = window()?;
                let c = self.c.ok_or_else(|| {
                    Error::InvalidParameter("the arctan_drift profile needs the divisor c".into())
                })?;
                BoundaryProfile::arctan_drift(c, m, mm)
            }
            "constant" => {
                reject("k", self.k.is_some())?;
                reject("c", self.c.is_some())?;
                reject("m", self.m.is_some())?;
                reject("big_m", self.big_m.is_some())?;
                Ok(BoundaryProfile::constant())
            }
            other => Err(Error::InvalidParameter(format!(
                "unknown profile kind {other:?}; expected affine, arctan_drift, or constant"
            ))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub ny: usize,
    pub nt: usize,
    pub t_final: f64,
    pub cfl_ratio: Option<f64>,
}

impl GridSection {
    pub fn build(&self) -> Result<Grid> {
        match self.cfl_ratio {
            Some(r) => Grid::with_cfl_ratio(self.ny, self.nt, self.t_final, r),
            None => Grid::new(self.ny, self.nt, self.t_final),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    /// `gamma0` or `gamma_alpha`.
    pub side: String,
    pub penalty: f64,
    /// Admissibility radius for leader runs.
    pub eps: Option<f64>,
}

impl ControlSection {
    pub fn side(&self) -> Result<Side> {
        Side::parse(&self.side)
    }

    pub fn eps(&self) -> f64 {
        self.eps.unwrap_or(1e-2)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Initial position on the cylinder.
    pub z0: String,
    /// Initial velocity on the cylinder.
    pub z1: String,
    /// Tracking target over the whole cylinder.
    pub target: String,
    /// Terminal position target (leader runs).
    pub v0: String,
    /// Terminal velocity target (leader runs).
    pub v1: String,
    /// Known leader trace for simulate/follower runs.
    pub leader: String,
}

impl Default for DataSection {
    fn default() -> Self {
        let zero = || "zero".to_string();
        DataSection {
            z0: zero(),
            z1: zero(),
            target: zero(),
            v0: zero(),
            v1: zero(),
            leader: zero(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub cg_tol: Option<f64>,
    pub cg_max_iter: Option<usize>,
    pub fixed_point_tol: Option<f64>,
    pub fixed_point_max_iter: Option<usize>,
    pub dual_tol: Option<f64>,
    pub dual_max_iter: Option<usize>,
    pub gap_tol: Option<f64>,
    pub seed: Option<u64>,
}

impl SolverSection {
    pub fn cg(&self) -> CgOptions {
        let mut o = CgOptions::default();
        if let Some(v) = self.cg_tol {
            o.tol = v;
        }
        if let Some(v) = self.cg_max_iter {
            o.max_iter = v;
        }
        o
    }

    pub fn fixed_point(&self) -> FixedPointOptions {
        let mut o = FixedPointOptions::default();
        if let Some(v) = self.fixed_point_tol {
            o.tol = v;
        }
        if let Some(v) = self.fixed_point_max_iter {
            o.max_iter = v;
        }
        o
    }

    /// Leader options with the effective seed stamped in by the caller.
    pub fn leader(&self) -> LeaderOptions {
        let mut o = LeaderOptions {
            cg: self.cg(),
            fixed_point: self.fixed_point(),
            ..LeaderOptions::default()
        };
        if let Some(v) = self.dual_tol {
            o.tol = v;
        }
        if let Some(v) = self.dual_max_iter {
            o.max_iter = v;
        }
        if let Some(v) = self.gap_tol {
            o.gap_tol = v;
        }
        o
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// `leader` (default) or `follower`.
    pub stage: Option<String>,
    /// Penalty values; empty means the configured control penalty.
    pub penalty: Vec<f64>,
    /// Admissibility radii; empty means the configured eps.
    pub eps: Vec<f64>,
}

fn split_spec(spec: &str) -> (&str, Option<&str>) {
    match spec.split_once(':') {
        Some((head, rest)) => (head, Some(rest)),
        None => (spec, None),
    }
}

fn whitelist_error(spec: &str, extra: &str) -> Error {
    Error::Parse(format!(
        "unknown data spec {spec:?}; expected zero, sin{extra}:<n>[:<amp>], \
         poly{extra}:<c0>,<c1>,..., or file:<path>"
    ))
}

fn no_tail(spec: &str, rest: Option<&str>) -> Result<()> {
    if rest.is_some() {
        return Err(Error::Parse(format!("spec {spec:?} takes no arguments")));
    }
    Ok(())
}

fn sine_params(spec: &str, rest: Option<&str>) -> Result<(f64, f64)> {
    let rest = rest.ok_or_else(|| {
        Error::Parse(format!("spec {spec:?} needs a mode number, like sin:1"))
    })?;
    let (n_str, amp_str) = match rest.split_once(':') {
        Some((a, b)) => (a, Some(b)),
        None => (rest, None),
    };
    let n: u32 = n_str
        .parse()
        .map_err(|_| Error::Parse(format!("bad mode number {n_str:?} in {spec:?}")))?;
    if n == 0 {
        return Err(Error::Parse(format!("mode number in {spec:?} must be >= 1")));
    }
    let amp = match amp_str {
        Some(s) => s
            .parse()
            .map_err(|_| Error::Parse(format!("bad amplitude {s:?} in {spec:?}")))?,
        None => 1.0,
    };
    Ok((n as f64, amp))
}

fn poly_coeffs(spec: &str, rest: Option<&str>) -> Result<Vec<f64>> {
    let rest = rest.ok_or_else(|| {
        Error::Parse(format!("spec {spec:?} needs coefficients, like poly:0,1,-1"))
    })?;
    rest.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad coefficient {s:?} in {spec:?}")))
        })
        .collect()
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn resolve(base: &Path, rest: Option<&str>, spec: &str) -> Result<PathBuf> {
    let rest = rest.ok_or_else(|| Error::Parse(format!("spec {spec:?} needs a path")))?;
    let p = Path::new(rest);
    Ok(if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    })
}

fn open_reader(path: &Path) -> Result<BufReader<fs::File>> {
    let f = fs::File::open(path)
        .map_err(|e| Error::Parse(format!("cannot open data file {}: {e}", path.display())))?;
    Ok(BufReader::new(f))
}

/// One value per node of a spatial slice.
pub fn spatial_slice(spec: &str, grid: &Grid, base: &Path) -> Result<Vec<f64>> {
    let spec = spec.trim();
    let (head, rest) = split_spec(spec);
    match head {
        "zero" => {
            no_tail(spec, rest)?;
            Ok(vec![0.0; grid.nodes()])
        }
        "sin" => {
            let (n, amp) = sine_params(spec, rest)?;
            Ok((0..grid.nodes())
                .map(|j| amp * (n * PI * grid.y(j)).sin())
                .collect())
        }
        "poly" => {
            let cs = poly_coeffs(spec, rest)?;
            Ok((0..grid.nodes()).map(|j| horner(&cs, grid.y(j))).collect())
        }
        "file" => {
            let path = resolve(base, rest, spec)?;
            let values = read_column(&path)?;
            if values.len() != grid.nodes() {
                return Err(Error::Parse(format!(
                    "data file {} has {} values, expected {}",
                    path.display(),
                    values.len(),
                    grid.nodes()
                )));
            }
            Ok(values)
        }
        _ => Err(whitelist_error(spec, "")),
    }
}

/// Tracking target over the full cylinder; analytic specs are constant in
/// time, `file:` loads a stored field of matching shape.
pub fn target_field(spec: &str, grid: &Grid, base: &Path) -> Result<Field> {
    let spec = spec.trim();
    let (head, rest) = split_spec(spec);
    if head == "file" {
        let path = resolve(base, rest, spec)?;
        let field = Field::read_from(&mut open_reader(&path)?)?;
        if !field.matches(grid) {
            return Err(Error::Parse(format!(
                "target field {} does not match the grid",
                path.display()
            )));
        }
        return Ok(field);
    }
    let slice = spatial_slice(spec, grid, base)?;
    let mut field = Field::zeros(grid);
    for n in 0..grid.levels() {
        field.level_mut(n).copy_from_slice(&slice);
    }
    Ok(field)
}

/// One value per time level of a boundary trace.
pub fn time_trace(spec: &str, grid: &Grid, base: &Path) -> Result<Vec<f64>> {
    let spec = spec.trim();
    let (head, rest) = split_spec(spec);
    match head {
        "zero" => {
            no_tail(spec, rest)?;
            Ok(vec![0.0; grid.levels()])
        }
        "sin_t" => {
            let (n, amp) = sine_params(spec, rest)?;
            Ok((0..grid.levels())
                .map(|l| amp * (n * PI * grid.t(l) / grid.t_final).sin())
                .collect())
        }
        "poly_t" => {
            let cs = poly_coeffs(spec, rest)?;
            Ok((0..grid.levels()).map(|l| horner(&cs, grid.t(l))).collect())
        }
        "file" => {
            let path = resolve(base, rest, spec)?;
            let trace = BoundaryTrace::read_from(&mut open_reader(&path)?)?;
            if trace.values.len() != grid.levels() {
                return Err(Error::Parse(format!(
                    "trace file {} has {} values, expected {}",
                    path.display(),
                    trace.values.len(),
                    grid.levels()
                )));
            }
            Ok(trace.values)
        }
        _ => Err(whitelist_error(spec, "_t")),
    }
}

fn read_column(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read data file {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(
            line.parse()
                .map_err(|_| Error::Parse(format!("bad value {line:?} in {}", path.display())))?,
        );
    }
    Ok(out)
}
