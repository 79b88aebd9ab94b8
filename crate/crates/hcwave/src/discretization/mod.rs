//! Space-time grid, discrete fields and traces, norms, and step operators.
//!
//! The cylinder `(0,1) x (0,T)` carries a uniform tensor grid with `ny`
//! cells in space and `nt` steps in time. Fields store all `(nt+1)(ny+1)`
//! nodal values time-major; boundary traces store one value per time level
//! on one lateral side.

pub mod norms;
pub mod operators;

use crate::error::{Error, Result};
use std::fmt;
use std::io::{BufRead, Write};

/// Default bound on `dt / dy`. The implicit step is unconditionally solvable
/// well beyond this, but the explicit flux part wants the classical margin.
pub const DEFAULT_CFL_RATIO: f64 = 0.4;

/// Relative slack applied to the CFL comparison so that grids sitting
/// exactly on the bound from decimal input survive rounding.
const CFL_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub ny: usize,
    pub nt: usize,
    pub t_final: f64,
    pub dy: f64,
    pub dt: f64,
}

impl Grid {
    /// Grid with the default CFL bound `dt <= 0.4 dy`.
    pub fn new(ny: usize, nt: usize, t_final: f64) -> Result<Self> {
        Self::with_cfl_ratio(ny, nt, t_final, DEFAULT_CFL_RATIO)
    }

    /// Grid with an explicit CFL ratio. Ratios up to 1 are stable for the
    /// fixed-domain stepper; the default leaves margin for moving-boundary
    /// coefficients.
    pub fn with_cfl_ratio(ny: usize, nt: usize, t_final: f64, ratio: f64) -> Result<Self> {
        if ny < 4 || nt < 4 {
            return Err(Error::InvalidParameter(format!(
                "grid needs ny >= 4 and nt >= 4, got ny={ny}, nt={nt}"
            )));
        }
        if !t_final.is_finite() || t_final <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "final time must be positive, got {t_final}"
            )));
        }
        if !ratio.is_finite() || ratio <= 0.0 || ratio > 1.0 {
            return Err(Error::InvalidParameter(format!(
                "CFL ratio must lie in (0, 1], got {ratio}"
            )));
        }
        let dy = 1.0 / ny as f64;
        let dt = t_final / nt as f64;
        let limit = ratio * dy;
        if dt > limit * (1.0 + CFL_SLACK) {
            let min_nt = (t_final / limit).ceil() as usize;
            return Err(Error::Cfl { dt, limit, min_nt });
        }
        Ok(Grid {
            ny,
            nt,
            t_final,
            dy,
            dt,
        })
    }

    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.dy
    }

    pub fn t(&self, n: usize) -> f64 {
        // Hit t_final exactly at the last level.
        if n == self.nt {
            self.t_final
        } else {
            n as f64 * self.dt
        }
    }

    /// Nodes per time level.
    pub fn nodes(&self) -> usize {
        self.ny + 1
    }

    /// Time levels.
    pub fn levels(&self) -> usize {
        self.nt + 1
    }
}

/// Lateral side of the cylinder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Fixed edge `y = 0`.
    Gamma0,
    /// Moving edge `y = 1` (the image of `x = alpha(t)`).
    GammaAlpha,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Gamma0 => write!(f, "gamma0"),
            Side::GammaAlpha => write!(f, "gamma_alpha"),
        }
    }
}

impl Side {
    pub fn opposite(&self) -> Side {
        match self {
            Side::Gamma0 => Side::GammaAlpha,
            Side::GammaAlpha => Side::Gamma0,
        }
    }

    pub fn parse(s: &str) -> Result<Side> {
        match s {
            "gamma0" => Ok(Side::Gamma0),
            "gamma_alpha" => Ok(Side::GammaAlpha),
            other => Err(Error::Parse(format!("unknown side '{other}'"))),
        }
    }
}

/// Nodal values on the full space-time grid, time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub ny: usize,
    pub nt: usize,
    pub t_final: f64,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Grid) -> Self {
        Field {
            ny: grid.ny,
            nt: grid.nt,
            t_final: grid.t_final,
            data: vec![0.0; grid.levels() * grid.nodes()],
        }
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut out = Field::zeros(grid);
        for n in 0..=grid.nt {
            let t = grid.t(n);
            for j in 0..=grid.ny {
                out.set(n, j, f(grid.y(j), t));
            }
        }
        out
    }

    pub fn matches(&self, grid: &Grid) -> bool {
        self.ny == grid.ny && self.nt == grid.nt && (self.t_final - grid.t_final).abs() <= 1e-12
    }

    pub fn level(&self, n: usize) -> &[f64] {
        let w = self.ny + 1;
        &self.data[n * w..(n + 1) * w]
    }

    pub fn level_mut(&mut self, n: usize) -> &mut [f64] {
        let w = self.ny + 1;
        &mut self.data[n * w..(n + 1) * w]
    }

    pub fn at(&self, n: usize, j: usize) -> f64 {
        self.data[n * (self.ny + 1) + j]
    }

    pub fn set(&mut self, n: usize, j: usize, v: f64) {
        self.data[n * (self.ny + 1) + j] = v;
    }

    pub fn add_at(&mut self, n: usize, j: usize, v: f64) {
        self.data[n * (self.ny + 1) + j] += v;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Trace of the field on one lateral side.
    pub fn boundary_trace(&self, side: Side) -> BoundaryTrace {
        let j = match side {
            Side::Gamma0 => 0,
            Side::GammaAlpha => self.ny,
        };
        BoundaryTrace {
            side,
            values: (0..=self.nt).map(|n| self.at(n, j)).collect(),
        }
    }
}

/// Values of a field on one lateral side, one per time level.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryTrace {
    pub side: Side,
    pub values: Vec<f64>,
}

impl BoundaryTrace {
    pub fn zeros(grid: &Grid, side: Side) -> Self {
        BoundaryTrace {
            side,
            values: vec![0.0; grid.levels()],
        }
    }

    pub fn from_fn(grid: &Grid, side: Side, mut f: impl FnMut(f64) -> f64) -> Self {
        BoundaryTrace {
            side,
            values: (0..=grid.nt).map(|n| f(grid.t(n))).collect(),
        }
    }
}

/// Terminal position/velocity pair on one time level, all nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct StatePair {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl StatePair {
    pub fn zeros(grid: &Grid) -> Self {
        StatePair {
            position: vec![0.0; grid.nodes()],
            velocity: vec![0.0; grid.nodes()],
        }
    }
}

/// Format one value with 17 significant digits; round-trips every f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl Field {
    /// Columnar text: header line, then one whitespace-separated row per
    /// time level. Round-trips bit-exactly.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "# Ny={} Nt={} T={}", self.ny, self.nt, fmt_f64(self.t_final))?;
        for n in 0..=self.nt {
            let row: Vec<String> = self.level(n).iter().map(|v| fmt_f64(*v)).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl BufRead) -> Result<Field> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        let (ny, nt, t_final) = parse_field_header(&header)?;
        let mut data = Vec::with_capacity((nt + 1) * (ny + 1));
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = parse_row(&line)?;
            if row.len() != ny + 1 {
                return Err(Error::Parse(format!(
                    "row {idx} has {} values, expected {}",
                    row.len(),
                    ny + 1
                )));
            }
            data.extend_from_slice(&row);
        }
        if data.len() != (nt + 1) * (ny + 1) {
            return Err(Error::Parse(format!(
                "field has {} values, expected {}",
                data.len(),
                (nt + 1) * (ny + 1)
            )));
        }
        Ok(Field {
            ny,
            nt,
            t_final,
            data,
        })
    }
}

impl BoundaryTrace {
    pub fn write_to(&self, w: &mut impl Write, grid: &Grid) -> Result<()> {
        writeln!(
            w,
            "# Nt={} T={} side={}",
            grid.nt,
            fmt_f64(grid.t_final),
            self.side
        )?;
        for v in &self.values {
            writeln!(w, "{}", fmt_f64(*v))?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl BufRead) -> Result<BoundaryTrace> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        let kv = parse_header_pairs(&header)?;
        let nt: usize = get_key(&kv, "Nt")?;
        let side = Side::parse(&get_key_str(&kv, "side")?)?;
        let mut values = Vec::with_capacity(nt + 1);
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            values.push(parse_f64(line.trim())?);
        }
        if values.len() != nt + 1 {
            return Err(Error::Parse(format!(
                "trace has {} values, expected {}",
                values.len(),
                nt + 1
            )));
        }
        Ok(BoundaryTrace { side, values })
    }
}

impl crate::geometry::PhysicalData {
    /// Columnar text: `# n=<count>` header, then `u0 u1` per row.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "# n={}", self.len())?;
        for j in 0..self.len() {
            writeln!(w, "{} {}", fmt_f64(self.u0[j]), fmt_f64(self.u1[j]))?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl BufRead) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        let kv = parse_header_pairs(&header)?;
        let n: usize = get_key(&kv, "n")?;
        let mut u0 = Vec::with_capacity(n);
        let mut u1 = Vec::with_capacity(n);
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = parse_row(&line)?;
            if row.len() != 2 {
                return Err(Error::Parse(format!(
                    "data row has {} values, expected 2",
                    row.len()
                )));
            }
            u0.push(row[0]);
            u1.push(row[1]);
        }
        if u0.len() != n {
            return Err(Error::Parse(format!(
                "data file has {} rows, expected {n}",
                u0.len()
            )));
        }
        crate::geometry::PhysicalData::new(u0, u1)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Parse(format!("bad float '{s}'")))
}

fn parse_row(line: &str) -> Result<Vec<f64>> {
    line.split_whitespace().map(parse_f64).collect()
}

fn parse_header_pairs(header: &str) -> Result<Vec<(String, String)>> {
    let body = header
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse("missing '#' header".into()))?;
    let mut out = Vec::new();
    for tok in body.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad header token '{tok}'")))?;
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn get_key_str(kv: &[(String, String)], key: &str) -> Result<String> {
    kv.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.clone())
        .ok_or_else(|| Error::Parse(format!("header missing '{key}'")))
}

fn get_key<T: std::str::FromStr>(kv: &[(String, String)], key: &str) -> Result<T> {
    get_key_str(kv, key)?
        .parse::<T>()
        .map_err(|_| Error::Parse(format!("bad value for header key '{key}'")))
}

fn parse_field_header(header: &str) -> Result<(usize, usize, f64)> {
    let kv = parse_header_pairs(header)?;
    Ok((
        get_key(&kv, "Ny")?,
        get_key(&kv, "Nt")?,
        get_key(&kv, "T")?,
    ))
}
