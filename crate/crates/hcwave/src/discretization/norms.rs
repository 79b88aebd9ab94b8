//! Discrete norms on spatial slices and boundary traces.
//!
//! Spatial slices live on all `ny + 1` nodes. The `L2` norm uses the
//! trapezoid rule, `H10` sums forward-difference quotients (the slice is
//! read as an `H^1_0` element through its interior values), and `HMinus1`
//! is the dual norm realized by one Dirichlet-Laplacian solve:
//! `|w|_{-1}^2 = <w, u>` with `-u'' = w`, `u(0) = u(1) = 0`.

use super::operators::Tridiag;
use super::Grid;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpaceNorm {
    L2,
    H10,
    HMinus1,
}

/// Trapezoid weights for `n + 1` uniformly spaced samples of spacing `h`.
pub fn trap_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n + 1];
    w[0] = 0.5 * h;
    w[n] = 0.5 * h;
    w
}

fn check_slice(v: &[f64], grid: &Grid) -> Result<()> {
    if v.len() != grid.nodes() {
        return Err(Error::Shape(format!(
            "slice has {} values, grid has {} nodes",
            v.len(),
            grid.nodes()
        )));
    }
    Ok(())
}

/// Trapezoid `L2(0,1)` norm of a spatial slice.
pub fn l2_slice(v: &[f64], grid: &Grid) -> Result<f64> {
    check_slice(v, grid)?;
    let mut s = 0.0;
    for (j, w) in trap_weights(grid.ny, grid.dy).iter().enumerate() {
        s += w * v[j] * v[j];
    }
    Ok(s.sqrt())
}

/// `H^1_0` seminorm: root sum of squared forward difference quotients.
pub fn h10_slice(v: &[f64], grid: &Grid) -> Result<f64> {
    check_slice(v, grid)?;
    let mut s = 0.0;
    for j in 0..grid.ny {
        let q = (v[j + 1] - v[j]) / grid.dy;
        s += q * q * grid.dy;
    }
    Ok(s.sqrt())
}

/// Dirichlet Laplacian solve on interior nodes: `(1/dy^2) tri(-1,2,-1) u = w`.
pub fn dirichlet_laplacian_solve(w_int: &[f64], dy: f64) -> Vec<f64> {
    let ni = w_int.len();
    let s = 1.0 / (dy * dy);
    let tri = Tridiag::new(vec![-s; ni], vec![2.0 * s; ni], vec![-s; ni]);
    tri.solve(w_int)
}

/// Discrete `H^{-1}(0,1)` norm of a slice (interior values pair with
/// `H^1_0`; boundary values are ignored).
pub fn hminus1_slice(v: &[f64], grid: &Grid) -> Result<f64> {
    check_slice(v, grid)?;
    let w = &v[1..grid.ny];
    let u = dirichlet_laplacian_solve(w, grid.dy);
    let mut s = 0.0;
    for j in 0..w.len() {
        s += grid.dy * w[j] * u[j];
    }
    // The pairing is SPD up to rounding; clamp tiny negative noise.
    Ok(s.max(0.0).sqrt())
}

pub fn norm_slice(kind: SpaceNorm, v: &[f64], grid: &Grid) -> Result<f64> {
    match kind {
        SpaceNorm::L2 => l2_slice(v, grid),
        SpaceNorm::H10 => h10_slice(v, grid),
        SpaceNorm::HMinus1 => hminus1_slice(v, grid),
    }
}

/// Trapezoid-in-time `L2(0,T)` norm of a boundary trace.
pub fn l2_trace(values: &[f64], grid: &Grid) -> Result<f64> {
    if values.len() != grid.levels() {
        return Err(Error::Shape(format!(
            "trace has {} values, grid has {} levels",
            values.len(),
            grid.levels()
        )));
    }
    let mut s = 0.0;
    for (n, w) in trap_weights(grid.nt, grid.dt).iter().enumerate() {
        s += w * values[n] * values[n];
    }
    Ok(s.sqrt())
}

/// Trapezoid-in-time inner product of two traces.
pub fn trace_inner(a: &[f64], b: &[f64], grid: &Grid) -> f64 {
    debug_assert_eq!(a.len(), grid.levels());
    debug_assert_eq!(b.len(), grid.levels());
    let mut s = 0.0;
    for (n, w) in trap_weights(grid.nt, grid.dt).iter().enumerate() {
        s += w * a[n] * b[n];
    }
    s
}
