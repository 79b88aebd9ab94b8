//! Per-level step operators for the transformed wave equation and its
//! formal adjoint, plus the tridiagonal workhorse behind both.
//!
//! On the cylinder the equation reads `z_tt + L z = S` with
//!
//! `L z = -[(beta/alpha) z_y]_y + (gamma/alpha) z_ty + (tau/alpha) z_y`.
//!
//! Time stepping treats the flux and first-order terms explicitly and the
//! mixed `z_ty` term implicitly by centering it across levels `n-1, n+1`,
//! which yields one constant-diagonal tridiagonal solve per step. The
//! adjoint march discretizes `L* p = -[(beta/alpha) p_y]_y +
//! [(gamma/alpha) p]_yt - [(tau/alpha) p]_y` the same way; its tridiagonal
//! factors carry the neighbor-node coefficients that the product rule
//! produces.

use super::{Field, Grid, Side};
use crate::error::{Error, Result};
use crate::geometry::BoundaryProfile;

/// Tridiagonal matrix in banded storage; `sub[0]` and `sup[n-1]` are unused.
#[derive(Clone, Debug)]
pub struct Tridiag {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
}

impl Tridiag {
    pub fn new(sub: Vec<f64>, diag: Vec<f64>, sup: Vec<f64>) -> Self {
        assert_eq!(sub.len(), diag.len());
        assert_eq!(sup.len(), diag.len());
        assert!(!diag.is_empty());
        Tridiag { sub, diag, sup }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Thomas elimination. The step operators assembled below are strictly
    /// diagonally dominant, so a vanishing pivot means a programming error,
    /// not a data error: fail hard.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.len();
        assert_eq!(rhs.len(), n);
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut piv = self.diag[0];
        assert!(piv.abs() > 1e-300, "singular tridiagonal system");
        c[0] = self.sup[0] / piv;
        d[0] = rhs[0] / piv;
        for i in 1..n {
            piv = self.diag[i] - self.sub[i] * c[i - 1];
            assert!(piv.abs() > 1e-300, "singular tridiagonal system");
            if i < n - 1 {
                c[i] = self.sup[i] / piv;
            }
            d[i] = (rhs[i] - self.sub[i] * d[i - 1]) / piv;
        }
        let mut x = d;
        for i in (0..n - 1).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        x
    }

    /// Solve against the transposed matrix (the sub/super diagonals swap
    /// across the main diagonal).
    pub fn solve_transposed(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut sub = vec![0.0; n];
        let mut sup = vec![0.0; n];
        sub[1..n].copy_from_slice(&self.sup[..n - 1]);
        sup[..n - 1].copy_from_slice(&self.sub[1..n]);
        Tridiag::new(sub, self.diag.clone(), sup).solve(rhs)
    }

    /// Dense application, for cross-checks.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        assert_eq!(x.len(), n);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.sub[i] * x[i - 1];
            }
            if i + 1 < n {
                s += self.sup[i] * x[i + 1];
            }
            y[i] = s;
        }
        y
    }
}

/// Profile-dependent coefficient tables sampled on the grid.
#[derive(Clone, Debug)]
pub struct CoeffTable {
    pub alpha: Vec<f64>,
    pub dalpha: Vec<f64>,
    pub ddalpha: Vec<f64>,
    /// `(beta/alpha)(y_{i+1/2}, t_n)`, `i = 0..ny-1`.
    pub bh: Vec<Vec<f64>>,
    /// `(gamma/alpha)(y_j, t_n)`, all nodes.
    pub g: Vec<Vec<f64>>,
    /// `(tau/alpha)(y_j, t_n)`, all nodes.
    pub r: Vec<Vec<f64>>,
    /// `d/dt (gamma/alpha)(y_j, t)` at `t = T`, all nodes; needed when the
    /// adjoint march starts from nonzero terminal data.
    pub dg_dt_final: Vec<f64>,
}

/// One-step maps for both marching directions on a fixed grid/profile pair.
#[derive(Clone, Debug)]
pub struct StepOperators {
    pub grid: Grid,
    pub coeffs: CoeffTable,
    /// Index `n-1`: implicit factor of the forward step centered at level
    /// `n`, unknown level `n+1`; `n = 1..=nt-1`.
    fwd: Vec<Tridiag>,
    /// Index `n-1`: implicit factor of the adjoint step centered at level
    /// `n`, unknown level `n-1`; `n = 1..=nt-1`.
    bwd: Vec<Tridiag>,
}

/// Direction selector for [`StepOperators::tri`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepDirection {
    /// March the state equation forward in time.
    Forward,
    /// March the formal-adjoint equation backward in time.
    BackwardAdjoint,
}

/// Sample all coefficient tables and factor the per-level tridiagonal
/// systems for both directions.
pub fn assemble_step_operators(
    profile: &BoundaryProfile,
    grid: &Grid,
) -> Result<StepOperators> {
    let nt = grid.nt;
    let ny = grid.ny;
    let mut alpha = Vec::with_capacity(nt + 1);
    let mut dalpha = Vec::with_capacity(nt + 1);
    let mut ddalpha = Vec::with_capacity(nt + 1);
    let mut bh = Vec::with_capacity(nt + 1);
    let mut g = Vec::with_capacity(nt + 1);
    let mut r = Vec::with_capacity(nt + 1);
    for n in 0..=nt {
        let p = profile.eval(grid.t(n))?;
        alpha.push(p.alpha);
        dalpha.push(p.dalpha);
        ddalpha.push(p.ddalpha);
        let a2 = p.alpha * p.alpha;
        let mut bh_n = Vec::with_capacity(ny);
        for i in 0..ny {
            let yh = (i as f64 + 0.5) * grid.dy;
            bh_n.push((1.0 - (p.dalpha * yh).powi(2)) / a2);
        }
        bh.push(bh_n);
        let mut g_n = Vec::with_capacity(ny + 1);
        let mut r_n = Vec::with_capacity(ny + 1);
        for j in 0..=ny {
            let y = grid.y(j);
            g_n.push(-2.0 * p.dalpha * y / p.alpha);
            r_n.push(-p.ddalpha * y / p.alpha);
        }
        g.push(g_n);
        r.push(r_n);
    }
    let pt = profile.eval(grid.t_final)?;
    let dg_dt_final: Vec<f64> = (0..=ny)
        .map(|j| {
            let y = grid.y(j);
            -2.0 * y * (pt.ddalpha * pt.alpha - pt.dalpha * pt.dalpha) / (pt.alpha * pt.alpha)
        })
        .collect();

    let scale = grid.dt / (4.0 * grid.dy);
    let ni = ny - 1;
    let mut fwd = Vec::with_capacity(nt.saturating_sub(1));
    let mut bwd = Vec::with_capacity(nt.saturating_sub(1));
    for n in 1..nt {
        let mut sub = vec![0.0; ni];
        let mut sup = vec![0.0; ni];
        for j in 1..ny {
            let c = scale * g[n][j];
            if c.abs() >= 0.49 {
                return Err(Error::InvalidParameter(format!(
                    "mixed-term weight {c:.3} at level {n} breaks diagonal dominance; \
                     the profile speed is too large for this grid"
                )));
            }
            sub[j - 1] = -c;
            sup[j - 1] = c;
        }
        fwd.push(Tridiag::new(sub, vec![1.0; ni], sup));

        let mut sub = vec![0.0; ni];
        let mut sup = vec![0.0; ni];
        for j in 1..ny {
            // Adjoint product rule: the implicit factor couples through the
            // neighbor-node coefficients at the unknown level n-1.
            let cm = scale * g[n - 1][j - 1];
            let cp = scale * g[n - 1][j + 1];
            if cm.abs() + cp.abs() >= 0.98 {
                return Err(Error::InvalidParameter(format!(
                    "adjoint mixed-term weights at level {n} break diagonal dominance"
                )));
            }
            sub[j - 1] = cm;
            sup[j - 1] = -cp;
        }
        bwd.push(Tridiag::new(sub, vec![1.0; ni], sup));
    }

    Ok(StepOperators {
        grid: *grid,
        coeffs: CoeffTable {
            alpha,
            dalpha,
            ddalpha,
            bh,
            g,
            r,
            dg_dt_final,
        },
        fwd,
        bwd,
    })
}

impl StepOperators {
    /// Implicit tridiagonal factor of the step centered at level `n`
    /// (`1 <= n <= nt-1`) in the requested direction.
    pub fn tri(&self, direction: StepDirection, n: usize) -> &Tridiag {
        match direction {
            StepDirection::Forward => &self.fwd[n - 1],
            StepDirection::BackwardAdjoint => &self.bwd[n - 1],
        }
    }

    /// Mixed-term coupling weight `c_j = dt/(4 dy) * (gamma/alpha)(y_j, t_n)`.
    pub fn couple(&self, n: usize, j: usize) -> f64 {
        self.grid.dt / (4.0 * self.grid.dy) * self.coeffs.g[n][j]
    }
}

/// One-sided second-order `d/dy` of a field on a lateral side, one value
/// per time level.
pub fn normal_derivative_trace(field: &Field, grid: &Grid, side: Side) -> Result<Vec<f64>> {
    if !field.matches(grid) {
        return Err(Error::Shape(
            "field does not match the grid for trace differentiation".into(),
        ));
    }
    let ny = grid.ny;
    let h = 2.0 * grid.dy;
    let mut out = Vec::with_capacity(grid.levels());
    for n in 0..=grid.nt {
        let z = field.level(n);
        let d = match side {
            Side::Gamma0 => (-3.0 * z[0] + 4.0 * z[1] - z[2]) / h,
            Side::GammaAlpha => (3.0 * z[ny] - 4.0 * z[ny - 1] + z[ny - 2]) / h,
        };
        out.push(d);
    }
    Ok(out)
}
