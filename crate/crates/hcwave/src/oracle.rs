//! Brute-force ground truth on small grids: dense assembly of the linear
//! maps by unit-impulse columns, direct normal-equation solves for the
//! follower, dense transposes in the dual metrics, finite-difference
//! gradients, and exact-rational threshold evaluation.
//!
//! Everything here is deliberately naive (dense factorizations, exact
//! arithmetic, impulse-per-column assembly) so that the fast matrix-free
//! paths can be certified against an independent route. A size guard keeps
//! dense work at desk scale.

use crate::discretization::norms::trap_weights;
use crate::discretization::{fmt_f64, Field, Grid, Side};
use crate::error::{Error, Result};
use crate::follower::{ControlSetup, FollowerProblem};
use crate::leader::{DualVariable, LeaderContext};
use crate::par;
use crate::wave_solver::{apply_transposed_forward, terminal_state, AdjointSeed};
use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Dense assembly refuses grids with more than this many cells.
pub const MAX_DENSE_CELLS: usize = 10_000;

pub fn dense_size_guard(grid: &Grid) -> Result<()> {
    let cells = grid.ny * grid.nt;
    if cells > MAX_DENSE_CELLS {
        return Err(Error::Guard(format!(
            "dense oracle limited to {MAX_DENSE_CELLS} cells, grid has {cells}"
        )));
    }
    Ok(())
}

fn unit_trace(levels: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; levels];
    v[n] = 1.0;
    v
}

/// Dense control-to-state map: column `n` is the flattened trajectory of a
/// unit impulse at time level `n` on the actuated side, zero data.
pub fn dense_control_to_state(setup: &ControlSetup) -> Result<DMatrix<f64>> {
    let grid = setup.ops.grid;
    dense_size_guard(&grid)?;
    setup.validate()?;
    let cols: Vec<Result<Vec<f64>>> = par::map_indexed(grid.levels(), |n| {
        let field = setup.forward_control_only(&unit_trace(grid.levels(), n))?;
        Ok(field.values().to_vec())
    });
    let rows = grid.nodes() * grid.levels();
    let mut mat = DMatrix::zeros(rows, grid.levels());
    for (n, col) in cols.into_iter().enumerate() {
        mat.column_mut(n).copy_from_slice(&col?);
    }
    Ok(mat)
}

/// Dense control-to-terminal map: the first `nodes` rows are the terminal
/// position, the next `nodes` rows the terminal velocity, of each impulse
/// response.
pub fn dense_control_to_terminal(setup: &ControlSetup) -> Result<DMatrix<f64>> {
    let grid = setup.ops.grid;
    dense_size_guard(&grid)?;
    setup.validate()?;
    let cols: Vec<Result<(Vec<f64>, Vec<f64>)>> = par::map_indexed(grid.levels(), |n| {
        let field = setup.forward_control_only(&unit_trace(grid.levels(), n))?;
        let term = terminal_state(&field, &grid)?;
        Ok((term.position, term.velocity))
    });
    let nodes = grid.nodes();
    let mut mat = DMatrix::zeros(2 * nodes, grid.levels());
    for (n, col) in cols.into_iter().enumerate() {
        let (pos, vel) = col?;
        for j in 0..nodes {
            mat[(j, n)] = pos[j];
            mat[(nodes + j, n)] = vel[j];
        }
    }
    Ok(mat)
}

/// Interior rows of a stacked two-block terminal matrix: drops the four
/// Dirichlet rows, leaving `2(Ny-1)` rows.
pub fn interior_terminal_rows(mat: &DMatrix<f64>, grid: &Grid) -> DMatrix<f64> {
    let nodes = grid.nodes();
    assert_eq!(mat.nrows(), 2 * nodes, "expected a stacked terminal matrix");
    let m = grid.ny - 1;
    DMatrix::from_fn(2 * m, mat.ncols(), |r, c| {
        let (block, j) = if r < m { (0, r + 1) } else { (1, r - m + 1) };
        mat[(block * nodes + j, c)]
    })
}

/// Count of singular values above `tol` times the largest.
pub fn numerical_rank(mat: &DMatrix<f64>, tol: f64) -> usize {
    let sv = mat.clone().singular_values();
    let top = sv.max();
    if top <= 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > tol * top).count()
}

/// Worst entry mismatch between the dense forward map and rows recovered
/// from the transposed pass seeded with unit fields, relative to the
/// largest entry. Certifies transpose exactness densely.
pub fn forward_transpose_mismatch(setup: &ControlSetup) -> Result<f64> {
    let grid = setup.ops.grid;
    let b = dense_control_to_state(setup)?;
    let scale = b.amax().max(1.0);
    let rows = grid.nodes() * grid.levels();
    let mismatches: Vec<Result<f64>> = par::map_indexed(rows, |i| {
        let mut seed = Field::zeros(&grid);
        let n = i / grid.nodes();
        let j = i % grid.nodes();
        seed.add_at(n, j, 1.0);
        let out = apply_transposed_forward(
            setup.ops,
            &AdjointSeed {
                field: Some(&seed),
                ..Default::default()
            },
            false,
        )?;
        let row = match setup.side {
            Side::Gamma0 => out.left,
            Side::GammaAlpha => out.right,
        };
        let mut worst = 0.0f64;
        for c in 0..grid.levels() {
            worst = worst.max((b[(i, c)] - row[c]).abs());
        }
        Ok(worst)
    });
    let mut worst = 0.0f64;
    for m in mismatches {
        worst = worst.max(m?);
    }
    Ok(worst / scale)
}

/// Dense follower solve by two independent factorizations of the normal
/// equations `(penalty Q + B^T W B) v = B^T W (target - base)`.
pub struct DenseFollowerOracle {
    pub control: Vec<f64>,
    /// Relative disagreement between the Cholesky and LU solves.
    pub factorization_gap: f64,
}

pub fn follower_qp_oracle(problem: &FollowerProblem) -> Result<DenseFollowerOracle> {
    let setup = &problem.setup;
    let grid = setup.ops.grid;
    dense_size_guard(&grid)?;
    let b = dense_control_to_state(setup)?;

    // Diagonal of the alpha-weighted space-time quadrature.
    let wt = trap_weights(grid.nt, grid.dt);
    let wy = trap_weights(grid.ny, grid.dy);
    let mut w = DVector::zeros(grid.nodes() * grid.levels());
    for n in 0..=grid.nt {
        let a = setup.ops.coeffs.alpha[n];
        for j in 0..=grid.ny {
            w[n * grid.nodes() + j] = wt[n] * wy[j] * a;
        }
    }

    let base = setup.forward_with_trace(problem.leader)?;
    let mut misfit = DVector::zeros(grid.nodes() * grid.levels());
    for n in 0..=grid.nt {
        let bl = base.level(n);
        let tl = setup.target.level(n);
        for j in 0..=grid.ny {
            let i = n * grid.nodes() + j;
            misfit[i] = w[i] * (tl[j] - bl[j]);
        }
    }
    let rhs = b.transpose() * misfit;

    let mut wb = b.clone();
    for mut col in wb.column_iter_mut() {
        col.component_mul_assign(&w);
    }
    let mut normal = b.transpose() * wb;
    let qw = trap_weights(grid.nt, grid.dt);
    for n in 0..grid.levels() {
        normal[(n, n)] += setup.penalty * qw[n];
    }

    let chol = normal
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Guard("dense normal matrix is not positive definite".into()))?;
    let v_chol = chol.solve(&rhs);
    let v_lu = normal
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Guard("dense normal matrix is singular under LU".into()))?;
    let gap = (&v_chol - &v_lu).amax() / (1.0 + v_chol.amax());
    Ok(DenseFollowerOracle {
        control: v_chol.iter().copied().collect(),
        factorization_gap: gap,
    })
}

/// Dense leader map: column `n` is `apply_a` of a unit impulse, stacked as
/// the velocity block over the negated-position block.
pub fn dense_a(ctx: &LeaderContext) -> Result<DMatrix<f64>> {
    let grid = ctx.problem.setup.ops.grid;
    dense_size_guard(&grid)?;
    let cols: Vec<Result<(Vec<f64>, Vec<f64>)>> = par::map_indexed(grid.levels(), |n| {
        let t = ctx.apply_a(&unit_trace(grid.levels(), n))?;
        Ok((t.vel, t.neg_pos))
    });
    let nodes = grid.nodes();
    let mut mat = DMatrix::zeros(2 * nodes, grid.levels());
    for (n, col) in cols.into_iter().enumerate() {
        let (vel, neg_pos) = col?;
        for j in 0..nodes {
            mat[(j, n)] = vel[j];
            mat[(nodes + j, n)] = neg_pos[j];
        }
    }
    Ok(mat)
}

/// Dense adjoint map: column `i` is `apply_astar` of the `i`-th unit dual
/// (`f0` components first, then `f1`).
pub fn dense_astar(ctx: &LeaderContext) -> Result<DMatrix<f64>> {
    let grid = ctx.problem.setup.ops.grid;
    dense_size_guard(&grid)?;
    let nodes = grid.nodes();
    let cols: Vec<Result<Vec<f64>>> = par::map_indexed(2 * nodes, |i| {
        let mut xi = DualVariable::zeros(&grid);
        if i < nodes {
            xi.f0[i] = 1.0;
        } else {
            xi.f1[i - nodes] = 1.0;
        }
        ctx.apply_astar(&xi)
    });
    let mut mat = DMatrix::zeros(grid.levels(), 2 * nodes);
    for (i, col) in cols.into_iter().enumerate() {
        mat.column_mut(i).copy_from_slice(&col?);
    }
    Ok(mat)
}

/// Worst relative violation of the metric-transpose identity
/// `D[i] A[i][l] = Q[l] Astar[l][i]` between the dense leader map and the
/// dense adjoint, where `D` carries the terminal pairing weights and `Q`
/// the trace quadrature.
pub fn pairing_transpose_mismatch(ctx: &LeaderContext) -> Result<f64> {
    let grid = ctx.problem.setup.ops.grid;
    let a = dense_a(ctx)?;
    let astar = dense_astar(ctx)?;
    let nodes = grid.nodes();
    let wy = trap_weights(grid.ny, grid.dy);
    let qw = trap_weights(grid.nt, grid.dt);
    let d = |i: usize| -> f64 {
        if i < nodes {
            // H^-1 x H^1_0 pairing touches interior nodes only.
            if i == 0 || i == grid.ny {
                0.0
            } else {
                grid.dy
            }
        } else {
            wy[i - nodes]
        }
    };
    let mut scale = 0.0f64;
    for i in 0..2 * nodes {
        for l in 0..grid.levels() {
            scale = scale.max((d(i) * a[(i, l)]).abs());
        }
    }
    let scale = scale.max(1e-300);
    let mut worst = 0.0f64;
    for i in 0..2 * nodes {
        for l in 0..grid.levels() {
            worst = worst.max((d(i) * a[(i, l)] - qw[l] * astar[(l, i)]).abs());
        }
    }
    Ok(worst / scale)
}

/// Central finite differences of a scalar functional, component by
/// component.
pub fn fd_gradient<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    // Also rejects NaN steps.
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut out = Vec::with_capacity(x.len());
    let mut work = x.to_vec();
    for i in 0..x.len() {
        work[i] = x[i] + h;
        let fp = f(&work)?;
        work[i] = x[i] - h;
        let fm = f(&work)?;
        work[i] = x[i];
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

/// Exact-rational `exp` by Taylor summation; the tail is below
/// `10^-guard_digits` once terms shrink under that bound past `2x`.
pub fn rational_exp(x: &BigRational, guard_digits: u32) -> BigRational {
    assert!(!x.is_negative(), "positive arguments only");
    let eps = BigRational::new(BigInt::one(), BigInt::from(10u32).pow(guard_digits));
    let kmin = (x * BigInt::from(2))
        .ceil()
        .to_integer()
        .to_usize()
        .expect("argument far too large")
        + 2;
    let mut term = BigRational::one();
    let mut sum = BigRational::one();
    let mut k = 1usize;
    loop {
        term = &term * x / BigRational::from_integer(BigInt::from(k));
        sum += &term;
        if k >= kmin && term < eps {
            return sum;
        }
        k += 1;
        assert!(k < 20_000, "Taylor series failed to settle");
    }
}

/// Control-time thresholds in exact rational arithmetic, accurate to well
/// beyond `guard_digits` decimal places.
pub struct ExactThresholds {
    pub t1: BigRational,
    pub t2: BigRational,
}

pub fn exact_thresholds(
    m: &BigRational,
    big_m: &BigRational,
    guard_digits: u32,
) -> Result<ExactThresholds> {
    let one = BigRational::one();
    if !(m > &BigRational::zero() && m < big_m && big_m < &one) {
        return Err(Error::InvalidParameter(
            "speed bounds must satisfy 0 < m < M < 1".into(),
        ));
    }
    let two = BigRational::from_integer(BigInt::from(2));
    let m2 = big_m * big_m;
    let one_minus_m = &one - m;
    let one_minus_big = &one - big_m;
    let x1 = &two * &m2 * &one_minus_m
        / (m * (&one_minus_big * &one_minus_big * &one_minus_big));
    let x2 = &two * &m2 * &one_minus_m * (&one + big_m) / (m * (&one_minus_big * &one_minus_big));
    let t1 = (rational_exp(&x1, guard_digits) - &one) / big_m;
    let t2 = (rational_exp(&x2, guard_digits) - &one) / big_m;
    Ok(ExactThresholds { t1, t2 })
}

/// Truncated decimal expansion with `digits` places after the point;
/// nonnegative values only.
pub fn decimal_string(x: &BigRational, digits: u32) -> String {
    assert!(!x.is_negative(), "nonnegative values only");
    let ip = x.floor().to_integer();
    let frac = x - BigRational::from_integer(ip.clone());
    let scale = BigInt::from(10u32).pow(digits);
    let scaled = (frac * BigRational::from_integer(scale)).floor().to_integer();
    let s = scaled.to_string();
    let pad = (digits as usize).saturating_sub(s.len());
    format!("{}.{}{}", ip, "0".repeat(pad), s)
}

/// Round-trip through a long decimal string; exact to the last f64 bit for
/// the magnitudes used here.
pub fn rational_to_f64(x: &BigRational) -> f64 {
    decimal_string(x, 40).parse().expect("valid decimal literal")
}

/// One row of an oracle comparison report.
pub struct CheckRow {
    pub id: String,
    pub instance: String,
    pub discrepancy: f64,
    pub tolerance: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.discrepancy.is_finite() && self.discrepancy <= self.tolerance
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.id,
            self.instance,
            fmt_f64(self.discrepancy),
            fmt_f64(self.tolerance),
            if self.passed() { "pass" } else { "fail" }
        )
    }
}
