//! Marching solvers on the cylinder and the exact transpose of the forward
//! map.
//!
//! `solve_forward` integrates `z_tt + L z = S` with Dirichlet traces on both
//! lateral edges. Each step solves one tridiagonal system for the implicit
//! mixed term; everything else is explicit. The whole map
//! `(z0, z1, left, right, S) -> (trajectory, terminal pair)` is linear, and
//! `apply_transposed_forward` evaluates its exact algebraic transpose by
//! reversing the recurrence, so discrete duality pairings built from the
//! pair hold to rounding.
//!
//! `solve_backward` marches the formal adjoint equation `p_tt + L* p = S`
//! from rest at `t = T` with homogeneous Dirichlet edges. It discretizes
//! `L*` directly (product-rule form), so it is an independent route to the
//! same continuum adjoint: simulations and optimality residuals use it,
//! duality pairings never do.

use crate::discretization::operators::{StepDirection, StepOperators};
use crate::discretization::{Field, Grid, StatePair};
use crate::error::{Error, Result};

/// Inputs of the forward map. Boundary entries of `z0` are ignored (the
/// traces own the boundary at every level, including level 0); boundary
/// entries of `z1` feed the one-sided start stencil.
#[derive(Clone, Copy)]
pub struct ForwardInputs<'a> {
    pub z0: &'a [f64],
    pub z1: &'a [f64],
    pub left: &'a [f64],
    pub right: &'a [f64],
    pub source: Option<&'a Field>,
}

fn check_forward_shapes(ops: &StepOperators, inp: &ForwardInputs) -> Result<()> {
    let g = &ops.grid;
    let bad = |what: &str, got: usize, want: usize| {
        Err(Error::Shape(format!("{what} has {got} values, expected {want}")))
    };
    if inp.z0.len() != g.nodes() {
        return bad("z0", inp.z0.len(), g.nodes());
    }
    if inp.z1.len() != g.nodes() {
        return bad("z1", inp.z1.len(), g.nodes());
    }
    if inp.left.len() != g.levels() {
        return bad("left trace", inp.left.len(), g.levels());
    }
    if inp.right.len() != g.levels() {
        return bad("right trace", inp.right.len(), g.levels());
    }
    if let Some(s) = inp.source {
        if !s.matches(g) {
            return Err(Error::Shape("source field does not match the grid".into()));
        }
    }
    Ok(())
}

fn divergence_guard(what: &'static str, level: usize, max: f64, scale: f64) -> Result<()> {
    if !max.is_finite() || max > 1e12 * (1.0 + scale) {
        return Err(Error::Divergence {
            what,
            level,
            value: max,
        });
    }
    Ok(())
}

fn slice_max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Integrate the state equation forward. The returned field carries the
/// imposed Dirichlet data on both boundary columns at every level.
pub fn solve_forward(ops: &StepOperators, inp: &ForwardInputs) -> Result<Field> {
    check_forward_shapes(ops, inp)?;
    let grid = ops.grid;
    let (ny, nt, dy, dt) = (grid.ny, grid.nt, grid.dy, grid.dt);
    let co = &ops.coeffs;
    let scale = slice_max_abs(inp.z0)
        .max(slice_max_abs(inp.z1))
        .max(slice_max_abs(inp.left))
        .max(slice_max_abs(inp.right))
        .max(inp.source.map_or(0.0, Field::max_abs));

    let mut z = Field::zeros(&grid);
    let src_at = |n: usize, j: usize| inp.source.map_or(0.0, |s| s.at(n, j));

    {
        let lvl0 = z.level_mut(0);
        lvl0[..=ny].copy_from_slice(&inp.z0[..=ny]);
        lvl0[0] = inp.left[0];
        lvl0[ny] = inp.right[0];
    }

    // Second-order start: Taylor expansion around t = 0 with z_tt from the
    // equation itself.
    let half = 0.5 * dt * dt;
    let inv_dy2 = 1.0 / (dy * dy);
    let inv_2dy = 1.0 / (2.0 * dy);
    for j in 1..ny {
        let z0l = z.level(0);
        let flux = (co.bh[0][j] * (z0l[j + 1] - z0l[j])
            - co.bh[0][j - 1] * (z0l[j] - z0l[j - 1]))
            * inv_dy2;
        let dz1 = (inp.z1[j + 1] - inp.z1[j - 1]) * inv_2dy;
        let dz0 = (z0l[j + 1] - z0l[j - 1]) * inv_2dy;
        let acc = flux - co.g[0][j] * dz1 - co.r[0][j] * dz0 + src_at(0, j);
        let v = z.at(0, j) + dt * inp.z1[j] + half * acc;
        z.set(1, j, v);
    }
    z.set(1, 0, inp.left[1]);
    z.set(1, ny, inp.right[1]);

    let dt2 = dt * dt;
    let mut rhs = vec![0.0; ny - 1];
    for n in 1..nt {
        for j in 1..ny {
            let zn = z.level(n);
            let zm = z.level(n - 1);
            let flux = (co.bh[n][j] * (zn[j + 1] - zn[j])
                - co.bh[n][j - 1] * (zn[j] - zn[j - 1]))
                * inv_dy2;
            let dzn = (zn[j + 1] - zn[j - 1]) * inv_2dy;
            let c = ops.couple(n, j);
            rhs[j - 1] = 2.0 * zn[j] - zm[j]
                + dt2 * (flux - co.r[n][j] * dzn + src_at(n, j))
                + c * (zm[j + 1] - zm[j - 1]);
        }
        rhs[0] += ops.couple(n, 1) * inp.left[n + 1];
        rhs[ny - 2] -= ops.couple(n, ny - 1) * inp.right[n + 1];
        let w = ops.tri(StepDirection::Forward, n).solve(&rhs);
        {
            let lvl = z.level_mut(n + 1);
            lvl[1..ny].copy_from_slice(&w);
            lvl[0] = inp.left[n + 1];
            lvl[ny] = inp.right[n + 1];
        }
        divergence_guard("forward march", n + 1, slice_max_abs(z.level(n + 1)), scale)?;
    }
    Ok(z)
}

/// Terminal position and one-sided second-order velocity, all nodes.
pub fn terminal_state(field: &Field, grid: &Grid) -> Result<StatePair> {
    if !field.matches(grid) {
        return Err(Error::Shape("field does not match the grid".into()));
    }
    let nt = grid.nt;
    let position = field.level(nt).to_vec();
    let inv = 1.0 / (2.0 * grid.dt);
    let velocity = (0..=grid.ny)
        .map(|j| (3.0 * field.at(nt, j) - 4.0 * field.at(nt - 1, j) + field.at(nt - 2, j)) * inv)
        .collect();
    Ok(StatePair { position, velocity })
}

/// Adjoint seeds pairing with the outputs of the forward map, all in the
/// plain Euclidean (unweighted) sense.
#[derive(Clone, Copy, Default)]
pub struct AdjointSeed<'a> {
    /// Pairs with the full trajectory.
    pub field: Option<&'a Field>,
    /// Pairs with the terminal position (all nodes).
    pub terminal_position: Option<&'a [f64]>,
    /// Pairs with the terminal velocity (all nodes).
    pub terminal_velocity: Option<&'a [f64]>,
}

/// Euclidean adjoints with respect to every input of the forward map.
#[derive(Clone, Debug)]
pub struct AdjointOutputs {
    pub z0: Vec<f64>,
    pub z1: Vec<f64>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub source: Option<Field>,
}

/// Exact transpose of [`solve_forward`] (composed with [`terminal_state`]
/// when terminal seeds are given): for every input tuple `x` and seed `s`,
/// `<forward(x), s> = <x, transposed(s)>` in exact arithmetic, entry by
/// entry over all inputs and outputs.
pub fn apply_transposed_forward(
    ops: &StepOperators,
    seed: &AdjointSeed,
    want_source: bool,
) -> Result<AdjointOutputs> {
    let grid = ops.grid;
    let (ny, nt, dy, dt) = (grid.ny, grid.nt, grid.dy, grid.dt);
    let co = &ops.coeffs;
    if let Some(f) = seed.field {
        if !f.matches(&grid) {
            return Err(Error::Shape("adjoint field seed does not match the grid".into()));
        }
    }
    for (name, s) in [
        ("terminal position seed", seed.terminal_position),
        ("terminal velocity seed", seed.terminal_velocity),
    ] {
        if let Some(v) = s {
            if v.len() != grid.nodes() {
                return Err(Error::Shape(format!(
                    "{name} has {} values, expected {}",
                    v.len(),
                    grid.nodes()
                )));
            }
        }
    }

    let mut zb = match seed.field {
        Some(f) => f.clone(),
        None => Field::zeros(&grid),
    };
    if let Some(vb) = seed.terminal_velocity {
        let inv = 1.0 / (2.0 * dt);
        for j in 0..=ny {
            zb.add_at(nt, j, 3.0 * inv * vb[j]);
            zb.add_at(nt - 1, j, -4.0 * inv * vb[j]);
            zb.add_at(nt - 2, j, inv * vb[j]);
        }
    }
    if let Some(pb) = seed.terminal_position {
        for j in 0..=ny {
            zb.add_at(nt, j, pb[j]);
        }
    }

    let mut left = vec![0.0; grid.levels()];
    let mut right = vec![0.0; grid.levels()];
    let mut z0 = vec![0.0; grid.nodes()];
    let mut z1 = vec![0.0; grid.nodes()];
    let mut source = want_source.then(|| Field::zeros(&grid));

    let dt2 = dt * dt;
    let s_flux = dt2 / (dy * dy);
    let inv_2dy = 1.0 / (2.0 * dy);
    for n in (1..nt).rev() {
        left[n + 1] += zb.at(n + 1, 0);
        right[n + 1] += zb.at(n + 1, ny);
        let ub = ops
            .tri(StepDirection::Forward, n)
            .solve_transposed(&zb.level(n + 1)[1..ny]);
        left[n + 1] += ops.couple(n, 1) * ub[0];
        right[n + 1] -= ops.couple(n, ny - 1) * ub[ny - 2];
        for j in 1..ny {
            let u = ub[j - 1];
            zb.add_at(n, j, 2.0 * u);
            let bp = co.bh[n][j];
            let bm = co.bh[n][j - 1];
            zb.add_at(n, j + 1, s_flux * bp * u);
            zb.add_at(n, j, -s_flux * (bp + bm) * u);
            zb.add_at(n, j - 1, s_flux * bm * u);
            let q = dt2 * co.r[n][j] * inv_2dy;
            zb.add_at(n, j + 1, -q * u);
            zb.add_at(n, j - 1, q * u);
            zb.add_at(n - 1, j, -u);
            let c = ops.couple(n, j);
            zb.add_at(n - 1, j + 1, c * u);
            zb.add_at(n - 1, j - 1, -c * u);
            if let Some(src) = source.as_mut() {
                src.add_at(n, j, dt2 * u);
            }
        }
    }

    // Transpose of the Taylor start.
    left[1] += zb.at(1, 0);
    right[1] += zb.at(1, ny);
    let half = 0.5 * dt2;
    let s0_flux = half / (dy * dy);
    for j in 1..ny {
        let v = zb.at(1, j);
        zb.add_at(0, j, v);
        z1[j] += dt * v;
        let bp = co.bh[0][j];
        let bm = co.bh[0][j - 1];
        zb.add_at(0, j + 1, s0_flux * bp * v);
        zb.add_at(0, j, -s0_flux * (bp + bm) * v);
        zb.add_at(0, j - 1, s0_flux * bm * v);
        let q = half * co.g[0][j] * inv_2dy;
        z1[j + 1] -= q * v;
        z1[j - 1] += q * v;
        let w = half * co.r[0][j] * inv_2dy;
        zb.add_at(0, j + 1, -w * v);
        zb.add_at(0, j - 1, w * v);
        if let Some(src) = source.as_mut() {
            src.add_at(0, j, half * v);
        }
    }
    for j in 1..ny {
        z0[j] += zb.at(0, j);
    }
    left[0] += zb.at(0, 0);
    right[0] += zb.at(0, ny);

    Ok(AdjointOutputs {
        z0,
        z1,
        left,
        right,
        source,
    })
}

/// Terminal data for the adjoint march. Position entries on the boundary
/// must vanish (homogeneous Dirichlet edges).
#[derive(Clone, Copy)]
pub struct TerminalData<'a> {
    pub position: &'a [f64],
    pub velocity: &'a [f64],
}

/// March the formal-adjoint equation backward from rest: `p(T) = p_t(T) = 0`,
/// homogeneous Dirichlet edges, driven by the source field.
pub fn solve_backward(ops: &StepOperators, source: &Field) -> Result<Field> {
    solve_backward_inner(ops, Some(source), None)
}

/// Adjoint march from general terminal data, optionally with a source.
/// Used by the duality cross-checks that start the adjoint at a dual
/// variable instead of rest.
pub fn solve_backward_with_terminal(
    ops: &StepOperators,
    source: Option<&Field>,
    terminal: TerminalData,
) -> Result<Field> {
    solve_backward_inner(ops, source, Some(terminal))
}

fn solve_backward_inner(
    ops: &StepOperators,
    source: Option<&Field>,
    terminal: Option<TerminalData>,
) -> Result<Field> {
    let grid = ops.grid;
    let (ny, nt, dy, dt) = (grid.ny, grid.nt, grid.dy, grid.dt);
    let co = &ops.coeffs;
    if let Some(s) = source {
        if !s.matches(&grid) {
            return Err(Error::Shape("source field does not match the grid".into()));
        }
    }
    if let Some(td) = terminal {
        if td.position.len() != grid.nodes() || td.velocity.len() != grid.nodes() {
            return Err(Error::Shape("terminal data does not match the grid".into()));
        }
        let edge = td.position[0].abs().max(td.position[ny].abs());
        if edge > 1e-12 {
            return Err(Error::Shape(
                "terminal position must vanish on the boundary".into(),
            ));
        }
    }
    let scale = source.map_or(0.0, Field::max_abs).max(terminal.map_or(0.0, |td| {
        slice_max_abs(td.position).max(slice_max_abs(td.velocity))
    }));
    let src_at = |n: usize, j: usize| source.map_or(0.0, |s| s.at(n, j));

    let mut p = Field::zeros(&grid);
    let inv_dy2 = 1.0 / (dy * dy);
    let inv_2dy = 1.0 / (2.0 * dy);
    let half = 0.5 * dt * dt;

    if let Some(td) = terminal {
        for j in 1..ny {
            p.set(nt, j, td.position[j]);
        }
        // Backward Taylor start: p(T - dt) = P - dt V + dt^2/2 (S - L*p)(T),
        // with the mixed term's time derivative taken at T.
        for j in 1..ny {
            let pp = |i: usize| if i == 0 || i == ny { 0.0 } else { td.position[i] };
            let flux = (co.bh[nt][j] * (pp(j + 1) - pp(j))
                - co.bh[nt][j - 1] * (pp(j) - pp(j - 1)))
                * inv_dy2;
            let mixed = ((co.dg_dt_final[j + 1] * pp(j + 1) + co.g[nt][j + 1] * td.velocity[j + 1])
                - (co.dg_dt_final[j - 1] * pp(j - 1) + co.g[nt][j - 1] * td.velocity[j - 1]))
                * inv_2dy;
            let rp = (co.r[nt][j + 1] * pp(j + 1) - co.r[nt][j - 1] * pp(j - 1)) * inv_2dy;
            let lstar = -flux + mixed - rp;
            p.set(
                nt - 1,
                j,
                td.position[j] - dt * td.velocity[j] + half * (src_at(nt, j) - lstar),
            );
        }
    } else {
        for j in 1..ny {
            p.set(nt - 1, j, half * src_at(nt, j));
        }
    }

    let dt2 = dt * dt;
    let q = dt / (4.0 * dy);
    let mut rhs = vec![0.0; ny - 1];
    for n in (1..nt).rev() {
        for j in 1..ny {
            let pn = p.level(n);
            let pp = p.level(n + 1);
            let flux = (co.bh[n][j] * (pn[j + 1] - pn[j])
                - co.bh[n][j - 1] * (pn[j] - pn[j - 1]))
                * inv_dy2;
            let drp = (co.r[n][j + 1] * pn[j + 1] - co.r[n][j - 1] * pn[j - 1]) * inv_2dy;
            let mixed_next = q * (co.g[n + 1][j + 1] * pp[j + 1] - co.g[n + 1][j - 1] * pp[j - 1]);
            rhs[j - 1] =
                2.0 * pn[j] - pp[j] + dt2 * (flux + drp + src_at(n, j)) - mixed_next;
        }
        let w = ops.tri(StepDirection::BackwardAdjoint, n).solve(&rhs);
        p.level_mut(n - 1)[1..ny].copy_from_slice(&w);
        divergence_guard("adjoint march", n - 1, slice_max_abs(p.level(n - 1)), scale)?;
    }
    Ok(p)
}

/// Exact transpose of the source-to-solution map of [`solve_backward`]:
/// `<backward(S), q> = <S, transposed(q)>` entry by entry.
pub fn apply_transposed_backward(ops: &StepOperators, seed: &Field) -> Result<Field> {
    let grid = ops.grid;
    let (ny, nt, dy, dt) = (grid.ny, grid.nt, grid.dy, grid.dt);
    let co = &ops.coeffs;
    if !seed.matches(&grid) {
        return Err(Error::Shape("adjoint seed does not match the grid".into()));
    }
    let mut pb = seed.clone();
    let mut src = Field::zeros(&grid);
    let dt2 = dt * dt;
    let s_flux = dt2 / (dy * dy);
    let inv_2dy = 1.0 / (2.0 * dy);
    let q = dt / (4.0 * dy);
    for n in 1..nt {
        let s = ops
            .tri(StepDirection::BackwardAdjoint, n)
            .solve_transposed(&pb.level(n - 1)[1..ny]);
        for j in 1..ny {
            let u = s[j - 1];
            pb.add_at(n, j, 2.0 * u);
            let bp = co.bh[n][j];
            let bm = co.bh[n][j - 1];
            pb.add_at(n, j + 1, s_flux * bp * u);
            pb.add_at(n, j, -s_flux * (bp + bm) * u);
            pb.add_at(n, j - 1, s_flux * bm * u);
            pb.add_at(n, j + 1, dt2 * co.r[n][j + 1] * inv_2dy * u);
            pb.add_at(n, j - 1, -dt2 * co.r[n][j - 1] * inv_2dy * u);
            pb.add_at(n + 1, j, -u);
            pb.add_at(n + 1, j + 1, -q * co.g[n + 1][j + 1] * u);
            pb.add_at(n + 1, j - 1, q * co.g[n + 1][j - 1] * u);
            src.add_at(n, j, dt2 * u);
        }
    }
    let half = 0.5 * dt2;
    for j in 1..ny {
        src.add_at(nt, j, half * pb.at(nt - 1, j));
    }
    Ok(src)
}
