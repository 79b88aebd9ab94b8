//! Follower problem: best-response boundary control for a fixed leader.
//!
//! For a leader trace `f` on the actuated side, the follower picks its own
//! trace `v` on the same side minimizing
//!
//! `J_f(v) = 1/2 ||z - target||^2_{alpha-weighted L2(Q)}
//!           + penalty/2 ||v||^2_{L2(0,T)}`
//!
//! where `z` solves the forward problem with Dirichlet value `f + v` on the
//! actuated side and `0` on the other side. The discrete functional is a
//! strictly convex quadratic; its gradient in the trace metric is evaluated
//! through the exact transpose of the forward map and the minimizer through
//! conjugate gradients on the normal equations.
//!
//! The classical characterization of the minimizer reads
//! `v = (1/penalty) (beta/alpha)|_edge d_nu p` with `p` the tracking
//! adjoint state and `d_nu` the outward normal derivative; on the fixed
//! edge the factor is `1/alpha^2`. The solver reports the distance between
//! the CG minimizer and that stencil formula (with the sign that fits
//! best), and `solve_optimality_system` iterates the corresponding coupled
//! state/adjoint system to its fixed point.

use crate::discretization::norms::{trace_inner, trap_weights};
use crate::discretization::operators::{normal_derivative_trace, StepOperators};
use crate::discretization::{Field, Side};
use crate::error::{Error, Result};
use crate::wave_solver::{
    apply_transposed_forward, solve_backward, solve_forward, AdjointSeed, ForwardInputs,
};

/// Everything that defines a follower instance except the leader control.
#[derive(Clone, Copy)]
pub struct ControlSetup<'a> {
    pub ops: &'a StepOperators,
    /// Actuated lateral side; the opposite side is held at zero.
    pub side: Side,
    /// Quadratic penalty weight on the follower control; must be positive.
    pub penalty: f64,
    pub z0: &'a [f64],
    pub z1: &'a [f64],
    /// Tracking target over the whole cylinder.
    pub target: &'a Field,
}

impl<'a> ControlSetup<'a> {
    pub fn validate(&self) -> Result<()> {
        if !self.penalty.is_finite() || self.penalty <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "follower penalty must be positive, got {}",
                self.penalty
            )));
        }
        let g = &self.ops.grid;
        if self.z0.len() != g.nodes() || self.z1.len() != g.nodes() {
            return Err(Error::Shape("initial data does not match the grid".into()));
        }
        if !self.target.matches(g) {
            return Err(Error::Shape("target field does not match the grid".into()));
        }
        Ok(())
    }

    /// Forward solve with the given trace on the actuated side, zero on the
    /// other, and the setup's initial data.
    pub fn forward_with_trace(&self, trace: &[f64]) -> Result<Field> {
        let zero = vec![0.0; self.ops.grid.levels()];
        let (left, right) = match self.side {
            Side::Gamma0 => (trace, zero.as_slice()),
            Side::GammaAlpha => (zero.as_slice(), trace),
        };
        solve_forward(
            self.ops,
            &ForwardInputs {
                z0: self.z0,
                z1: self.z1,
                left,
                right,
                source: None,
            },
        )
    }

    /// Control-part forward map `B v`: zero data, trace `v` on the actuated
    /// side only.
    pub fn forward_control_only(&self, v: &[f64]) -> Result<Field> {
        let g = &self.ops.grid;
        let zero_nodes = vec![0.0; g.nodes()];
        let zero_levels = vec![0.0; g.levels()];
        let (left, right) = match self.side {
            Side::Gamma0 => (v, zero_levels.as_slice()),
            Side::GammaAlpha => (zero_levels.as_slice(), v),
        };
        solve_forward(
            self.ops,
            &ForwardInputs {
                z0: &zero_nodes,
                z1: &zero_nodes,
                left,
                right,
                source: None,
            },
        )
    }

    /// `B^T` seeded with a field, returned as the Riesz representative in
    /// the trace metric (Euclidean trace adjoint divided by the trapezoid
    /// quadrature weights).
    pub fn transposed_control_map(&self, seed: &Field) -> Result<Vec<f64>> {
        let out = apply_transposed_forward(
            self.ops,
            &AdjointSeed {
                field: Some(seed),
                ..Default::default()
            },
            false,
        )?;
        let raw = match self.side {
            Side::Gamma0 => out.left,
            Side::GammaAlpha => out.right,
        };
        let g = &self.ops.grid;
        let qw = trap_weights(g.nt, g.dt);
        Ok(raw.iter().zip(&qw).map(|(v, w)| v / w).collect())
    }

    /// Space-time quadrature and `alpha` weighting applied to the misfit
    /// from `target`: the Euclidean seed whose pairing with a trajectory is
    /// the weighted misfit inner product.
    pub fn weighted_misfit(&self, z: &Field) -> Field {
        let g = &self.ops.grid;
        let wt = trap_weights(g.nt, g.dt);
        let wy = trap_weights(g.ny, g.dy);
        let mut out = Field::zeros(g);
        for n in 0..=g.nt {
            let a = self.ops.coeffs.alpha[n];
            let zl = z.level(n);
            let tl = self.target.level(n);
            let ol = out.level_mut(n);
            for j in 0..=g.ny {
                ol[j] = wt[n] * wy[j] * a * (zl[j] - tl[j]);
            }
        }
        out
    }

    /// Half the alpha-weighted squared misfit of a trajectory.
    pub fn tracking_term(&self, z: &Field) -> f64 {
        let g = &self.ops.grid;
        let wt = trap_weights(g.nt, g.dt);
        let wy = trap_weights(g.ny, g.dy);
        let mut s = 0.0;
        for n in 0..=g.nt {
            let a = self.ops.coeffs.alpha[n];
            let zl = z.level(n);
            let tl = self.target.level(n);
            for j in 0..=g.ny {
                let d = zl[j] - tl[j];
                s += wt[n] * wy[j] * a * d * d;
            }
        }
        0.5 * s
    }

    /// Edge value of `beta/alpha` per time level on the actuated side.
    pub fn edge_factor(&self) -> Vec<f64> {
        let co = &self.ops.coeffs;
        (0..self.ops.grid.levels())
            .map(|n| {
                let a2 = co.alpha[n] * co.alpha[n];
                match self.side {
                    Side::Gamma0 => 1.0 / a2,
                    Side::GammaAlpha => (1.0 - co.dalpha[n] * co.dalpha[n]) / a2,
                }
            })
            .collect()
    }

    /// Orientation of the outward normal derivative in terms of `d/dy`.
    pub fn outward_sign(&self) -> f64 {
        match self.side {
            Side::Gamma0 => -1.0,
            Side::GammaAlpha => 1.0,
        }
    }
}

/// Follower instance: a setup plus the leader's trace on the actuated side.
#[derive(Clone, Copy)]
pub struct FollowerProblem<'a> {
    pub setup: ControlSetup<'a>,
    pub leader: &'a [f64],
}

impl<'a> FollowerProblem<'a> {
    fn validate(&self, candidate: &[f64]) -> Result<()> {
        self.setup.validate()?;
        let levels = self.setup.ops.grid.levels();
        if self.leader.len() != levels || candidate.len() != levels {
            return Err(Error::Shape(format!(
                "traces need {} values, got leader {} and candidate {}",
                levels,
                self.leader.len(),
                candidate.len()
            )));
        }
        Ok(())
    }

    fn combined_trace(&self, candidate: &[f64]) -> Vec<f64> {
        self.leader
            .iter()
            .zip(candidate)
            .map(|(f, v)| f + v)
            .collect()
    }
}

/// Evaluate the follower functional at a candidate control.
pub fn follower_cost(problem: &FollowerProblem, candidate: &[f64]) -> Result<f64> {
    problem.validate(candidate)?;
    let setup = &problem.setup;
    let z = setup.forward_with_trace(&problem.combined_trace(candidate))?;
    let g = &setup.ops.grid;
    Ok(setup.tracking_term(&z)
        + 0.5 * setup.penalty * trace_inner(candidate, candidate, g))
}

/// Gradient of the follower functional in the trace metric, via the exact
/// transpose of the forward map.
pub fn follower_gradient(problem: &FollowerProblem, candidate: &[f64]) -> Result<Vec<f64>> {
    problem.validate(candidate)?;
    let setup = &problem.setup;
    let z = setup.forward_with_trace(&problem.combined_trace(candidate))?;
    let seed = setup.weighted_misfit(&z);
    let bt = setup.transposed_control_map(&seed)?;
    Ok(candidate
        .iter()
        .zip(&bt)
        .map(|(v, b)| setup.penalty * v + b)
        .collect())
}

#[derive(Clone, Copy, Debug)]
pub struct CgOptions {
    /// Relative reduction of the gradient norm.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            tol: 1e-10,
            max_iter: 500,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FollowerSolution {
    pub control: Vec<f64>,
    pub state: Field,
    pub adjoint: Field,
    pub cost: f64,
    /// Trace-metric norm of the gradient at the returned control.
    pub gradient_norm: f64,
    pub cg_iterations: usize,
    pub residual_history: Vec<f64>,
    /// Relative trace-metric distance between the control and the stencil
    /// characterization `sign/(penalty alpha^2) d_y p` on the actuated edge.
    pub characterization_residual: f64,
    /// Sign of the stencil formula that fits best (+1 or -1 on `d_y p`).
    pub characterization_sign: f64,
}

/// Minimize the follower functional by conjugate gradients on
/// `penalty v + Q^{-1} B^T W B v = -Q^{-1} B^T W (z_base - target)`,
/// which is SPD in the trace metric.
pub fn solve_follower(
    problem: &FollowerProblem,
    opts: CgOptions,
    initial: Option<&[f64]>,
) -> Result<FollowerSolution> {
    let zero = vec![0.0; problem.setup.ops.grid.levels()];
    problem.validate(initial.unwrap_or(&zero))?;
    let setup = &problem.setup;
    let g = setup.ops.grid;

    let z_base = setup.forward_with_trace(problem.leader)?;
    let misfit_seed = setup.weighted_misfit(&z_base);
    let b = setup.transposed_control_map(&misfit_seed)?;
    let rhs: Vec<f64> = b.iter().map(|v| -v).collect();

    // Linear part of the normal operator.
    let apply_m = |v: &[f64]| -> Result<Vec<f64>> {
        let bv = setup.forward_control_only(v)?;
        // Reuse the misfit weighting with a zero target: W (B v).
        let mut seed = Field::zeros(&g);
        let wt = trap_weights(g.nt, g.dt);
        let wy = trap_weights(g.ny, g.dy);
        for n in 0..=g.nt {
            let a = setup.ops.coeffs.alpha[n];
            let bl = bv.level(n);
            let sl = seed.level_mut(n);
            for j in 0..=g.ny {
                sl[j] = wt[n] * wy[j] * a * bl[j];
            }
        }
        let bt = setup.transposed_control_map(&seed)?;
        Ok(v
            .iter()
            .zip(&bt)
            .map(|(x, y)| setup.penalty * x + y)
            .collect())
    };

    let mut v: Vec<f64> = initial.map_or_else(|| vec![0.0; g.levels()], <[f64]>::to_vec);
    let mv = apply_m(&v)?;
    let mut r: Vec<f64> = rhs.iter().zip(&mv).map(|(a, b)| a - b).collect();
    let mut rho = trace_inner(&r, &r, &g);
    let r0 = rho.sqrt();
    let mut history = vec![r0];
    let mut iterations = 0;
    if r0 > 0.0 {
        let mut d = r.clone();
        let floor = 1e-306;
        loop {
            if iterations >= opts.max_iter {
                return Err(Error::IterationLimit {
                    what: "follower conjugate gradients",
                    iterations,
                    residual: rho.sqrt(),
                    history,
                });
            }
            let q = apply_m(&d)?;
            let dq = trace_inner(&d, &q, &g);
            if dq <= floor {
                // Curvature collapse can only come from rounding on an SPD
                // operator; accept the current iterate.
                break;
            }
            let a = rho / dq;
            for i in 0..v.len() {
                v[i] += a * d[i];
                r[i] -= a * q[i];
            }
            let rho_next = trace_inner(&r, &r, &g);
            iterations += 1;
            history.push(rho_next.sqrt());
            if rho_next.sqrt() <= opts.tol * r0 {
                rho = rho_next;
                break;
            }
            let beta = rho_next / rho;
            rho = rho_next;
            for i in 0..d.len() {
                d[i] = r[i] + beta * d[i];
            }
        }
    }

    let state = setup.forward_with_trace(&problem.combined_trace(&v))?;
    let adjoint = solve_backward(setup.ops, &tracking_source(setup, &state))?;
    let cost =
        setup.tracking_term(&state) + 0.5 * setup.penalty * trace_inner(&v, &v, &g);

    let (characterization_residual, characterization_sign) =
        characterization(setup, &v, &adjoint)?;

    Ok(FollowerSolution {
        control: v,
        state,
        adjoint,
        cost,
        gradient_norm: rho.sqrt(),
        cg_iterations: iterations,
        residual_history: history,
        characterization_residual,
        characterization_sign,
    })
}

/// Adjoint source `alpha (z - target)`, unweighted by quadrature: the
/// continuum right-hand side of the tracking adjoint equation.
pub fn tracking_source(setup: &ControlSetup, state: &Field) -> Field {
    let g = &setup.ops.grid;
    let mut src = Field::zeros(g);
    for n in 0..=g.nt {
        let a = setup.ops.coeffs.alpha[n];
        let zl = state.level(n);
        let tl = setup.target.level(n);
        let sl = src.level_mut(n);
        for j in 0..=g.ny {
            sl[j] = a * (zl[j] - tl[j]);
        }
    }
    src
}

/// Distance between a control and the stencil characterization
/// `sign/(penalty alpha^2) d_y p` on the actuated edge, relative to the
/// control norm; the sign is chosen to fit best and reported.
fn characterization(setup: &ControlSetup, v: &[f64], adjoint: &Field) -> Result<(f64, f64)> {
    let g = setup.ops.grid;
    let dtrace = normal_derivative_trace(adjoint, &g, setup.side)?;
    let co = &setup.ops.coeffs;
    let formula: Vec<f64> = (0..g.levels())
        .map(|n| dtrace[n] / (setup.penalty * co.alpha[n] * co.alpha[n]))
        .collect();
    let vnorm = trace_inner(v, v, &g).sqrt();
    let scale = if vnorm > 0.0 { vnorm } else { 1.0 };
    let mut best = (f64::INFINITY, 1.0);
    for sign in [1.0, -1.0] {
        let diff: Vec<f64> = v
            .iter()
            .zip(&formula)
            .map(|(a, f)| a - sign * f)
            .collect();
        let d = trace_inner(&diff, &diff, &g).sqrt() / scale;
        if d < best.0 {
            best = (d, sign);
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug)]
pub struct FixedPointOptions {
    /// Relative change of the feedback trace between sweeps.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimalitySystem {
    pub state: Field,
    pub adjoint: Field,
    /// Converged follower feedback trace on the actuated side.
    pub feedback: Vec<f64>,
    pub iterations: usize,
    pub change_history: Vec<f64>,
}

/// Solve the coupled state/adjoint optimality system by feedback sweeps:
/// march the state with trace `leader + feedback`, march the adjoint on the
/// tracking misfit, and refresh the feedback from the adjoint's edge flux
/// `(1/penalty) (beta/alpha)|_edge d_nu p`. Contracts for reasonable
/// penalties; small penalties make the sweep non-contractive and fail hard.
pub fn solve_optimality_system(
    problem: &FollowerProblem,
    opts: FixedPointOptions,
) -> Result<OptimalitySystem> {
    let zero = vec![0.0; problem.setup.ops.grid.levels()];
    problem.validate(&zero)?;
    let setup = &problem.setup;
    let g = setup.ops.grid;
    let edge = setup.edge_factor();
    let nu = setup.outward_sign();

    let mut feedback = vec![0.0; g.levels()];
    let mut history = Vec::new();
    let mut guard_scale: Option<f64> = None;
    for it in 0..opts.max_iter {
        let trace = problem.combined_trace(&feedback);
        let state = setup.forward_with_trace(&trace)?;
        let adjoint = solve_backward(setup.ops, &tracking_source(setup, &state))?;
        let dtrace = normal_derivative_trace(&adjoint, &g, setup.side)?;
        let next: Vec<f64> = (0..g.levels())
            .map(|n| nu * edge[n] * dtrace[n] / setup.penalty)
            .collect();
        let diff: Vec<f64> = next.iter().zip(&feedback).map(|(a, b)| a - b).collect();
        let change = trace_inner(&diff, &diff, &g).sqrt();
        let size = trace_inner(&next, &next, &g).sqrt();
        history.push(change);
        let scale0 = *guard_scale.get_or_insert(size.max(1.0));
        if size > 1e8 * scale0 {
            return Err(Error::NonContractive {
                what: "follower feedback sweep",
                ratio: size / scale0,
            });
        }
        feedback = next;
        if change <= opts.tol * (1.0 + size) {
            return Ok(OptimalitySystem {
                state,
                adjoint,
                feedback,
                iterations: it + 1,
                change_history: history,
            });
        }
    }
    Err(Error::IterationLimit {
        what: "optimality-system feedback sweep",
        iterations: opts.max_iter,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}
