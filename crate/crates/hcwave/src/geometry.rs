//! Moving-boundary profiles and the transform onto the unit cylinder.
//!
//! A profile describes the right endpoint `alpha(t)` of the physical domain
//! together with declared bounds `(m, big_m)` on its speed. The admissible
//! class is pinned by three hypotheses:
//!
//! * `h1`: the domain starts with unit length, `alpha(0) = 1`;
//! * `h2`: the boundary speed stays inside `(m, big_m)` with
//!   `0 < m < big_m < 1` (strictly subluminal expansion);
//! * `h3`: the boundary speed is monotone in time.
//!
//! The cylinder-side coefficients and the control-time thresholds below only
//! depend on `alpha` and its first two derivatives, so a profile is just an
//! evaluator for that triple plus the declared speed window.

use crate::error::{Error, Result};
use std::fmt;
use std::sync::Arc;

/// Evaluator for a custom profile: `t -> (alpha, alpha', alpha'')`.
pub type ProfileFn = Arc<dyn Fn(f64) -> (f64, f64, f64) + Send + Sync>;

#[derive(Clone)]
pub enum ProfileKind {
    /// `alpha(t) = 1 + k t`.
    Affine { k: f64 },
    /// `alpha(t) = 1 + (t + arctan t) / c`; expansion decelerates forever.
    ArctanDrift { c: f64 },
    /// `alpha(t) = 1`: fixed domain, outside the moving-boundary hypotheses.
    /// Only usable where degenerate profiles are explicitly allowed.
    Constant,
    /// User-supplied evaluator.
    Custom(ProfileFn),
}

impl fmt::Debug for ProfileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProfileKind::Affine { k } => write!(f, "Affine {{ k: {k} }}"),
            ProfileKind::ArctanDrift { c } => write!(f, "ArctanDrift {{ c: {c} }}"),
            ProfileKind::Constant => write!(f, "Constant"),
            ProfileKind::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MonotoneDirection {
    Increasing,
    Decreasing,
}

/// Point evaluation of a profile.
#[derive(Clone, Copy, Debug)]
pub struct ProfilePoint {
    pub alpha: f64,
    pub dalpha: f64,
    pub ddalpha: f64,
}

#[derive(Clone, Debug)]
pub struct BoundaryProfile {
    pub kind: ProfileKind,
    /// Declared lower bound on the boundary speed.
    pub m: f64,
    /// Declared upper bound on the boundary speed.
    pub big_m: f64,
    /// Declared monotonicity direction of the speed.
    pub monotone: MonotoneDirection,
    degenerate: bool,
}

fn check_speed_window(m: f64, big_m: f64) -> Result<()> {
    if !(m.is_finite() && big_m.is_finite()) || !(0.0 < m && m < big_m && big_m < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "speed window must satisfy 0 < m < M < 1, got m={m}, M={big_m}"
        )));
    }
    Ok(())
}

impl BoundaryProfile {
    /// Uniform expansion `alpha(t) = 1 + k t` with declared window `(m, M)`.
    pub fn affine(k: f64, m: f64, big_m: f64) -> Result<Self> {
        check_speed_window(m, big_m)?;
        if !k.is_finite() || k <= m || k >= big_m {
            return Err(Error::InvalidParameter(format!(
                "affine slope must lie strictly inside (m, M) = ({m}, {big_m}), got k={k}"
            )));
        }
        Ok(BoundaryProfile {
            kind: ProfileKind::Affine { k },
            m,
            big_m,
            // Constant speed: monotone with ties in either direction.
            monotone: MonotoneDirection::Increasing,
            degenerate: false,
        })
    }

    /// Decelerating expansion `alpha(t) = 1 + (t + arctan t) / c`, `c > 2`.
    /// The speed `(1 + 1/(1+t^2))/c` falls from `2/c` towards `1/c`.
    pub fn arctan_drift(c: f64, m: f64, big_m: f64) -> Result<Self> {
        check_speed_window(m, big_m)?;
        if !c.is_finite() || c <= 2.0 {
            return Err(Error::InvalidParameter(format!(
                "arctan drift requires c > 2 so the initial speed 2/c stays below 1, got c={c}"
            )));
        }
        Ok(BoundaryProfile {
            kind: ProfileKind::ArctanDrift { c },
            m,
            big_m,
            monotone: MonotoneDirection::Decreasing,
            degenerate: false,
        })
    }

    /// Fixed domain `alpha(t) = 1`. Violates `h2` by construction; callers
    /// must opt in wherever degenerate profiles are accepted.
    pub fn constant() -> Self {
        BoundaryProfile {
            kind: ProfileKind::Constant,
            m: 0.0,
            big_m: 0.0,
            monotone: MonotoneDirection::Increasing,
            degenerate: true,
        }
    }

    /// Custom evaluator with declared window and monotonicity. The window is
    /// checked for well-formedness here and against samples by
    /// [`validate_hypotheses`].
    pub fn custom(
        f: ProfileFn,
        m: f64,
        big_m: f64,
        monotone: MonotoneDirection,
    ) -> Result<Self> {
        check_speed_window(m, big_m)?;
        Ok(BoundaryProfile {
            kind: ProfileKind::Custom(f),
            m,
            big_m,
            monotone,
            degenerate: false,
        })
    }

    /// Custom evaluator exempt from the speed-window constructor check, for
    /// exercising validator failures and degenerate runs.
    pub fn custom_unchecked(
        f: ProfileFn,
        m: f64,
        big_m: f64,
        monotone: MonotoneDirection,
    ) -> Self {
        BoundaryProfile {
            kind: ProfileKind::Custom(f),
            m,
            big_m,
            monotone,
            degenerate: true,
        }
    }

    /// Whether this profile was constructed through a path that bypasses the
    /// moving-boundary hypotheses (fixed domain or unchecked custom).
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Evaluate `(alpha, alpha', alpha'')` at `t >= 0`.
    pub fn eval(&self, t: f64) -> Result<ProfilePoint> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Domain(format!(
                "profile evaluation requires finite t >= 0, got {t}"
            )));
        }
        let (alpha, dalpha, ddalpha) = match &self.kind {
            ProfileKind::Affine { k } => (1.0 + k * t, *k, 0.0),
            ProfileKind::ArctanDrift { c } => {
                let s = 1.0 + t * t;
                (
                    1.0 + (t + t.atan()) / c,
                    (1.0 + 1.0 / s) / c,
                    -2.0 * t / (c * s * s),
                )
            }
            ProfileKind::Constant => (1.0, 0.0, 0.0),
            ProfileKind::Custom(f) => f(t),
        };
        if !(alpha.is_finite() && dalpha.is_finite() && ddalpha.is_finite()) {
            return Err(Error::Domain(format!(
                "profile returned non-finite values at t={t}"
            )));
        }
        if alpha <= 0.0 {
            return Err(Error::Domain(format!(
                "profile length must stay positive, got alpha({t}) = {alpha}"
            )));
        }
        Ok(ProfilePoint {
            alpha,
            dalpha,
            ddalpha,
        })
    }
}

/// Sampled check of the moving-boundary hypotheses on `[0, t_final]`.
#[derive(Clone, Debug)]
pub struct HypothesisReport {
    /// `alpha(0) = 1`.
    pub h1_initial_length: bool,
    /// Sampled speeds inside the declared `(m, M)` window, window well formed.
    pub h2_speed_window: bool,
    /// Sampled speeds monotone (ties allowed) in the declared direction.
    pub h3_speed_monotone: bool,
    pub alpha0: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub samples: usize,
    pub detail: Vec<String>,
}

impl HypothesisReport {
    pub fn all_pass(&self) -> bool {
        self.h1_initial_length && self.h2_speed_window && self.h3_speed_monotone
    }

    /// Fold the report into a hard error naming the first failed hypothesis.
    pub fn into_result(self) -> Result<()> {
        if self.all_pass() {
            return Ok(());
        }
        let which = if !self.h1_initial_length {
            "h1 (unit initial length)"
        } else if !self.h2_speed_window {
            "h2 (speed window)"
        } else {
            "h3 (monotone speed)"
        };
        Err(Error::Hypothesis {
            which,
            detail: self.detail.join("; "),
        })
    }
}

/// Sample the profile on a uniform grid over `[0, t_final]` and check the
/// three hypotheses against the declared window and direction.
pub fn validate_hypotheses(
    profile: &BoundaryProfile,
    t_final: f64,
    samples: usize,
) -> Result<HypothesisReport> {
    if !t_final.is_finite() || t_final <= 0.0 {
        return Err(Error::Domain(format!(
            "validation horizon must be positive, got {t_final}"
        )));
    }
    let samples = samples.max(3);
    let mut detail = Vec::new();

    let p0 = profile.eval(0.0)?;
    let h1 = (p0.alpha - 1.0).abs() <= 1e-12;
    if !h1 {
        detail.push(format!("alpha(0) = {} differs from 1", p0.alpha));
    }

    let window_ok = 0.0 < profile.m && profile.m < profile.big_m && profile.big_m < 1.0;
    if !window_ok {
        detail.push(format!(
            "declared window (m, M) = ({}, {}) is not inside (0, 1)",
            profile.m, profile.big_m
        ));
    }

    let mut speeds = Vec::with_capacity(samples);
    for i in 0..samples {
        let t = t_final * i as f64 / (samples - 1) as f64;
        speeds.push(profile.eval(t)?.dalpha);
    }
    let speed_min = speeds.iter().cloned().fold(f64::INFINITY, f64::min);
    let speed_max = speeds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let inside = speed_min > profile.m && speed_max < profile.big_m;
    if window_ok && !inside {
        detail.push(format!(
            "sampled speeds [{speed_min:.6}, {speed_max:.6}] leave the window ({}, {})",
            profile.m, profile.big_m
        ));
    }
    let h2 = window_ok && inside;

    let mut h3 = true;
    let tol = 1e-13 * (1.0 + speed_max.abs());
    for w in speeds.windows(2) {
        let step = w[1] - w[0];
        let bad = match profile.monotone {
            MonotoneDirection::Increasing => step < -tol,
            MonotoneDirection::Decreasing => step > tol,
        };
        if bad {
            h3 = false;
            detail.push(format!(
                "speed step {step:.3e} contradicts declared {:?} direction",
                profile.monotone
            ));
            break;
        }
    }

    Ok(HypothesisReport {
        h1_initial_length: h1,
        h2_speed_window: h2,
        h3_speed_monotone: h3,
        alpha0: p0.alpha,
        speed_min,
        speed_max,
        samples,
        detail,
    })
}

/// Cylinder-side coefficients `(beta, gamma, tau)` of the transformed wave
/// operator at `(y, t)`:
///
/// `beta = (1 - alpha'^2 y^2) / alpha`, `gamma = -2 alpha' y`,
/// `tau = -alpha'' y`.
pub fn coefficients(profile: &BoundaryProfile, y: f64, t: f64) -> Result<(f64, f64, f64)> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::Domain(format!(
            "coefficients are defined for y in [0, 1], got {y}"
        )));
    }
    let p = profile.eval(t)?;
    let beta = (1.0 - (p.dalpha * y).powi(2)) / p.alpha;
    let gamma = -2.0 * p.dalpha * y;
    let tau = -p.ddalpha * y;
    Ok((beta, gamma, tau))
}

/// Control-time thresholds `(t1, t2)` for the two actuated sides:
///
/// `t1 = (exp(2 M^2 (1-m) / (m (1-M)^3)) - 1) / M`
/// `t2 = (exp(2 M^2 (1-m)(1+M) / (m (1-M)^2)) - 1) / M`
///
/// Control horizons at or below the matching threshold only warrant a
/// warning: the sufficient-time result does not apply there.
pub fn control_time_thresholds(m: f64, big_m: f64) -> Result<(f64, f64)> {
    check_speed_window(m, big_m)?;
    let e1 = 2.0 * big_m * big_m * (1.0 - m) / (m * (1.0 - big_m).powi(3));
    let e2 = 2.0 * big_m * big_m * (1.0 - m) * (1.0 + big_m) / (m * (1.0 - big_m).powi(2));
    Ok(((e1.exp() - 1.0) / big_m, (e2.exp() - 1.0) / big_m))
}

/// Initial data sampled on a uniform grid over the unit interval.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalData {
    pub u0: Vec<f64>,
    pub u1: Vec<f64>,
}

impl PhysicalData {
    pub fn new(u0: Vec<f64>, u1: Vec<f64>) -> Result<Self> {
        if u0.len() != u1.len() || u0.len() < 3 {
            return Err(Error::Shape(format!(
                "initial data needs matching lengths >= 3, got {} and {}",
                u0.len(),
                u1.len()
            )));
        }
        Ok(PhysicalData { u0, u1 })
    }

    pub fn len(&self) -> usize {
        self.u0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u0.is_empty()
    }
}

/// Transformed initial data on the cylinder.
#[derive(Clone, Debug, PartialEq)]
pub struct CylinderData {
    pub z0: Vec<f64>,
    pub z1: Vec<f64>,
}

/// Second-order derivative of uniformly sampled values: centered in the
/// interior, one-sided three-point at the ends.
fn sampled_derivative(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
    for j in 1..n - 1 {
        d[j] = (f[j + 1] - f[j - 1]) / (2.0 * h);
    }
    d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
    d
}

/// Pull physical initial data back to the cylinder. With `alpha(0) = 1` the
/// position is unchanged and the velocity picks up the advective correction
/// from the moving coordinate frame:
///
/// `z0(y) = u0(y)`, `z1(y) = u1(y) + alpha'(0) y u0'(y)`.
pub fn transform_data(profile: &BoundaryProfile, data: &PhysicalData) -> Result<CylinderData> {
    let p0 = profile.eval(0.0)?;
    let n = data.len();
    let h = 1.0 / (n - 1) as f64;
    let du0 = sampled_derivative(&data.u0, h);
    let z0 = data.u0.clone();
    let mut z1 = Vec::with_capacity(n);
    for j in 0..n {
        let y = j as f64 * h;
        z1.push(data.u1[j] + p0.dalpha * y * du0[j]);
    }
    Ok(CylinderData { z0, z1 })
}
