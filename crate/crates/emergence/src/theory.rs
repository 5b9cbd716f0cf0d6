//! Initial-state constants, hypothesis checks, probability bounds and
//! trajectory envelope verification.
//!
//! Everything here is closed-form arithmetic on scalar inputs: the system
//! parameters, the initial block norms, the emergence thresholds and the
//! noise norm law. The central quantity for the first-kind systems is the
//! unique positive root of
//!
//! ```text
//! M(z) = z^s - c1 z^q - c2,    s > q > 0, c1, c2 >= 0,
//! ```
//!
//! which caps the excursion of the x block; the closed-form case constants
//! U0 below are upper bounds for it obtained from the root bound
//! `z* <= max((2 c1)^(1/(s-q)), (2 c2)^(1/s))`.
//!
//! From U0 follow the invariant radius B0, the state-relative noise ceiling
//! (written `ceiling` here; noise with `||H|| <= ceiling * ||block||`
//! never destroys the contraction), the admissible step bound for the
//! discrete first-kind system, and the emergence deadlines. A probability
//! bound multiplies per-draw or pathwise noise-law values over the
//! deadline window.
//!
//! `verify_trajectory` replays a recorded trajectory against every envelope
//! the constants imply. The checks are grid-exact for the explicit Euler
//! update with capped noise, up to floating point roundoff, so the
//! tolerance is a plain 1e-9 relative slack with no discretization
//! allowance.

use serde::Serialize;

use crate::error::{EmergenceError, Result};
use crate::noise::{NoiseModel, NormCdf};
use crate::operators::{HypothesisCheck, HypothesisReport};
use crate::systems::{
    ContinuousIIParams, ContinuousIParams, DiscreteIIParams, DiscreteIParams, SystemParams,
    SystemVariant, Trajectory,
};

/// Relative slack for envelope checks; roundoff only, no scheme allowance.
const REL_TOL: f64 = 1e-9;

/// Tolerance for classifying the growth exponent against its critical value.
const CASE_TOL: f64 = 1e-12;

/// `Q(delta) = max(1, 1/delta)`, the geometric-sum constant for exponents
/// in (0, 1].
pub fn q_of_delta(delta: f64) -> f64 {
    (1.0 / delta).max(1.0)
}

/// Upper bound for the positive root of `z^s - c1 z^q - c2`.
pub fn root_upper_bound(s: f64, q: f64, c1: f64, c2: f64) -> f64 {
    let from_c1 = if c1 > 0.0 {
        (2.0 * c1).powf(1.0 / (s - q))
    } else {
        0.0
    };
    let from_c2 = if c2 > 0.0 {
        (2.0 * c2).powf(1.0 / s)
    } else {
        0.0
    };
    from_c1.max(from_c2)
}

/// Unique positive root of `M(z) = z^s - c1 z^q - c2` for `s > q > 0` and
/// nonnegative coefficients, at least one positive.
///
/// Safeguarded Newton iteration inside the bracket `[0, hi]`, where hi is
/// the closed-form root bound (expanded if roundoff puts the root outside).
/// `M` is negative below the root and positive above it, so the bracket is
/// maintained by sign.
pub fn positive_root(s: f64, q: f64, c1: f64, c2: f64) -> Result<f64> {
    if !(s.is_finite() && q.is_finite() && s > q && q > 0.0) {
        return Err(EmergenceError::InvalidParameter(format!(
            "root solve needs s > q > 0, got s={s}, q={q}"
        )));
    }
    if !(c1.is_finite() && c2.is_finite() && c1 >= 0.0 && c2 >= 0.0 && c1 + c2 > 0.0) {
        return Err(EmergenceError::InvalidParameter(format!(
            "root solve needs nonnegative coefficients, not both zero, got c1={c1}, c2={c2}"
        )));
    }
    if c1 == 0.0 {
        return Ok(c2.powf(1.0 / s));
    }
    if c2 == 0.0 {
        return Ok(c1.powf(1.0 / (s - q)));
    }
    let m = |z: f64| z.powf(s) - c1 * z.powf(q) - c2;
    let dm = |z: f64| s * z.powf(s - 1.0) - c1 * q * z.powf(q - 1.0);
    let mut lo = 0.0f64;
    let mut hi = root_upper_bound(s, q, c1, c2);
    for _ in 0..64 {
        if m(hi) >= 0.0 {
            break;
        }
        hi *= 2.0;
    }
    let mut z = hi;
    for _ in 0..200 {
        let f = m(z);
        if f > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let d = dm(z);
        let newton = z - f / d;
        z = if d.is_finite() && d != 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (hi - lo) <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    Ok(z)
}

/// Position of the growth exponent relative to its critical value
/// (beta + gamma vs 1 for the discrete first-kind system, 2 beta + gamma
/// vs 1 for the continuous one).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthCase {
    Subcritical,
    Critical,
    Supercritical,
}

fn classify(exponent_sum: f64) -> GrowthCase {
    if (exponent_sum - 1.0).abs() <= CASE_TOL {
        GrowthCase::Critical
    } else if exponent_sum < 1.0 {
        GrowthCase::Subcritical
    } else {
        GrowthCase::Supercritical
    }
}

fn require_norm(label: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(EmergenceError::InvalidParameter(format!(
            "{label} must be a finite nonnegative norm, got {v}"
        )))
    }
}

/// Initial-state constants of the discrete first-kind system.
#[derive(Debug, Clone, Serialize)]
pub struct DiscreteIConstants {
    pub case: GrowthCase,
    pub q_delta: f64,
    /// Drift mass `a = (2 C / G) Q(delta) ||y(0)||^delta`.
    pub a: f64,
    /// `b = 1 + ||x(0)||`.
    pub b: f64,
    /// Case-dependent excursion cap for `1 + ||x||`; absent when the case
    /// admits none for this initial state.
    pub u0: Option<f64>,
    /// Invariant radius `B0 = U0 - 1` for `||x||`.
    pub b0: Option<f64>,
    /// State-relative noise ceiling `2^(-beta-1) G / U0^beta`.
    pub ceiling: Option<f64>,
    /// Admissible step bound `min(1/G, U0^(1-gamma) / (C ||y(0)||^delta))`.
    pub h_max: Option<f64>,
    pub notes: Vec<String>,
}

pub fn constants_discrete_i(
    p: &DiscreteIParams,
    x0_norm: f64,
    y0_norm: f64,
) -> Result<DiscreteIConstants> {
    require_norm("||x(0)||", x0_norm)?;
    require_norm("||y(0)||", y0_norm)?;
    let q_delta = q_of_delta(p.delta);
    let a = (2.0 * p.c / p.g) * q_delta * y0_norm.powf(p.delta);
    let b = 1.0 + x0_norm;
    let sum = p.beta + p.gamma;
    let case = classify(sum);
    let mut notes = Vec::new();
    let u0 = match case {
        GrowthCase::Subcritical => {
            let from_a = if a > 0.0 {
                (2.0 * a).powf(1.0 / (1.0 - sum))
            } else {
                0.0
            };
            Some(from_a.max(2.0 * b))
        }
        GrowthCase::Critical => {
            if a < 1.0 {
                Some(b / (1.0 - a))
            } else {
                notes.push(format!(
                    "critical growth needs the drift mass below one, got a = {a}"
                ));
                None
            }
        }
        GrowthCase::Supercritical => Some(sum * b / (sum - 1.0)),
    };
    let b0 = u0.map(|u| u - 1.0);
    let ceiling = u0.map(|u| 2.0f64.powf(-p.beta - 1.0) * p.g / u.powf(p.beta));
    let h_max = u0.map(|u| {
        let drift = p.c * y0_norm.powf(p.delta);
        let kernel_term = if drift > 0.0 {
            u.powf(1.0 - p.gamma) / drift
        } else {
            f64::INFINITY
        };
        (1.0 / p.g).min(kernel_term)
    });
    if p.beta == 0.0 {
        notes.push(
            "the step bound's kernel-ratio term is taken in its reduced form \
             U0^(1-gamma) / (C ||y(0)||^delta), which extends continuously to beta = 0"
                .into(),
        );
    }
    Ok(DiscreteIConstants {
        case,
        q_delta,
        a,
        b,
        u0,
        b0,
        ceiling,
        h_max,
        notes,
    })
}

/// Initial-state constants of the discrete second-kind system: the two
/// state-relative noise ceilings. Each equation's ceiling is built from the
/// other block's initial norm, because that block's configuration drives
/// the operator.
#[derive(Debug, Clone, Serialize)]
pub struct DiscreteIIConstants {
    /// Ceiling for the x-equation noise: `G1 / (2 (1 + ||y(0)||)^beta1)`.
    pub ceiling_x: f64,
    /// Ceiling for the y-equation noise: `G2 / (2 (1 + ||x(0)||)^beta2)`.
    pub ceiling_y: f64,
}

pub fn constants_discrete_ii(
    p: &DiscreteIIParams,
    x0_norm: f64,
    y0_norm: f64,
) -> Result<DiscreteIIConstants> {
    require_norm("||x(0)||", x0_norm)?;
    require_norm("||y(0)||", y0_norm)?;
    Ok(DiscreteIIConstants {
        ceiling_x: p.g1 / (2.0 * (1.0 + y0_norm).powf(p.beta1)),
        ceiling_y: p.g2 / (2.0 * (1.0 + x0_norm).powf(p.beta2)),
    })
}

/// Initial-state constants of the continuous first-kind system.
#[derive(Debug, Clone, Serialize)]
pub struct ContinuousIConstants {
    pub case: GrowthCase,
    pub a: f64,
    pub b: f64,
    /// `alpha = 2 beta / (1 - gamma)`, the growth exponent of the squared
    /// excursion equation.
    pub alpha: f64,
    /// Case-dependent cap for `1 + ||x||^2`.
    pub u0: Option<f64>,
    /// Invariant radius for the squared norm: `||x(t)||^2 <= B0`.
    pub b0: Option<f64>,
    /// Limit-envelope amplitude `B1 = 2 C ||y(0)||^delta B0^(gamma/2+beta) / (delta K)`.
    pub b1: Option<f64>,
    /// State-relative noise ceiling `2^(-beta-1) kappa / U0^beta`.
    pub ceiling: Option<f64>,
    pub notes: Vec<String>,
}

pub fn constants_continuous_i(
    p: &ContinuousIParams,
    x0_norm: f64,
    y0_norm: f64,
) -> Result<ContinuousIConstants> {
    require_norm("||x(0)||", x0_norm)?;
    require_norm("||y(0)||", y0_norm)?;
    let one_m_gamma = 1.0 - p.gamma;
    let a = 2.0f64.powf((1.0 + p.gamma + 2.0 * p.beta) / one_m_gamma)
        * (one_m_gamma * p.c).powf(2.0 / one_m_gamma)
        * y0_norm.powf(2.0 * p.delta / one_m_gamma)
        / (p.delta * p.kappa).powf(2.0 / one_m_gamma);
    let b = 2.0f64.powf((1.0 + p.gamma) / one_m_gamma) * (1.0 + x0_norm * x0_norm);
    let alpha = 2.0 * p.beta / one_m_gamma;
    let sum = 2.0 * p.beta + p.gamma;
    let case = classify(sum);
    let mut notes = Vec::new();
    let u0 = match case {
        GrowthCase::Subcritical => {
            let from_a = if a > 0.0 {
                (2.0 * a).powf(one_m_gamma / (one_m_gamma - 2.0 * p.beta))
            } else {
                0.0
            };
            Some(from_a.max(2.0 * b))
        }
        GrowthCase::Critical => {
            if a < 1.0 {
                Some(b / (1.0 - a))
            } else {
                notes.push(format!(
                    "critical growth needs the drift mass below one, got a = {a}"
                ));
                None
            }
        }
        GrowthCase::Supercritical => {
            if a > 0.0 {
                Some((1.0 / (a * alpha)).powf(1.0 / (alpha - 1.0)))
            } else {
                notes.push("supercritical growth needs a positive drift mass".into());
                None
            }
        }
    };
    let b0 = u0.map(|u| u - 1.0);
    let b1 = b0.map(|b0| {
        2.0 * p.c * y0_norm.powf(p.delta) * b0.powf(p.gamma / 2.0 + p.beta) / (p.delta * p.kappa)
    });
    let ceiling = u0.map(|u| 2.0f64.powf(-p.beta - 1.0) * p.kappa / u.powf(p.beta));
    notes.push("the noise ceiling is built from the coercivity floor constant kappa".into());
    Ok(ContinuousIConstants {
        case,
        a,
        b,
        alpha,
        u0,
        b0,
        b1,
        ceiling,
        notes,
    })
}

/// Initial-state constants of the continuous second-kind system. The
/// indices cross: the x-equation ceiling is set by the y-equation floor
/// constants and vice versa, because each equation's operator is driven by
/// the other block.
#[derive(Debug, Clone, Serialize)]
pub struct ContinuousIIConstants {
    /// Ceiling for the x-equation noise: `K2 / (2 (1 + ||y(0)||^2)^beta2)`.
    pub ceiling_x: f64,
    /// Ceiling for the y-equation noise: `K1 / (2 (1 + ||x(0)||^2)^beta1)`.
    pub ceiling_y: f64,
}

pub fn constants_continuous_ii(
    p: &ContinuousIIParams,
    x0_norm: f64,
    y0_norm: f64,
) -> Result<ContinuousIIConstants> {
    require_norm("||x(0)||", x0_norm)?;
    require_norm("||y(0)||", y0_norm)?;
    Ok(ContinuousIIConstants {
        ceiling_x: p.kappa2 / (2.0 * (1.0 + y0_norm * y0_norm).powf(p.beta2)),
        ceiling_y: p.kappa1 / (2.0 * (1.0 + x0_norm * x0_norm).powf(p.beta1)),
    })
}

/// Case-aware scalar hypotheses of the discrete first-kind theorem: the
/// step bound and the growth-case side condition.
pub fn check_hypotheses_discrete_i(
    p: &DiscreteIParams,
    consts: &DiscreteIConstants,
    y0_norm: f64,
) -> HypothesisReport {
    let mut checks = Vec::new();
    match consts.h_max {
        Some(h_max) => checks.push(HypothesisCheck::upper(
            "step size within the admissible bound",
            p.h,
            h_max,
        )),
        None => checks.push(HypothesisCheck::upper(
            "step size within the admissible bound (undefined constants)",
            p.h,
            f64::NAN,
        )),
    }
    match consts.case {
        GrowthCase::Subcritical => {}
        GrowthCase::Critical => {
            let threshold = if p.c > 0.0 {
                (p.g / (2.0 * p.c * consts.q_delta)).powf(1.0 / p.delta)
            } else {
                f64::INFINITY
            };
            checks.push(HypothesisCheck::upper(
                "initial secondary spread below the critical threshold",
                y0_norm,
                threshold,
            ));
        }
        GrowthCase::Supercritical => {
            let sum = p.beta + p.gamma;
            let lhs = if consts.a > 0.0 {
                (1.0 / (consts.a * sum)).powf(1.0 / (sum - 1.0)) * (sum - 1.0) / sum
            } else {
                f64::INFINITY
            };
            let rhs = consts.b
                + p.h * ((sum / (sum - 1.0)) * consts.b).powf(p.gamma) * consts.a * p.g
                    / (2.0 * consts.q_delta);
            checks.push(HypothesisCheck::lower(
                "supercritical root margin above the drift term",
                lhs,
                rhs,
            ));
        }
    }
    HypothesisReport::from_checks(checks)
}

/// Step bounds of the discrete second-kind theorem.
pub fn check_hypotheses_discrete_ii(p: &DiscreteIIParams) -> HypothesisReport {
    HypothesisReport::from_checks(vec![
        HypothesisCheck::upper("x-equation step size below 1/G1", p.h1, 1.0 / p.g1),
        HypothesisCheck::upper("y-equation step size below 1/G2", p.h2, 1.0 / p.g2),
    ])
}

/// Growth-case side conditions of the continuous first-kind theorem.
pub fn check_hypotheses_continuous_i(
    p: &ContinuousIParams,
    consts: &ContinuousIConstants,
    y0_norm: f64,
) -> HypothesisReport {
    let mut checks = Vec::new();
    match consts.case {
        GrowthCase::Subcritical => {}
        GrowthCase::Critical => {
            let one_m_gamma = 1.0 - p.gamma;
            let threshold = if p.c > 0.0 {
                ((p.delta * p.kappa).powi(2)
                    / (2.0f64.powf(1.0 + p.gamma + 2.0 * p.beta) * (one_m_gamma * p.c).powi(2)))
                .powf(1.0 / (2.0 * p.delta))
            } else {
                f64::INFINITY
            };
            checks.push(HypothesisCheck::upper(
                "initial secondary spread below the critical threshold",
                y0_norm,
                threshold,
            ));
        }
        GrowthCase::Supercritical => {
            let lhs = if consts.a > 0.0 && consts.alpha > 1.0 {
                (1.0 / (consts.a * consts.alpha)).powf(1.0 / (consts.alpha - 1.0))
                    * (consts.alpha - 1.0)
                    / consts.alpha
            } else {
                f64::NAN
            };
            checks.push(HypothesisCheck::lower(
                "supercritical root margin above the excursion offset",
                lhs,
                consts.b,
            ));
        }
    }
    if consts.u0.is_none() {
        checks.push(HypothesisCheck::lower(
            "excursion cap is defined for this initial state",
            f64::NAN,
            0.0,
        ));
    }
    HypothesisReport::from_checks(checks)
}

/// The continuous second-kind theorem has no scalar side conditions beyond
/// parameter positivity, which is enforced at construction.
pub fn check_hypotheses_continuous_ii(_p: &ContinuousIIParams) -> HypothesisReport {
    HypothesisReport::from_checks(Vec::new())
}

/// A noise channel's norm law, bundled for bound evaluation.
pub struct NoiseLaw<'a> {
    pub model: &'a NoiseModel,
    pub cdf: &'a NormCdf,
}

impl NoiseLaw<'_> {
    pub fn step_cdf(&self, x: f64) -> f64 {
        self.model.step_cdf(self.cdf, x)
    }

    pub fn path_bound(&self, x: f64, horizon: f64) -> Result<f64> {
        self.model.path_bound(self.cdf, x, horizon)
    }

    pub fn is_zero(&self) -> bool {
        self.model.spec.is_zero() || self.model.amplitude == 0.0
    }
}

/// The event a probability bound certifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// The y block reaches its threshold by the deadline.
    YEmergence,
    /// The y block reaches its threshold by the deadline and beyond the
    /// deadline the x block stays within mu of itself.
    YEmergenceAndXCauchy,
    /// Both blocks reach their thresholds by the shared deadline.
    BothEmerge,
    /// At least one block reaches its threshold by the shared deadline.
    EitherEmerges,
    /// Each block reaches its threshold by its own deadline.
    BothEmergeOwnDeadlines,
}

/// A named intermediate quantity of a bound computation.
#[derive(Debug, Clone, Serialize)]
pub struct BoundTerm {
    pub label: String,
    pub value: f64,
}

/// A certified lower bound on the probability of an emergence event.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub kind: EventKind,
    pub event: String,
    pub probability: f64,
    /// Overall deadline: iterations for the discrete systems, time for the
    /// continuous ones.
    pub deadline: f64,
    /// Per-block deadlines when the event gives each block its own.
    pub x_deadline: Option<f64>,
    pub y_deadline: Option<f64>,
    pub mu: Option<f64>,
    pub nu: Option<f64>,
    pub discrete_deadlines: bool,
    pub terms: Vec<BoundTerm>,
    pub notes: Vec<String>,
}

fn term(label: &str, value: f64) -> BoundTerm {
    BoundTerm {
        label: label.into(),
        value,
    }
}

fn require_threshold(label: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(EmergenceError::InvalidParameter(format!(
            "{label} must be a positive finite threshold, got {v}"
        )))
    }
}

fn undefined_constants() -> EmergenceError {
    EmergenceError::InvalidParameter(
        "initial-state constants are undefined for this case; the bound does not apply".into(),
    )
}

/// Emergence bound for the discrete first-kind system: y-emergence below nu
/// within the deadline, optionally extended by the Cauchy tail of x within
/// mu.
pub fn bound_discrete_i(
    p: &DiscreteIParams,
    consts: &DiscreteIConstants,
    y0_norm: f64,
    nu: f64,
    mu: Option<f64>,
    law: &NoiseLaw,
) -> Result<BoundReport> {
    require_threshold("nu", nu)?;
    let u0 = consts.u0.ok_or_else(undefined_constants)?;
    let ceiling = consts.ceiling.ok_or_else(undefined_constants)?;
    let mut notes = Vec::new();
    let t0 = if nu >= y0_norm {
        notes.push("threshold at or above the initial norm; emergence holds at step zero".into());
        0.0
    } else {
        (2.0 * u0.powf(p.beta) / (p.h * p.g)) * (y0_norm / nu).ln()
    };
    let f_step = law.step_cdf(ceiling * nu);
    let mut terms = vec![
        term("t0_iterations", t0),
        term("noise_ceiling", ceiling),
        term("per_step_law_at_ceiling_nu", f_step),
    ];
    match mu {
        None => {
            let deadline = t0.ceil();
            Ok(BoundReport {
                kind: EventKind::YEmergence,
                event: format!(
                    "the secondary block norm reaches {nu} within {deadline} iterations"
                ),
                probability: f_step.powf(deadline),
                deadline,
                x_deadline: None,
                y_deadline: Some(deadline),
                mu: None,
                nu: Some(nu),
                discrete_deadlines: true,
                terms,
                notes,
            })
        }
        Some(mu) => {
            require_threshold("mu", mu)?;
            let amplitude = consts.a * u0.powf(p.beta + p.gamma);
            let t1 = if mu >= amplitude {
                notes.push(
                    "mu is at or above the limit-envelope amplitude; the tail holds from step zero"
                        .into(),
                );
                0.0
            } else {
                (2.0 * u0.powf(p.beta) / (p.delta * p.h * p.g)) * (amplitude / mu).ln()
            };
            terms.push(term("t1_iterations", t1));
            terms.push(term("limit_envelope_amplitude", amplitude));
            let deadline = t0.max(t1).ceil();
            Ok(BoundReport {
                kind: EventKind::YEmergenceAndXCauchy,
                event: format!(
                    "the secondary block norm reaches {nu} within {deadline} iterations and \
                     beyond that the x block moves less than {mu}"
                ),
                probability: f_step.powf(deadline),
                deadline,
                x_deadline: None,
                y_deadline: Some(deadline),
                mu: Some(mu),
                nu: Some(nu),
                discrete_deadlines: true,
                terms,
                notes,
            })
        }
    }
}

/// Emergence bound for the discrete second-kind system: both blocks below
/// their thresholds within the shared deadline.
#[allow(clippy::too_many_arguments)]
pub fn bound_discrete_ii(
    p: &DiscreteIIParams,
    consts: &DiscreteIIConstants,
    x0_norm: f64,
    y0_norm: f64,
    mu: f64,
    nu: f64,
    law_x: &NoiseLaw,
    law_y: &NoiseLaw,
) -> Result<BoundReport> {
    require_threshold("mu", mu)?;
    require_threshold("nu", nu)?;
    let mut notes = Vec::new();
    let t2 = if mu >= x0_norm {
        notes.push("mu at or above the initial x norm; that emergence holds at step zero".into());
        0.0
    } else {
        (x0_norm / mu).ln() / (p.h1 * consts.ceiling_x)
    };
    let t3 = if nu >= y0_norm {
        notes.push("nu at or above the initial y norm; that emergence holds at step zero".into());
        0.0
    } else {
        (y0_norm / nu).ln() / (p.h2 * consts.ceiling_y)
    };
    let deadline = t2.max(t3).ceil();
    let f_x = law_x.step_cdf(consts.ceiling_x * mu);
    let f_y = law_y.step_cdf(consts.ceiling_y * nu);
    Ok(BoundReport {
        kind: EventKind::BothEmerge,
        event: format!(
            "both block norms reach their thresholds ({mu}, {nu}) within {deadline} iterations"
        ),
        probability: (f_x * f_y).powf(deadline),
        deadline,
        x_deadline: None,
        y_deadline: None,
        mu: Some(mu),
        nu: Some(nu),
        discrete_deadlines: true,
        terms: vec![
            term("t2_iterations", t2),
            term("t3_iterations", t3),
            term("noise_ceiling_x", consts.ceiling_x),
            term("noise_ceiling_y", consts.ceiling_y),
            term("per_step_law_x", f_x),
            term("per_step_law_y", f_y),
        ],
        notes,
    })
}

/// Emergence bound for the continuous first-kind system.
pub fn bound_continuous_i(
    p: &ContinuousIParams,
    consts: &ContinuousIConstants,
    y0_norm: f64,
    nu: f64,
    mu: Option<f64>,
    law: &NoiseLaw,
) -> Result<BoundReport> {
    require_threshold("nu", nu)?;
    let b0 = consts.b0.ok_or_else(undefined_constants)?;
    let b1 = consts.b1.ok_or_else(undefined_constants)?;
    let ceiling = consts.ceiling.ok_or_else(undefined_constants)?;
    let mut notes = vec![
        "the deadline uses the decay floor kappa / (2 B0^beta) on the invariant radius".into(),
    ];
    let t0 = if nu >= y0_norm {
        notes.push("threshold at or above the initial norm; emergence holds at time zero".into());
        0.0
    } else {
        (2.0 * b0.powf(p.beta) / p.kappa) * (y0_norm / nu).ln()
    };
    let mut terms = vec![term("t0_time", t0), term("noise_ceiling", ceiling)];
    match mu {
        None => Ok(BoundReport {
            kind: EventKind::YEmergence,
            event: format!("the secondary block norm reaches {nu} before time {t0}"),
            probability: law.path_bound(ceiling * nu, t0)?,
            deadline: t0,
            x_deadline: None,
            y_deadline: Some(t0),
            mu: None,
            nu: Some(nu),
            discrete_deadlines: false,
            terms,
            notes,
        }),
        Some(mu) => {
            require_threshold("mu", mu)?;
            let t1 = if mu >= b1 {
                notes.push(
                    "mu is at or above the limit-envelope amplitude; the tail holds from time zero"
                        .into(),
                );
                0.0
            } else {
                (2.0 * b0.powf(p.beta) / (p.kappa * p.delta)) * (b1 / mu).ln()
            };
            terms.push(term("t1_time", t1));
            terms.push(term("limit_envelope_amplitude", b1));
            let deadline = t0.max(t1);
            Ok(BoundReport {
                kind: EventKind::YEmergenceAndXCauchy,
                event: format!(
                    "the secondary block norm reaches {nu} before time {deadline} and beyond \
                     that the x block moves less than {mu}"
                ),
                probability: law.path_bound(ceiling * nu, deadline)?,
                deadline,
                x_deadline: None,
                y_deadline: Some(deadline),
                mu: Some(mu),
                nu: Some(nu),
                discrete_deadlines: false,
                terms,
                notes,
            })
        }
    }
}

/// Emergence bound for the continuous second-kind system. With noise on
/// both equations the certified event is that at least one block emerges by
/// the shared deadline; when one channel is identically zero the stronger
/// corollary form applies and both blocks get their own deadlines.
#[allow(clippy::too_many_arguments)]
pub fn bound_continuous_ii(
    p: &ContinuousIIParams,
    consts: &ContinuousIIConstants,
    x0_norm: f64,
    y0_norm: f64,
    mu: f64,
    nu: f64,
    law_x: &NoiseLaw,
    law_y: &NoiseLaw,
) -> Result<BoundReport> {
    require_threshold("mu", mu)?;
    require_threshold("nu", nu)?;
    let mut notes = Vec::new();
    let t2 = if mu >= x0_norm {
        notes.push("mu at or above the initial x norm; that emergence holds at time zero".into());
        0.0
    } else {
        (2.0 * (1.0 + y0_norm * y0_norm).powf(p.beta2) / p.kappa2) * (x0_norm / mu).ln()
    };
    let t3 = if nu >= y0_norm {
        notes.push("nu at or above the initial y norm; that emergence holds at time zero".into());
        0.0
    } else {
        (2.0 * (1.0 + x0_norm * x0_norm).powf(p.beta1) / p.kappa1) * (y0_norm / nu).ln()
    };
    let deadline = t2.max(t3);
    let terms = vec![
        term("t2_time", t2),
        term("t3_time", t3),
        term("noise_ceiling_x", consts.ceiling_x),
        term("noise_ceiling_y", consts.ceiling_y),
    ];
    match (law_x.is_zero(), law_y.is_zero()) {
        (true, true) => {
            notes.push("both channels are zero; the decay is deterministic".into());
            Ok(BoundReport {
                kind: EventKind::BothEmergeOwnDeadlines,
                event: format!(
                    "x reaches {mu} before time {t2} and y reaches {nu} before time {t3}"
                ),
                probability: 1.0,
                deadline,
                x_deadline: Some(t2),
                y_deadline: Some(t3),
                mu: Some(mu),
                nu: Some(nu),
                discrete_deadlines: false,
                terms,
                notes,
            })
        }
        (true, false) => {
            notes.push("the x-equation channel is zero; the joint corollary form applies".into());
            Ok(BoundReport {
                kind: EventKind::BothEmergeOwnDeadlines,
                event: format!(
                    "x reaches {mu} before time {t2} and y reaches {nu} before time {t3}"
                ),
                probability: law_y.path_bound(consts.ceiling_y * nu, t3)?,
                deadline,
                x_deadline: Some(t2),
                y_deadline: Some(t3),
                mu: Some(mu),
                nu: Some(nu),
                discrete_deadlines: false,
                terms,
                notes,
            })
        }
        (false, true) => {
            notes.push("the y-equation channel is zero; the joint corollary form applies".into());
            Ok(BoundReport {
                kind: EventKind::BothEmergeOwnDeadlines,
                event: format!(
                    "x reaches {mu} before time {t2} and y reaches {nu} before time {t3}"
                ),
                probability: law_x.path_bound(consts.ceiling_x * mu, t2)?,
                deadline,
                x_deadline: Some(t2),
                y_deadline: Some(t3),
                mu: Some(mu),
                nu: Some(nu),
                discrete_deadlines: false,
                terms,
                notes,
            })
        }
        (false, false) => Ok(BoundReport {
            kind: EventKind::EitherEmerges,
            event: format!(
                "at least one block norm reaches its threshold ({mu} or {nu}) before time \
                 {deadline}"
            ),
            probability: law_x.path_bound(consts.ceiling_x * mu, deadline)?
                * law_y.path_bound(consts.ceiling_y * nu, deadline)?,
            deadline,
            x_deadline: None,
            y_deadline: None,
            mu: Some(mu),
            nu: Some(nu),
            discrete_deadlines: false,
            terms,
            notes,
        }),
    }
}

/// Constants bundle matching a system variant, for trajectory verification.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "system", rename_all = "kebab-case")]
pub enum TheoryConstants {
    DiscreteI(DiscreteIConstants),
    #[serde(rename = "discrete-ii")]
    DiscreteII(DiscreteIIConstants),
    ContinuousI(ContinuousIConstants),
    #[serde(rename = "continuous-ii")]
    ContinuousII(ContinuousIIConstants),
}

/// One envelope replayed over a trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeCheck {
    pub label: String,
    pub points_checked: usize,
    /// Worst observed excess over the envelope, relative to
    /// `max(1, |allowed|)`; negative values mean the envelope held with
    /// margin everywhere.
    pub worst_excess: f64,
    pub worst_step: Option<u64>,
    pub violated: bool,
}

/// Outcome of replaying every applicable envelope over one trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct ViolationReport {
    pub checks: Vec<EnvelopeCheck>,
    /// Envelope families that could not be evaluated, with the reason.
    pub skipped: Vec<String>,
    pub violated: bool,
}

struct CheckAcc {
    label: String,
    worst: f64,
    worst_step: Option<u64>,
    count: usize,
}

impl CheckAcc {
    fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            worst: f64::NEG_INFINITY,
            worst_step: None,
            count: 0,
        }
    }

    fn observe(&mut self, step: u64, observed: f64, allowed: f64) {
        self.count += 1;
        let excess = (observed - allowed) / allowed.abs().max(1.0);
        if excess > self.worst {
            self.worst = excess;
            self.worst_step = Some(step);
        }
    }

    fn finish(self) -> EnvelopeCheck {
        EnvelopeCheck {
            label: self.label,
            points_checked: self.count,
            worst_excess: if self.count == 0 {
                f64::NEG_INFINITY
            } else {
                self.worst
            },
            worst_step: self.worst_step,
            violated: self.count > 0 && self.worst > REL_TOL,
        }
    }
}

/// Longest trajectory for which the quadratic-cost Cauchy-tail check runs.
const CAUCHY_CHECK_MAX_POINTS: usize = 4001;

/// Replays every envelope the constants imply over a recorded trajectory.
///
/// Envelope families whose noise hypotheses did not hold pathwise (channels
/// not clipped, or clipped above the required ceiling) are skipped with a
/// notice rather than reported as violations, as are families that need
/// recorded operator quantities or full states the run did not keep.
pub fn verify_trajectory(
    trajectory: &Trajectory,
    params: &SystemParams,
    constants: &TheoryConstants,
) -> Result<ViolationReport> {
    match (trajectory.variant, params, constants) {
        (SystemVariant::DiscreteI, SystemParams::DiscreteI(p), TheoryConstants::DiscreteI(c)) => {
            Ok(verify_discrete_i(trajectory, p, c))
        }
        (
            SystemVariant::DiscreteII,
            SystemParams::DiscreteII(p),
            TheoryConstants::DiscreteII(c),
        ) => Ok(verify_discrete_ii(trajectory, p, c)),
        (
            SystemVariant::ContinuousI,
            SystemParams::ContinuousI(p),
            TheoryConstants::ContinuousI(c),
        ) => Ok(verify_continuous_i(trajectory, p, c)),
        (
            SystemVariant::ContinuousII,
            SystemParams::ContinuousII(p),
            TheoryConstants::ContinuousII(c),
        ) => Ok(verify_continuous_ii(trajectory, p, c)),
        _ => Err(EmergenceError::InvalidParameter(
            "trajectory, parameters and constants describe different systems".into(),
        )),
    }
}

fn finish_report(checks: Vec<CheckAcc>, skipped: Vec<String>) -> ViolationReport {
    let checks: Vec<EnvelopeCheck> = checks.into_iter().map(CheckAcc::finish).collect();
    let violated = checks.iter().any(|c| c.violated);
    ViolationReport {
        checks,
        skipped,
        violated,
    }
}

fn verify_discrete_i(
    trajectory: &Trajectory,
    p: &DiscreteIParams,
    consts: &DiscreteIConstants,
) -> ViolationReport {
    let mut checks = Vec::new();
    let mut skipped = Vec::new();
    let points = &trajectory.points;
    if points.is_empty() {
        return finish_report(checks, vec!["trajectory has no points".into()]);
    }
    let y0 = points[0].y_norm;
    let (Some(u0), Some(b0), Some(ceiling)) = (consts.u0, consts.b0, consts.ceiling) else {
        return finish_report(
            checks,
            vec!["initial-state constants are undefined; no envelopes apply".into()],
        );
    };
    if !trajectory.primary_channel.surely_within(ceiling) {
        return finish_report(
            checks,
            vec![format!(
                "noise channel is not capped at the ceiling {ceiling}; envelopes are not implied"
            )],
        );
    }

    // Per-step contraction product: the secondary block decays at least as
    // fast as the product of kernel-floor factors inflated by the ceiling.
    let mut product = CheckAcc::new("secondary block within the per-step contraction product");
    let mut running = y0;
    product.observe(0, points[0].y_norm, running);
    for t in 1..points.len() {
        let x_prev = points[t - 1].x_norm;
        running *= 1.0 - p.h * p.g / (1.0 + x_prev).powf(p.beta) + p.h * ceiling;
        product.observe(points[t].step, points[t].y_norm, running);
    }
    checks.push(product);

    let hypotheses = check_hypotheses_discrete_i(p, consts, y0);
    if hypotheses.satisfied {
        let rate = 1.0 - p.h * p.g / (2.0 * u0.powf(p.beta));
        let mut radius = CheckAcc::new("x block within the invariant radius");
        let mut decay = CheckAcc::new("secondary block within the geometric decay envelope");
        for point in points {
            radius.observe(point.step, point.x_norm, b0);
            decay.observe(point.step, point.y_norm, y0 * rate.powi(point.step as i32));
        }
        checks.push(radius);
        checks.push(decay);

        match &trajectory.x_states {
            Some(states) if states.len() <= CAUCHY_CHECK_MAX_POINTS => {
                let amplitude = consts.a * u0.powf(p.beta + p.gamma);
                let mut cauchy = CheckAcc::new("x block Cauchy within the limit envelope");
                for t in 0..states.len() {
                    let allowed = amplitude * rate.powf(p.delta * t as f64);
                    let mut worst = 0.0f64;
                    for tau in (t + 1)..states.len() {
                        worst = worst.max((&states[tau] - &states[t]).norm());
                    }
                    if t + 1 < states.len() {
                        cauchy.observe(points[t].step, worst, allowed);
                    }
                }
                checks.push(cauchy);
            }
            Some(_) => skipped.push(format!(
                "trajectory exceeds {CAUCHY_CHECK_MAX_POINTS} points; the quadratic Cauchy-tail \
                 check was not run"
            )),
            None => skipped.push(
                "full states were not recorded; the Cauchy-tail envelope was not checked".into(),
            ),
        }
    } else {
        skipped.push(
            "scalar hypotheses fail; invariant-radius and decay envelopes are not implied".into(),
        );
    }
    finish_report(checks, skipped)
}

fn verify_discrete_ii(
    trajectory: &Trajectory,
    p: &DiscreteIIParams,
    consts: &DiscreteIIConstants,
) -> ViolationReport {
    let mut checks = Vec::new();
    let skipped = Vec::new();
    let points = &trajectory.points;
    if points.is_empty() {
        return finish_report(checks, vec!["trajectory has no points".into()]);
    }
    let x_ok = trajectory.primary_channel.surely_within(consts.ceiling_x);
    let y_ok = trajectory
        .secondary_channel
        .is_some_and(|c| c.surely_within(consts.ceiling_y));
    if !(x_ok && y_ok) {
        return finish_report(
            checks,
            vec![
                "noise channels are not capped at their ceilings; envelopes are not implied".into(),
            ],
        );
    }
    let x0 = points[0].x_norm;
    let y0 = points[0].y_norm;
    let rate_x = 1.0 - p.h1 * consts.ceiling_x;
    let rate_y = 1.0 - p.h2 * consts.ceiling_y;
    let mut decay_x = CheckAcc::new("x block within its geometric decay envelope");
    let mut decay_y = CheckAcc::new("y block within its geometric decay envelope");
    for point in points {
        decay_x.observe(
            point.step,
            point.x_norm,
            x0 * rate_x.powi(point.step as i32),
        );
        decay_y.observe(
            point.step,
            point.y_norm,
            y0 * rate_y.powi(point.step as i32),
        );
    }
    checks.push(decay_x);
    checks.push(decay_y);
    finish_report(checks, skipped)
}

fn verify_continuous_i(
    trajectory: &Trajectory,
    p: &ContinuousIParams,
    consts: &ContinuousIConstants,
) -> ViolationReport {
    let mut checks = Vec::new();
    let mut skipped = Vec::new();
    let points = &trajectory.points;
    if points.is_empty() {
        return finish_report(checks, vec!["trajectory has no points".into()]);
    }
    let y0 = points[0].y_norm;
    let Some(ceiling) = consts.ceiling else {
        return finish_report(
            checks,
            vec!["initial-state constants are undefined; no envelopes apply".into()],
        );
    };
    if !trajectory.primary_channel.surely_within(ceiling) {
        return finish_report(
            checks,
            vec![format!(
                "noise channel is not capped at the ceiling {ceiling}; envelopes are not implied"
            )],
        );
    }

    // Running-minimum coercivity envelope; needs the recorded spectral gap.
    let have_phi = points.len() < 2
        || points[..points.len() - 1]
            .iter()
            .all(|pt| pt.coercivity_y_eq.is_some());
    if have_phi {
        let mut envelope =
            CheckAcc::new("secondary block within the running-minimum coercivity envelope");
        let mut theta = f64::INFINITY;
        envelope.observe(0, points[0].y_norm, y0);
        for t in 1..points.len() {
            theta = theta.min(points[t - 1].coercivity_y_eq.unwrap_or(f64::INFINITY));
            let allowed = y0 * (-points[t].time * (theta - ceiling)).exp();
            envelope.observe(points[t].step, points[t].y_norm, allowed);
        }
        checks.push(envelope);
    } else {
        skipped.push(
            "coercivity was not recorded; the running-minimum envelope was not checked".into(),
        );
    }

    let hypotheses = check_hypotheses_continuous_i(p, consts, y0);
    if hypotheses.satisfied {
        if let Some(b0) = consts.b0 {
            let mut radius = CheckAcc::new("squared x norm within the invariant radius");
            let mut decay =
                CheckAcc::new("secondary block within the constant-rate decay envelope");
            let rate = p.kappa / (2.0 * b0.powf(p.beta));
            for point in points {
                radius.observe(point.step, point.x_norm * point.x_norm, b0);
                decay.observe(point.step, point.y_norm, y0 * (-rate * point.time).exp());
            }
            checks.push(radius);
            checks.push(decay);
        }
    } else {
        skipped.push(
            "scalar hypotheses fail; invariant-radius and decay envelopes are not implied".into(),
        );
    }
    finish_report(checks, skipped)
}

fn verify_continuous_ii(
    trajectory: &Trajectory,
    _p: &ContinuousIIParams,
    consts: &ContinuousIIConstants,
) -> ViolationReport {
    let mut checks = Vec::new();
    let mut skipped = Vec::new();
    let points = &trajectory.points;
    if points.is_empty() {
        return finish_report(checks, vec!["trajectory has no points".into()]);
    }
    let x_ok = trajectory.primary_channel.surely_within(consts.ceiling_x);
    let y_ok = trajectory
        .secondary_channel
        .is_some_and(|c| c.surely_within(consts.ceiling_y));
    if !(x_ok && y_ok) {
        return finish_report(
            checks,
            vec![
                "noise channels are not capped at their ceilings; envelopes are not implied".into(),
            ],
        );
    }
    let x0 = points[0].x_norm;
    let y0 = points[0].y_norm;
    let dt = trajectory.time_step;

    let have_ops = points.len() < 2
        || points[..points.len() - 1]
            .iter()
            .all(|pt| pt.coercivity_x_eq.is_some() && pt.coercivity_y_eq.is_some());
    if have_ops {
        let mut int_x = CheckAcc::new("x block within its integral coercivity envelope");
        let mut int_y = CheckAcc::new("y block within its integral coercivity envelope");
        let mut sum_x = 0.0;
        let mut sum_y = 0.0;
        int_x.observe(0, x0, x0);
        int_y.observe(0, y0, y0);
        for t in 1..points.len() {
            sum_x += dt * (points[t - 1].coercivity_x_eq.unwrap_or(0.0) - consts.ceiling_x);
            sum_y += dt * (points[t - 1].coercivity_y_eq.unwrap_or(0.0) - consts.ceiling_y);
            int_x.observe(points[t].step, points[t].x_norm, x0 * (-sum_x).exp());
            int_y.observe(points[t].step, points[t].y_norm, y0 * (-sum_y).exp());
        }
        checks.push(int_x);
        checks.push(int_y);
    } else {
        skipped
            .push("coercivities were not recorded; the integral envelopes were not checked".into());
    }

    let mut const_x = CheckAcc::new("x block within its constant-rate decay envelope");
    let mut const_y = CheckAcc::new("y block within its constant-rate decay envelope");
    for point in points {
        const_x.observe(
            point.step,
            point.x_norm,
            x0 * (-consts.ceiling_x * point.time).exp(),
        );
        const_y.observe(
            point.step,
            point.y_norm,
            y0 * (-consts.ceiling_y * point.time).exp(),
        );
    }
    checks.push(const_x);
    checks.push(const_y);
    finish_report(checks, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{NoiseModel, NoiseSpec, Refresh, SeedStream};
    use crate::operators::KernelSpec;
    use crate::quotient::InnerProduct;
    use crate::systems::{
        integrate_continuous_i, run_discrete_ii, Block, BlockSpace, ChannelSampler, Dynamics,
        Geometry, JOperator, NoiseChannel, RunOptions, SystemState,
    };
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use proptest::prelude::*;

    /// Oracle: plain midpoint bisection with a fixed iteration budget,
    /// independent of the production safeguarded-Newton route.
    fn bisection_root(s: f64, q: f64, c1: f64, c2: f64) -> f64 {
        let m = |z: f64| z.powf(s) - c1 * z.powf(q) - c2;
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        while m(hi) < 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if m(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn q_of_delta_reference_values() {
        assert_eq!(q_of_delta(1.0), 1.0);
        assert_eq!(q_of_delta(0.5), 2.0);
        assert_eq!(q_of_delta(0.25), 4.0);
    }

    #[test]
    fn positive_root_golden_values() {
        // z - sqrt(z) - 1 = 0 has root phi^2 with phi the golden ratio.
        let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
        assert_relative_eq!(
            positive_root(1.0, 0.5, 1.0, 1.0).unwrap(),
            phi * phi,
            epsilon = 1e-12
        );
        // z^2 - z - 1 = 0 has root phi.
        assert_relative_eq!(
            positive_root(2.0, 1.0, 1.0, 1.0).unwrap(),
            phi,
            epsilon = 1e-12
        );
        // Degenerate coefficients have closed forms.
        assert_relative_eq!(positive_root(2.0, 1.0, 0.0, 9.0).unwrap(), 3.0);
        assert_relative_eq!(positive_root(3.0, 1.0, 4.0, 0.0).unwrap(), 2.0);
    }

    #[test]
    fn discrete_i_constants_frozen_example() {
        let p = DiscreteIParams {
            c: 1.0,
            gamma: 0.0,
            delta: 1.0,
            g: 1.0,
            beta: 0.5,
            h: 0.1,
        };
        let consts = constants_discrete_i(&p, 0.0, 0.5).unwrap();
        assert_eq!(consts.case, GrowthCase::Subcritical);
        assert_relative_eq!(consts.q_delta, 1.0);
        assert_relative_eq!(consts.a, 1.0);
        assert_relative_eq!(consts.b, 1.0);
        assert_relative_eq!(consts.u0.unwrap(), 4.0);
        assert_relative_eq!(consts.b0.unwrap(), 3.0);
        assert_relative_eq!(
            consts.ceiling.unwrap(),
            1.0 / (4.0 * 2.0f64.sqrt()),
            epsilon = 1e-15
        );
        assert_relative_eq!(consts.h_max.unwrap(), 1.0);
        // Deadline at nu = 0.05: (2 * 4^0.5 / (0.1 * 1)) ln 10 = 40 ln 10.
        let law_model = NoiseModel::per_step(NoiseSpec::UniformBall { radius: 1.0 });
        let cdf = NormCdf::new(&law_model.spec, 3).unwrap();
        let law = NoiseLaw {
            model: &law_model,
            cdf: &cdf,
        };
        let bound = bound_discrete_i(&p, &consts, 0.5, 0.05, None, &law).unwrap();
        assert_relative_eq!(bound.terms[0].value, 40.0 * 10.0f64.ln(), epsilon = 1e-12);
        assert_eq!(bound.deadline, 93.0);
    }

    #[test]
    fn discrete_i_step_bound_matches_the_unreduced_kernel_ratio_form() {
        // For beta > 0 the admissible step bound can also be written
        // (1 / (2^(1-gamma) C ||y0||^delta)) (G / (2 ceiling))^((1-gamma)/beta);
        // the implementation uses the reduced form, which must agree.
        let p = DiscreteIParams {
            c: 0.7,
            gamma: 0.3,
            delta: 0.8,
            g: 1.9,
            beta: 0.45,
            h: 0.01,
        };
        let consts = constants_discrete_i(&p, 0.6, 0.9).unwrap();
        let u0 = consts.u0.unwrap();
        let ceiling = consts.ceiling.unwrap();
        let reduced = u0.powf(1.0 - p.gamma) / (p.c * 0.9f64.powf(p.delta));
        let unreduced = (1.0 / (2.0f64.powf(1.0 - p.gamma) * p.c * 0.9f64.powf(p.delta)))
            * (p.g / (2.0 * ceiling)).powf((1.0 - p.gamma) / p.beta);
        assert_relative_eq!(reduced, unreduced, max_relative = 1e-12);
        assert_relative_eq!(
            consts.h_max.unwrap(),
            (1.0 / p.g).min(reduced),
            epsilon = 1e-12
        );
    }

    #[test]
    fn continuous_i_constants_frozen_example() {
        let p = ContinuousIParams {
            c: 1.0,
            gamma: 0.0,
            delta: 1.0,
            kappa: 1.0,
            beta: 0.0,
        };
        let consts = constants_continuous_i(&p, 0.0, 0.5).unwrap();
        assert_eq!(consts.case, GrowthCase::Subcritical);
        assert_relative_eq!(consts.a, 0.5);
        assert_relative_eq!(consts.b, 2.0);
        assert_relative_eq!(consts.alpha, 0.0);
        assert_relative_eq!(consts.u0.unwrap(), 4.0);
        assert_relative_eq!(consts.b0.unwrap(), 3.0);
        assert_relative_eq!(consts.b1.unwrap(), 1.0);
        assert_relative_eq!(consts.ceiling.unwrap(), 0.5);
        let model = NoiseModel {
            spec: NoiseSpec::UniformBall { radius: 1.0 },
            refresh: Refresh::Frozen { delta: 1.0 },
            amplitude: 1.0,
        };
        let cdf = NormCdf::new(&model.spec, 3).unwrap();
        let law = NoiseLaw {
            model: &model,
            cdf: &cdf,
        };
        let bound = bound_continuous_i(&p, &consts, 0.5, 0.05, None, &law).unwrap();
        assert_relative_eq!(bound.deadline, 2.0 * 10.0f64.ln(), epsilon = 1e-12);
        // Five frozen cells over the deadline, each below 0.5 * 0.05 = 0.025.
        let cells = (bound.deadline / 1.0).ceil();
        assert_relative_eq!(
            bound.probability,
            cdf.evaluate(0.025).powi(cells as i32),
            epsilon = 1e-12
        );
    }

    #[test]
    fn discrete_ii_constants_and_bound_frozen_example() {
        let p = DiscreteIIParams {
            g1: 1.0,
            beta1: 0.0,
            h1: 1.0,
            g2: 1.0,
            beta2: 0.0,
            h2: 1.0,
        };
        let consts = constants_discrete_ii(&p, 2.0f64.exp(), 1.0f64.exp()).unwrap();
        assert_relative_eq!(consts.ceiling_x, 0.5);
        assert_relative_eq!(consts.ceiling_y, 0.5);
        let model = NoiseModel::per_step(NoiseSpec::UniformBall { radius: 1.0 });
        let cdf = NormCdf::new(&model.spec, 2).unwrap();
        let law = NoiseLaw {
            model: &model,
            cdf: &cdf,
        };
        let bound = bound_discrete_ii(
            &p,
            &consts,
            2.0f64.exp(),
            1.0f64.exp(),
            1.0,
            1.0,
            &law,
            &law,
        )
        .unwrap();
        // T2 = ln(e^2) / 0.5 = 4, T3 = 2; per-step law (0.5)^2 = 0.25 each.
        assert_relative_eq!(bound.terms[0].value, 4.0, epsilon = 1e-12);
        assert_relative_eq!(bound.terms[1].value, 2.0, epsilon = 1e-12);
        assert_eq!(bound.deadline, 4.0);
        assert_relative_eq!(bound.probability, 0.0625f64.powi(4), epsilon = 1e-15);
    }

    #[test]
    fn continuous_ii_constants_frozen_example() {
        let p = ContinuousIIParams {
            kappa1: 1.0,
            beta1: 0.0,
            kappa2: 1.0,
            beta2: 0.0,
        };
        let consts = constants_continuous_ii(&p, 1.0, 0.7).unwrap();
        assert_relative_eq!(consts.ceiling_x, 0.5);
        assert_relative_eq!(consts.ceiling_y, 0.5);
        // T2 = 2 ln(||x0|| / mu), the ceiling identity: 1/ceiling_x = 2.
        let model_zero = NoiseModel {
            spec: NoiseSpec::Zero,
            refresh: Refresh::Frozen { delta: 1.0 },
            amplitude: 1.0,
        };
        let model_ball = NoiseModel {
            spec: NoiseSpec::UniformBall { radius: 0.1 },
            refresh: Refresh::Frozen { delta: 1.0 },
            amplitude: 1.0,
        };
        let cdf_zero = NormCdf::new(&model_zero.spec, 2).unwrap();
        let cdf_ball = NormCdf::new(&model_ball.spec, 2).unwrap();
        let law_zero = NoiseLaw {
            model: &model_zero,
            cdf: &cdf_zero,
        };
        let law_ball = NoiseLaw {
            model: &model_ball,
            cdf: &cdf_ball,
        };
        let bound =
            bound_continuous_ii(&p, &consts, 1.0, 0.7, 0.1, 0.07, &law_zero, &law_ball).unwrap();
        assert_eq!(bound.kind, EventKind::BothEmergeOwnDeadlines);
        assert_relative_eq!(
            bound.x_deadline.unwrap(),
            2.0 * 10.0f64.ln(),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            bound.y_deadline.unwrap(),
            2.0 * 10.0f64.ln(),
            epsilon = 1e-12
        );
        // Both channels active: the weaker either-block event.
        let bound2 =
            bound_continuous_ii(&p, &consts, 1.0, 0.7, 0.1, 0.07, &law_ball, &law_ball).unwrap();
        assert_eq!(bound2.kind, EventKind::EitherEmerges);
    }

    #[test]
    fn discrete_and_continuous_deadlines_agree_without_kernel_growth() {
        // At beta = gamma = 0 and G = kappa, h times the iteration deadline
        // equals the time deadline.
        let pd = DiscreteIParams {
            c: 1.0,
            gamma: 0.0,
            delta: 1.0,
            g: 2.0,
            beta: 0.0,
            h: 0.05,
        };
        let pc = ContinuousIParams {
            c: 1.0,
            gamma: 0.0,
            delta: 1.0,
            kappa: 2.0,
            beta: 0.0,
        };
        let cd = constants_discrete_i(&pd, 0.3, 0.8).unwrap();
        let cc = constants_continuous_i(&pc, 0.3, 0.8).unwrap();
        let t0_steps = (2.0 * cd.u0.unwrap().powf(0.0) / (pd.h * pd.g)) * (0.8f64 / 0.1).ln();
        let t0_time = (2.0 * cc.b0.unwrap().powf(0.0) / pc.kappa) * (0.8f64 / 0.1).ln();
        assert_relative_eq!(t0_steps * pd.h, t0_time, max_relative = 1e-12);
    }

    #[test]
    fn critical_case_without_margin_has_no_constants() {
        // a = (2C/G) Q(delta) ||y0||^delta = 1.2 >= 1 at the critical sum.
        let p = DiscreteIParams {
            c: 0.6,
            gamma: 0.5,
            delta: 1.0,
            g: 1.0,
            beta: 0.5,
            h: 0.01,
        };
        let consts = constants_discrete_i(&p, 0.0, 1.0).unwrap();
        assert_eq!(consts.case, GrowthCase::Critical);
        assert!(consts.u0.is_none());
        assert!(!consts.notes.is_empty());
        let report = check_hypotheses_discrete_i(&p, &consts, 1.0);
        assert!(!report.satisfied);
    }

    #[test]
    fn bound_probability_is_monotone_in_the_threshold() {
        let p = DiscreteIParams {
            c: 1.0,
            gamma: 0.0,
            delta: 1.0,
            g: 1.0,
            beta: 0.5,
            h: 0.1,
        };
        let consts = constants_discrete_i(&p, 0.0, 0.5).unwrap();
        let model = NoiseModel::per_step(NoiseSpec::UniformBall { radius: 0.2 });
        let cdf = NormCdf::new(&model.spec, 3).unwrap();
        let law = NoiseLaw {
            model: &model,
            cdf: &cdf,
        };
        let mut last = -1.0;
        for &nu in &[0.02, 0.05, 0.1, 0.2, 0.4] {
            let b = bound_discrete_i(&p, &consts, 0.5, nu, None, &law).unwrap();
            assert!(
                b.probability >= last,
                "bound must not decrease as the threshold loosens"
            );
            last = b.probability;
        }
    }

    #[test]
    fn discrete_ii_envelopes_hold_on_a_clipped_run_and_fail_against_inflated_constants() {
        let geom = Geometry::new(
            4,
            2,
            InnerProduct::PairwiseDifference,
            BlockSpace::Centered,
            BlockSpace::Centered,
        )
        .unwrap();
        let p = DiscreteIIParams {
            g1: 2.0,
            beta1: 0.0,
            h1: 0.1,
            g2: 2.0,
            beta2: 0.0,
            h2: 0.1,
        };
        let dynamics = Dynamics::new(
            geom,
            SystemParams::DiscreteII(p),
            JOperator::Zero,
            Some(KernelSpec::Rational {
                scale: 1.0,
                exponent: 0.0,
            }),
            Some(KernelSpec::Rational {
                scale: 1.0,
                exponent: 0.0,
            }),
        )
        .unwrap();
        let consts = constants_discrete_ii(&p, 1.0, 1.0).unwrap();
        let dim = dynamics.geometry.block_dim(Block::X);
        let clipped = |cap: f64, id: u64| {
            NoiseChannel::new(
                NoiseModel::per_step(NoiseSpec::Clipped {
                    base: Box::new(NoiseSpec::Gaussian { sigma: 0.3 }),
                    relative_cap: cap,
                }),
                SeedStream::root(11).substream(id),
                dim,
            )
            .unwrap()
        };
        let sx = ChannelSampler::for_discrete(clipped(consts.ceiling_x, 2)).unwrap();
        let sy = ChannelSampler::for_discrete(clipped(consts.ceiling_y, 3)).unwrap();
        let initial = SystemState::new(
            DVector::from_fn(dim, |i, _| 0.3 + 0.1 * i as f64),
            DVector::from_fn(dim, |i, _| 0.4 - 0.05 * i as f64),
        );
        let traj =
            run_discrete_ii(&dynamics, &initial, &sx, &sy, 60, &RunOptions::default()).unwrap();
        let report = verify_trajectory(
            &traj,
            &SystemParams::DiscreteII(p),
            &TheoryConstants::DiscreteII(consts.clone()),
        )
        .unwrap();
        assert!(
            !report.violated,
            "capped run must respect its envelopes: {:?}",
            report.checks
        );
        assert_eq!(report.checks.len(), 2);

        // Inflating the claimed ceilings makes the envelope decay faster
        // than the dynamics; the verifier must notice.
        let wrong = DiscreteIIConstants {
            ceiling_x: consts.ceiling_x * 12.0,
            ceiling_y: consts.ceiling_y * 12.0,
        };
        let report = verify_trajectory(
            &traj,
            &SystemParams::DiscreteII(p),
            &TheoryConstants::DiscreteII(wrong),
        )
        .unwrap();
        // The caps recorded on the trajectory are below the inflated
        // ceilings, so the envelopes are still evaluated, and fail.
        assert!(report.violated);
    }

    #[test]
    fn continuous_i_envelopes_hold_on_a_clipped_run() {
        let geom = Geometry::new(
            3,
            1,
            InnerProduct::PairwiseDifference,
            BlockSpace::Centered,
            BlockSpace::Centered,
        )
        .unwrap();
        let p = ContinuousIParams {
            c: 0.0,
            gamma: 0.0,
            delta: 1.0,
            kappa: 1.0,
            beta: 0.0,
        };
        let dynamics = Dynamics::new(
            geom,
            SystemParams::ContinuousI(p),
            JOperator::Zero,
            Some(KernelSpec::Rational {
                scale: 1.0,
                exponent: 0.0,
            }),
            None,
        )
        .unwrap();
        let consts = constants_continuous_i(&p, 0.4, 0.8).unwrap();
        let ceiling = consts.ceiling.unwrap();
        let dim = dynamics.geometry.block_dim(Block::Y);
        let model = NoiseModel {
            spec: NoiseSpec::Clipped {
                base: Box::new(NoiseSpec::Gaussian { sigma: 0.5 }),
                relative_cap: ceiling,
            },
            refresh: Refresh::Frozen { delta: 0.05 },
            amplitude: 1.0,
        };
        let channel = NoiseChannel::new(model, SeedStream::root(23).substream(2), dim).unwrap();
        let dt = 1e-3;
        let steps = (2.0 / dt) as u64;
        let sampler = ChannelSampler::for_continuous(channel, steps, dt).unwrap();
        let initial = SystemState::new(
            DVector::from_fn(dim, |i, _| 0.2 * (i as f64 + 1.0)),
            DVector::from_fn(dim, |i, _| 0.5 - 0.2 * i as f64),
        );
        let opts = RunOptions {
            record_operators: true,
            ..RunOptions::default()
        };
        let traj = integrate_continuous_i(&dynamics, &initial, &sampler, 2.0, dt, &opts).unwrap();
        let report = verify_trajectory(
            &traj,
            &SystemParams::ContinuousI(p),
            &TheoryConstants::ContinuousI(consts),
        )
        .unwrap();
        assert!(
            !report.violated,
            "capped run must respect its envelopes: {:?}",
            report
                .checks
                .iter()
                .filter(|c| c.violated)
                .collect::<Vec<_>>()
        );
        assert!(report.checks.len() >= 3);
        assert!(report.skipped.is_empty());
    }

    proptest! {
        /// The production root agrees with plain bisection to 1e-10 and
        /// respects the closed-form upper bound; M is nonpositive below the
        /// root.
        #[test]
        fn root_matches_bisection_and_bound(
            s in 0.6f64..3.0,
            gap in 0.1f64..0.9,
            c1 in 0.01f64..20.0,
            c2 in 0.01f64..20.0,
        ) {
            let q = s * (1.0 - gap);
            let root = positive_root(s, q, c1, c2).unwrap();
            let oracle = bisection_root(s, q, c1, c2);
            prop_assert!((root - oracle).abs() <= 1e-10 * oracle.max(1.0));
            prop_assert!(root <= root_upper_bound(s, q, c1, c2) * (1.0 + 1e-12));
            let m = |z: f64| z.powf(s) - c1 * z.powf(q) - c2;
            for i in 1..=16 {
                let z = root * i as f64 / 16.0;
                prop_assert!(m(z) <= 1e-9 * (1.0 + z.powf(s)));
            }
        }

        /// In the subcritical case the closed-form cap dominates the true
        /// root of M(z) = z - a z^(beta+gamma) - b, so M(U0) >= 0.
        #[test]
        fn subcritical_cap_dominates_the_root(
            c in 0.05f64..2.0,
            g in 0.1f64..3.0,
            delta in 0.2f64..1.0,
            beta in 0.0f64..0.7,
            gamma_frac in 0.0f64..0.9,
            x0 in 0.0f64..3.0,
            y0 in 0.01f64..2.0,
        ) {
            let gamma = (1.0 - beta - 0.05) * gamma_frac;
            prop_assume!(beta + gamma < 0.95);
            let p = DiscreteIParams { c, gamma, delta, g, beta, h: 0.01 };
            let consts = constants_discrete_i(&p, x0, y0).unwrap();
            prop_assert_eq!(consts.case, GrowthCase::Subcritical);
            let u0 = consts.u0.unwrap();
            let m = u0 - consts.a * u0.powf(beta + gamma) - consts.b;
            prop_assert!(m >= -1e-9 * u0.max(1.0));
        }

        /// The noise ceiling never exceeds half the kernel mass.
        #[test]
        fn ceiling_is_at_most_half_the_kernel_mass(
            c in 0.05f64..2.0,
            g in 0.1f64..3.0,
            beta in 0.0f64..0.7,
            y0 in 0.01f64..2.0,
        ) {
            let p = DiscreteIParams { c, gamma: 0.1, delta: 1.0, g, beta, h: 0.01 };
            let consts = constants_discrete_i(&p, 0.5, y0).unwrap();
            if let Some(ceiling) = consts.ceiling {
                prop_assert!(ceiling <= g / 2.0 + 1e-12);
            }
        }

        /// Deadlines grow and probabilities shrink as the threshold
        /// tightens.
        #[test]
        fn deadline_grows_as_threshold_tightens(nu1 in 0.01f64..0.2, factor in 1.1f64..5.0) {
            let p = DiscreteIParams {
                c: 1.0, gamma: 0.0, delta: 1.0, g: 1.0, beta: 0.5, h: 0.1,
            };
            let consts = constants_discrete_i(&p, 0.0, 0.5).unwrap();
            let model = NoiseModel::per_step(NoiseSpec::UniformBall { radius: 0.3 });
            let cdf = NormCdf::new(&model.spec, 3).unwrap();
            let law = NoiseLaw { model: &model, cdf: &cdf };
            let nu2 = nu1 / factor;
            let loose = bound_discrete_i(&p, &consts, 0.5, nu1, None, &law).unwrap();
            let tight = bound_discrete_i(&p, &consts, 0.5, nu2, None, &law).unwrap();
            prop_assert!(tight.deadline >= loose.deadline);
            prop_assert!(tight.probability <= loose.probability + 1e-15);
        }
    }
}
