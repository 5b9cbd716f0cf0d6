//! Scenario configuration, single trials, Monte Carlo estimation and
//! parameter sweeps.
//!
//! A scenario bundles one system with its geometry, kernels, initial
//! condition, noise channels and emergence thresholds. Building it resolves
//! everything the theory needs: the initial-state constants, the scalar and
//! operator hypothesis reports, the certified probability bound for the
//! configured event, and the run horizon. A Monte Carlo run then estimates
//! the event frequency over independent noise realizations and compares the
//! certified bound against a Wilson confidence interval:
//!
//! ```text
//! verdict = violated      if bound > wilson upper limit
//!           consistent    otherwise (hypotheses certified)
//!           inapplicable  if a hypothesis fails at the initial state
//!           descriptive   if no thresholds were given, so no bound exists
//! ```
//!
//! Trials are deterministic: trial i draws from fixed substreams of the
//! scenario seed, so reruns and thread counts never change the results. The
//! initial state is sampled once per scenario and shared by all trials, as
//! the bounds quantify randomness in the noise alone.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EmergenceError, Result};
use crate::noise::{
    NoiseModel, NoiseSpec, NormCdf, Refresh, SeedStream, STREAM_INIT, STREAM_NOISE_PRIMARY,
    STREAM_NOISE_SECONDARY,
};
use crate::operators::{verify_operator_hypotheses, HypothesisReport, KernelSpec};
use crate::quotient::InnerProduct;
use crate::systems::{
    detect_emergence, run, Block, BlockSpace, Dynamics, EmergenceReport, Geometry, Horizon,
    JOperator, NoiseChannel, RunOptions, SystemParams, SystemState, SystemVariant, Trajectory,
};
use crate::theory::{
    bound_continuous_i, bound_continuous_ii, bound_discrete_i, bound_discrete_ii,
    check_hypotheses_continuous_i, check_hypotheses_continuous_ii, check_hypotheses_discrete_i,
    check_hypotheses_discrete_ii, constants_continuous_i, constants_continuous_ii,
    constants_discrete_i, constants_discrete_ii, BoundReport, EventKind, NoiseLaw, TheoryConstants,
};
use nalgebra::DVector;
use rand::Rng;

/// Two-sided 95% normal quantile used for the Wilson interval.
pub const WILSON_Z_95: f64 = 1.959963984540054;

/// Tail points kept for the Cauchy event evaluation; longer tails are
/// decimated evenly, which can only weaken the event and never produces a
/// spurious bound violation.
const CAUCHY_EVENT_MAX_POINTS: usize = 256;

fn default_amplitude() -> f64 {
    1.0
}

fn default_drift() -> JOperator {
    JOperator::Zero
}

fn default_horizon_factor() -> f64 {
    4.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub agents: usize,
    pub dim: usize,
    #[serde(default)]
    pub inner: InnerProduct,
    #[serde(default)]
    pub x_space: BlockSpace,
    #[serde(default)]
    pub y_space: BlockSpace,
}

/// Initial state of a scenario. Explicit coordinates are given in the block
/// frames (length = block dimension); the random box draws every coordinate
/// uniformly from `[-scale, scale]`, once per scenario, shared by all
/// trials.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition {
    Explicit { x: Vec<f64>, y: Vec<f64> },
    RandomBox { x_scale: f64, y_scale: f64 },
}

/// How a channel's law is capped relative to the reference block norm.
/// `theorem` resolves the cap to the channel's noise ceiling from the
/// initial-state constants.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipMode {
    #[default]
    None,
    Theorem,
    Relative(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub spec: NoiseSpec,
    #[serde(default)]
    pub refresh: Refresh,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default)]
    pub clip: ClipMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// The single channel of a first-kind system (it enters the y
    /// equation), or the x-equation channel of a second-kind system.
    pub primary: ChannelConfig,
    /// The y-equation channel of a second-kind system.
    #[serde(default)]
    pub secondary: Option<ChannelConfig>,
}

/// Emergence thresholds: mu for the x block, nu for the y block.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Targets {
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub nu: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HorizonConfig {
    Steps {
        steps: u64,
    },
    Time {
        t_end: f64,
        dt: f64,
    },
    /// Horizon set to `factor` times the certified deadline; continuous
    /// systems also need the grid step here.
    Auto {
        #[serde(default = "default_horizon_factor")]
        factor: f64,
        #[serde(default)]
        dt: Option<f64>,
    },
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self::Auto {
            factor: default_horizon_factor(),
            dt: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub seed: u64,
    pub geometry: GeometryConfig,
    pub system: SystemParams,
    #[serde(default = "default_drift")]
    pub drift: JOperator,
    #[serde(default)]
    pub kernel_x: Option<KernelSpec>,
    #[serde(default)]
    pub kernel_y: Option<KernelSpec>,
    pub initial: InitialCondition,
    pub noise: NoiseSection,
    #[serde(default)]
    pub targets: Targets,
    #[serde(default)]
    pub horizon: HorizonConfig,
}

/// A fully resolved scenario: dynamics, shared initial state, constants,
/// hypothesis reports, the certified bound and the run horizon.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub dynamics: Dynamics,
    pub initial: SystemState,
    pub initial_x_norm: f64,
    pub initial_y_norm: f64,
    pub constants: TheoryConstants,
    pub scalar_hypotheses: HypothesisReport,
    pub operator_hypotheses: HypothesisReport,
    pub bound: Option<BoundReport>,
    pub primary_model: NoiseModel,
    pub secondary_model: Option<NoiseModel>,
    pub horizon: Horizon,
    pub notes: Vec<String>,
}

impl Scenario {
    /// All stated hypotheses hold at the initial state.
    pub fn certified(&self) -> bool {
        self.scalar_hypotheses.satisfied && self.operator_hypotheses.satisfied
    }

    fn variant(&self) -> SystemVariant {
        self.dynamics.variant
    }
}

fn sample_box(rng: &mut impl Rng, dim: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| (rng.gen::<f64>() * 2.0 - 1.0) * scale)
}

fn resolve_initial(config: &ScenarioConfig, dynamics: &Dynamics) -> Result<SystemState> {
    let geom = &dynamics.geometry;
    let state = match &config.initial {
        InitialCondition::Explicit { x, y } => {
            SystemState::new(DVector::from_vec(x.clone()), DVector::from_vec(y.clone()))
        }
        InitialCondition::RandomBox { x_scale, y_scale } => {
            for (label, scale) in [("x_scale", *x_scale), ("y_scale", *y_scale)] {
                if !(scale.is_finite() && scale >= 0.0) {
                    return Err(EmergenceError::Config(format!(
                        "{label} must be a finite nonnegative half width, got {scale}"
                    )));
                }
            }
            let mut rng = SeedStream::root(config.seed)
                .substream(STREAM_INIT)
                .rng_at(0);
            // x is drawn before y, so the shared initial state is stable
            // under changes to everything but the seed and the box widths.
            let x = sample_box(&mut rng, geom.block_dim(Block::X), *x_scale);
            let y = sample_box(&mut rng, geom.block_dim(Block::Y), *y_scale);
            SystemState::new(x, y)
        }
    };
    dynamics.validate_state(&state)?;
    Ok(state)
}

fn resolve_channel(cfg: &ChannelConfig, ceiling: Option<f64>, label: &str) -> Result<NoiseModel> {
    let spec = match cfg.clip {
        ClipMode::None => cfg.spec.clone(),
        _ if matches!(cfg.spec, NoiseSpec::Clipped { .. }) => {
            return Err(EmergenceError::Config(format!(
                "the {label} channel is already a clipped law; drop the clip mode or the wrapper"
            )));
        }
        _ if cfg.spec.is_zero() => cfg.spec.clone(),
        ClipMode::Theorem => {
            let ceiling = ceiling.ok_or_else(|| {
                EmergenceError::Config(format!(
                    "the theorem clip on the {label} channel needs defined initial-state constants"
                ))
            })?;
            NoiseSpec::Clipped {
                base: Box::new(cfg.spec.clone()),
                relative_cap: ceiling,
            }
        }
        ClipMode::Relative(cap) => NoiseSpec::Clipped {
            base: Box::new(cfg.spec.clone()),
            relative_cap: cap,
        },
    };
    let model = NoiseModel {
        spec,
        refresh: cfg.refresh,
        amplitude: cfg.amplitude,
    };
    model.validate()?;
    Ok(model)
}

struct TheorySide {
    constants: TheoryConstants,
    scalar: HypothesisReport,
    ceiling_primary: Option<f64>,
    ceiling_secondary: Option<f64>,
    notes: Vec<String>,
}

fn resolve_theory(params: &SystemParams, x_norm: f64, y_norm: f64) -> Result<TheorySide> {
    Ok(match params {
        SystemParams::DiscreteI(p) => {
            let consts = constants_discrete_i(p, x_norm, y_norm)?;
            let scalar = check_hypotheses_discrete_i(p, &consts, y_norm);
            TheorySide {
                ceiling_primary: consts.ceiling,
                ceiling_secondary: None,
                notes: consts.notes.clone(),
                constants: TheoryConstants::DiscreteI(consts),
                scalar,
            }
        }
        SystemParams::DiscreteII(p) => {
            let consts = constants_discrete_ii(p, x_norm, y_norm)?;
            let scalar = check_hypotheses_discrete_ii(p);
            TheorySide {
                ceiling_primary: Some(consts.ceiling_x),
                ceiling_secondary: Some(consts.ceiling_y),
                notes: Vec::new(),
                constants: TheoryConstants::DiscreteII(consts),
                scalar,
            }
        }
        SystemParams::ContinuousI(p) => {
            let consts = constants_continuous_i(p, x_norm, y_norm)?;
            let scalar = check_hypotheses_continuous_i(p, &consts, y_norm);
            TheorySide {
                ceiling_primary: consts.ceiling,
                ceiling_secondary: None,
                notes: consts.notes.clone(),
                constants: TheoryConstants::ContinuousI(consts),
                scalar,
            }
        }
        SystemParams::ContinuousII(p) => {
            let consts = constants_continuous_ii(p, x_norm, y_norm)?;
            let scalar = check_hypotheses_continuous_ii(p);
            TheorySide {
                ceiling_primary: Some(consts.ceiling_x),
                ceiling_secondary: Some(consts.ceiling_y),
                notes: Vec::new(),
                constants: TheoryConstants::ContinuousII(consts),
                scalar,
            }
        }
    })
}

fn resolve_bound(
    config: &ScenarioConfig,
    theory: &TheorySide,
    geom: &Geometry,
    initial: &SystemState,
    primary_model: &NoiseModel,
    secondary_model: Option<&NoiseModel>,
    notes: &mut Vec<String>,
) -> Result<Option<BoundReport>> {
    let x_norm = geom.x_norm(&initial.x);
    let y_norm = geom.y_norm(&initial.y);
    let targets = &config.targets;
    match (&config.system, &theory.constants) {
        (SystemParams::DiscreteI(p), TheoryConstants::DiscreteI(c)) => {
            let Some(nu) = targets.nu else {
                notes.push("no y threshold was given; no probability bound applies".into());
                return Ok(None);
            };
            if c.ceiling.is_none() {
                notes.push("initial-state constants are undefined; no bound applies".into());
                return Ok(None);
            }
            let cdf = NormCdf::new(&primary_model.spec, geom.block_dim(Block::Y))?;
            let law = NoiseLaw {
                model: primary_model,
                cdf: &cdf,
            };
            Ok(Some(bound_discrete_i(p, c, y_norm, nu, targets.mu, &law)?))
        }
        (SystemParams::ContinuousI(p), TheoryConstants::ContinuousI(c)) => {
            let Some(nu) = targets.nu else {
                notes.push("no y threshold was given; no probability bound applies".into());
                return Ok(None);
            };
            if c.ceiling.is_none() {
                notes.push("initial-state constants are undefined; no bound applies".into());
                return Ok(None);
            }
            let cdf = NormCdf::new(&primary_model.spec, geom.block_dim(Block::Y))?;
            let law = NoiseLaw {
                model: primary_model,
                cdf: &cdf,
            };
            Ok(Some(bound_continuous_i(
                p, c, y_norm, nu, targets.mu, &law,
            )?))
        }
        (SystemParams::DiscreteII(p), TheoryConstants::DiscreteII(c)) => {
            let (Some(mu), Some(nu)) = (targets.mu, targets.nu) else {
                notes.push("both thresholds are needed for a bound; none applies".into());
                return Ok(None);
            };
            let secondary = secondary_model.ok_or_else(|| {
                EmergenceError::Config("second-kind systems need a secondary channel".into())
            })?;
            let cdf_x = NormCdf::new(&primary_model.spec, geom.block_dim(Block::X))?;
            let cdf_y = NormCdf::new(&secondary.spec, geom.block_dim(Block::Y))?;
            let law_x = NoiseLaw {
                model: primary_model,
                cdf: &cdf_x,
            };
            let law_y = NoiseLaw {
                model: secondary,
                cdf: &cdf_y,
            };
            Ok(Some(bound_discrete_ii(
                p, c, x_norm, y_norm, mu, nu, &law_x, &law_y,
            )?))
        }
        (SystemParams::ContinuousII(p), TheoryConstants::ContinuousII(c)) => {
            let (Some(mu), Some(nu)) = (targets.mu, targets.nu) else {
                notes.push("both thresholds are needed for a bound; none applies".into());
                return Ok(None);
            };
            let secondary = secondary_model.ok_or_else(|| {
                EmergenceError::Config("second-kind systems need a secondary channel".into())
            })?;
            let cdf_x = NormCdf::new(&primary_model.spec, geom.block_dim(Block::X))?;
            let cdf_y = NormCdf::new(&secondary.spec, geom.block_dim(Block::Y))?;
            let law_x = NoiseLaw {
                model: primary_model,
                cdf: &cdf_x,
            };
            let law_y = NoiseLaw {
                model: secondary,
                cdf: &cdf_y,
            };
            Ok(Some(bound_continuous_ii(
                p, c, x_norm, y_norm, mu, nu, &law_x, &law_y,
            )?))
        }
        _ => Err(EmergenceError::Invariant(
            "parameters and constants diverged during scenario build".into(),
        )),
    }
}

fn resolve_horizon(
    config: &HorizonConfig,
    variant: SystemVariant,
    bound: Option<&BoundReport>,
) -> Result<Horizon> {
    let deadline = bound.map(|b| b.deadline);
    match (config, variant.is_discrete()) {
        (HorizonConfig::Steps { steps }, true) => {
            if let Some(d) = deadline {
                if (*steps as f64) < d {
                    return Err(EmergenceError::Config(format!(
                        "horizon of {steps} iterations ends before the certified deadline {d}"
                    )));
                }
            }
            Ok(Horizon::Steps(*steps))
        }
        (HorizonConfig::Time { t_end, dt }, false) => {
            if let Some(d) = deadline {
                if *t_end < d * (1.0 - 1e-12) {
                    return Err(EmergenceError::Config(format!(
                        "horizon of {t_end} time units ends before the certified deadline {d}"
                    )));
                }
            }
            Ok(Horizon::Time {
                t_end: *t_end,
                dt: *dt,
            })
        }
        (HorizonConfig::Auto { factor, dt }, discrete) => {
            if !(factor.is_finite() && *factor >= 1.0) {
                return Err(EmergenceError::Config(format!(
                    "the automatic horizon factor must be at least 1, got {factor}"
                )));
            }
            let d = deadline.ok_or_else(|| {
                EmergenceError::Config(
                    "the automatic horizon needs a certified deadline; give thresholds or an \
                     explicit horizon"
                        .into(),
                )
            })?;
            if discrete {
                Ok(Horizon::Steps(((d * factor).ceil() as u64).max(1)))
            } else {
                let dt = dt.ok_or_else(|| {
                    EmergenceError::Config(
                        "continuous systems need a grid step in the automatic horizon".into(),
                    )
                })?;
                Ok(Horizon::Time {
                    t_end: (d * factor).max(10.0 * dt),
                    dt,
                })
            }
        }
        (HorizonConfig::Steps { .. }, false) => Err(EmergenceError::Config(
            "continuous systems need a time horizon, not an iteration count".into(),
        )),
        (HorizonConfig::Time { .. }, true) => Err(EmergenceError::Config(
            "discrete systems need an iteration count, not a time horizon".into(),
        )),
    }
}

/// Resolves a configuration into a runnable scenario. Failing theorem
/// hypotheses are not errors (they make the verdict `inapplicable`);
/// structural problems are.
pub fn build_scenario(config: ScenarioConfig) -> Result<Scenario> {
    let geometry = Geometry::new(
        config.geometry.agents,
        config.geometry.dim,
        config.geometry.inner,
        config.geometry.x_space,
        config.geometry.y_space,
    )?;
    let dynamics = Dynamics::new(
        geometry,
        config.system,
        config.drift.clone(),
        config.kernel_x.clone(),
        config.kernel_y.clone(),
    )?;
    let variant = dynamics.variant;

    let initial = resolve_initial(&config, &dynamics)?;
    let x_norm = dynamics.geometry.x_norm(&initial.x);
    let y_norm = dynamics.geometry.y_norm(&initial.y);

    let theory = resolve_theory(&config.system, x_norm, y_norm)?;
    let mut notes = theory.notes.clone();

    if variant.is_discrete() {
        for (label, cfg) in [
            ("primary", Some(&config.noise.primary)),
            ("secondary", config.noise.secondary.as_ref()),
        ] {
            if let Some(cfg) = cfg {
                if !matches!(cfg.refresh, Refresh::PerStep) {
                    return Err(EmergenceError::Config(format!(
                        "discrete systems draw fresh noise each iteration; the {label} channel \
                         cannot use a time-correlated refresh"
                    )));
                }
            }
        }
    } else {
        for (label, cfg) in [
            ("primary", Some(&config.noise.primary)),
            ("secondary", config.noise.secondary.as_ref()),
        ] {
            if let Some(cfg) = cfg {
                if matches!(cfg.refresh, Refresh::PerStep) && !cfg.spec.is_zero() {
                    return Err(EmergenceError::Config(format!(
                        "continuous systems need a frozen or Ornstein-Uhlenbeck refresh on the \
                         {label} channel; per-step draws have no pathwise law"
                    )));
                }
            }
        }
    }

    let second_kind = matches!(
        variant,
        SystemVariant::DiscreteII | SystemVariant::ContinuousII
    );
    if second_kind && config.noise.secondary.is_none() {
        return Err(EmergenceError::Config(
            "second-kind systems need a secondary channel; use a zero law for a noiseless \
             equation"
                .into(),
        ));
    }
    if !second_kind && config.noise.secondary.is_some() {
        return Err(EmergenceError::Config(
            "first-kind systems take a single noise channel".into(),
        ));
    }

    let primary_model = resolve_channel(&config.noise.primary, theory.ceiling_primary, "primary")?;
    let secondary_model = config
        .noise
        .secondary
        .as_ref()
        .map(|cfg| resolve_channel(cfg, theory.ceiling_secondary, "secondary"))
        .transpose()?;

    for (label, t) in [("mu", config.targets.mu), ("nu", config.targets.nu)] {
        if let Some(t) = t {
            if !(t.is_finite() && t > 0.0) {
                return Err(EmergenceError::Config(format!(
                    "threshold {label} must be positive and finite, got {t}"
                )));
            }
        }
    }

    let bound = resolve_bound(
        &config,
        &theory,
        &dynamics.geometry,
        &initial,
        &primary_model,
        secondary_model.as_ref(),
        &mut notes,
    )?;
    let horizon = resolve_horizon(&config.horizon, variant, bound.as_ref())?;

    let operator_hypotheses = verify_operator_hypotheses(&initial, &dynamics)?;

    Ok(Scenario {
        config,
        dynamics,
        initial,
        initial_x_norm: x_norm,
        initial_y_norm: y_norm,
        constants: theory.constants,
        scalar_hypotheses: theory.scalar,
        operator_hypotheses,
        bound,
        primary_model,
        secondary_model,
        horizon,
        notes,
    })
}

/// Runs one trial's trajectory. Trial indices address disjoint noise
/// substreams of the scenario seed; the initial state is shared.
pub fn run_single(scenario: &Scenario, trial: u64, opts: &RunOptions) -> Result<Trajectory> {
    let root = SeedStream::root(scenario.config.seed);
    let geom = &scenario.dynamics.geometry;
    let primary_dim = match scenario.variant() {
        SystemVariant::DiscreteI | SystemVariant::ContinuousI => geom.block_dim(Block::Y),
        SystemVariant::DiscreteII | SystemVariant::ContinuousII => geom.block_dim(Block::X),
    };
    let primary = NoiseChannel::new(
        scenario.primary_model.clone(),
        root.substream(STREAM_NOISE_PRIMARY).substream(trial),
        primary_dim,
    )?;
    let secondary = scenario
        .secondary_model
        .as_ref()
        .map(|model| {
            NoiseChannel::new(
                model.clone(),
                root.substream(STREAM_NOISE_SECONDARY).substream(trial),
                geom.block_dim(Block::Y),
            )
        })
        .transpose()?;
    run(
        &scenario.dynamics,
        &scenario.initial,
        primary,
        secondary,
        scenario.horizon,
        opts,
    )
}

/// Outcome of one trial against the scenario's certified event.
#[derive(Debug, Clone, Serialize)]
pub struct TrialResult {
    pub trial: u64,
    pub x_emergence: Option<EmergenceReport>,
    pub y_emergence: Option<EmergenceReport>,
    /// Whether the certified event occurred; absent when no bound applies.
    pub event_satisfied: Option<bool>,
    /// Whether every raw draw inside the deadline window stayed within the
    /// theorem's noise ceiling; absent when no bound applies.
    pub within_ceiling: Option<bool>,
    pub error: Option<String>,
}

fn hit_by_steps(em: Option<&EmergenceReport>, deadline: f64) -> bool {
    em.and_then(|e| e.hit_step)
        .map(|s| (s as f64) <= deadline + 0.5)
        .unwrap_or(false)
}

fn hit_by_time(em: Option<&EmergenceReport>, deadline: f64) -> bool {
    em.and_then(|e| e.hit_time)
        .map(|t| t <= deadline * (1.0 + 1e-12) + 1e-12)
        .unwrap_or(false)
}

fn hit_by(em: Option<&EmergenceReport>, deadline: f64, discrete: bool) -> bool {
    if discrete {
        hit_by_steps(em, deadline)
    } else {
        hit_by_time(em, deadline)
    }
}

/// Pairwise movement of the x block beyond the deadline stays within mu.
/// Long tails are decimated to `CAUCHY_EVENT_MAX_POINTS`, a necessary
/// condition of the full event.
fn x_cauchy_within(
    trajectory: &Trajectory,
    deadline: f64,
    mu: f64,
    discrete: bool,
) -> Result<bool> {
    let states = trajectory.x_states.as_ref().ok_or_else(|| {
        EmergenceError::Invariant("the Cauchy event needs recorded states".into())
    })?;
    let tail: Vec<usize> = trajectory
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            if discrete {
                (p.step as f64) >= deadline - 0.5
            } else {
                p.time >= deadline * (1.0 - 1e-12) - 1e-12
            }
        })
        .map(|(i, _)| i)
        .collect();
    let stride = tail.len().div_ceil(CAUCHY_EVENT_MAX_POINTS).max(1);
    let kept: Vec<usize> = tail.iter().copied().step_by(stride).collect();
    let cap = mu * (1.0 + 1e-12);
    for (a, &i) in kept.iter().enumerate() {
        for &j in &kept[a + 1..] {
            if (&states[j] - &states[i]).norm() > cap {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn evaluate_event(
    bound: &BoundReport,
    trajectory: &Trajectory,
    x_em: Option<&EmergenceReport>,
    y_em: Option<&EmergenceReport>,
) -> Result<bool> {
    let d = bound.discrete_deadlines;
    Ok(match bound.kind {
        EventKind::YEmergence => hit_by(y_em, bound.deadline, d),
        EventKind::YEmergenceAndXCauchy => {
            let mu = bound.mu.ok_or_else(|| {
                EmergenceError::Invariant("Cauchy event without a mu threshold".into())
            })?;
            hit_by(y_em, bound.deadline, d) && x_cauchy_within(trajectory, bound.deadline, mu, d)?
        }
        EventKind::BothEmerge => hit_by(x_em, bound.deadline, d) && hit_by(y_em, bound.deadline, d),
        EventKind::EitherEmerges => {
            hit_by(x_em, bound.deadline, d) || hit_by(y_em, bound.deadline, d)
        }
        EventKind::BothEmergeOwnDeadlines => {
            let dx = bound.x_deadline.ok_or_else(|| {
                EmergenceError::Invariant("own-deadline event without an x deadline".into())
            })?;
            let dy = bound.y_deadline.ok_or_else(|| {
                EmergenceError::Invariant("own-deadline event without a y deadline".into())
            })?;
            hit_by(x_em, dx, d) && hit_by(y_em, dy, d)
        }
    })
}

/// Whether every raw (pre-clip) draw feeding a step inside the window
/// stayed within `ceiling * threshold`. This is the concrete noise event
/// whose probability the bound multiplies out.
fn within_ceiling(scenario: &Scenario, bound: &BoundReport, trajectory: &Trajectory) -> bool {
    // A draw recorded on a point feeds the update leaving that point, so
    // the deadline window covers points strictly before it.
    let in_window = |step: u64, time: f64, window: f64| {
        if bound.discrete_deadlines {
            (step as f64) < window - 0.5
        } else {
            time < window
        }
    };
    let slack = 1.0 + 1e-12;
    match (&scenario.constants, bound.kind) {
        (TheoryConstants::DiscreteI(c), _) => {
            let (Some(ceiling), Some(nu)) = (c.ceiling, bound.nu) else {
                return false;
            };
            trajectory
                .points
                .iter()
                .filter(|p| in_window(p.step, p.time, bound.deadline))
                .all(|p| p.noise_primary_norm <= ceiling * nu * slack)
        }
        (TheoryConstants::ContinuousI(c), _) => {
            let (Some(ceiling), Some(nu)) = (c.ceiling, bound.nu) else {
                return false;
            };
            trajectory
                .points
                .iter()
                .filter(|p| in_window(p.step, p.time, bound.deadline))
                .all(|p| p.noise_primary_norm <= ceiling * nu * slack)
        }
        (TheoryConstants::DiscreteII(c), _) => {
            let (Some(mu), Some(nu)) = (bound.mu, bound.nu) else {
                return false;
            };
            trajectory
                .points
                .iter()
                .filter(|p| in_window(p.step, p.time, bound.deadline))
                .all(|p| {
                    p.noise_primary_norm <= c.ceiling_x * mu * slack
                        && p.noise_secondary_norm <= c.ceiling_y * nu * slack
                })
        }
        (TheoryConstants::ContinuousII(c), kind) => {
            let (Some(mu), Some(nu)) = (bound.mu, bound.nu) else {
                return false;
            };
            let (wx, wy) = if kind == EventKind::BothEmergeOwnDeadlines {
                (
                    bound.x_deadline.unwrap_or(bound.deadline),
                    bound.y_deadline.unwrap_or(bound.deadline),
                )
            } else {
                (bound.deadline, bound.deadline)
            };
            trajectory.points.iter().all(|p| {
                (!in_window(p.step, p.time, wx) || p.noise_primary_norm <= c.ceiling_x * mu * slack)
                    && (!in_window(p.step, p.time, wy)
                        || p.noise_secondary_norm <= c.ceiling_y * nu * slack)
            })
        }
    }
}

/// Runs trial `trial` and scores it against the certified event.
pub fn run_trial(scenario: &Scenario, trial: u64) -> TrialResult {
    let needs_states = matches!(
        scenario.bound.as_ref().map(|b| b.kind),
        Some(EventKind::YEmergenceAndXCauchy)
    );
    let opts = RunOptions {
        record_states: needs_states,
        ..RunOptions::default()
    };
    let trajectory = match run_single(scenario, trial, &opts) {
        Ok(t) => t,
        Err(e) => {
            return TrialResult {
                trial,
                x_emergence: None,
                y_emergence: None,
                event_satisfied: scenario.bound.as_ref().map(|_| false),
                within_ceiling: scenario.bound.as_ref().map(|_| false),
                error: Some(e.to_string()),
            }
        }
    };
    let x_em = scenario
        .config
        .targets
        .mu
        .map(|mu| detect_emergence(&trajectory, Block::X, mu));
    let y_em = scenario
        .config
        .targets
        .nu
        .map(|nu| detect_emergence(&trajectory, Block::Y, nu));
    let mut error = None;
    let event_satisfied = scenario.bound.as_ref().map(|b| {
        match evaluate_event(b, &trajectory, x_em.as_ref(), y_em.as_ref()) {
            Ok(v) => v,
            Err(e) => {
                error = Some(e.to_string());
                false
            }
        }
    });
    let within = scenario
        .bound
        .as_ref()
        .map(|b| within_ceiling(scenario, b, &trajectory));
    TrialResult {
        trial,
        x_emergence: x_em,
        y_emergence: y_em,
        event_satisfied,
        within_ceiling: within,
        error,
    }
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // The endpoints touch 0 and 1 exactly at degenerate counts; rounding
    // must not pull them inward.
    let lo = if successes == 0 {
        0.0
    } else {
        (center - half).max(0.0)
    };
    let hi = if successes == trials {
        1.0
    } else {
        (center + half).min(1.0)
    };
    (lo, hi)
}

/// How the estimate relates to the certified bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// The bound sits at or below the Wilson upper limit.
    Consistent,
    /// The bound exceeds the Wilson upper limit of the event frequency.
    Violated,
    /// A hypothesis fails at the initial state, so the bound is not claimed.
    Inapplicable,
    /// No thresholds were given; the run is purely descriptive.
    Descriptive,
}

pub fn classify_verdict(bound: Option<f64>, wilson_high: Option<f64>, certified: bool) -> Verdict {
    match (bound, wilson_high) {
        (None, _) | (_, None) => Verdict::Descriptive,
        (Some(_), Some(_)) if !certified => Verdict::Inapplicable,
        (Some(b), Some(hi)) if b > hi => Verdict::Violated,
        _ => Verdict::Consistent,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloReport {
    pub name: Option<String>,
    pub seed: u64,
    pub variant: SystemVariant,
    pub trials: u64,
    pub initial_x_norm: f64,
    pub initial_y_norm: f64,
    pub constants: TheoryConstants,
    pub scalar_hypotheses: HypothesisReport,
    pub operator_hypotheses: HypothesisReport,
    pub bound: Option<BoundReport>,
    pub event_successes: Option<u64>,
    pub event_rate: Option<f64>,
    pub wilson_low: Option<f64>,
    pub wilson_high: Option<f64>,
    /// Trials whose raw draws all stayed inside the theorem ceiling over
    /// the deadline window.
    pub within_ceiling_successes: Option<u64>,
    pub emerged_x: Option<u64>,
    pub emerged_y: Option<u64>,
    pub mean_hit_time_x: Option<f64>,
    pub mean_hit_time_y: Option<f64>,
    pub trial_errors: u64,
    pub first_error: Option<String>,
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

/// Runs `trials` independent trials and compares the event frequency
/// against the certified bound. Deterministic for a fixed scenario and
/// trial count, regardless of thread count.
pub fn monte_carlo(scenario: &Scenario, trials: u64) -> Result<MonteCarloReport> {
    if trials == 0 {
        return Err(EmergenceError::Config(
            "a Monte Carlo run needs at least one trial".into(),
        ));
    }
    let results: Vec<TrialResult> = (0..trials)
        .into_par_iter()
        .map(|i| run_trial(scenario, i))
        .collect();

    let has_bound = scenario.bound.is_some();
    let mut event_successes = 0u64;
    let mut within_successes = 0u64;
    let mut emerged_x = 0u64;
    let mut emerged_y = 0u64;
    let mut hit_sum_x = 0.0f64;
    let mut hit_sum_y = 0.0f64;
    let mut trial_errors = 0u64;
    let mut first_error = None;
    for r in &results {
        if r.event_satisfied == Some(true) {
            event_successes += 1;
        }
        if r.within_ceiling == Some(true) {
            within_successes += 1;
        }
        if let Some(t) = r.x_emergence.as_ref().and_then(|e| e.hit_time) {
            emerged_x += 1;
            hit_sum_x += t;
        }
        if let Some(t) = r.y_emergence.as_ref().and_then(|e| e.hit_time) {
            emerged_y += 1;
            hit_sum_y += t;
        }
        if let Some(e) = &r.error {
            trial_errors += 1;
            if first_error.is_none() {
                first_error = Some(e.clone());
            }
        }
    }
    let (wilson_low, wilson_high) = if has_bound {
        let (lo, hi) = wilson_interval(event_successes, trials, WILSON_Z_95);
        (Some(lo), Some(hi))
    } else {
        (None, None)
    };
    let verdict = classify_verdict(
        scenario.bound.as_ref().map(|b| b.probability),
        wilson_high,
        scenario.certified(),
    );
    Ok(MonteCarloReport {
        name: scenario.config.name.clone(),
        seed: scenario.config.seed,
        variant: scenario.variant(),
        trials,
        initial_x_norm: scenario.initial_x_norm,
        initial_y_norm: scenario.initial_y_norm,
        constants: scenario.constants.clone(),
        scalar_hypotheses: scenario.scalar_hypotheses.clone(),
        operator_hypotheses: scenario.operator_hypotheses.clone(),
        bound: scenario.bound.clone(),
        event_successes: has_bound.then_some(event_successes),
        event_rate: has_bound.then(|| event_successes as f64 / trials as f64),
        wilson_low,
        wilson_high,
        within_ceiling_successes: has_bound.then_some(within_successes),
        emerged_x: scenario.config.targets.mu.map(|_| emerged_x),
        emerged_y: scenario.config.targets.nu.map(|_| emerged_y),
        mean_hit_time_x: (emerged_x > 0).then(|| hit_sum_x / emerged_x as f64),
        mean_hit_time_y: (emerged_y > 0).then(|| hit_sum_y / emerged_y as f64),
        trial_errors,
        first_error,
        verdict,
        notes: scenario.notes.clone(),
    })
}

/// A sweep grid: dotted JSON paths into the scenario configuration mapped
/// to the values each takes. The cartesian product is run in the order of
/// the sorted paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameters: BTreeMap<String, Vec<serde_json::Value>>,
    pub trials: u64,
}

pub(crate) fn set_json_path(
    root: &mut serde_json::Value,
    path: &str,
    value: serde_json::Value,
) -> Result<()> {
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(EmergenceError::Config(format!(
            "sweep path '{path}' has an empty segment"
        )));
    }
    let mut cursor = root;
    for segment in &segments[..segments.len() - 1] {
        let obj = cursor.as_object_mut().ok_or_else(|| {
            EmergenceError::Config(format!(
                "sweep path '{path}' crosses a non-object at '{segment}'"
            ))
        })?;
        cursor = obj
            .entry(segment.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    let last = segments[segments.len() - 1];
    let obj = cursor.as_object_mut().ok_or_else(|| {
        EmergenceError::Config(format!(
            "sweep path '{path}' crosses a non-object at '{last}'"
        ))
    })?;
    obj.insert(last.to_string(), value);
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn render_value(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Runs a Monte Carlo estimate at every point of the grid and renders one
/// CSV row per point. Points whose configuration fails to build get their
/// error recorded in the last column instead of aborting the sweep.
pub fn sweep(base: &serde_json::Value, spec: &SweepSpec) -> Result<String> {
    let names: Vec<&String> = spec.parameters.keys().collect();
    let value_lists: Vec<&Vec<serde_json::Value>> = spec.parameters.values().collect();
    for (name, values) in names.iter().zip(&value_lists) {
        if values.is_empty() {
            return Err(EmergenceError::Config(format!(
                "sweep parameter '{name}' has no values"
            )));
        }
    }
    let mut out = String::new();
    for name in &names {
        out.push_str(&csv_field(name));
        out.push(',');
    }
    out.push_str("trials,event_successes,event_rate,wilson_low,wilson_high,bound,verdict,error\n");

    let mut index = vec![0usize; names.len()];
    loop {
        let mut patched = base.clone();
        for ((name, values), &i) in names.iter().zip(&value_lists).zip(&index) {
            set_json_path(&mut patched, name, values[i].clone())?;
        }
        for (values, &i) in value_lists.iter().zip(&index) {
            out.push_str(&csv_field(&render_value(&values[i])));
            out.push(',');
        }
        let row = serde_json::from_value::<ScenarioConfig>(patched)
            .map_err(EmergenceError::from)
            .and_then(build_scenario)
            .and_then(|s| monte_carlo(&s, spec.trials));
        match row {
            Ok(report) => {
                let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},\n",
                    report.trials,
                    report
                        .event_successes
                        .map(|s| s.to_string())
                        .unwrap_or_default(),
                    fmt(report.event_rate),
                    fmt(report.wilson_low),
                    fmt(report.wilson_high),
                    fmt(report.bound.as_ref().map(|b| b.probability)),
                    serde_json::to_value(report.verdict)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_default(),
                ));
            }
            Err(e) => {
                out.push_str(&format!(
                    "{},,,,,,,{}\n",
                    spec.trials,
                    csv_field(&e.to_string())
                ));
            }
        }
        // Odometer increment over the grid.
        let mut k = names.len();
        loop {
            if k == 0 {
                return Ok(out);
            }
            k -= 1;
            index[k] += 1;
            if index[k] < value_lists[k].len() {
                break;
            }
            index[k] = 0;
        }
    }
}

/// Built-in demonstration scenarios.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let value = match name {
        // Velocity alignment: positions drift with the velocities while the
        // velocity spread contracts through a distance kernel.
        "flocking" => serde_json::json!({
            "name": "flocking",
            "seed": 7,
            "geometry": {"agents": 10, "dim": 3},
            "system": {
                "system": "discrete-i",
                "c": 1.0, "gamma": 0.0, "delta": 1.0,
                "g": 10.0, "beta": 0.5, "h": 0.02
            },
            "drift": {"kind": "velocity"},
            "kernel_x": {"kind": "rational", "scale": 1.0, "exponent": 0.5},
            "initial": {"kind": "random-box", "x_scale": 0.25, "y_scale": 0.12},
            "noise": {
                "primary": {
                    "spec": {"kind": "uniform-ball", "radius": 0.08},
                    "clip": "theorem"
                }
            },
            "targets": {"nu": 0.05}
        }),
        // Convention formation: two coupled feature blocks, each contracted
        // by the operator built from the other.
        "language" => serde_json::json!({
            "name": "language",
            "seed": 11,
            "geometry": {"agents": 5, "dim": 2},
            "system": {
                "system": "discrete-ii",
                "g1": 5.0, "beta1": 0.0, "h1": 0.05,
                "g2": 5.0, "beta2": 0.0, "h2": 0.05
            },
            "kernel_x": {"kind": "rational", "scale": 1.0, "exponent": 0.0},
            "kernel_y": {"kind": "rational", "scale": 1.0, "exponent": 0.0},
            "initial": {"kind": "random-box", "x_scale": 0.3, "y_scale": 0.25},
            "noise": {
                "primary": {
                    "spec": {"kind": "uniform-ball", "radius": 0.1},
                    "clip": "theorem"
                },
                "secondary": {
                    "spec": {"kind": "uniform-ball", "radius": 0.1},
                    "clip": "theorem"
                }
            },
            "targets": {"mu": 0.05, "nu": 0.05}
        }),
        "flocking-continuous" => serde_json::json!({
            "name": "flocking-continuous",
            "seed": 7,
            "geometry": {"agents": 5, "dim": 2},
            "system": {
                "system": "continuous-i",
                "c": 1.0, "gamma": 0.0, "delta": 1.0,
                "kappa": 5.0, "beta": 0.0
            },
            "drift": {"kind": "velocity"},
            "kernel_x": {"kind": "rational", "scale": 1.0, "exponent": 0.0},
            "initial": {"kind": "random-box", "x_scale": 0.2, "y_scale": 0.2},
            "noise": {
                "primary": {
                    "spec": {"kind": "uniform-ball", "radius": 0.1},
                    "refresh": {"mode": "frozen", "delta": 0.05},
                    "clip": "theorem"
                }
            },
            "targets": {"nu": 0.05, "mu": 0.1},
            "horizon": {"kind": "auto", "dt": 0.001}
        }),
        "language-continuous" => serde_json::json!({
            "name": "language-continuous",
            "seed": 11,
            "geometry": {"agents": 4, "dim": 2},
            "system": {
                "system": "continuous-ii",
                "kappa1": 4.0, "beta1": 0.0,
                "kappa2": 4.0, "beta2": 0.0
            },
            "kernel_x": {"kind": "rational", "scale": 1.0, "exponent": 0.0},
            "kernel_y": {"kind": "rational", "scale": 1.0, "exponent": 0.0},
            "initial": {"kind": "random-box", "x_scale": 0.25, "y_scale": 0.25},
            "noise": {
                "primary": {"spec": {"kind": "zero"}},
                "secondary": {
                    "spec": {"kind": "uniform-ball", "radius": 0.08},
                    "refresh": {"mode": "frozen", "delta": 0.05},
                    "clip": "theorem"
                }
            },
            "targets": {"mu": 0.05, "nu": 0.05},
            "horizon": {"kind": "auto", "dt": 0.001}
        }),
        other => {
            return Err(EmergenceError::Config(format!(
                "unknown preset '{other}'; available: flocking, language, flocking-continuous, \
                 language-continuous"
            )))
        }
    };
    Ok(serde_json::from_value(value)?)
}
