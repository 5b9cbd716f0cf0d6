//! The four noisy interaction systems and their integrators.
//!
//! Every system couples two state blocks x and y. Block states are stored as
//! flat coordinate vectors in an isometric frame (`quotient::StateEmbedding`),
//! so block norms are plain Euclidean norms and additive noise drawn in
//! coordinates has exactly the norm law its distribution object reports.
//!
//! Discrete first kind:  x[t+1] = x[t] + h J(x[t], y[t]),
//!                       y[t+1] = S(x[t]) y[t] + h H[t],
//! with S(x) = I - h L(x) and L(x) the Laplacian of the kernel graph built
//! on the x configuration.
//!
//! Discrete second kind: x[t+1] = S1(y[t]) x[t] + h1 H1[t],
//!                       y[t+1] = S2(x[t]) y[t] + h2 H2[t],
//! both blocks updated from the previous iterate (Jacobi order), each
//! Laplacian built on the other block's configuration.
//!
//! Continuous first kind:  x' = J(x, y),        y' = -L(x) y + e H(t),
//! continuous second kind: x' = -L1(y) x + e1 H1(t),
//!                         y' = -L2(x) y + e2 H2(t),
//! integrated by the explicit Euler scheme (a fourth order Runge-Kutta
//! scheme is available for noiseless reference solutions). The amplitude
//! factors e are carried by the noise channels.
//!
//! Noise enters through `NoiseChannel`, which owns a deterministic seed
//! stream; clipping against a state-dependent cap happens at draw time, and
//! every recorded draw keeps its raw pre-clip norm so that probability
//! events can be decided from the trajectory afterwards.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EmergenceError, Result};
use crate::noise::{NoiseModel, Refresh, SeedStream};
use crate::operators::{adjacency, coercivity, laplacian, KernelSpec};
use crate::quotient::{AgentConfiguration, InnerProduct, StateEmbedding};

/// Which of the four systems is being simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemVariant {
    DiscreteI,
    #[serde(rename = "discrete-ii")]
    DiscreteII,
    ContinuousI,
    #[serde(rename = "continuous-ii")]
    ContinuousII,
}

impl SystemVariant {
    pub fn is_discrete(self) -> bool {
        matches!(self, Self::DiscreteI | Self::DiscreteII)
    }
}

/// How a block's k x d array is measured: as a quotient class modulo common
/// shifts, or as a plain ambient array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockSpace {
    #[default]
    Centered,
    Ambient,
}

/// One of the two state blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    X,
    Y,
}

/// Shared ensemble shape of both blocks plus their isometric frames. Both
/// blocks have the same agent count (each Laplacian is built on one block's
/// configuration and acts on the other) and the same per-agent dimension.
#[derive(Debug, Clone)]
pub struct Geometry {
    agents: usize,
    dim: usize,
    inner: InnerProduct,
    x_space: BlockSpace,
    y_space: BlockSpace,
    x_embedding: StateEmbedding,
    y_embedding: StateEmbedding,
}

impl Geometry {
    pub fn new(
        agents: usize,
        dim: usize,
        inner: InnerProduct,
        x_space: BlockSpace,
        y_space: BlockSpace,
    ) -> Result<Self> {
        if agents < 2 {
            return Err(EmergenceError::InvalidParameter(format!(
                "geometry needs at least two agents, got {agents}"
            )));
        }
        let make = |space: BlockSpace| match space {
            BlockSpace::Centered => StateEmbedding::centered(agents, dim, inner),
            BlockSpace::Ambient => StateEmbedding::ambient(agents, dim),
        };
        Ok(Self {
            agents,
            dim,
            inner,
            x_space,
            y_space,
            x_embedding: make(x_space)?,
            y_embedding: make(y_space)?,
        })
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inner(&self) -> InnerProduct {
        self.inner
    }

    pub fn block_space(&self, block: Block) -> BlockSpace {
        match block {
            Block::X => self.x_space,
            Block::Y => self.y_space,
        }
    }

    pub fn embedding(&self, block: Block) -> &StateEmbedding {
        match block {
            Block::X => &self.x_embedding,
            Block::Y => &self.y_embedding,
        }
    }

    /// Coordinate length of a block state vector.
    pub fn block_dim(&self, block: Block) -> usize {
        self.embedding(block).coordinate_dim()
    }

    /// Block norm; the frames are isometric, so this is the Euclidean norm
    /// of the coordinates.
    pub fn x_norm(&self, x: &DVector<f64>) -> f64 {
        x.norm()
    }

    pub fn y_norm(&self, y: &DVector<f64>) -> f64 {
        y.norm()
    }

    /// The k x d configuration a block state represents; kernel graphs are
    /// built on its pairwise row distances.
    pub fn x_configuration(&self, x: &DVector<f64>) -> Result<AgentConfiguration> {
        AgentConfiguration::new(self.x_embedding.embed(x.as_slice())?)
    }

    pub fn y_configuration(&self, y: &DVector<f64>) -> Result<AgentConfiguration> {
        AgentConfiguration::new(self.y_embedding.embed(y.as_slice())?)
    }

    /// Coordinates of a raw configuration in a block's frame; for a centered
    /// block the consensus component is projected out first.
    pub fn coordinates(&self, block: Block, config: &AgentConfiguration) -> Result<DVector<f64>> {
        self.embedding(block).coordinates(config.values())
    }
}

/// Drift operator J of the first-kind systems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum JOperator {
    /// No drift; the x block is constant (first kind) or unused (second kind).
    Zero,
    /// J(x, y) = y; positions integrate the second block directly.
    Velocity,
    /// J(x, y) = factor * y.
    ScaledVelocity { factor: f64 },
}

impl JOperator {
    /// Exact envelope constants (c, gamma, delta) with
    /// `||J(x, y)|| <= c (1 + ||x||)^gamma ||y||^delta`.
    pub fn envelope(&self) -> (f64, f64, f64) {
        match self {
            Self::Zero => (0.0, 0.0, 1.0),
            Self::Velocity => (1.0, 0.0, 1.0),
            Self::ScaledVelocity { factor } => (factor.abs(), 0.0, 1.0),
        }
    }

    pub fn apply(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Zero => DVector::zeros(x.len()),
            Self::Velocity => y.clone(),
            Self::ScaledVelocity { factor } => y * *factor,
        }
    }
}

/// Parameters of the discrete first-kind system. The triple (c, gamma,
/// delta) is the drift envelope, (g, beta) the kernel contraction floor and
/// h the step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteIParams {
    pub c: f64,
    pub gamma: f64,
    pub delta: f64,
    pub g: f64,
    pub beta: f64,
    pub h: f64,
}

/// Parameters of the discrete second-kind system; index 1 is the x equation
/// (operator built on y), index 2 the y equation (operator built on x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteIIParams {
    pub g1: f64,
    pub beta1: f64,
    pub h1: f64,
    pub g2: f64,
    pub beta2: f64,
    pub h2: f64,
}

/// Parameters of the continuous first-kind system; (kappa, beta) is the
/// coercivity floor of the Laplacian built on x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousIParams {
    pub c: f64,
    pub gamma: f64,
    pub delta: f64,
    pub kappa: f64,
    pub beta: f64,
}

/// Parameters of the continuous second-kind system; index 1 is the x
/// equation (operator built on y), index 2 the y equation (operator built
/// on x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousIIParams {
    pub kappa1: f64,
    pub beta1: f64,
    pub kappa2: f64,
    pub beta2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemParams {
    DiscreteI(DiscreteIParams),
    #[serde(rename = "discrete-ii")]
    DiscreteII(DiscreteIIParams),
    ContinuousI(ContinuousIParams),
    #[serde(rename = "continuous-ii")]
    ContinuousII(ContinuousIIParams),
}

impl SystemParams {
    pub fn variant(&self) -> SystemVariant {
        match self {
            Self::DiscreteI(_) => SystemVariant::DiscreteI,
            Self::DiscreteII(_) => SystemVariant::DiscreteII,
            Self::ContinuousI(_) => SystemVariant::ContinuousI,
            Self::ContinuousII(_) => SystemVariant::ContinuousII,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::DiscreteI(p) => {
                require_nonnegative("c", p.c)?;
                require_gamma(p.gamma)?;
                require_delta(p.delta)?;
                require_positive("g", p.g)?;
                require_nonnegative("beta", p.beta)?;
                require_positive("h", p.h)
            }
            Self::DiscreteII(p) => {
                require_positive("g1", p.g1)?;
                require_nonnegative("beta1", p.beta1)?;
                require_positive("h1", p.h1)?;
                require_positive("g2", p.g2)?;
                require_nonnegative("beta2", p.beta2)?;
                require_positive("h2", p.h2)
            }
            Self::ContinuousI(p) => {
                require_nonnegative("c", p.c)?;
                require_gamma(p.gamma)?;
                require_delta(p.delta)?;
                require_positive("kappa", p.kappa)?;
                require_nonnegative("beta", p.beta)
            }
            Self::ContinuousII(p) => {
                require_positive("kappa1", p.kappa1)?;
                require_nonnegative("beta1", p.beta1)?;
                require_positive("kappa2", p.kappa2)?;
                require_nonnegative("beta2", p.beta2)
            }
        }
    }
}

fn require_positive(label: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(EmergenceError::InvalidParameter(format!(
            "{label} must be positive and finite, got {v}"
        )))
    }
}

fn require_nonnegative(label: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(EmergenceError::InvalidParameter(format!(
            "{label} must be nonnegative and finite, got {v}"
        )))
    }
}

fn require_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && (0.0..1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(EmergenceError::InvalidParameter(format!(
            "gamma must lie in [0, 1), got {gamma}"
        )))
    }
}

fn require_delta(delta: f64) -> Result<()> {
    if delta.is_finite() && delta > 0.0 && delta <= 1.0 {
        Ok(())
    } else {
        Err(EmergenceError::InvalidParameter(format!(
            "delta must lie in (0, 1], got {delta}"
        )))
    }
}

/// A fully specified system: variant, geometry, scalar parameters, drift
/// operator and the interaction kernels. `kernel_x` is evaluated on the x
/// configuration (it builds the operator acting on y) and `kernel_y` on the
/// y configuration (the operator acting on x).
#[derive(Debug, Clone)]
pub struct Dynamics {
    pub variant: SystemVariant,
    pub geometry: Geometry,
    pub params: SystemParams,
    pub j: JOperator,
    kernel_x: Option<KernelSpec>,
    kernel_y: Option<KernelSpec>,
}

impl Dynamics {
    pub fn new(
        geometry: Geometry,
        params: SystemParams,
        j: JOperator,
        kernel_x: Option<KernelSpec>,
        kernel_y: Option<KernelSpec>,
    ) -> Result<Self> {
        params.validate()?;
        let variant = params.variant();
        if let Some(k) = &kernel_x {
            k.validate()?;
        }
        if let Some(k) = &kernel_y {
            k.validate()?;
        }
        match variant {
            SystemVariant::DiscreteI | SystemVariant::ContinuousI => {
                if kernel_x.is_none() {
                    return Err(EmergenceError::Config(
                        "first-kind systems need the kernel on the x configuration".into(),
                    ));
                }
                if kernel_y.is_some() {
                    return Err(EmergenceError::Config(
                        "first-kind systems have a single kernel; kernel_y must be absent".into(),
                    ));
                }
                let (cj, gj, dj) = j.envelope();
                if cj > 0.0 {
                    let (c, gamma, delta) = match &params {
                        SystemParams::DiscreteI(p) => (p.c, p.gamma, p.delta),
                        SystemParams::ContinuousI(p) => (p.c, p.gamma, p.delta),
                        _ => unreachable!(),
                    };
                    let tol = 1e-12;
                    if c + tol < cj || gamma + tol < gj || (delta - dj).abs() > tol {
                        return Err(EmergenceError::Config(format!(
                            "drift envelope (c={c}, gamma={gamma}, delta={delta}) does not \
                             dominate the J operator envelope (c={cj}, gamma={gj}, delta={dj})"
                        )));
                    }
                    if matches!(j, JOperator::Velocity | JOperator::ScaledVelocity { .. })
                        && geometry.block_dim(Block::X) != geometry.block_dim(Block::Y)
                    {
                        return Err(EmergenceError::ShapeMismatch(
                            "velocity drift needs matching x and y coordinate dimensions".into(),
                        ));
                    }
                }
            }
            SystemVariant::DiscreteII | SystemVariant::ContinuousII => {
                if kernel_x.is_none() || kernel_y.is_none() {
                    return Err(EmergenceError::Config(
                        "second-kind systems need kernels on both configurations".into(),
                    ));
                }
                if !matches!(j, JOperator::Zero) {
                    return Err(EmergenceError::Config(
                        "second-kind systems have no drift operator".into(),
                    ));
                }
            }
        }
        Ok(Self {
            variant,
            geometry,
            params,
            j,
            kernel_x,
            kernel_y,
        })
    }

    pub fn kernel_x(&self) -> Result<&KernelSpec> {
        self.kernel_x.as_ref().ok_or_else(|| {
            EmergenceError::Config("system has no kernel on the x configuration".into())
        })
    }

    pub fn kernel_y(&self) -> Result<&KernelSpec> {
        self.kernel_y.as_ref().ok_or_else(|| {
            EmergenceError::Config("system has no kernel on the y configuration".into())
        })
    }

    pub fn validate_state(&self, state: &SystemState) -> Result<()> {
        let gx = self.geometry.block_dim(Block::X);
        let gy = self.geometry.block_dim(Block::Y);
        if state.x.len() != gx || state.y.len() != gy {
            return Err(EmergenceError::ShapeMismatch(format!(
                "state has blocks of length {} and {}, geometry expects {} and {}",
                state.x.len(),
                state.y.len(),
                gx,
                gy
            )));
        }
        if !(state.x.iter().all(|v| v.is_finite()) && state.y.iter().all(|v| v.is_finite())) {
            return Err(EmergenceError::NonFinite("initial state".into()));
        }
        Ok(())
    }
}

/// Instantaneous state of a system: block coordinates plus the step counter
/// and physical time of the trajectory point it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub step: u64,
    pub time: f64,
}

impl SystemState {
    pub fn new(x: DVector<f64>, y: DVector<f64>) -> Self {
        Self {
            x,
            y,
            step: 0,
            time: 0.0,
        }
    }
}

/// One realized noise draw: the effective (amplitude-scaled, possibly
/// clipped) vector entering the update, the raw pre-clip effective norm and
/// whether the cap was active.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub effective: DVector<f64>,
    pub raw_norm: f64,
    pub clipped: bool,
}

/// A noise channel bound to one block: the model, a dedicated seed stream
/// and the block's coordinate dimension.
#[derive(Debug, Clone)]
pub struct NoiseChannel {
    model: NoiseModel,
    stream: SeedStream,
    dim: usize,
}

impl NoiseChannel {
    pub fn new(model: NoiseModel, stream: SeedStream, dim: usize) -> Result<Self> {
        model.validate()?;
        if dim == 0 {
            return Err(EmergenceError::InvalidParameter(
                "noise channel needs dimension >= 1".into(),
            ));
        }
        Ok(Self { model, stream, dim })
    }

    pub fn model(&self) -> &NoiseModel {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Whether draws from this channel surely satisfy their cap (clipped
    /// wrapper) or are identically zero. Trajectories driven only by such
    /// channels satisfy the theorem noise hypotheses pathwise.
    pub fn is_surely_capped(&self) -> bool {
        self.model.spec.is_zero()
            || self.model.amplitude == 0.0
            || self.model.spec.relative_cap().is_some()
    }

    pub fn summary(&self) -> ChannelSummary {
        ChannelSummary {
            zero: self.model.spec.is_zero() || self.model.amplitude == 0.0,
            relative_cap: self.model.spec.relative_cap(),
            amplitude: self.model.amplitude,
        }
    }

    /// Draw addressed by index, clipped against
    /// `relative_cap * reference_norm` when the law carries a cap.
    fn draw_at(&self, index: u64, reference_norm: f64) -> NoiseDraw {
        let mut rng = self.stream.rng_at(index);
        let raw = self.model.spec.sample(&mut rng, self.dim) * self.model.amplitude;
        self.finish_draw(raw, reference_norm)
    }

    fn finish_draw(&self, raw: DVector<f64>, reference_norm: f64) -> NoiseDraw {
        let raw_norm = raw.norm();
        match self.model.spec.relative_cap() {
            Some(cap_rel) => {
                let cap = cap_rel * reference_norm;
                if raw_norm > cap {
                    let effective = if cap > 0.0 {
                        &raw * (cap / raw_norm)
                    } else {
                        DVector::zeros(raw.len())
                    };
                    NoiseDraw {
                        effective,
                        raw_norm,
                        clipped: true,
                    }
                } else {
                    NoiseDraw {
                        effective: raw,
                        raw_norm,
                        clipped: false,
                    }
                }
            }
            None => NoiseDraw {
                effective: raw,
                raw_norm,
                clipped: false,
            },
        }
    }

    /// Exact Ornstein-Uhlenbeck path on the integration grid (stationary
    /// start, one-step transition per grid point), drawn sequentially from
    /// this channel's stream.
    fn ou_path(&self, theta: f64, steps: u64, dt: f64) -> Result<Vec<DVector<f64>>> {
        let sigma = match self.model.spec.base() {
            crate::noise::NoiseSpec::Gaussian { sigma } => *sigma,
            crate::noise::NoiseSpec::Zero => {
                return Ok(vec![DVector::zeros(self.dim); steps as usize + 1])
            }
            _ => {
                return Err(EmergenceError::InvalidParameter(
                    "Ornstein-Uhlenbeck refresh requires a Gaussian base law".into(),
                ))
            }
        };
        let decay = (-theta * dt).exp();
        let kick = sigma * (1.0 - decay * decay).sqrt();
        let mut rng = self.stream.rng_at(0);
        let mut path = Vec::with_capacity(steps as usize + 1);
        let mut h = DVector::from_fn(self.dim, |_, _| {
            let z: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
            sigma * z
        });
        path.push(h.clone());
        for _ in 0..steps {
            let z = DVector::from_fn(self.dim, |_, _| {
                let v: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
                v
            });
            h = &h * decay + z * kick;
            path.push(h.clone());
        }
        Ok(path)
    }
}

/// Resolves a channel's refresh structure against the integration grid.
enum SamplerKind {
    /// Fresh draw per iteration; the draw index is the step counter.
    PerStep,
    /// Fresh draw per time cell `(i delta, (i+1) delta]`; the draw index is
    /// the cell index, so refining the grid revisits the same draws.
    Frozen { delta: f64 },
    /// Pre-generated path evaluated at the step counter.
    Path { values: Vec<DVector<f64>> },
}

pub struct ChannelSampler {
    channel: NoiseChannel,
    kind: SamplerKind,
}

impl ChannelSampler {
    /// Discrete systems draw independently at every iteration.
    pub fn for_discrete(channel: NoiseChannel) -> Result<Self> {
        match channel.model.refresh {
            Refresh::PerStep => Ok(Self {
                channel,
                kind: SamplerKind::PerStep,
            }),
            _ => Err(EmergenceError::Config(
                "discrete systems need per-step noise refresh".into(),
            )),
        }
    }

    /// Continuous systems need a path structure: frozen cells or an
    /// Ornstein-Uhlenbeck process sampled on the grid.
    pub fn for_continuous(channel: NoiseChannel, steps: u64, dt: f64) -> Result<Self> {
        match channel.model.refresh {
            Refresh::Frozen { delta } => Ok(Self {
                channel,
                kind: SamplerKind::Frozen { delta },
            }),
            Refresh::OrnsteinUhlenbeck { theta } => {
                let values = channel.ou_path(theta, steps, dt)?;
                Ok(Self {
                    channel,
                    kind: SamplerKind::Path { values },
                })
            }
            Refresh::PerStep => {
                if channel.model.spec.is_zero() || channel.model.amplitude == 0.0 {
                    // A zero channel has no path structure to resolve.
                    Ok(Self {
                        channel,
                        kind: SamplerKind::PerStep,
                    })
                } else {
                    Err(EmergenceError::Config(
                        "continuous systems need frozen or Ornstein-Uhlenbeck noise refresh".into(),
                    ))
                }
            }
        }
    }

    pub fn channel(&self) -> &NoiseChannel {
        &self.channel
    }

    fn draw(&self, step: u64, time: f64, reference_norm: f64) -> NoiseDraw {
        match &self.kind {
            SamplerKind::PerStep => self.channel.draw_at(step, reference_norm),
            SamplerKind::Frozen { delta } => self
                .channel
                .draw_at(frozen_cell(time, *delta), reference_norm),
            SamplerKind::Path { values } => {
                let raw = &values[step as usize] * self.channel.model.amplitude;
                self.channel.finish_draw(raw, reference_norm)
            }
        }
    }
}

/// Cell index of the piecewise-frozen path at time t. Cells are left-open
/// right-closed with the cell at zero owning t = 0; the small slack absorbs
/// floating point jitter in grid times so that refinements of the same grid
/// land in the same cells.
pub fn frozen_cell(time: f64, delta: f64) -> u64 {
    let ratio = time / delta;
    let cell = (ratio - 1e-9).ceil() - 1.0;
    if cell < 0.0 {
        0
    } else {
        cell as u64
    }
}

/// Integration scheme for the continuous systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrationMethod {
    #[default]
    Euler,
    /// Classical fourth order Runge-Kutta; only valid for noiseless runs,
    /// used to produce reference solutions in convergence checks.
    RungeKutta4,
}

/// Per-run switches. Operator recording adds an eigenvalue solve per step
/// and is meant for single verification trajectories, not ensembles.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub record_operators: bool,
    pub record_states: bool,
    pub method: IntegrationMethod,
    pub blow_up_guard: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            record_operators: false,
            record_states: false,
            method: IntegrationMethod::Euler,
            blow_up_guard: 1e12,
        }
    }
}

/// How long to run: iteration count for the discrete systems, horizon and
/// grid step for the continuous ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Steps(u64),
    Time { t_end: f64, dt: f64 },
}

/// One recorded trajectory sample. The noise fields describe the draws used
/// by the update that leaves this point; the final point of a trajectory
/// has no outgoing update and records zero draws.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub time: f64,
    pub x_norm: f64,
    pub y_norm: f64,
    /// Coercivity of the operator in the x equation (second-kind continuous
    /// systems), when operator recording is on.
    pub coercivity_x_eq: Option<f64>,
    /// Coercivity of the operator in the y equation (continuous systems),
    /// when operator recording is on.
    pub coercivity_y_eq: Option<f64>,
    /// Raw pre-clip effective norm of the primary draw.
    pub noise_primary_norm: f64,
    /// Raw pre-clip effective norm of the secondary draw (second-kind
    /// systems; zero otherwise).
    pub noise_secondary_norm: f64,
    pub clipped_primary: bool,
    pub clipped_secondary: bool,
}

/// What a run's noise channel looked like, kept with the trajectory so that
/// envelope verification can decide which noise hypotheses held pathwise.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChannelSummary {
    /// The channel contributes nothing (zero law or zero amplitude).
    pub zero: bool,
    /// Relative cap of a clipped law, in units of the reference block norm.
    pub relative_cap: Option<f64>,
    pub amplitude: f64,
}

impl ChannelSummary {
    /// Draws surely satisfy `||H|| <= ceiling * reference` for the given
    /// ceiling.
    pub fn surely_within(&self, ceiling: f64) -> bool {
        self.zero || self.relative_cap.is_some_and(|cap| cap <= ceiling + 1e-12)
    }
}

/// A realized run of one system.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub variant: SystemVariant,
    pub points: Vec<TrajectoryPoint>,
    /// Full x block per point, when state recording is on.
    pub x_states: Option<Vec<DVector<f64>>>,
    /// Time advanced per step: h (discrete first kind), h1 (discrete second
    /// kind, whose y equation advances h2 per step), dt (continuous).
    pub time_step: f64,
    pub primary_channel: ChannelSummary,
    /// Present for the second-kind systems.
    pub secondary_channel: Option<ChannelSummary>,
}

impl Trajectory {
    pub fn norms(&self, block: Block) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(move |p| match block {
            Block::X => p.x_norm,
            Block::Y => p.y_norm,
        })
    }

    /// True when every active channel is clipped or zero, so the noise
    /// hypotheses of the envelope propositions hold pathwise.
    pub fn clipped_noise(&self) -> bool {
        let primary = self.primary_channel.zero || self.primary_channel.relative_cap.is_some();
        let secondary = self
            .secondary_channel
            .is_none_or(|c| c.zero || c.relative_cap.is_some());
        primary && secondary
    }
}

/// First crossing of a block norm below a threshold.
#[derive(Debug, Clone, Serialize)]
pub struct EmergenceReport {
    pub threshold: f64,
    pub hit_step: Option<u64>,
    pub hit_time: Option<f64>,
    /// Whether the norm stayed at or below the threshold from the first
    /// crossing to the end of the record.
    pub sustained: bool,
}

pub fn detect_emergence(trajectory: &Trajectory, block: Block, threshold: f64) -> EmergenceReport {
    let mut hit: Option<(u64, f64)> = None;
    let mut sustained = false;
    for p in &trajectory.points {
        let norm = match block {
            Block::X => p.x_norm,
            Block::Y => p.y_norm,
        };
        match hit {
            None => {
                if norm <= threshold {
                    hit = Some((p.step, p.time));
                    sustained = true;
                }
            }
            Some(_) => {
                if norm > threshold {
                    sustained = false;
                }
            }
        }
    }
    EmergenceReport {
        threshold,
        hit_step: hit.map(|(s, _)| s),
        hit_time: hit.map(|(_, t)| t),
        sustained,
    }
}

/// Applies a k x k operator to a block given in frame coordinates; the image
/// is projected back into the frame (the quotient action of the operator).
fn apply_block_operator(
    matrix: &DMatrix<f64>,
    embedding: &StateEmbedding,
    coords: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mat = embedding.embed(coords.as_slice())?;
    embedding.coordinates(&(matrix * mat))
}

fn guard_finite(x: &DVector<f64>, y: &DVector<f64>, step: u64, guard: f64) -> Result<()> {
    let nx = x.norm();
    let ny = y.norm();
    if !nx.is_finite() || !ny.is_finite() || nx > guard || ny > guard {
        return Err(EmergenceError::BlowUp {
            step,
            norm: nx.max(ny),
        });
    }
    Ok(())
}

struct Recorder {
    points: Vec<TrajectoryPoint>,
    x_states: Option<Vec<DVector<f64>>>,
}

impl Recorder {
    fn new(capacity: usize, record_states: bool) -> Self {
        Self {
            points: Vec::with_capacity(capacity),
            x_states: record_states.then(|| Vec::with_capacity(capacity)),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        step: u64,
        time: f64,
        x: &DVector<f64>,
        y: &DVector<f64>,
        coercivity_x_eq: Option<f64>,
        coercivity_y_eq: Option<f64>,
        primary: Option<&NoiseDraw>,
        secondary: Option<&NoiseDraw>,
    ) {
        self.points.push(TrajectoryPoint {
            step,
            time,
            x_norm: x.norm(),
            y_norm: y.norm(),
            coercivity_x_eq,
            coercivity_y_eq,
            noise_primary_norm: primary.map_or(0.0, |d| d.raw_norm),
            noise_secondary_norm: secondary.map_or(0.0, |d| d.raw_norm),
            clipped_primary: primary.is_some_and(|d| d.clipped),
            clipped_secondary: secondary.is_some_and(|d| d.clipped),
        });
        if let Some(states) = &mut self.x_states {
            states.push(x.clone());
        }
    }
}

fn expect_variant(dynamics: &Dynamics, variant: SystemVariant) -> Result<()> {
    if dynamics.variant == variant {
        Ok(())
    } else {
        Err(EmergenceError::InvalidParameter(
            "integrator called with a different system variant".into(),
        ))
    }
}

fn expect_channel_dim(channel: &NoiseChannel, dim: usize, label: &str) -> Result<()> {
    if channel.dim() == dim {
        Ok(())
    } else {
        Err(EmergenceError::ShapeMismatch(format!(
            "{label} noise channel has dimension {}, block needs {}",
            channel.dim(),
            dim
        )))
    }
}

/// Runs the discrete first-kind system for the given number of iterations.
pub fn run_discrete_i(
    dynamics: &Dynamics,
    initial: &SystemState,
    noise: &ChannelSampler,
    steps: u64,
    opts: &RunOptions,
) -> Result<Trajectory> {
    expect_variant(dynamics, SystemVariant::DiscreteI)?;
    dynamics.validate_state(initial)?;
    let geom = &dynamics.geometry;
    expect_channel_dim(noise.channel(), geom.block_dim(Block::Y), "primary")?;
    let p = match &dynamics.params {
        SystemParams::DiscreteI(p) => *p,
        _ => unreachable!(),
    };
    let kernel = dynamics.kernel_x()?;
    let mut x = initial.x.clone();
    let mut y = initial.y.clone();
    let mut rec = Recorder::new(steps as usize + 1, opts.record_states);
    for step in 0..steps {
        let time = step as f64 * p.h;
        let lap = laplacian(&adjacency(&geom.x_configuration(&x)?, kernel)?)?;
        let draw = noise.draw(step, time, y.norm());
        rec.push(step, time, &x, &y, None, None, Some(&draw), None);
        let ly = apply_block_operator(lap.matrix(), geom.embedding(Block::Y), &y)?;
        let y_next = &y - (ly - &draw.effective) * p.h;
        let x_next = &x + dynamics.j.apply(&x, &y) * p.h;
        x = x_next;
        y = y_next;
        guard_finite(&x, &y, step + 1, opts.blow_up_guard)?;
    }
    rec.push(steps, steps as f64 * p.h, &x, &y, None, None, None, None);
    Ok(Trajectory {
        variant: SystemVariant::DiscreteI,
        points: rec.points,
        x_states: rec.x_states,
        time_step: p.h,
        primary_channel: noise.channel().summary(),
        secondary_channel: None,
    })
}

/// Runs the discrete second-kind system; both blocks are updated from the
/// previous iterate.
pub fn run_discrete_ii(
    dynamics: &Dynamics,
    initial: &SystemState,
    noise_x: &ChannelSampler,
    noise_y: &ChannelSampler,
    steps: u64,
    opts: &RunOptions,
) -> Result<Trajectory> {
    expect_variant(dynamics, SystemVariant::DiscreteII)?;
    dynamics.validate_state(initial)?;
    let geom = &dynamics.geometry;
    expect_channel_dim(noise_x.channel(), geom.block_dim(Block::X), "primary")?;
    expect_channel_dim(noise_y.channel(), geom.block_dim(Block::Y), "secondary")?;
    let p = match &dynamics.params {
        SystemParams::DiscreteII(p) => *p,
        _ => unreachable!(),
    };
    let kernel_on_x = dynamics.kernel_x()?;
    let kernel_on_y = dynamics.kernel_y()?;
    let mut x = initial.x.clone();
    let mut y = initial.y.clone();
    let mut rec = Recorder::new(steps as usize + 1, opts.record_states);
    for step in 0..steps {
        let time = step as f64 * p.h1;
        let lap_x_eq = laplacian(&adjacency(&geom.y_configuration(&y)?, kernel_on_y)?)?;
        let lap_y_eq = laplacian(&adjacency(&geom.x_configuration(&x)?, kernel_on_x)?)?;
        let draw_x = noise_x.draw(step, time, x.norm());
        let draw_y = noise_y.draw(step, time, y.norm());
        rec.push(step, time, &x, &y, None, None, Some(&draw_x), Some(&draw_y));
        let lx = apply_block_operator(lap_x_eq.matrix(), geom.embedding(Block::X), &x)?;
        let ly = apply_block_operator(lap_y_eq.matrix(), geom.embedding(Block::Y), &y)?;
        let x_next = &x - (lx - &draw_x.effective) * p.h1;
        let y_next = &y - (ly - &draw_y.effective) * p.h2;
        x = x_next;
        y = y_next;
        guard_finite(&x, &y, step + 1, opts.blow_up_guard)?;
    }
    rec.push(steps, steps as f64 * p.h1, &x, &y, None, None, None, None);
    Ok(Trajectory {
        variant: SystemVariant::DiscreteII,
        points: rec.points,
        x_states: rec.x_states,
        time_step: p.h1,
        primary_channel: noise_x.channel().summary(),
        secondary_channel: Some(noise_y.channel().summary()),
    })
}

/// Integrates the continuous first-kind system on a uniform grid.
pub fn integrate_continuous_i(
    dynamics: &Dynamics,
    initial: &SystemState,
    noise: &ChannelSampler,
    t_end: f64,
    dt: f64,
    opts: &RunOptions,
) -> Result<Trajectory> {
    expect_variant(dynamics, SystemVariant::ContinuousI)?;
    dynamics.validate_state(initial)?;
    let geom = &dynamics.geometry;
    expect_channel_dim(noise.channel(), geom.block_dim(Block::Y), "primary")?;
    let steps = grid_steps(t_end, dt)?;
    if opts.method == IntegrationMethod::RungeKutta4 && !noise.channel().model().spec.is_zero() {
        return Err(EmergenceError::Config(
            "the Runge-Kutta scheme is for noiseless runs only".into(),
        ));
    }
    let kernel = dynamics.kernel_x()?;
    let mut x = initial.x.clone();
    let mut y = initial.y.clone();
    let mut rec = Recorder::new(steps as usize + 1, opts.record_states);
    for step in 0..steps {
        let time = step as f64 * dt;
        let lap = laplacian(&adjacency(&geom.x_configuration(&x)?, kernel)?)?;
        let phi = if opts.record_operators {
            Some(coercivity(&lap)?.value)
        } else {
            None
        };
        let draw = noise.draw(step, time, y.norm());
        rec.push(step, time, &x, &y, None, phi, Some(&draw), None);
        match opts.method {
            IntegrationMethod::Euler => {
                let ly = apply_block_operator(lap.matrix(), geom.embedding(Block::Y), &y)?;
                let y_next = &y + (&draw.effective - ly) * dt;
                let x_next = &x + dynamics.j.apply(&x, &y) * dt;
                x = x_next;
                y = y_next;
            }
            IntegrationMethod::RungeKutta4 => {
                let (x_next, y_next) = rk4_step_i(dynamics, &x, &y, dt)?;
                x = x_next;
                y = y_next;
            }
        }
        guard_finite(&x, &y, step + 1, opts.blow_up_guard)?;
    }
    rec.push(steps, steps as f64 * dt, &x, &y, None, None, None, None);
    Ok(Trajectory {
        variant: SystemVariant::ContinuousI,
        points: rec.points,
        x_states: rec.x_states,
        time_step: dt,
        primary_channel: noise.channel().summary(),
        secondary_channel: None,
    })
}

/// Integrates the continuous second-kind system on a uniform grid.
pub fn integrate_continuous_ii(
    dynamics: &Dynamics,
    initial: &SystemState,
    noise_x: &ChannelSampler,
    noise_y: &ChannelSampler,
    t_end: f64,
    dt: f64,
    opts: &RunOptions,
) -> Result<Trajectory> {
    expect_variant(dynamics, SystemVariant::ContinuousII)?;
    dynamics.validate_state(initial)?;
    let geom = &dynamics.geometry;
    expect_channel_dim(noise_x.channel(), geom.block_dim(Block::X), "primary")?;
    expect_channel_dim(noise_y.channel(), geom.block_dim(Block::Y), "secondary")?;
    let steps = grid_steps(t_end, dt)?;
    if opts.method == IntegrationMethod::RungeKutta4
        && !(noise_x.channel().model().spec.is_zero() && noise_y.channel().model().spec.is_zero())
    {
        return Err(EmergenceError::Config(
            "the Runge-Kutta scheme is for noiseless runs only".into(),
        ));
    }
    let kernel_on_x = dynamics.kernel_x()?;
    let kernel_on_y = dynamics.kernel_y()?;
    let mut x = initial.x.clone();
    let mut y = initial.y.clone();
    let mut rec = Recorder::new(steps as usize + 1, opts.record_states);
    for step in 0..steps {
        let time = step as f64 * dt;
        let lap_x_eq = laplacian(&adjacency(&geom.y_configuration(&y)?, kernel_on_y)?)?;
        let lap_y_eq = laplacian(&adjacency(&geom.x_configuration(&x)?, kernel_on_x)?)?;
        let (eta, xi) = if opts.record_operators {
            (
                Some(coercivity(&lap_x_eq)?.value),
                Some(coercivity(&lap_y_eq)?.value),
            )
        } else {
            (None, None)
        };
        let draw_x = noise_x.draw(step, time, x.norm());
        let draw_y = noise_y.draw(step, time, y.norm());
        rec.push(step, time, &x, &y, eta, xi, Some(&draw_x), Some(&draw_y));
        match opts.method {
            IntegrationMethod::Euler => {
                let lx = apply_block_operator(lap_x_eq.matrix(), geom.embedding(Block::X), &x)?;
                let ly = apply_block_operator(lap_y_eq.matrix(), geom.embedding(Block::Y), &y)?;
                let x_next = &x + (&draw_x.effective - lx) * dt;
                let y_next = &y + (&draw_y.effective - ly) * dt;
                x = x_next;
                y = y_next;
            }
            IntegrationMethod::RungeKutta4 => {
                let (x_next, y_next) = rk4_step_ii(dynamics, &x, &y, dt)?;
                x = x_next;
                y = y_next;
            }
        }
        guard_finite(&x, &y, step + 1, opts.blow_up_guard)?;
    }
    rec.push(steps, steps as f64 * dt, &x, &y, None, None, None, None);
    Ok(Trajectory {
        variant: SystemVariant::ContinuousII,
        points: rec.points,
        x_states: rec.x_states,
        time_step: dt,
        primary_channel: noise_x.channel().summary(),
        secondary_channel: Some(noise_y.channel().summary()),
    })
}

fn grid_steps(t_end: f64, dt: f64) -> Result<u64> {
    if !(t_end.is_finite() && t_end > 0.0 && dt.is_finite() && dt > 0.0) {
        return Err(EmergenceError::InvalidParameter(format!(
            "integration needs positive horizon and step, got t_end={t_end}, dt={dt}"
        )));
    }
    let steps = (t_end / dt).ceil();
    if steps > 5e7 {
        return Err(EmergenceError::InvalidParameter(format!(
            "integration grid of {steps} steps is beyond the supported range"
        )));
    }
    Ok(steps as u64)
}

fn field_i(
    dynamics: &Dynamics,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let geom = &dynamics.geometry;
    let lap = laplacian(&adjacency(&geom.x_configuration(x)?, dynamics.kernel_x()?)?)?;
    let ly = apply_block_operator(lap.matrix(), geom.embedding(Block::Y), y)?;
    Ok((dynamics.j.apply(x, y), -ly))
}

fn rk4_step_i(
    dynamics: &Dynamics,
    x: &DVector<f64>,
    y: &DVector<f64>,
    dt: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (kx1, ky1) = field_i(dynamics, x, y)?;
    let (kx2, ky2) = field_i(dynamics, &(x + &kx1 * (dt / 2.0)), &(y + &ky1 * (dt / 2.0)))?;
    let (kx3, ky3) = field_i(dynamics, &(x + &kx2 * (dt / 2.0)), &(y + &ky2 * (dt / 2.0)))?;
    let (kx4, ky4) = field_i(dynamics, &(x + &kx3 * dt), &(y + &ky3 * dt))?;
    Ok((
        x + (kx1 + kx2 * 2.0 + kx3 * 2.0 + kx4) * (dt / 6.0),
        y + (ky1 + ky2 * 2.0 + ky3 * 2.0 + ky4) * (dt / 6.0),
    ))
}

fn field_ii(
    dynamics: &Dynamics,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let geom = &dynamics.geometry;
    let lap_x_eq = laplacian(&adjacency(&geom.y_configuration(y)?, dynamics.kernel_y()?)?)?;
    let lap_y_eq = laplacian(&adjacency(&geom.x_configuration(x)?, dynamics.kernel_x()?)?)?;
    let lx = apply_block_operator(lap_x_eq.matrix(), geom.embedding(Block::X), x)?;
    let ly = apply_block_operator(lap_y_eq.matrix(), geom.embedding(Block::Y), y)?;
    Ok((-lx, -ly))
}

fn rk4_step_ii(
    dynamics: &Dynamics,
    x: &DVector<f64>,
    y: &DVector<f64>,
    dt: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (kx1, ky1) = field_ii(dynamics, x, y)?;
    let (kx2, ky2) = field_ii(dynamics, &(x + &kx1 * (dt / 2.0)), &(y + &ky1 * (dt / 2.0)))?;
    let (kx3, ky3) = field_ii(dynamics, &(x + &kx2 * (dt / 2.0)), &(y + &ky2 * (dt / 2.0)))?;
    let (kx4, ky4) = field_ii(dynamics, &(x + &kx3 * dt), &(y + &ky3 * dt))?;
    Ok((
        x + (kx1 + kx2 * 2.0 + kx3 * 2.0 + kx4) * (dt / 6.0),
        y + (ky1 + ky2 * 2.0 + ky3 * 2.0 + ky4) * (dt / 6.0),
    ))
}

/// Dispatches a run across the four systems. First-kind systems take one
/// noise channel (on the y block); second-kind systems take two.
pub fn run(
    dynamics: &Dynamics,
    initial: &SystemState,
    primary: NoiseChannel,
    secondary: Option<NoiseChannel>,
    horizon: Horizon,
    opts: &RunOptions,
) -> Result<Trajectory> {
    match (dynamics.variant, horizon, secondary) {
        (SystemVariant::DiscreteI, Horizon::Steps(steps), None) => {
            let sampler = ChannelSampler::for_discrete(primary)?;
            run_discrete_i(dynamics, initial, &sampler, steps, opts)
        }
        (SystemVariant::DiscreteII, Horizon::Steps(steps), Some(second)) => {
            let sx = ChannelSampler::for_discrete(primary)?;
            let sy = ChannelSampler::for_discrete(second)?;
            run_discrete_ii(dynamics, initial, &sx, &sy, steps, opts)
        }
        (SystemVariant::ContinuousI, Horizon::Time { t_end, dt }, None) => {
            let steps = grid_steps(t_end, dt)?;
            let sampler = ChannelSampler::for_continuous(primary, steps, dt)?;
            integrate_continuous_i(dynamics, initial, &sampler, t_end, dt, opts)
        }
        (SystemVariant::ContinuousII, Horizon::Time { t_end, dt }, Some(second)) => {
            let steps = grid_steps(t_end, dt)?;
            let sx = ChannelSampler::for_continuous(primary, steps, dt)?;
            let sy = ChannelSampler::for_continuous(second, steps, dt)?;
            integrate_continuous_ii(dynamics, initial, &sx, &sy, t_end, dt, opts)
        }
        (variant, Horizon::Steps(_), _) if !variant.is_discrete() => Err(EmergenceError::Config(
            "continuous systems need a time horizon, not an iteration count".into(),
        )),
        (variant, Horizon::Time { .. }, _) if variant.is_discrete() => Err(EmergenceError::Config(
            "discrete systems need an iteration count, not a time horizon".into(),
        )),
        (SystemVariant::DiscreteI | SystemVariant::ContinuousI, _, Some(_)) => Err(
            EmergenceError::Config("first-kind systems take a single noise channel".into()),
        ),
        _ => Err(EmergenceError::Config(
            "second-kind systems need a secondary noise channel".into(),
        )),
    }
}
