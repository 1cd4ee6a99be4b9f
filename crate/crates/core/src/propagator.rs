//! Single-trajectory evolution: Strang splitting of the kinetic term around
//! a position-diagonal step that carries the potential and the measurement.
//!
//! Three unravelings of the same unconditioned dynamics are supported:
//! diffusive homodyne detection at an arbitrary local-oscillator phase,
//! quantum jumps (counting), and the unitary stochastic-potential form.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::grid::{GridError, SpatialGrid, WaveFunction};
use crate::measurement::{
    local_oscillator_shift, LocalOscillator, MeasurementProfile, ProfileError,
};

/// Largest allowed `κ·dt`.
pub const MAX_KAPPA_DT: f64 = 0.02;
/// Largest allowed `dt·E_kin,max/ħ`.
pub const MAX_KINETIC_PHASE: f64 = 0.1;
/// Probability allowed inside either edge band before the monitor trips.
pub const EDGE_TOLERANCE: f64 = 1e-8;
/// The edge monitor looks at the state every this many steps (and at samples).
pub const EDGE_CHECK_INTERVAL: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagationError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("time step must be positive and finite, got {0}")]
    TimeStep(f64),
    #[error("kappa*dt = {0:.4} exceeds {MAX_KAPPA_DT}")]
    StochasticResolution(f64),
    #[error("dt*E_kin,max/hbar = {0:.4} exceeds {MAX_KINETIC_PHASE}")]
    SplittingAccuracy(f64),
    #[error("final time must be finite and non-negative, got {0}")]
    FinalTime(f64),
    #[error("sample time {0} is outside [0, t_final] or out of order")]
    SampleTime(f64),
    #[error("edge band {band} leaves no interior on a grid of length {length}")]
    EdgeBand { band: f64, length: f64 },
    #[error("profile, potential and state must share one grid")]
    GridMismatch,
    #[error("initial state has norm^2 {0}, expected 1")]
    Unnormalized(f64),
    #[error("non-finite amplitude after step {step}")]
    NonFinite { step: usize },
    #[error("probability {mass:.3e} reached the grid edge at step {step}")]
    EdgeViolation { step: usize, mass: f64 },
    #[error("jump at step {step} annihilates the state (zero jump-operator norm)")]
    EmptyJump { step: usize },
}

/// Static potential `V(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialKind {
    None,
    /// `V0·θ(x)`.
    Step {
        v0: f64,
    },
    /// `V0·exp(-x²/2σ²)`.
    Gaussian {
        v0: f64,
        sigma: f64,
    },
    Tabulated {
        samples: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    kind: PotentialKind,
    samples: Vec<f64>,
}

impl PotentialSpec {
    pub fn new(kind: PotentialKind, grid: &SpatialGrid) -> Result<Self, PropagationError> {
        let x = grid.x();
        let samples: Vec<f64> = match &kind {
            PotentialKind::None => vec![0.0; x.len()],
            PotentialKind::Step { v0 } => x
                .iter()
                .map(|&x| if x >= 0.0 { *v0 } else { 0.0 })
                .collect(),
            PotentialKind::Gaussian { v0, sigma } => {
                if !(*sigma > 0.0) {
                    return Err(GridError::Packet(format!(
                        "potential width must be positive, got {sigma}"
                    ))
                    .into());
                }
                x.iter()
                    .map(|&x| v0 * (-x * x / (2.0 * sigma * sigma)).exp())
                    .collect()
            }
            PotentialKind::Tabulated { samples } => {
                if samples.len() != x.len() {
                    return Err(GridError::LengthMismatch {
                        expected: x.len(),
                        got: samples.len(),
                    }
                    .into());
                }
                samples.clone()
            }
        };
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { index }.into());
        }
        Ok(Self { kind, samples })
    }

    pub fn none(grid: &SpatialGrid) -> Self {
        Self {
            kind: PotentialKind::None,
            samples: vec![0.0; grid.n_points()],
        }
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn is_zero(&self) -> bool {
        self.samples.iter().all(|&v| v == 0.0)
    }

    /// `V + ΔV`, used to fold residual terms into the Hamiltonian.
    pub fn plus(&self, extra: &[f64]) -> Self {
        Self {
            kind: PotentialKind::Tabulated {
                samples: self.samples.iter().zip(extra).map(|(a, b)| a + b).collect(),
            },
            samples: self.samples.iter().zip(extra).map(|(a, b)| a + b).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unraveling {
    /// Diffusive detection of the quadrature selected by the LO phase.
    Homodyne { phase: f64 },
    /// Photon counting, optionally with a coherent local oscillator mixed in.
    Jump { local_oscillator: LocalOscillator },
    /// Unitary evolution under the fluctuating potential `√(2κ)·ħμ(x)ξ(t)`.
    StochasticPotential,
}

impl Unraveling {
    pub fn name(&self) -> &'static str {
        match self {
            Unraveling::Homodyne { .. } => "homodyne",
            Unraveling::Jump { .. } => "jump",
            Unraveling::StochasticPotential => "stochastic-potential",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgePolicy {
    Abort,
    Record,
}

/// Time stepping and sampling of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub unraveling: Unraveling,
    /// Requested step; the step actually used divides `t_final` evenly and
    /// never exceeds this value.
    pub dt: f64,
    pub t_final: f64,
    /// Times at which the state is reported; snapped to the nearest step.
    pub sample_times: Vec<f64>,
    pub seed: u64,
    pub edge_policy: EdgePolicy,
    /// Width of the monitored edge bands; `None` uses five times the rms
    /// width of the initial state.
    pub edge_band: Option<f64>,
}

impl TrajectorySpec {
    pub fn new(unraveling: Unraveling, dt: f64, t_final: f64, seed: u64) -> Self {
        Self {
            unraveling,
            dt,
            t_final,
            sample_times: vec![t_final],
            seed,
            edge_policy: EdgePolicy::Abort,
            edge_band: None,
        }
    }

    pub fn with_samples(mut self, times: Vec<f64>) -> Self {
        self.sample_times = times;
        self
    }

    pub fn with_edge_policy(mut self, policy: EdgePolicy) -> Self {
        self.edge_policy = policy;
        self
    }

    pub fn n_steps(&self) -> usize {
        if self.t_final == 0.0 {
            0
        } else {
            (self.t_final / self.dt - 1e-9).ceil().max(1.0) as usize
        }
    }

    pub fn effective_dt(&self) -> f64 {
        match self.n_steps() {
            0 => self.dt,
            n => self.t_final / n as f64,
        }
    }

    pub fn validate(&self, grid: &SpatialGrid, kappa: f64) -> Result<(), PropagationError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(PropagationError::TimeStep(self.dt));
        }
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return Err(PropagationError::FinalTime(self.t_final));
        }
        let dt = self.effective_dt();
        let kd = kappa * dt;
        if kd > MAX_KAPPA_DT * (1.0 + 1e-12) {
            return Err(PropagationError::StochasticResolution(kd));
        }
        let phase = dt * grid.kinetic_energy_max() / grid.units().hbar;
        if phase > MAX_KINETIC_PHASE * (1.0 + 1e-12) {
            return Err(PropagationError::SplittingAccuracy(phase));
        }
        let mut last = 0.0;
        for &t in &self.sample_times {
            if !(t >= last && t <= self.t_final * (1.0 + 1e-12)) {
                return Err(PropagationError::SampleTime(t));
            }
            last = t;
        }
        if let Some(band) = self.edge_band {
            if !(band >= 0.0 && 2.0 * band < grid.length()) {
                return Err(PropagationError::EdgeBand {
                    band,
                    length: grid.length(),
                });
            }
        }
        Ok(())
    }
}

/// Default step `min(0.01/κ, 0.02·m·dx²/ħ)`, inside both validation limits.
pub fn default_dt(grid: &SpatialGrid, kappa: f64) -> f64 {
    let u = grid.units();
    let kinetic = 0.02 * u.mass * grid.dx() * grid.dx() / u.hbar;
    if kappa > 0.0 {
        kinetic.min(0.01 / kappa)
    } else {
        kinetic
    }
}

/// Source of Wiener increments and uniform deviates.
pub trait Noise {
    /// A draw from `N(0, dt)`.
    fn gaussian(&mut self, dt: f64) -> f64;
    /// A draw from `(0, 1]`.
    fn uniform(&mut self) -> f64;
}

/// Seeded ChaCha8 stream.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    seed: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl Noise for NoiseStream {
    fn gaussian(&mut self, dt: f64) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        z * dt.sqrt()
    }

    fn uniform(&mut self) -> f64 {
        1.0 - self.rng.random::<f64>()
    }
}

/// Waiting-time state of the jump unraveling: the accumulated no-jump
/// survival probability and the threshold it must fall below.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpClock {
    pub survival: f64,
    pub threshold: f64,
}

impl JumpClock {
    pub fn new(noise: &mut impl Noise) -> Self {
        Self {
            survival: 1.0,
            threshold: noise.uniform(),
        }
    }
}

fn norm_sqr(psi: &[Complex64], dx: f64) -> f64 {
    psi.iter().map(|c| c.norm_sqr()).sum::<f64>() * dx
}

fn scale(psi: &mut [Complex64], s: f64) {
    psi.iter_mut().for_each(|c| *c *= s);
}

fn kinetic_phases(grid: &SpatialGrid, dt: f64, factor: f64) -> Vec<Complex64> {
    let u = grid.units();
    grid.p()
        .iter()
        .map(|p| Complex64::from_polar(factor, -p * p * dt / (2.0 * u.mass * u.hbar)))
        .collect()
}

fn potential_phases(grid: &SpatialGrid, v: &[f64], dt: f64) -> Vec<Complex64> {
    let hbar = grid.units().hbar;
    v.iter()
        .map(|v| Complex64::from_polar(1.0, -v * dt / hbar))
        .collect()
}

/// Expectation `⟨μ⟩` of the (possibly unnormalized) state.
fn mean_of(psi: &[Complex64], mu: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (c, m) in psi.iter().zip(mu) {
        let w = c.norm_sqr();
        num += w * m;
        den += w;
    }
    num / den
}

/// Homodyne multiplier and renormalization. Returns `(dr, norm² before renormalizing)`.
fn apply_homodyne(
    psi: &mut [Complex64],
    mu: &[f64],
    kappa: f64,
    phase: f64,
    dt: f64,
    dw: f64,
    dx: f64,
) -> Option<(f64, f64)> {
    let m = mean_of(psi, mu);
    if !m.is_finite() {
        return None;
    }
    let root = (2.0 * kappa).sqrt();
    let (cos, sin) = (phase.cos(), phase.sin());
    if sin == 0.0 {
        // Real quadrature: exp[√(2κ)(μ−⟨μ⟩)ΔW·cosφ − 2κ(μ−⟨μ⟩)²dt].
        for (c, &mj) in psi.iter_mut().zip(mu) {
            let d = mj - m;
            *c *= (root * cos * d * dw - 2.0 * kappa * d * d * dt).exp();
        }
    } else {
        let e1 = Complex64::new(cos, -sin);
        let e2 = e1 * e1;
        let mbar = root * cos * m;
        let lin = 4.0 * kappa * cos * m;
        let cst = 2.0 * kappa * cos * cos * m * m;
        for (c, &mj) in psi.iter_mut().zip(mu) {
            let b = root * e1 * mj - mbar;
            let drift = -kappa * (mj * mj + e2 * mj * mj - lin * e1 * mj + cst);
            *c *= (b * dw + drift * dt).exp();
        }
    }
    let n2 = norm_sqr(psi, dx);
    if !(n2.is_finite() && n2 > 0.0) {
        return None;
    }
    scale(psi, 1.0 / n2.sqrt());
    let dr = cos * m * dt + dw / (8.0 * kappa).sqrt();
    Some((dr, n2))
}

fn apply_stochastic_potential(psi: &mut [Complex64], coupling: &[f64], dw: f64) {
    for (c, &g) in psi.iter_mut().zip(coupling) {
        *c *= Complex64::from_polar(1.0, -g * dw);
    }
}

/// Multiplies by `ψ ← cψ` and renormalizes; `false` if the result vanishes.
fn apply_jump(psi: &mut [Complex64], c: &[Complex64], dx: f64) -> bool {
    psi.iter_mut().zip(c).for_each(|(a, c)| *a *= c);
    let n2 = norm_sqr(psi, dx);
    if !(n2 > 0.0 && n2.is_finite()) {
        return false;
    }
    scale(psi, 1.0 / n2.sqrt());
    true
}

/// `exp(−i p² dt / 4mħ)` in momentum space.
pub fn kinetic_half_step(psi: &mut WaveFunction, dt: f64) {
    let grid = psi.grid().clone();
    let phases = kinetic_phases(&grid, dt / 2.0, 1.0);
    let mut scratch = grid.fft_scratch();
    let a = psi.amplitudes_mut();
    grid.forward_unitary(a, &mut scratch);
    a.iter_mut().zip(&phases).for_each(|(c, p)| *c *= p);
    grid.inverse_unitary(a, &mut scratch);
}

/// `exp(−iV(x)dt/ħ)` in position space.
pub fn potential_step(psi: &mut WaveFunction, v: &PotentialSpec, dt: f64) {
    let phases = potential_phases(psi.grid(), v.samples(), dt);
    psi.amplitudes_mut()
        .iter_mut()
        .zip(&phases)
        .for_each(|(c, p)| *c *= p);
}

/// One diffusive measurement update with Wiener increment `dw`, returning
/// the record increment `dr = cosφ·⟨μ⟩dt + ΔW/√(8κ)`.
pub fn homodyne_step(
    psi: &mut WaveFunction,
    profile: &MeasurementProfile,
    phase: f64,
    dt: f64,
    dw: f64,
) -> Result<f64, PropagationError> {
    if profile.kappa() == 0.0 {
        return Ok(0.0);
    }
    let dx = psi.grid().dx();
    apply_homodyne(
        psi.amplitudes_mut(),
        profile.samples(),
        profile.kappa(),
        phase,
        dt,
        dw,
        dx,
    )
    .map(|(dr, _)| dr)
    .ok_or(PropagationError::NonFinite { step: 0 })
}

/// Unitary `exp[−i√(2κ)μ(x)ΔW]`.
pub fn stochastic_potential_step(psi: &mut WaveFunction, profile: &MeasurementProfile, dw: f64) {
    let root = (2.0 * profile.kappa()).sqrt();
    let coupling: Vec<f64> = profile.samples().iter().map(|m| root * m).collect();
    apply_stochastic_potential(psi.amplitudes_mut(), &coupling, dw);
}

/// One step of the counting unraveling at position-diagonal level: no-jump
/// damping `exp(−κμ²dt)`, survival bookkeeping, and a jump `ψ → μψ/‖μψ‖`
/// once the survival drops below the clock's threshold. Returns whether a
/// jump fired.
pub fn jump_evolve(
    psi: &mut WaveFunction,
    profile: &MeasurementProfile,
    dt: f64,
    clock: &mut JumpClock,
    noise: &mut impl Noise,
) -> Result<bool, PropagationError> {
    let kappa = profile.kappa();
    let dx = psi.grid().dx();
    let a = psi.amplitudes_mut();
    let before = norm_sqr(a, dx);
    for (c, m) in a.iter_mut().zip(profile.samples()) {
        *c *= (-kappa * m * m * dt).exp();
    }
    let after = norm_sqr(a, dx);
    if !(after.is_finite() && after > 0.0) {
        return Err(PropagationError::NonFinite { step: 0 });
    }
    scale(a, 1.0 / after.sqrt());
    clock.survival *= after / before;
    if clock.survival < clock.threshold {
        let c: Vec<Complex64> = profile
            .samples()
            .iter()
            .map(|&m| Complex64::new(m, 0.0))
            .collect();
        if !apply_jump(a, &c, dx) {
            return Err(PropagationError::EmptyJump { step: 0 });
        }
        *clock = JumpClock::new(noise);
        return Ok(true);
    }
    Ok(false)
}

enum Measure {
    Off,
    Homodyne {
        mu: Vec<f64>,
        phase: f64,
    },
    Jump {
        jump: Vec<Complex64>,
        /// `exp(−κ|c|²dt)` folded together with the potential phase.
        damping: Vec<Complex64>,
    },
    Stochastic {
        coupling: Vec<f64>,
    },
}

/// Immutable per-run tables shared by every trajectory of an ensemble.
pub struct Propagator {
    grid: Arc<SpatialGrid>,
    spec: TrajectorySpec,
    kappa: f64,
    dt: f64,
    n_steps: usize,
    sample_steps: Vec<usize>,
    kinetic_half: Vec<Complex64>,
    kinetic_full: Vec<Complex64>,
    potential: Option<Vec<Complex64>>,
    measure: Measure,
}

impl std::fmt::Debug for Propagator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Propagator")
            .field("spec", &self.spec)
            .field("kappa", &self.kappa)
            .field("dt", &self.dt)
            .field("n_steps", &self.n_steps)
            .finish()
    }
}

impl Propagator {
    pub fn new(
        profile: &MeasurementProfile,
        potential: &PotentialSpec,
        spec: &TrajectorySpec,
    ) -> Result<Arc<Self>, PropagationError> {
        let grid = profile.grid().clone();
        if potential.samples().len() != grid.n_points() {
            return Err(PropagationError::GridMismatch);
        }
        let kappa = profile.kappa();
        spec.validate(&grid, kappa)?;
        let dt = spec.effective_dt();
        let n_steps = spec.n_steps();
        let sample_steps = spec
            .sample_times
            .iter()
            .map(|&t| ((t / dt).round() as usize).min(n_steps))
            .collect();
        let inv_n = 1.0 / grid.n_points() as f64;
        let kinetic_half = kinetic_phases(&grid, dt / 2.0, inv_n);
        let kinetic_full = kinetic_phases(&grid, dt, inv_n);

        let mut v = potential.samples().to_vec();
        let measure = if kappa == 0.0 {
            if let Unraveling::Jump { local_oscillator } = spec.unraveling {
                // Validates the oscillator against κ = 0.
                local_oscillator_shift(profile, &local_oscillator)?;
            }
            Measure::Off
        } else {
            match spec.unraveling {
                Unraveling::Homodyne { phase } => Measure::Homodyne {
                    mu: profile.samples().to_vec(),
                    phase,
                },
                Unraveling::StochasticPotential => Measure::Stochastic {
                    coupling: profile
                        .samples()
                        .iter()
                        .map(|m| (2.0 * kappa).sqrt() * m)
                        .collect(),
                },
                Unraveling::Jump { local_oscillator } => {
                    let (jump, correction) = local_oscillator_shift(profile, &local_oscillator)?;
                    v.iter_mut().zip(&correction).for_each(|(v, c)| *v += c.re);
                    let hbar = grid.units().hbar;
                    let damping = jump
                        .iter()
                        .zip(&v)
                        .map(|(c, v)| {
                            Complex64::from_polar(
                                (-kappa * c.norm_sqr() * dt).exp(),
                                -v * dt / hbar,
                            )
                        })
                        .collect();
                    Measure::Jump { jump, damping }
                }
            }
        };
        let potential = match measure {
            Measure::Jump { .. } => None,
            _ if v.iter().all(|&v| v == 0.0) => None,
            _ => Some(potential_phases(&grid, &v, dt)),
        };
        Ok(Arc::new(Self {
            grid,
            spec: spec.clone(),
            kappa,
            dt,
            n_steps,
            sample_steps,
            kinetic_half,
            kinetic_full,
            potential,
            measure,
        }))
    }

    pub fn grid(&self) -> &Arc<SpatialGrid> {
        &self.grid
    }

    pub fn spec(&self) -> &TrajectorySpec {
        &self.spec
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn sample_steps(&self) -> &[usize] {
        &self.sample_steps
    }

    pub fn sample_time(&self, i: usize) -> f64 {
        self.sample_steps[i] as f64 * self.dt
    }

    pub fn is_jump(&self) -> bool {
        matches!(self.measure, Measure::Jump { .. })
    }

    /// True when the between-jump evolution carries the whole dynamics
    /// deterministically (jump unraveling with `κ > 0`).
    pub fn has_deterministic_prefix(&self) -> bool {
        self.is_jump()
    }
}

/// Pre-normalization norm statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub min_pre: f64,
    pub max_pre: f64,
    /// Largest `|‖ψ‖² − 1|` seen after renormalization.
    pub max_drift: f64,
}

impl Default for NormStats {
    fn default() -> Self {
        Self {
            min_pre: 1.0,
            max_pre: 1.0,
            max_drift: 0.0,
        }
    }
}

/// Edge-monitor outcome.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EdgeReport {
    pub max_mass: f64,
    /// First step at which the band mass exceeded [`EDGE_TOLERANCE`].
    pub first_violation: Option<usize>,
}

impl EdgeReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// A state reported at a sample time.
#[derive(Debug)]
pub struct SampleEvent<'a> {
    pub index: usize,
    pub step: usize,
    pub time: f64,
    pub state: &'a WaveFunction,
}

/// Stepwise evolution of one trajectory. Cloning forks it, noise included.
#[derive(Clone)]
pub struct Trajectory<N: Noise = NoiseStream> {
    prop: Arc<Propagator>,
    psi: Vec<Complex64>,
    scratch: Vec<Complex64>,
    step: usize,
    started: bool,
    next_sample: usize,
    noise: N,
    clock: JumpClock,
    jumps: Vec<f64>,
    record: Vec<f64>,
    norm: NormStats,
    edge: EdgeReport,
    band: usize,
}

/// Everything a finished trajectory reports besides its sampled states.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryOutcome {
    pub final_state: WaveFunction,
    pub jump_times: Vec<f64>,
    /// Measurement-record increments, one per step (homodyne only).
    pub record: Vec<f64>,
    pub norm: NormStats,
    pub edge: EdgeReport,
    pub steps: usize,
}

impl<N: Noise> Trajectory<N> {
    pub fn new(
        prop: Arc<Propagator>,
        psi0: &WaveFunction,
        mut noise: N,
    ) -> Result<Self, PropagationError> {
        if psi0.grid() != prop.grid() {
            return Err(PropagationError::GridMismatch);
        }
        let n2 = psi0.norm_sqr();
        if (n2 - 1.0).abs() > 1e-6 {
            return Err(PropagationError::Unnormalized(n2));
        }
        let grid = prop.grid.clone();
        let band_len = match prop.spec.edge_band {
            Some(b) => b,
            None => {
                let dens = psi0.position_density();
                let mean: f64 =
                    dens.iter().zip(grid.x()).map(|(d, x)| d * x).sum::<f64>() * grid.dx();
                let var: f64 = dens
                    .iter()
                    .zip(grid.x())
                    .map(|(d, x)| d * (x - mean).powi(2))
                    .sum::<f64>()
                    * grid.dx();
                5.0 * var.sqrt()
            }
        };
        let band = ((band_len / grid.dx()).round() as usize).min(grid.n_points() / 2);
        let clock = if prop.is_jump() {
            JumpClock::new(&mut noise)
        } else {
            JumpClock {
                survival: 1.0,
                threshold: 0.0,
            }
        };
        let mut psi = psi0.amplitudes().to_vec();
        scale(&mut psi, 1.0 / n2.sqrt());
        Ok(Self {
            scratch: grid.fft_scratch(),
            prop,
            psi,
            step: 0,
            started: false,
            next_sample: 0,
            noise,
            clock,
            jumps: Vec::new(),
            record: Vec::new(),
            norm: NormStats::default(),
            edge: EdgeReport::default(),
            band,
        })
    }

    /// Copy of this trajectory driven by different noise from now on, with
    /// the given jump threshold.
    pub fn fork_with<M: Noise>(&self, noise: M, threshold: f64) -> Trajectory<M> {
        Trajectory {
            prop: self.prop.clone(),
            psi: self.psi.clone(),
            scratch: self.scratch.clone(),
            step: self.step,
            started: self.started,
            next_sample: self.next_sample,
            noise,
            clock: JumpClock {
                survival: self.clock.survival,
                threshold,
            },
            jumps: self.jumps.clone(),
            record: self.record.clone(),
            norm: self.norm,
            edge: self.edge,
            band: self.band,
        }
    }

    pub fn propagator(&self) -> &Arc<Propagator> {
        &self.prop
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.prop.n_steps
    }

    pub fn clock(&self) -> JumpClock {
        self.clock
    }

    pub fn set_threshold(&mut self, threshold: f64) {
        self.clock.threshold = threshold;
    }

    pub fn jump_count(&self) -> usize {
        self.jumps.len()
    }

    /// The physical state at the current step (undoes the trailing half
    /// kinetic step that the merged splitting keeps pending).
    pub fn current_state(&mut self) -> WaveFunction {
        let mut a = self.psi.clone();
        if self.step > 0 {
            let g = &self.prop.grid;
            g.forward_raw(&mut a, &mut self.scratch);
            a.iter_mut()
                .zip(&self.prop.kinetic_half)
                .for_each(|(c, k)| *c *= k);
            g.inverse_raw(&mut a, &mut self.scratch);
        }
        WaveFunction::new(self.prop.grid.clone(), a).expect("finite state")
    }

    /// Emits the step-0 samples; called once before stepping.
    pub fn start(&mut self, obs: &mut impl FnMut(&SampleEvent)) -> Result<(), PropagationError> {
        if !self.started {
            self.started = true;
            self.check_edges(true)?;
            self.emit(obs);
        }
        Ok(())
    }

    /// Deterministic part of one step: kinetic phase, potential and
    /// measurement multiplier, survival bookkeeping. Jumps are decided by
    /// [`post_step`](Self::post_step).
    pub fn advance_core(&mut self) -> Result<(), PropagationError> {
        let prop = &*self.prop;
        let g = &prop.grid;
        let dx = g.dx();
        let kin = if self.step == 0 {
            &prop.kinetic_half
        } else {
            &prop.kinetic_full
        };
        g.forward_raw(&mut self.psi, &mut self.scratch);
        self.psi.iter_mut().zip(kin).for_each(|(c, k)| *c *= k);
        g.inverse_raw(&mut self.psi, &mut self.scratch);
        self.step += 1;
        let step = self.step;

        if let Some(v) = &prop.potential {
            self.psi.iter_mut().zip(v).for_each(|(c, p)| *c *= p);
        }
        let pre = match &prop.measure {
            Measure::Off => None,
            Measure::Homodyne { mu, phase } => {
                let dw = self.noise.gaussian(prop.dt);
                let (dr, n2) =
                    apply_homodyne(&mut self.psi, mu, prop.kappa, *phase, prop.dt, dw, dx)
                        .ok_or(PropagationError::NonFinite { step })?;
                self.record.push(dr);
                Some(n2)
            }
            Measure::Stochastic { coupling } => {
                let dw = self.noise.gaussian(prop.dt);
                apply_stochastic_potential(&mut self.psi, coupling, dw);
                let n2 = norm_sqr(&self.psi, dx);
                if !(n2.is_finite() && n2 > 0.0) {
                    return Err(PropagationError::NonFinite { step });
                }
                scale(&mut self.psi, 1.0 / n2.sqrt());
                Some(n2)
            }
            Measure::Jump { damping, .. } => {
                self.psi.iter_mut().zip(damping).for_each(|(c, d)| *c *= d);
                let n2 = norm_sqr(&self.psi, dx);
                if !(n2.is_finite() && n2 > 0.0) {
                    return Err(PropagationError::NonFinite { step });
                }
                scale(&mut self.psi, 1.0 / n2.sqrt());
                self.clock.survival *= n2;
                Some(n2)
            }
        };
        match pre {
            Some(n2) => {
                self.norm.min_pre = self.norm.min_pre.min(n2);
                self.norm.max_pre = self.norm.max_pre.max(n2);
            }
            None => {
                if !self
                    .psi
                    .iter()
                    .all(|c| c.re.is_finite() && c.im.is_finite())
                {
                    return Err(PropagationError::NonFinite { step });
                }
            }
        }
        Ok(())
    }

    /// Jump decision, monitors and sample emission for the step just taken.
    pub fn post_step(
        &mut self,
        obs: &mut impl FnMut(&SampleEvent),
    ) -> Result<(), PropagationError> {
        let step = self.step;
        if let Measure::Jump { jump, .. } = &self.prop.measure {
            if self.clock.survival < self.clock.threshold {
                if !apply_jump(&mut self.psi, jump, self.prop.grid.dx()) {
                    return Err(PropagationError::EmptyJump { step });
                }
                self.jumps.push(step as f64 * self.prop.dt);
                self.clock = JumpClock::new(&mut self.noise);
            }
        }
        let sampling = self
            .prop
            .sample_steps
            .get(self.next_sample)
            .is_some_and(|&s| s == step)
            || step == self.prop.n_steps;
        if sampling || step.is_multiple_of(EDGE_CHECK_INTERVAL) {
            self.check_edges(sampling)?;
        }
        self.emit(obs);
        Ok(())
    }

    pub fn step(&mut self, obs: &mut impl FnMut(&SampleEvent)) -> Result<(), PropagationError> {
        self.advance_core()?;
        self.post_step(obs)
    }

    /// Runs to the final time.
    pub fn run_to_end(
        &mut self,
        obs: &mut impl FnMut(&SampleEvent),
    ) -> Result<(), PropagationError> {
        self.start(obs)?;
        while !self.is_finished() {
            self.step(obs)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> TrajectoryOutcome {
        let final_state = self.current_state();
        TrajectoryOutcome {
            final_state,
            jump_times: self.jumps,
            record: self.record,
            norm: self.norm,
            edge: self.edge,
            steps: self.step,
        }
    }

    fn emit(&mut self, obs: &mut impl FnMut(&SampleEvent)) {
        let prop = self.prop.clone();
        let steps = &prop.sample_steps;
        let mut state = None;
        while self.next_sample < steps.len() && steps[self.next_sample] == self.step {
            if state.is_none() {
                state = Some(self.current_state());
            }
            obs(&SampleEvent {
                index: self.next_sample,
                step: self.step,
                time: self.step as f64 * prop.dt,
                state: state.as_ref().unwrap(),
            });
            self.next_sample += 1;
        }
    }

    fn check_edges(&mut self, sample: bool) -> Result<(), PropagationError> {
        let n = self.psi.len();
        let dx = self.prop.grid.dx();
        if sample {
            let d = (norm_sqr(&self.psi, dx) - 1.0).abs();
            self.norm.max_drift = self.norm.max_drift.max(d);
        }
        if self.band == 0 {
            return Ok(());
        }
        let mass = (norm_sqr(&self.psi[..self.band], dx)
            + norm_sqr(&self.psi[n - self.band..], dx))
            / norm_sqr(&self.psi, dx);
        self.edge.max_mass = self.edge.max_mass.max(mass);
        if mass > EDGE_TOLERANCE {
            if self.edge.first_violation.is_none() {
                self.edge.first_violation = Some(self.step);
            }
            if self.prop.spec.edge_policy == EdgePolicy::Abort {
                return Err(PropagationError::EdgeViolation {
                    step: self.step,
                    mass,
                });
            }
        }
        Ok(())
    }
}

/// A sampled state with its time.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledState {
    pub time: f64,
    pub state: WaveFunction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryResult {
    pub seed: u64,
    pub samples: Vec<SampledState>,
    pub outcome: TrajectoryOutcome,
}

/// Runs one trajectory with noise seeded from `spec.seed`, keeping every
/// sampled state.
pub fn propagate(
    psi0: &WaveFunction,
    profile: &MeasurementProfile,
    potential: &PotentialSpec,
    spec: &TrajectorySpec,
) -> Result<TrajectoryResult, PropagationError> {
    propagate_with(psi0, profile, potential, spec, NoiseStream::new(spec.seed))
}

/// [`propagate`] with caller-supplied noise.
pub fn propagate_with<N: Noise>(
    psi0: &WaveFunction,
    profile: &MeasurementProfile,
    potential: &PotentialSpec,
    spec: &TrajectorySpec,
    noise: N,
) -> Result<TrajectoryResult, PropagationError> {
    if psi0.grid() != profile.grid() {
        return Err(PropagationError::GridMismatch);
    }
    let prop = Propagator::new(profile, potential, spec)?;
    let mut traj = Trajectory::new(prop, psi0, noise)?;
    let mut samples = Vec::with_capacity(spec.sample_times.len());
    traj.run_to_end(&mut |ev: &SampleEvent| {
        samples.push(SampledState {
            time: ev.time,
            state: ev.state.clone(),
        })
    })?;
    Ok(TrajectoryResult {
        seed: spec.seed,
        samples,
        outcome: traj.finish(),
    })
}

/// Free-particle Gaussian moments `(⟨x⟩, Var x)` at time `t`.
pub fn free_gaussian_moments(
    x0: f64,
    p0: f64,
    sigma_x: f64,
    t: f64,
    hbar: f64,
    mass: f64,
) -> (f64, f64) {
    let spread = hbar * t / (2.0 * mass * sigma_x * sigma_x);
    (
        x0 + p0 * t / mass,
        sigma_x * sigma_x * (1.0 + spread * spread),
    )
}

/// Uniform sample times `k·t_final/(n−1)`, `k = 0..n`.
pub fn uniform_times(t_final: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![t_final],
        _ => (0..n)
            .map(|k| t_final * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Stationary-scattering expectation for a packet hitting `V0·θ(x)`: each
/// incident momentum component reflects with `R(p)` and transmits with
/// momentum `√(p² − 2mV0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierPrediction {
    pub reflection_probability: f64,
    pub reflected_mean_p: f64,
    pub transmitted_mean_p: f64,
}

pub fn step_barrier_prediction(psi0: &WaveFunction, v0: f64) -> BarrierPrediction {
    let g = psi0.grid();
    let m = g.units().mass;
    let (mut wr, mut wt, mut pr, mut pt) = (0.0, 0.0, 0.0, 0.0);
    for (d, &p) in psi0.momentum_density().iter().zip(g.p()) {
        if p <= 0.0 {
            continue;
        }
        let w = d * g.dp();
        let q2 = p * p - 2.0 * m * v0;
        let (r, q) = if q2 <= 0.0 {
            (1.0, 0.0)
        } else {
            let q = q2.sqrt();
            (((p - q) / (p + q)).powi(2), q)
        };
        wr += w * r;
        pr += w * r * p;
        wt += w * (1.0 - r);
        pt += w * (1.0 - r) * q;
    }
    BarrierPrediction {
        reflection_probability: wr / (wr + wt),
        reflected_mean_p: -pr / wr,
        transmitted_mean_p: if wt > 0.0 { pt / wt } else { 0.0 },
    }
}
