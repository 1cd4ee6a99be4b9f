//! Uniform periodic position grid, its conjugate momentum grid, and pure
//! states sampled on it.
//!
//! Position amplitudes use the continuum normalization `Σ|ψ_j|² dx = 1`.
//! Momentum amplitudes returned by [`WaveFunction::to_momentum`] are the
//! continuum Fourier amplitudes `φ(p_k)` with `Σ|φ_k|² dp = 1`, stored in
//! FFT order (non-negative momenta first, then negative ones). Internally
//! the propagator works with the bare unitary DFT (`1/√N` both ways).

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

/// Smallest grid accepted by [`SpatialGrid::new`].
pub const MIN_POINTS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid needs a power-of-two point count of at least {MIN_POINTS}, got {0}")]
    PointCount(usize),
    #[error("degenerate grid extent [{x_min}, {x_max}]")]
    Extent { x_min: f64, x_max: f64 },
    #[error("units must be finite and strictly positive (hbar = {hbar}, mass = {mass})")]
    Units { hbar: f64, mass: f64 },
    #[error("expected {expected} amplitudes, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("amplitude {index} is not finite")]
    NonFinite { index: usize },
    #[error("invalid packet: {0}")]
    Packet(String),
}

/// Action and mass scales. Everything else in the crate is expressed in
/// these units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitsConfig {
    pub hbar: f64,
    pub mass: f64,
}

impl Default for UnitsConfig {
    fn default() -> Self {
        Self {
            hbar: 1.0,
            mass: 1.0,
        }
    }
}

impl UnitsConfig {
    pub fn new(hbar: f64, mass: f64) -> Result<Self, GridError> {
        let units = Self { hbar, mass };
        units.validate()?;
        Ok(units)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.hbar) && ok(self.mass) {
            Ok(())
        } else {
            Err(GridError::Units {
                hbar: self.hbar,
                mass: self.mass,
            })
        }
    }
}

/// Uniform grid `x_j = x_min + j·dx`, `j = 0..n`, with periodic wrap, and
/// the conjugate momenta `p_k` spaced `2πħ/(n·dx)`.
pub struct SpatialGrid {
    n: usize,
    x_min: f64,
    x_max: f64,
    dx: f64,
    units: UnitsConfig,
    x: Vec<f64>,
    p: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpatialGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpatialGrid")
            .field("n", &self.n)
            .field("x_min", &self.x_min)
            .field("x_max", &self.x_max)
            .field("dx", &self.dx)
            .field("units", &self.units)
            .finish()
    }
}

impl PartialEq for SpatialGrid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.x_min == other.x_min
            && self.x_max == other.x_max
            && self.units == other.units
    }
}

impl SpatialGrid {
    pub fn new(
        n_points: usize,
        x_min: f64,
        x_max: f64,
        units: UnitsConfig,
    ) -> Result<Self, GridError> {
        if n_points < MIN_POINTS || !n_points.is_power_of_two() {
            return Err(GridError::PointCount(n_points));
        }
        if !(x_min.is_finite() && x_max.is_finite() && x_max > x_min) {
            return Err(GridError::Extent { x_min, x_max });
        }
        units.validate()?;

        let dx = (x_max - x_min) / n_points as f64;
        let dp = 2.0 * PI * units.hbar / (n_points as f64 * dx);
        let x = (0..n_points).map(|j| x_min + j as f64 * dx).collect();
        let p = (0..n_points)
            .map(|k| signed_index(k, n_points) as f64 * dp)
            .collect();

        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n_points);
        let inverse = planner.plan_fft_inverse(n_points);
        Ok(Self {
            n: n_points,
            x_min,
            x_max,
            dx,
            units,
            x,
            p,
            forward,
            inverse,
        })
    }

    /// Convenience constructor returning the shared handle every state needs.
    pub fn shared(
        n_points: usize,
        x_min: f64,
        x_max: f64,
        units: UnitsConfig,
    ) -> Result<Arc<Self>, GridError> {
        Self::new(n_points, x_min, x_max, units).map(Arc::new)
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dp(&self) -> f64 {
        2.0 * PI * self.units.hbar / (self.n as f64 * self.dx)
    }

    pub fn units(&self) -> UnitsConfig {
        self.units
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    /// Position nodes.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Momentum nodes in FFT order.
    pub fn p(&self) -> &[f64] {
        &self.p
    }

    /// Magnitude of the most negative representable momentum, `πħ/dx`.
    pub fn p_max(&self) -> f64 {
        PI * self.units.hbar / self.dx
    }

    pub fn kinetic_energy_max(&self) -> f64 {
        let p = self.p_max();
        p * p / (2.0 * self.units.mass)
    }

    /// FFT-order indices sorted by increasing momentum.
    pub fn sorted_momentum_order(&self) -> Vec<usize> {
        let half = self.n / 2;
        (half..self.n).chain(0..half).collect()
    }

    /// Index of the node nearest to `x`, or `None` outside `[x_min, x_max)`.
    pub fn nearest_index(&self, x: f64) -> Option<usize> {
        if !(x >= self.x_min && x < self.x_max) {
            return None;
        }
        let j = ((x - self.x_min) / self.dx).round() as usize;
        Some(j.min(self.n - 1))
    }

    pub fn fft_scratch_len(&self) -> usize {
        self.forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len())
    }

    /// Allocates a scratch buffer big enough for either transform direction.
    pub fn fft_scratch(&self) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); self.fft_scratch_len()]
    }

    /// In-place unitary forward DFT (`1/√N`), position → momentum coefficients.
    pub fn forward_unitary(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.forward.process_with_scratch(buf, scratch);
        let s = 1.0 / (self.n as f64).sqrt();
        buf.iter_mut().for_each(|c| *c *= s);
    }

    /// In-place unitary inverse DFT (`1/√N`).
    pub fn inverse_unitary(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.inverse.process_with_scratch(buf, scratch);
        let s = 1.0 / (self.n as f64).sqrt();
        buf.iter_mut().for_each(|c| *c *= s);
    }

    /// Unnormalized forward and inverse transforms, for callers that fold the
    /// scale into another multiplier.
    pub fn forward_raw(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.forward.process_with_scratch(buf, scratch);
    }

    pub fn inverse_raw(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.inverse.process_with_scratch(buf, scratch);
    }

    /// Factor turning unitary DFT coefficients into continuum `φ(p_k)`.
    fn momentum_factor(&self, k: usize) -> Complex64 {
        let scale = self.dx * (self.n as f64 / (2.0 * PI * self.units.hbar)).sqrt();
        Complex64::from_polar(scale, -self.p[k] * self.x_min / self.units.hbar)
    }
}

/// Maps an FFT-order index onto a signed frequency index in `[-n/2, n/2)`.
pub fn signed_index(k: usize, n: usize) -> i64 {
    if k < n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// A pure state sampled on a [`SpatialGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunction {
    grid: Arc<SpatialGrid>,
    amplitudes: Vec<Complex64>,
}

impl WaveFunction {
    pub fn new(grid: Arc<SpatialGrid>, amplitudes: Vec<Complex64>) -> Result<Self, GridError> {
        if amplitudes.len() != grid.n_points() {
            return Err(GridError::LengthMismatch {
                expected: grid.n_points(),
                got: amplitudes.len(),
            });
        }
        if let Some(index) = amplitudes
            .iter()
            .position(|c| !(c.re.is_finite() && c.im.is_finite()))
        {
            return Err(GridError::NonFinite { index });
        }
        Ok(Self { grid, amplitudes })
    }

    pub fn zeros(grid: Arc<SpatialGrid>) -> Self {
        let n = grid.n_points();
        Self {
            grid,
            amplitudes: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    /// Builds a state from `f(x_j)` evaluated on every node.
    pub fn from_fn(
        grid: Arc<SpatialGrid>,
        f: impl Fn(f64) -> Complex64,
    ) -> Result<Self, GridError> {
        let amplitudes = grid.x().iter().map(|&x| f(x)).collect();
        Self::new(grid, amplitudes)
    }

    pub fn grid(&self) -> &Arc<SpatialGrid> {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    /// `Σ|ψ_j|² dx`.
    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.grid.dx()
    }

    /// Rescales to unit norm and returns the norm² found before rescaling.
    pub fn normalize(&mut self) -> f64 {
        let n2 = self.norm_sqr();
        if n2 > 0.0 {
            let s = 1.0 / n2.sqrt();
            self.amplitudes.iter_mut().for_each(|c| *c *= s);
        }
        n2
    }

    pub fn position_density(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|c| c.norm_sqr()).collect()
    }

    /// Continuum momentum amplitudes `φ(p_k)` in FFT order.
    pub fn to_momentum(&self) -> Vec<Complex64> {
        let g = &self.grid;
        let mut buf = self.amplitudes.clone();
        let mut scratch = g.fft_scratch();
        g.forward_unitary(&mut buf, &mut scratch);
        buf.iter_mut()
            .enumerate()
            .for_each(|(k, c)| *c *= g.momentum_factor(k));
        buf
    }

    /// Inverse of [`to_momentum`](Self::to_momentum).
    pub fn from_momentum(grid: Arc<SpatialGrid>, phi: &[Complex64]) -> Result<Self, GridError> {
        if phi.len() != grid.n_points() {
            return Err(GridError::LengthMismatch {
                expected: grid.n_points(),
                got: phi.len(),
            });
        }
        let mut buf: Vec<Complex64> = phi
            .iter()
            .enumerate()
            .map(|(k, c)| c / grid.momentum_factor(k))
            .collect();
        let mut scratch = grid.fft_scratch();
        grid.inverse_unitary(&mut buf, &mut scratch);
        Self::new(grid, buf)
    }

    /// `|φ(p_k)|²` in FFT order, normalized so that `Σ density·dp = norm²`.
    pub fn momentum_density(&self) -> Vec<f64> {
        self.to_momentum().iter().map(|c| c.norm_sqr()).collect()
    }

    /// Inner product `⟨self|other⟩ = Σ ψ*_j χ_j dx`.
    pub fn inner(&self, other: &WaveFunction) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            * self.grid.dx()
    }
}

/// Minimum-uncertainty Gaussian packet parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketSpec {
    pub x0: f64,
    pub p0: f64,
    pub sigma_x: f64,
}

impl PacketSpec {
    pub fn new(x0: f64, p0: f64, sigma_x: f64) -> Self {
        Self { x0, p0, sigma_x }
    }

    /// Momentum width `ħ/(2σx)`.
    pub fn sigma_p(&self, units: UnitsConfig) -> f64 {
        units.hbar / (2.0 * self.sigma_x)
    }

    /// Checks resolution and that ±5σx fits inside the grid.
    pub fn validate(&self, grid: &SpatialGrid) -> Result<(), GridError> {
        if !(self.sigma_x.is_finite() && self.sigma_x > 0.0) {
            return Err(GridError::Packet(format!(
                "sigma_x must be positive, got {}",
                self.sigma_x
            )));
        }
        if !(self.x0.is_finite() && self.p0.is_finite()) {
            return Err(GridError::Packet("x0 and p0 must be finite".into()));
        }
        if self.sigma_x < 4.0 * grid.dx() {
            return Err(GridError::Packet(format!(
                "sigma_x = {} is under-resolved (needs >= 4 dx = {})",
                self.sigma_x,
                4.0 * grid.dx()
            )));
        }
        let lo = self.x0 - 5.0 * self.sigma_x;
        let hi = self.x0 + 5.0 * self.sigma_x;
        if lo < grid.x_min() || hi > grid.x_max() {
            return Err(GridError::Packet(format!(
                "packet tail [{lo}, {hi}] exceeds grid [{}, {}] (wrap-around risk)",
                grid.x_min(),
                grid.x_max()
            )));
        }
        Ok(())
    }
}

/// Normalized minimum-uncertainty Gaussian state.
pub fn gaussian_packet(
    grid: &Arc<SpatialGrid>,
    spec: &PacketSpec,
) -> Result<WaveFunction, GridError> {
    spec.validate(grid)?;
    let hbar = grid.units().hbar;
    let s2 = spec.sigma_x * spec.sigma_x;
    let amp = (2.0 * PI * s2).powf(-0.25);
    let mut psi = WaveFunction::from_fn(grid.clone(), |x| {
        let d = x - spec.x0;
        Complex64::from_polar(amp * (-d * d / (4.0 * s2)).exp(), spec.p0 * d / hbar)
    })?;
    psi.normalize();
    Ok(psi)
}
