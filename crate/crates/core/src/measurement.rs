//! Measurement functions `μ(x)`, the local-oscillator transformation and
//! local diagnostics derived from them.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::grid::SpatialGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("measurement strength must be finite and non-negative, got {0}")]
    Kappa(f64),
    #[error("gaussian width sigma_mu = {sigma_mu} is under-resolved (needs >= 2 dx = {min})")]
    UnderResolved { sigma_mu: f64, min: f64 },
    #[error("tabulated profile has {got} samples, grid has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("tabulated abscissa {index} is {found}, grid node is {expected}")]
    OffGrid {
        index: usize,
        found: f64,
        expected: f64,
    },
    #[error("profile sample {0} is not finite")]
    NonFinite(usize),
    #[error("derivative requested at the discontinuity x = {0}")]
    Discontinuity(f64),
    #[error("x = {0} lies outside the grid")]
    OutsideGrid(f64),
    #[error("local oscillator amplitude must be finite and non-negative")]
    Amplitude,
    #[error("a nonzero local oscillator needs kappa > 0")]
    ZeroKappaOscillator,
    #[error("could not parse tabulated profile: {0}")]
    Parse(String),
}

/// Shape of `μ(x)` requested from [`make_profile`].
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileKind {
    /// `θ(x)` with `θ(0) = 1`.
    Step,
    /// `exp(-x²/2σμ²)`.
    Gaussian {
        sigma_mu: f64,
    },
    Constant {
        value: f64,
    },
    /// Samples on the simulation grid, node for node.
    Tabulated {
        samples: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Step,
    Gaussian { sigma_mu: f64 },
    Constant { value: f64 },
    Tabulated,
}

/// `μ(x)` together with its strength `κ`, sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementProfile {
    shape: Shape,
    offset: f64,
    kappa: f64,
    grid: Arc<SpatialGrid>,
    samples: Vec<f64>,
    derivative: Vec<f64>,
    discontinuities: Vec<f64>,
}

pub fn make_profile(
    kind: ProfileKind,
    kappa: f64,
    grid: &Arc<SpatialGrid>,
) -> Result<MeasurementProfile, ProfileError> {
    if !(kappa.is_finite() && kappa >= 0.0) {
        return Err(ProfileError::Kappa(kappa));
    }
    let x = grid.x();
    let (shape, samples, derivative, discontinuities) = match kind {
        ProfileKind::Step => {
            let s = x.iter().map(|&x| step(x)).collect();
            // The jump at x = 0 is flagged; no finite-difference spike is stored.
            (Shape::Step, s, vec![0.0; x.len()], vec![0.0])
        }
        ProfileKind::Gaussian { sigma_mu } => {
            if !(sigma_mu.is_finite() && sigma_mu >= 2.0 * grid.dx()) {
                return Err(ProfileError::UnderResolved {
                    sigma_mu,
                    min: 2.0 * grid.dx(),
                });
            }
            let s = x.iter().map(|&x| gaussian(x, sigma_mu)).collect();
            let d = x
                .iter()
                .map(|&x| gaussian_derivative(x, sigma_mu))
                .collect();
            (Shape::Gaussian { sigma_mu }, s, d, vec![])
        }
        ProfileKind::Constant { value } => {
            if !value.is_finite() {
                return Err(ProfileError::NonFinite(0));
            }
            (
                Shape::Constant { value },
                vec![value; x.len()],
                vec![0.0; x.len()],
                vec![],
            )
        }
        ProfileKind::Tabulated { samples } => {
            if samples.len() != grid.n_points() {
                return Err(ProfileError::LengthMismatch {
                    expected: grid.n_points(),
                    got: samples.len(),
                });
            }
            if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
                return Err(ProfileError::NonFinite(i));
            }
            let d = spectral_derivative(grid, &samples);
            (Shape::Tabulated, samples, d, vec![])
        }
    };
    Ok(MeasurementProfile {
        shape,
        offset: 0.0,
        kappa,
        grid: grid.clone(),
        samples,
        derivative,
        discontinuities,
    })
}

/// Reads a two-column `x μ` table (whitespace or comma separated, `#`
/// comments) whose abscissae must coincide with the grid nodes.
pub fn load_tabulated(
    path: &Path,
    kappa: f64,
    grid: &Arc<SpatialGrid>,
) -> Result<MeasurementProfile, ProfileError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ProfileError::Parse(format!("{}: {e}", path.display())))?;
    parse_tabulated(&text, kappa, grid)
}

pub fn parse_tabulated(
    text: &str,
    kappa: f64,
    grid: &Arc<SpatialGrid>,
) -> Result<MeasurementProfile, ProfileError> {
    let samples = parse_grid_table(text, grid)?;
    make_profile(ProfileKind::Tabulated { samples }, kappa, grid)
}

/// Values of a two-column table whose first column lists the grid nodes in order.
pub fn parse_grid_table(text: &str, grid: &SpatialGrid) -> Result<Vec<f64>, ProfileError> {
    let mut samples = Vec::with_capacity(grid.n_points());
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .collect();
        if cols.len() != 2 {
            return Err(ProfileError::Parse(format!(
                "line {}: expected 2 columns",
                lineno + 1
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| ProfileError::Parse(format!("line {}: {e}", lineno + 1)))
        };
        let (x, mu) = (parse(cols[0])?, parse(cols[1])?);
        let index = samples.len();
        if index >= grid.n_points() {
            return Err(ProfileError::LengthMismatch {
                expected: grid.n_points(),
                got: index + 1,
            });
        }
        let expected = grid.x()[index];
        if (x - expected).abs() > 1e-6 * grid.dx() {
            return Err(ProfileError::OffGrid {
                index,
                found: x,
                expected,
            });
        }
        samples.push(mu);
    }
    Ok(samples)
}

impl MeasurementProfile {
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn grid(&self) -> &Arc<SpatialGrid> {
        &self.grid
    }

    /// `μ(x_j)`.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// `μ′(x_j)`; zero across a flagged discontinuity.
    pub fn derivative_samples(&self) -> &[f64] {
        &self.derivative
    }

    /// Positions where `μ` jumps.
    pub fn discontinuities(&self) -> &[f64] {
        &self.discontinuities
    }

    pub fn is_smooth(&self) -> bool {
        self.discontinuities.is_empty()
    }

    pub fn is_step(&self) -> bool {
        matches!(self.shape, Shape::Step)
    }

    pub fn with_kappa(&self, kappa: f64) -> Result<Self, ProfileError> {
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(ProfileError::Kappa(kappa));
        }
        Ok(Self {
            kappa,
            ..self.clone()
        })
    }

    /// `μ(x) + c`.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.offset += c;
        out.samples.iter_mut().for_each(|v| *v += c);
        out
    }

    /// `μ(x)` anywhere: analytic shapes exactly, tabulated ones by periodic
    /// linear interpolation between nodes.
    pub fn value_at(&self, x: f64) -> f64 {
        self.offset
            + match self.shape {
                Shape::Step => step(x),
                Shape::Gaussian { sigma_mu } => gaussian(x, sigma_mu),
                Shape::Constant { value } => value,
                Shape::Tabulated => interpolate(&self.grid, &self.samples, x),
            }
    }

    pub fn derivative_at(&self, x: f64) -> Result<f64, ProfileError> {
        if !(x >= self.grid.x_min() && x <= self.grid.x_max()) {
            return Err(ProfileError::OutsideGrid(x));
        }
        if let Some(&d) = self
            .discontinuities
            .iter()
            .find(|&&d| (x - d).abs() < self.grid.dx())
        {
            return Err(ProfileError::Discontinuity(d));
        }
        Ok(match self.shape {
            Shape::Step | Shape::Constant { .. } => 0.0,
            Shape::Gaussian { sigma_mu } => gaussian_derivative(x, sigma_mu),
            Shape::Tabulated => interpolate(&self.grid, &self.derivative, x),
        })
    }

    /// `⟨(∂ₓμ)²⟩` against a position density sampled on the same grid
    /// (normalized so that `Σ density·dx = 1`).
    pub fn mean_sqr_derivative(&self, density: &[f64]) -> f64 {
        self.derivative
            .iter()
            .zip(density)
            .map(|(d, rho)| d * d * rho)
            .sum::<f64>()
            * self.grid.dx()
    }
}

fn step(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

fn gaussian(x: f64, s: f64) -> f64 {
    (-x * x / (2.0 * s * s)).exp()
}

fn gaussian_derivative(x: f64, s: f64) -> f64 {
    -x / (s * s) * gaussian(x, s)
}

fn interpolate(grid: &SpatialGrid, values: &[f64], x: f64) -> f64 {
    let n = grid.n_points();
    let u = (x - grid.x_min()) / grid.dx();
    let j = u.floor();
    let f = u - j;
    let j = (j as i64).rem_euclid(n as i64) as usize;
    values[j] * (1.0 - f) + values[(j + 1) % n] * f
}

/// Derivative of periodic samples via the momentum grid.
pub fn spectral_derivative(grid: &SpatialGrid, samples: &[f64]) -> Vec<f64> {
    spectral_derivative_complex(
        grid,
        &samples
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect::<Vec<_>>(),
    )
    .into_iter()
    .map(|c| c.re)
    .collect()
}

pub fn spectral_derivative_complex(grid: &SpatialGrid, samples: &[Complex64]) -> Vec<Complex64> {
    let n = grid.n_points();
    let mut buf = samples.to_vec();
    let mut scratch = grid.fft_scratch();
    grid.forward_unitary(&mut buf, &mut scratch);
    for (k, c) in buf.iter_mut().enumerate() {
        // The Nyquist bin has no well-defined derivative for real data.
        if k == n / 2 {
            *c = Complex64::new(0.0, 0.0);
        } else {
            *c *= Complex64::new(0.0, grid.p()[k] / grid.units().hbar);
        }
    }
    grid.inverse_unitary(&mut buf, &mut scratch);
    buf
}

/// Local-oscillator amplitude `|α|` and phase `φ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalOscillator {
    amplitude: f64,
    phase: f64,
}

impl Default for LocalOscillator {
    fn default() -> Self {
        Self {
            amplitude: 0.0,
            phase: 0.0,
        }
    }
}

impl LocalOscillator {
    pub fn new(amplitude: f64, phase: f64) -> Result<Self, ProfileError> {
        if !(amplitude.is_finite() && amplitude >= 0.0) || !phase.is_finite() {
            return Err(ProfileError::Amplitude);
        }
        Ok(Self {
            amplitude,
            phase: phase.rem_euclid(2.0 * PI),
        })
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn alpha(&self) -> Complex64 {
        Complex64::from_polar(self.amplitude, self.phase)
    }
}

/// Mixing a local oscillator into the detected channel:
/// `μ → μ + α/√(2κ)` and `H → H − (iħ√(2κ)/2)(α*μ − αμ)`.
///
/// Returns the shifted (complex) jump profile and the Hamiltonian correction
/// sampled on the grid. For real `μ` the correction is the real potential
/// `−ħ√(2κ)·Im(α)·μ(x)`.
pub fn local_oscillator_shift(
    profile: &MeasurementProfile,
    lo: &LocalOscillator,
) -> Result<(Vec<Complex64>, Vec<Complex64>), ProfileError> {
    let alpha = lo.alpha();
    let n = profile.samples.len();
    if lo.amplitude() == 0.0 {
        let mu = profile
            .samples
            .iter()
            .map(|&m| Complex64::new(m, 0.0))
            .collect();
        return Ok((mu, vec![Complex64::new(0.0, 0.0); n]));
    }
    if profile.kappa == 0.0 {
        return Err(ProfileError::ZeroKappaOscillator);
    }
    let root = (2.0 * profile.kappa).sqrt();
    let hbar = profile.grid.units().hbar;
    let shift = alpha / root;
    let pref = Complex64::new(0.0, -hbar * root / 2.0);
    let shifted = profile.samples.iter().map(|&m| m + shift).collect();
    let correction = profile
        .samples
        .iter()
        .map(|&m| pref * (alpha.conj() * m - alpha * m))
        .collect();
    Ok((shifted, correction))
}

/// `√(2κ)·μ′(⟨x⟩)`, the strength of the equivalent linear position measurement.
pub fn effective_linear_strength(
    profile: &MeasurementProfile,
    mean_x: f64,
) -> Result<f64, ProfileError> {
    Ok((2.0 * profile.kappa).sqrt() * profile.derivative_at(mean_x)?)
}

/// Rate `κ[μ(x₁) − μ(x₂)]²` at which coherence between two positions decays.
pub fn decoherence_rate(profile: &MeasurementProfile, x1: f64, x2: f64) -> f64 {
    let d = profile.value_at(x1) - profile.value_at(x2);
    profile.kappa * d * d
}
