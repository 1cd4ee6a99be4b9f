//! Physical realizations of the position measurement: resonance
//! fluorescence in a standing or focused laser field, and a driven cavity
//! mode probed through its output. Mappings are algebraic; validity is
//! reported, never enforced.

use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::grid::{PacketSpec, SpatialGrid, UnitsConfig};
use crate::measurement::{
    make_profile, spectral_derivative_complex, MeasurementProfile, ProfileError, ProfileKind,
};

/// Inequalities read as `≫` pass when the ratio is at least this (inclusive).
pub const REGIME_RATIO: f64 = 10.0;
const MODE_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysMapError {
    #[error("{name} must be finite and > 0, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("mode function must have max |g| = 1, got {0}")]
    ModeNormalization(f64),
    #[error("mode function has {got} samples, grid has {expected}")]
    ModeLength { expected: usize, got: usize },
    #[error("{0}")]
    Mode(String),
    #[error("Stark detuning must be nonzero")]
    ZeroStarkDetuning,
    #[error("Stark shift of sign {stark} cannot cancel a mean potential of sign {potential}")]
    StarkSign { stark: f64, potential: f64 },
    #[error("Stark profile has {got} samples, expected {expected}")]
    StarkLength { expected: usize, got: usize },
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

fn positive(name: &'static str, value: f64) -> Result<(), PhysMapError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(PhysMapError::NonPositive { name, value })
    }
}

/// Spatial mode shapes, normalized to unit maximum modulus.
#[derive(Debug, Clone, PartialEq)]
pub enum ModeShape {
    /// `exp(-(x−x_c)²/4w²)`, whose squared modulus has rms width `w`.
    Gaussian { center: f64, width: f64 },
    /// `cos(kx + φ)`.
    Standing { wavenumber: f64, phase: f64 },
    /// Complex samples on the grid.
    Tabulated { samples: Vec<Complex64> },
}

impl ModeShape {
    pub fn sample(&self, grid: &SpatialGrid) -> Result<Vec<Complex64>, PhysMapError> {
        let x = grid.x();
        let v: Vec<Complex64> = match self {
            ModeShape::Gaussian { center, width } => {
                positive("mode width", *width)?;
                x.iter()
                    .map(|&x| {
                        Complex64::new((-(x - center).powi(2) / (4.0 * width * width)).exp(), 0.0)
                    })
                    .collect()
            }
            ModeShape::Standing { wavenumber, phase } => {
                positive("mode wavenumber", *wavenumber)?;
                x.iter()
                    .map(|&x| Complex64::new((wavenumber * x + phase).cos(), 0.0))
                    .collect()
            }
            ModeShape::Tabulated { samples } => {
                if samples.len() != x.len() {
                    return Err(PhysMapError::ModeLength {
                        expected: x.len(),
                        got: samples.len(),
                    });
                }
                samples.clone()
            }
        };
        check_mode(&v)?;
        Ok(v)
    }
}

fn check_mode(g: &[Complex64]) -> Result<(), PhysMapError> {
    if g.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
        return Err(PhysMapError::Mode("mode function is not finite".into()));
    }
    let max = g.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if (max - 1.0).abs() > MODE_NORM_TOL {
        return Err(PhysMapError::ModeNormalization(max));
    }
    Ok(())
}

/// Grid positions where the mode changes sign (or passes through zero), so
/// that `|g|` has a derivative cusp.
pub fn mode_zero_crossings(grid: &SpatialGrid, g: &[Complex64]) -> Vec<f64> {
    let x = grid.x();
    let mut out = Vec::new();
    for i in 0..g.len() - 1 {
        let (a, b) = (g[i], g[i + 1]);
        // Opposite directions in the complex plane across one cell.
        if (a.conj() * b).re < 0.0 || (a.norm() == 0.0 && b.norm() > 0.0) {
            let t = a.norm() / (a.norm() + b.norm());
            out.push(x[i] + t * grid.dx());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DipoleParams {
    /// Peak Rabi frequency `|Ω|`.
    pub rabi_max: f64,
    /// Spontaneous decay rate `Γ`.
    pub gamma_sp: f64,
    pub mode: ModeShape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DipoleMapping {
    pub kappa: f64,
    /// `μ = |g|`.
    pub profile: MeasurementProfile,
    pub mode: Vec<Complex64>,
    /// Zeros of `g`, where `μ` has a cusp and `|μ′| = |g′|` fails.
    pub cusps: Vec<f64>,
}

/// `κ = |Ω|²/2Γ`, `μ(x) = |g(x)|`.
pub fn dipole_to_measurement(
    params: &DipoleParams,
    grid: &Arc<SpatialGrid>,
) -> Result<DipoleMapping, PhysMapError> {
    positive("rabi_max", params.rabi_max)?;
    positive("gamma_sp", params.gamma_sp)?;
    let g = params.mode.sample(grid)?;
    let kappa = params.rabi_max.powi(2) / (2.0 * params.gamma_sp);
    let mu = g.iter().map(|c| c.norm()).collect();
    let profile = make_profile(ProfileKind::Tabulated { samples: mu }, kappa, grid)?;
    Ok(DipoleMapping {
        kappa,
        profile,
        cusps: mode_zero_crossings(grid, &g),
        mode: g,
    })
}

/// High-intensity dipole-force diffusion `D_p = ħ²|Ω|²⟨|g′|²⟩/Γ` for a
/// position density normalized to `Σρ dx = 1`.
pub fn dipole_diffusion(
    params: &DipoleParams,
    grid: &SpatialGrid,
    density: &[f64],
) -> Result<f64, PhysMapError> {
    let g = params.mode.sample(grid)?;
    let dg = spectral_derivative_complex(grid, &g);
    let hbar = grid.units().hbar;
    let mean = dg
        .iter()
        .zip(density)
        .map(|(d, r)| d.norm_sqr() * r)
        .sum::<f64>()
        * grid.dx();
    Ok(hbar * hbar * params.rabi_max.powi(2) * mean / params.gamma_sp)
}

/// Measurement-induced diffusion `2ħ²κ⟨μ′²⟩`.
pub fn measurement_diffusion(profile: &MeasurementProfile, density: &[f64]) -> f64 {
    let hbar = profile.grid().units().hbar;
    2.0 * hbar * hbar * profile.kappa() * profile.mean_sqr_derivative(density)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CavityParams {
    /// Peak atom-cavity coupling `g0`.
    pub g0: f64,
    /// Atom-cavity detuning `Δ`.
    pub detuning: f64,
    /// Cavity field decay `γ`.
    pub cavity_decay: f64,
    /// Drive amplitude `E`.
    pub drive: f64,
    pub gamma_sp: f64,
    /// `g(x)/g0`.
    pub mode: ModeShape,
}

impl CavityParams {
    /// Empty-cavity amplitude `α = 2E/γ`.
    pub fn alpha(&self) -> f64 {
        2.0 * self.drive / self.cavity_decay
    }

    fn validate(&self) -> Result<(), PhysMapError> {
        positive("g0", self.g0)?;
        positive("cavity_decay", self.cavity_decay)?;
        positive("drive", self.drive)?;
        positive("gamma_sp", self.gamma_sp)?;
        if !(self.detuning.is_finite() && self.detuning != 0.0) {
            return Err(PhysMapError::NonPositive {
                name: "|detuning|",
                value: self.detuning,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CavityMapping {
    pub kappa: f64,
    pub alpha: f64,
    /// `μ = g²/g0²`.
    pub profile: MeasurementProfile,
    /// `ħα²g0²μ(x)/Δ` on the grid.
    pub mean_potential: Vec<f64>,
    pub regime: RegimeReport,
}

/// `κ = α²g0⁴/(Δ²γ)`, `μ = g²/g0²` and the dispersive mean potential.
pub fn cavity_to_measurement(
    params: &CavityParams,
    grid: &Arc<SpatialGrid>,
    packet: &PacketSpec,
) -> Result<CavityMapping, PhysMapError> {
    params.validate()?;
    let f = params.mode.sample(grid)?;
    let alpha = params.alpha();
    let kappa = alpha * alpha * params.g0.powi(4) / (params.detuning.powi(2) * params.cavity_decay);
    let mu: Vec<f64> = f.iter().map(|c| c.norm_sqr()).collect();
    let hbar = grid.units().hbar;
    let v = mu
        .iter()
        .map(|m| hbar * alpha * alpha * params.g0 * params.g0 * m / params.detuning)
        .collect();
    let profile = make_profile(ProfileKind::Tabulated { samples: mu }, kappa, grid)?;
    Ok(CavityMapping {
        kappa,
        alpha,
        profile,
        mean_potential: v,
        regime: regime_check(params, packet, grid.units()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarkParams {
    /// `|Ω(x)|²` on the grid.
    pub rabi_sq: Vec<f64>,
    /// Detuning `δ` of the Stark beam.
    pub detuning: f64,
}

/// Stark beam that exactly cancels a cavity mean potential:
/// `|Ω(x)|² = 4δα²g0²μ(x)/Δ`.
pub fn matched_stark(
    params: &CavityParams,
    mapping: &CavityMapping,
    detuning: f64,
) -> Result<StarkParams, PhysMapError> {
    if !(detuning.is_finite() && detuning != 0.0) {
        return Err(PhysMapError::ZeroStarkDetuning);
    }
    if detuning.signum() != params.detuning.signum() {
        return Err(PhysMapError::StarkSign {
            stark: detuning.signum(),
            potential: params.detuning.signum(),
        });
    }
    let a2g2 = mapping.alpha.powi(2) * params.g0.powi(2);
    Ok(StarkParams {
        rabi_sq: mapping
            .profile
            .samples()
            .iter()
            .map(|m| 4.0 * detuning * a2g2 * m / params.detuning)
            .collect(),
        detuning,
    })
}

/// `V(x) − ħ|Ω(x)|²/4δ`.
pub fn stark_cancellation(
    stark: &StarkParams,
    mean_potential: &[f64],
    units: UnitsConfig,
) -> Result<Vec<f64>, PhysMapError> {
    if !(stark.detuning.is_finite() && stark.detuning != 0.0) {
        return Err(PhysMapError::ZeroStarkDetuning);
    }
    if stark.rabi_sq.len() != mean_potential.len() {
        return Err(PhysMapError::StarkLength {
            expected: mean_potential.len(),
            got: stark.rabi_sq.len(),
        });
    }
    let s = stark.detuning.signum();
    if let Some(v) = mean_potential.iter().find(|v| **v != 0.0) {
        if v.signum() != s {
            return Err(PhysMapError::StarkSign {
                stark: s,
                potential: v.signum(),
            });
        }
    }
    Ok(stark
        .rabi_sq
        .iter()
        .zip(mean_potential)
        .map(|(o, v)| v - units.hbar * o / (4.0 * stark.detuning))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeCheck {
    pub name: &'static str,
    pub large: f64,
    pub small: f64,
    pub ratio: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeReport {
    pub checks: Vec<RegimeCheck>,
}

impl RegimeReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &RegimeCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{:<24} {:>12.5e} / {:>12.5e} = {:>10.3e}  {}",
                c.name,
                c.large,
                c.small,
                c.ratio,
                if c.passed { "pass" } else { "FAIL" }
            );
        }
        let _ = writeln!(s, "overall {}", if self.passed() { "pass" } else { "FAIL" });
        s
    }
}

/// Dispersive, bad-cavity regime: `|Δ| ≫ g0, γ, Γ, p0²/2mħ` and
/// `γ ≫ g0²/|Δ|, E`.
pub fn regime_check(
    params: &CavityParams,
    packet: &PacketSpec,
    units: UnitsConfig,
) -> RegimeReport {
    let d = params.detuning.abs();
    let kinetic = packet.p0 * packet.p0 / (2.0 * units.mass * units.hbar);
    let check = |name, large: f64, small: f64| {
        let ratio = large / small;
        RegimeCheck {
            name,
            large,
            small,
            ratio,
            passed: ratio >= REGIME_RATIO,
        }
    };
    RegimeReport {
        checks: vec![
            check("detuning >> g0", d, params.g0),
            check("detuning >> cavity_decay", d, params.cavity_decay),
            check("detuning >> gamma_sp", d, params.gamma_sp),
            check("detuning >> kinetic", d, kinetic),
            check(
                "cavity_decay >> g0^2/detuning",
                params.cavity_decay,
                params.g0 * params.g0 / d,
            ),
            check("cavity_decay >> drive", params.cavity_decay, params.drive),
        ],
    }
}
