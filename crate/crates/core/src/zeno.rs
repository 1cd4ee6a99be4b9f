//! Zeno reflection from a strongly measured half-line: closed-form and
//! mode-matched detection probabilities, the reflection-curve driver and the
//! projective-measurement limit.

use std::f64::consts::SQRT_2;
use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::ensemble::{run_ensemble, EnsembleError, EnsembleSpec, Problem, ReflectionWindow};
use crate::grid::{gaussian_packet, GridError, PacketSpec, SpatialGrid, UnitsConfig, WaveFunction};
use crate::measurement::{make_profile, LocalOscillator, ProfileError, ProfileKind};
use crate::observables::{linear_fit, WignerIntegrity};
use crate::propagator::{
    default_dt, uniform_times, EdgePolicy, EdgeReport, PotentialSpec, TrajectorySpec, Unraveling,
};

/// `ξ` at and above which the large-`ξ` asymptotics are considered valid.
pub const ASYMPTOTIC_XI: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZenoError {
    #[error("kappa must be finite and >= 0, got {0}")]
    Kappa(f64),
    #[error("p0 must be finite and > 0, got {0}")]
    Momentum(f64),
    #[error("xi must be finite and >= 0, got {0}")]
    Xi(f64),
    #[error("branch of q has Im q = {0} <= 0")]
    Branch(f64),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("kappa = {kappa}: {source}")]
    Ensemble {
        kappa: f64,
        #[source]
        source: EnsembleError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZenoInputs {
    pub kappa: f64,
    pub p0: f64,
    pub units: UnitsConfig,
}

impl ZenoInputs {
    pub fn new(kappa: f64, p0: f64, units: UnitsConfig) -> Result<Self, ZenoError> {
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(ZenoError::Kappa(kappa));
        }
        if !(p0.is_finite() && p0 > 0.0) {
            return Err(ZenoError::Momentum(p0));
        }
        Ok(Self { kappa, p0, units })
    }

    /// `ξ = 2mħκ/p0²`.
    pub fn xi(&self) -> f64 {
        2.0 * self.units.mass * self.units.hbar * self.kappa / (self.p0 * self.p0)
    }

    /// Inverse of [`xi`](Self::xi).
    pub fn kappa_for_xi(xi: f64, p0: f64, units: UnitsConfig) -> f64 {
        xi * p0 * p0 / (2.0 * units.mass * units.hbar)
    }
}

/// `χ = √(√(1+ξ²) − 1)`, evaluated without cancellation at small `ξ`.
pub fn chi(xi: f64) -> f64 {
    (xi * xi / ((1.0 + xi * xi).sqrt() + 1.0)).sqrt()
}

/// Closed-form total detection probability
/// `2√2(ξ/χ) / [(√2 + ξ²/χ²)² + χ²]`, with the `ξ → 0⁺` limit at zero.
pub fn p_det_closed_form(xi: f64) -> Result<f64, ZenoError> {
    if !(xi.is_finite() && xi >= 0.0) {
        return Err(ZenoError::Xi(xi));
    }
    if xi == 0.0 {
        return Ok(4.0 / (SQRT_2 + 2.0).powi(2));
    }
    let c = chi(xi);
    let r = xi / c;
    Ok(2.0 * SQRT_2 * r / ((SQRT_2 + r * r).powi(2) + c * c))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZenoResult {
    pub xi: f64,
    pub chi: f64,
    pub k: f64,
    pub q: Complex64,
    pub r: Complex64,
    pub t: Complex64,
    pub p_det_closed_form: f64,
    /// Absorbed flux fraction `2κ∫₀^∞|t e^{iqx}|²dx / (ħk/m)`.
    pub absorbed_fraction: f64,
    /// `1 − |r|²`.
    pub one_minus_r2: f64,
    pub asymptotic: bool,
}

/// Stationary scattering of `e^{ikx}` on `H − iħκθ(x)`: reflected wave for
/// `x < 0`, decaying `t e^{iqx}` for `x > 0`.
pub fn mode_match(inputs: &ZenoInputs) -> Result<ZenoResult, ZenoError> {
    let ZenoInputs { kappa, p0, units } = *inputs;
    let xi = inputs.xi();
    let k = p0 / units.hbar;
    let q = k * Complex64::new(1.0, xi).sqrt();
    if kappa > 0.0 && q.im <= 0.0 {
        return Err(ZenoError::Branch(q.im));
    }
    let r = (k - q) / (k + q);
    let t = 1.0 + r;
    // κ → 0: κ/Im q → ħk/m, so all incident flux is eventually absorbed.
    let absorbed = if kappa == 0.0 {
        1.0
    } else {
        2.0 * kappa * t.norm_sqr() / (2.0 * q.im) / (units.hbar * k / units.mass)
    };
    Ok(ZenoResult {
        xi,
        chi: chi(xi),
        k,
        q,
        r,
        t,
        p_det_closed_form: p_det_closed_form(xi)?,
        absorbed_fraction: absorbed,
        one_minus_r2: 1.0 - r.norm_sqr(),
        asymptotic: xi >= ASYMPTOTIC_XI,
    })
}

/// Least-squares slope of `ln f(ξ)` against `ln ξ` on `n` log-spaced points.
pub fn loglog_slope(f: impl Fn(f64) -> f64, xi_lo: f64, xi_hi: f64, n: usize) -> f64 {
    let (lx, ly): (Vec<f64>, Vec<f64>) = log_grid(xi_lo, xi_hi, n)
        .map(|xi| (xi.ln(), f(xi).ln()))
        .unzip();
    linear_fit(&lx, &ly).0
}

/// `n ≥ 2` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(move |i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
}

/// Reflection-curve experiment over a list of measurement strengths.
#[derive(Debug, Clone)]
pub struct ZenoCurveSpec {
    pub grid: Arc<SpatialGrid>,
    pub packet: PacketSpec,
    pub kappas: Vec<f64>,
    pub n_traj: usize,
    pub master_seed: u64,
    pub t_final: f64,
    /// Upper bound on the step; `None` uses [`default_dt`] per strength.
    pub dt: Option<f64>,
    /// Reflection window half-width in units of `σp`.
    pub window: f64,
    pub n_samples: usize,
    pub integrity: bool,
    pub workers: usize,
    pub progress: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZenoRow {
    pub kappa: f64,
    pub xi: f64,
    pub dt: f64,
    pub mc: f64,
    pub stderr: f64,
    /// `1 − P_det` from the closed form.
    pub closed_form: f64,
    /// `|r|²` from mode matching.
    pub oracle: f64,
    pub labels: (usize, usize, usize),
    pub integrity: Option<WignerIntegrity>,
    pub edge: EdgeReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curve {
    ClosedForm,
    Oracle,
}

impl Curve {
    pub fn name(&self) -> &'static str {
        match self {
            Curve::ClosedForm => "closed_form",
            Curve::Oracle => "mode_match",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZenoCurve {
    pub rows: Vec<ZenoRow>,
    pub n_traj: usize,
}

impl ZenoRow {
    /// Uncertainty used to compare with an analytic value `c`: the sample
    /// standard error, floored at the binomial error `√(c(1−c)/n)` so that a
    /// zero-variance ensemble does not demand exact agreement.
    pub fn sigma(&self, c: f64, n: usize) -> f64 {
        self.stderr.max((c * (1.0 - c) / n as f64).max(0.0).sqrt())
    }

    pub fn value(&self, curve: Curve) -> f64 {
        match curve {
            Curve::ClosedForm => self.closed_form,
            Curve::Oracle => self.oracle,
        }
    }
}

impl ZenoCurve {
    /// Each value is at least the previous one minus `n_sigma` combined errors.
    pub fn is_monotone(&self, n_sigma: f64) -> bool {
        self.rows.windows(2).all(|w| {
            let s = (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
            w[1].mc >= w[0].mc - n_sigma * s
        })
    }

    /// Rows whose Monte Carlo value lies within `n_sigma` of `curve`.
    pub fn agreement(&self, curve: Curve, n_sigma: f64) -> usize {
        self.rows
            .iter()
            .filter(|r| {
                let c = r.value(curve);
                (r.mc - c).abs() <= n_sigma * r.sigma(c, self.n_traj)
            })
            .count()
    }

    /// The analytic curve agreeing at more points, with its count.
    pub fn tracked(&self, n_sigma: f64) -> (Curve, usize) {
        let a = self.agreement(Curve::ClosedForm, n_sigma);
        let b = self.agreement(Curve::Oracle, n_sigma);
        if b >= a {
            (Curve::Oracle, b)
        } else {
            (Curve::ClosedForm, a)
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from(
            "kappa\txi\tdt\tmc_reflection\tmc_stderr\tclosed_form_reflection\tmode_match_reflection\treflected\ttransmitted\tsplit\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{:.6e}\t{:.6e}\t{:.9e}\t{:.3e}\t{:.9e}\t{:.9e}\t{}\t{}\t{}",
                r.kappa,
                r.xi,
                r.dt,
                r.mc,
                r.stderr,
                r.closed_form,
                r.oracle,
                r.labels.0,
                r.labels.1,
                r.labels.2
            );
        }
        s
    }
}

/// Jump-unraveling ensembles on the step profile, one per strength. All
/// strengths share the master seed.
pub fn reflection_curve(spec: &ZenoCurveSpec) -> Result<ZenoCurve, ZenoError> {
    if spec.kappas.is_empty() {
        return Err(ZenoError::Invalid("kappa list is empty".into()));
    }
    let units = spec.grid.units();
    let psi0 = gaussian_packet(&spec.grid, &spec.packet)?;
    let mut rows = Vec::with_capacity(spec.kappas.len());
    for &kappa in &spec.kappas {
        let inputs = ZenoInputs::new(kappa, spec.packet.p0, units)?;
        let mm = mode_match(&inputs)?;
        let dt = spec.dt.unwrap_or_else(|| default_dt(&spec.grid, kappa));
        let profile = make_profile(ProfileKind::Step, kappa, &spec.grid)?;
        let trajectory = TrajectorySpec::new(
            Unraveling::Jump {
                local_oscillator: LocalOscillator::default(),
            },
            dt,
            spec.t_final,
            0,
        )
        .with_samples(uniform_times(spec.t_final, spec.n_samples))
        .with_edge_policy(EdgePolicy::Record);
        let mut es = EnsembleSpec::new(spec.n_traj, spec.master_seed, trajectory);
        es.reflection = Some(ReflectionWindow {
            packet: spec.packet,
            width: spec.window,
        });
        es.integrity = spec.integrity;
        es.progress = spec.progress;
        es.max_work = f64::INFINITY;
        let problem = Problem {
            psi0: psi0.clone(),
            profile,
            potential: PotentialSpec::none(&spec.grid),
        };
        let wrap = |source| ZenoError::Ensemble { kappa, source };
        let res = run_ensemble(&problem, &es, spec.workers).map_err(wrap)?;
        let (mc, stderr) = crate::ensemble::reflection_probability(&res).map_err(wrap)?;
        rows.push(ZenoRow {
            kappa,
            xi: mm.xi,
            dt: spec.t_final / (spec.t_final / dt - 1e-9).ceil(),
            mc,
            stderr,
            closed_form: 1.0 - mm.p_det_closed_form,
            oracle: mm.r.norm_sqr(),
            labels: res.label_counts(),
            integrity: res.integrity,
            edge: res.edge,
        });
    }
    Ok(ZenoCurve {
        rows,
        n_traj: spec.n_traj,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectiveResult {
    pub dt: f64,
    pub n_measurements: usize,
    /// Probability removed by the initial projection onto `x < 0`.
    pub preparation_loss: f64,
    /// Never-detected probability after all measurements.
    pub survival: f64,
    /// Detection probability of each measurement, conditioned on survival.
    pub detections: Vec<f64>,
}

impl ProjectiveResult {
    pub fn mean_detection(&self) -> f64 {
        self.detections.iter().sum::<f64>() / self.detections.len().max(1) as f64
    }
}

/// Alternates exact free evolution over `dt` with projection onto `x < 0`,
/// starting from the packet projected onto `x < 0`.
pub fn projective_limit_check(
    psi0: &WaveFunction,
    dt: f64,
    n_measurements: usize,
) -> Result<ProjectiveResult, ZenoError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(ZenoError::Invalid(format!(
            "projective step must be > 0, got {dt}"
        )));
    }
    let g = psi0.grid().clone();
    let u = g.units();
    let phase: Vec<Complex64> = g
        .p()
        .iter()
        .map(|&p| Complex64::from_polar(1.0, -p * p * dt / (2.0 * u.mass * u.hbar)))
        .collect();
    let inside: Vec<bool> = g.x().iter().map(|&x| x < 0.0).collect();
    let mut psi = psi0.amplitudes().to_vec();
    let mut scratch = g.fft_scratch();
    let norm = |a: &[Complex64]| a.iter().map(|c| c.norm_sqr()).sum::<f64>() * g.dx();
    let project = |a: &mut [Complex64]| {
        a.iter_mut()
            .zip(&inside)
            .filter(|(_, &k)| !k)
            .for_each(|(c, _)| *c = Complex64::new(0.0, 0.0));
    };
    let total = norm(&psi);
    project(&mut psi);
    let kept = norm(&psi);
    if kept <= 0.0 {
        return Err(ZenoError::Invalid("packet has no support at x < 0".into()));
    }
    psi.iter_mut().for_each(|c| *c /= kept.sqrt());
    let mut survival = 1.0;
    let mut detections = Vec::with_capacity(n_measurements);
    for _ in 0..n_measurements {
        g.forward_unitary(&mut psi, &mut scratch);
        psi.iter_mut().zip(&phase).for_each(|(c, f)| *c *= f);
        g.inverse_unitary(&mut psi, &mut scratch);
        let before = norm(&psi);
        project(&mut psi);
        let after = norm(&psi);
        detections.push(1.0 - after / before);
        survival *= after / before;
        psi.iter_mut().for_each(|c| *c /= after.sqrt());
    }
    Ok(ProjectiveResult {
        dt,
        n_measurements,
        preparation_loss: 1.0 - kept / total,
        survival,
        detections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn units() -> UnitsConfig {
        UnitsConfig::default()
    }

    #[test]
    fn closed_form_values() {
        assert!((p_det_closed_form(1.0).unwrap() - 0.29160).abs() < 5e-6);
        let lim = 4.0 / (SQRT_2 + 2.0).powi(2);
        assert!((p_det_closed_form(0.0).unwrap() - lim).abs() < 1e-15);
        assert!((p_det_closed_form(1e-7).unwrap() - lim).abs() < 1e-6);
        let x: f64 = 1e3;
        let asym = 2.0 * SQRT_2 * x.powf(-1.5);
        assert!((p_det_closed_form(x).unwrap() / asym - 1.0).abs() < 0.05);
        assert!(p_det_closed_form(-1.0).is_err());
    }

    #[test]
    fn mode_match_limits() {
        let r = mode_match(&ZenoInputs::new(0.0, 1.0, units()).unwrap()).unwrap();
        assert_eq!(r.q, Complex64::new(1.0, 0.0));
        assert_eq!(r.r, Complex64::new(0.0, 0.0));
        assert_eq!(r.absorbed_fraction, 1.0);
        let xi = 1e4;
        let k = ZenoInputs::kappa_for_xi(xi, 1.0, units());
        let r = mode_match(&ZenoInputs::new(k, 1.0, units()).unwrap()).unwrap();
        assert!(r.asymptotic);
        assert!((r.one_minus_r2 / (2.0 * SQRT_2 * xi.powf(-0.5)) - 1.0).abs() < 0.05);
        let r1 = mode_match(&ZenoInputs::new(0.5, 1.0, units()).unwrap()).unwrap();
        assert!((r1.one_minus_r2 - 0.953).abs() < 5e-4);
    }

    #[test]
    fn flux_identity_over_xi_grid() {
        for p0 in [0.3, 1.0, 4.0] {
            for xi in log_grid(1e-3, 1e6, 91) {
                let k = ZenoInputs::kappa_for_xi(xi, p0, units());
                let r = mode_match(&ZenoInputs::new(k, p0, units()).unwrap()).unwrap();
                assert!(r.q.im > 0.0 && r.r.norm() <= 1.0);
                assert!(
                    (r.absorbed_fraction - r.one_minus_r2).abs() < 1e-12,
                    "xi {xi}"
                );
                assert!((0.0..=1.0).contains(&r.p_det_closed_form));
                assert!((0.0..=1.0).contains(&r.one_minus_r2));
            }
        }
    }

    #[test]
    fn asymptotic_slopes() {
        let closed = loglog_slope(|x| p_det_closed_form(x).unwrap(), 1e2, 1e4, 21);
        assert!((closed + 1.5).abs() < 0.05, "{closed}");
        let oracle = loglog_slope(
            |x| {
                mode_match(&ZenoInputs::new(x / 2.0, 1.0, units()).unwrap())
                    .unwrap()
                    .one_minus_r2
            },
            1e2,
            1e4,
            21,
        );
        assert!((oracle + 0.5).abs() < 0.05, "{oracle}");
    }

    #[test]
    fn mode_match_agrees_with_closed_expression() {
        // 1 − |r|² = 4√2(ξ/χ) / ((√2 + ξ/χ)² + χ²)
        for xi in [0.01, 1.0, 40.0, 1e5] {
            let c = chi(xi);
            let expect = 4.0 * SQRT_2 * (xi / c) / ((SQRT_2 + xi / c).powi(2) + c * c);
            let r = mode_match(&ZenoInputs::new(xi / 2.0, 1.0, units()).unwrap()).unwrap();
            assert!((r.one_minus_r2 - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn projective_far_packet_survives() {
        let g = SpatialGrid::shared(256, -64.0, 64.0, units()).unwrap();
        let psi = gaussian_packet(&g, &PacketSpec::new(-40.0, 1.0, 2.0)).unwrap();
        let r = projective_limit_check(&psi, 0.01, 1).unwrap();
        assert!(r.preparation_loss < 1e-15);
        assert!((r.survival - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projective_detection_is_quadratic() {
        let g = SpatialGrid::shared(256, -32.0, 32.0, units()).unwrap();
        let psi = gaussian_packet(&g, &PacketSpec::new(-4.0, 1.0, 1.0)).unwrap();
        let t = 0.5;
        let dts = [1e-3, 5e-4, 2.5e-4, 1.25e-4];
        let res: Vec<_> = dts
            .iter()
            .map(|&dt| projective_limit_check(&psi, dt, (t / dt).round() as usize).unwrap())
            .collect();
        for w in res.windows(2) {
            let ratio = w[0].mean_detection() / w[1].mean_detection();
            assert!(ratio > 4.0 / 1.2 && ratio < 4.0 * 1.2, "ratio {ratio}");
        }
        assert!(res.last().unwrap().survival >= 0.99);
    }

    #[test]
    fn curve_checks() {
        let row = |mc: f64, se: f64, cf: f64, or: f64| ZenoRow {
            kappa: 0.0,
            xi: 0.0,
            dt: 0.0,
            mc,
            stderr: se,
            closed_form: cf,
            oracle: or,
            labels: (0, 0, 0),
            integrity: None,
            edge: EdgeReport::default(),
        };
        let c = ZenoCurve {
            rows: vec![
                row(0.1, 0.02, 0.7, 0.1),
                row(0.09, 0.02, 0.8, 0.12),
                row(0.3, 0.03, 0.9, 0.31),
            ],
            n_traj: 256,
        };
        assert!(c.is_monotone(3.0));
        assert_eq!(c.tracked(3.0), (Curve::Oracle, 3));
        let c2 = ZenoCurve {
            rows: vec![row(0.5, 0.01, 0.7, 0.1), row(0.1, 0.01, 0.8, 0.12)],
            n_traj: 256,
        };
        assert!(!c2.is_monotone(3.0));
        assert_eq!(c.to_tsv().lines().count(), 4);
    }
}
