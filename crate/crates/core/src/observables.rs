//! Moments, Wigner functions, and scattering and heating diagnostics
//! extracted from sampled states.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::grid::WaveFunction;
use crate::measurement::MeasurementProfile;

/// Tolerance on `‖ψ‖² − 1` for functions that require normalized input.
pub const NORM_TOLERANCE: f64 = 1e-6;
/// Density floor below which the momentum tail carries no signal.
pub const TAIL_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservableError {
    #[error("state has norm^2 {0}, expected 1")]
    Unnormalized(f64),
    #[error("coarsening {factor} does not divide {len} points into at least two blocks")]
    Coarsening { factor: usize, len: usize },
    #[error(
        "momentum grid spacing {dp} under-resolves sigma_p = {sigma_p} (needs 4 bins per sigma_p)"
    )]
    Resolution { sigma_p: f64, dp: f64 },
    #[error("reflection window [{lo}, {hi}] exceeds the momentum grid (|p| < {p_max})")]
    WindowOutside { lo: f64, hi: f64, p_max: f64 },
    #[error("momentum tail density {density:.2e} at p = {p} is below the {TAIL_FLOOR:e} floor")]
    InsufficientTail { p: f64, density: f64 },
    #[error("tail fit rejected: R^2 = {0:.3}")]
    PoorFit(f64),
    #[error("diffusion is divergent for a step measurement; use the momentum-tail diagnostic")]
    StepProfile,
    #[error("diffusion fit needs at least {needed} sample times, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("input series have inconsistent lengths")]
    Shape,
}

fn check_norm(psi: &WaveFunction) -> Result<(), ObservableError> {
    let n = psi.norm_sqr();
    if (n - 1.0).abs() > NORM_TOLERANCE {
        return Err(ObservableError::Unnormalized(n));
    }
    Ok(())
}

/// One row of a [`MomentSeries`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentRow {
    pub time: f64,
    pub mean_x: f64,
    pub mean_p: f64,
    pub mean_p2: f64,
    pub var_x: f64,
    pub var_p: f64,
    pub norm: f64,
}

/// Position moments by position quadrature, momentum moments by momentum
/// quadrature.
pub fn moments(psi: &WaveFunction, time: f64) -> Result<MomentRow, ObservableError> {
    check_norm(psi)?;
    let g = psi.grid();
    let norm = psi.norm_sqr();
    let rho = psi.position_density();
    let mean_x = rho.iter().zip(g.x()).map(|(r, x)| r * x).sum::<f64>() * g.dx() / norm;
    let var_x = rho
        .iter()
        .zip(g.x())
        .map(|(r, x)| r * (x - mean_x).powi(2))
        .sum::<f64>()
        * g.dx()
        / norm;
    let phi = psi.momentum_density();
    let (mut m1, mut m2) = (0.0, 0.0);
    for (d, p) in phi.iter().zip(g.p()) {
        m1 += d * p;
        m2 += d * p * p;
    }
    let mean_p = m1 * g.dp() / norm;
    let mean_p2 = m2 * g.dp() / norm;
    let var_p = phi
        .iter()
        .zip(g.p())
        .map(|(d, p)| d * (p - mean_p).powi(2))
        .sum::<f64>()
        * g.dp()
        / norm;
    Ok(MomentRow {
        time,
        mean_x,
        mean_p,
        mean_p2,
        var_x,
        var_p,
        norm,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MomentSeries {
    pub rows: Vec<MomentRow>,
}

impl MomentSeries {
    pub const HEADER: &'static str = "t\tmean_x\tmean_p\tmean_p2\tvar_x\tvar_p\tnorm";

    pub fn to_tsv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{:.12e}\t{:.12e}\t{:.12e}\t{:.12e}\t{:.12e}\t{:.12e}",
                r.time, r.mean_x, r.mean_p, r.mean_p2, r.var_x, r.var_p, r.norm
            );
        }
        s
    }
}

/// `W(x, p)` on a rectangular phase-space grid, rows indexed by `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerField {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    /// Row-major, `values[i * p.len() + m] = W(x_i, p_m)`.
    pub values: Vec<f64>,
    pub dx: f64,
    pub dp: f64,
}

/// Spectral ×2 upsampling. The Nyquist bin is assigned to negative momenta.
fn upsample(psi: &WaveFunction) -> Vec<Complex64> {
    let g = psi.grid();
    let n = g.n_points();
    let mut buf = psi.amplitudes().to_vec();
    let mut scratch = g.fft_scratch();
    g.forward_raw(&mut buf, &mut scratch);
    let mut big = vec![Complex64::new(0.0, 0.0); 2 * n];
    let half = n / 2;
    big[..half].copy_from_slice(&buf[..half]);
    big[2 * n - half..].copy_from_slice(&buf[half..]);
    let mut planner = FftPlanner::new();
    let inv = planner.plan_fft_inverse(2 * n);
    inv.process(&mut big);
    let s = 1.0 / n as f64;
    big.iter_mut().for_each(|c| *c *= s);
    big
}

/// Row kernel: for each upsampled position node, evaluates `W(x'_j, p_m)`
/// for every `p_m = m·dp/2` (FFT order) and hands the row to `f`.
fn wigner_rows(psi: &WaveFunction, mut f: impl FnMut(usize, &[f64])) -> (f64, f64, usize) {
    let g = psi.grid();
    let hbar = g.units().hbar;
    let up = upsample(psi);
    let n2 = up.len();
    let dxu = g.dx() / 2.0;
    let pref = dxu / (PI * hbar);
    let mut planner = FftPlanner::new();
    let inv = planner.plan_fft_inverse(n2);
    let mut scratch = vec![Complex64::new(0.0, 0.0); inv.get_inplace_scratch_len()];
    let mut a = vec![Complex64::new(0.0, 0.0); n2];
    let mut row = vec![0.0; n2];
    // Lags |n| < N'/4 count every pair separation on the ring exactly once;
    // longer lags would alias the state onto its antipode.
    let q = n2 / 4;
    for j in 0..n2 {
        a.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for n in 0..q {
            let plus = up[(j + n) % n2];
            let minus = up[(j + n2 - n) % n2];
            a[n] = plus.conj() * minus;
            if n > 0 {
                a[n2 - n] = minus.conj() * plus;
            }
        }
        a[n2 - q] = up[(j + n2 - q) % n2].conj() * up[(j + q) % n2];
        inv.process_with_scratch(&mut a, &mut scratch);
        for (r, c) in row.iter_mut().zip(&a) {
            *r = pref * c.re;
        }
        f(j, &row);
    }
    (dxu, g.dp() / 2.0, n2)
}

/// Wigner function `W(x,p) = (1/πħ)∫dy ψ*(x+y)ψ(x−y)e^{2ipy/ħ}` on the ×2
/// upsampled position grid and the full momentum band at spacing `dp/2`,
/// block-averaged by `coarsen = (in x, in p)`.
pub fn wigner(psi: &WaveFunction, coarsen: (usize, usize)) -> Result<WignerField, ObservableError> {
    check_norm(psi)?;
    let g = psi.grid().clone();
    let n2 = 2 * g.n_points();
    for f in [coarsen.0, coarsen.1] {
        if f == 0 || !n2.is_multiple_of(f) || n2 / f < 2 {
            return Err(ObservableError::Coarsening { factor: f, len: n2 });
        }
    }
    let mut full = vec![0.0; n2 * n2];
    let (dxu, dpu, _) = wigner_rows(psi, |j, row| {
        // Reorder momenta from FFT order to ascending.
        let dest = &mut full[j * n2..(j + 1) * n2];
        dest[..n2 / 2].copy_from_slice(&row[n2 / 2..]);
        dest[n2 / 2..].copy_from_slice(&row[..n2 / 2]);
    });
    let x: Vec<f64> = (0..n2).map(|j| g.x_min() + j as f64 * dxu).collect();
    let p: Vec<f64> = (0..n2)
        .map(|m| (m as f64 - (n2 / 2) as f64) * dpu)
        .collect();
    let field = WignerField {
        x,
        p,
        values: full,
        dx: dxu,
        dp: dpu,
    };
    Ok(field.coarsened(coarsen.0, coarsen.1))
}

impl WignerField {
    pub fn n_x(&self) -> usize {
        self.x.len()
    }

    pub fn n_p(&self) -> usize {
        self.p.len()
    }

    pub fn at(&self, i: usize, m: usize) -> f64 {
        self.values[i * self.p.len() + m]
    }

    /// Block average; axes move to block centers.
    pub fn coarsened(&self, fx: usize, fp: usize) -> WignerField {
        if fx == 1 && fp == 1 {
            return self.clone();
        }
        let (nx, np) = (self.n_x() / fx, self.n_p() / fp);
        let mut values = vec![0.0; nx * np];
        let w = 1.0 / (fx * fp) as f64;
        for i in 0..nx * fx {
            for m in 0..np * fp {
                values[(i / fx) * np + m / fp] += self.at(i, m) * w;
            }
        }
        let center = |axis: &[f64], f: usize, k: usize| {
            axis[k * f..(k + 1) * f].iter().sum::<f64>() / f as f64
        };
        WignerField {
            x: (0..nx).map(|k| center(&self.x, fx, k)).collect(),
            p: (0..np).map(|k| center(&self.p, fp, k)).collect(),
            values,
            dx: self.dx * fx as f64,
            dp: self.dp * fp as f64,
        }
    }

    /// `∫∫W dx dp`.
    pub fn normalization(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx * self.dp
    }

    /// `∫∫W² dx dp`; equals `1/(2πħ)` for pure states.
    pub fn square_integral(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() * self.dx * self.dp
    }

    pub fn x_marginal(&self) -> Vec<f64> {
        self.values
            .chunks(self.n_p())
            .map(|r| r.iter().sum::<f64>() * self.dp)
            .collect()
    }

    pub fn p_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_p()];
        for r in self.values.chunks(self.n_p()) {
            out.iter_mut().zip(r).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o *= self.dx);
        out
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Accumulates `w·other` into `self`; both must share axes.
    pub fn add_scaled(&mut self, other: &WignerField, w: f64) {
        assert_eq!(self.values.len(), other.values.len());
        self.values
            .iter_mut()
            .zip(&other.values)
            .for_each(|(a, b)| *a += w * b);
    }

    pub fn zeros_like(&self) -> WignerField {
        WignerField {
            values: vec![0.0; self.values.len()],
            ..self.clone()
        }
    }

    /// Little-endian 8-byte reals, row-major.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Text sidecar describing the binary layout and axes.
    pub fn sidecar(&self, time: f64) -> String {
        format!(
            "format f64 little-endian row-major\nrows x {} {:.12e} {:.12e}\ncols p {} {:.12e} {:.12e}\ntime {time}\nnormalization {:.12e}\n",
            self.n_x(),
            self.x[0],
            self.dx,
            self.n_p(),
            self.p[0],
            self.dp,
            self.normalization()
        )
    }
}

/// Streaming Wigner consistency figures for one state; see [`wigner_integrity`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WignerIntegrity {
    /// Largest |∫W dp − |ψ(x)|²| over position nodes.
    pub x_marginal_error: f64,
    /// Largest |∫W dx − |φ(p)|²| over the state's momentum nodes.
    pub p_marginal_error: f64,
    /// `∫∫W − 1`.
    pub normalization_error: f64,
    /// `∫∫W²·2πħ − 1`.
    pub purity_error: f64,
}

impl WignerIntegrity {
    pub fn passes(&self, marginal_tol: f64, norm_tol: f64) -> bool {
        self.x_marginal_error <= marginal_tol
            && self.p_marginal_error <= marginal_tol
            && self.normalization_error.abs() <= norm_tol
    }

    pub fn worst(self, other: Self) -> Self {
        let absmax = |a: f64, b: f64| if a.abs() >= b.abs() { a } else { b };
        Self {
            x_marginal_error: self.x_marginal_error.max(other.x_marginal_error),
            p_marginal_error: self.p_marginal_error.max(other.p_marginal_error),
            normalization_error: absmax(self.normalization_error, other.normalization_error),
            purity_error: absmax(self.purity_error, other.purity_error),
        }
    }
}

/// Checks the Wigner marginals, normalization and purity without storing
/// the field.
pub fn wigner_integrity(psi: &WaveFunction) -> Result<WignerIntegrity, ObservableError> {
    check_norm(psi)?;
    let g = psi.grid().clone();
    let n = g.n_points();
    let rho = psi.position_density();
    let mut p_marg = vec![0.0; 2 * n];
    let mut x_err: f64 = 0.0;
    let mut total = 0.0;
    let mut sq = 0.0;
    let (dxu, dpu, _) = wigner_rows(psi, |j, row| {
        let s: f64 = row.iter().sum();
        if j % 2 == 0 {
            x_err = x_err.max((s * g.dp() / 2.0 - rho[j / 2]).abs());
        }
        total += s;
        for (acc, v) in p_marg.iter_mut().zip(row) {
            *acc += v;
            sq += v * v;
        }
    });
    let phi = psi.momentum_density();
    let mut p_err: f64 = 0.0;
    for (k, d) in phi.iter().enumerate() {
        // Momentum bin k of the state (FFT order) is bin 2k of the
        // half-spacing Wigner axis, also in FFT order.
        p_err = p_err.max((p_marg[2 * k] * dxu - d).abs());
    }
    let hbar = g.units().hbar;
    Ok(WignerIntegrity {
        x_marginal_error: x_err,
        p_marginal_error: p_err,
        normalization_error: total * dxu * dpu - 1.0,
        purity_error: sq * dxu * dpu * 2.0 * PI * hbar - 1.0,
    })
}

/// Probability in the momentum window `[−p0 − wσp, −p0 + wσp]`, with
/// partial weight for bins cut by the window edges.
pub fn coherent_reflection_probability(
    psi: &WaveFunction,
    p0: f64,
    sigma_p: f64,
    width: f64,
) -> Result<f64, ObservableError> {
    let g = psi.grid();
    let dp = g.dp();
    if sigma_p < 4.0 * dp {
        return Err(ObservableError::Resolution { sigma_p, dp });
    }
    let lo = -p0 - width * sigma_p;
    let hi = -p0 + width * sigma_p;
    let p_max = g.p_max();
    if lo < -p_max || hi > p_max - dp {
        return Err(ObservableError::WindowOutside { lo, hi, p_max });
    }
    let dens = psi.momentum_density();
    let mut acc = 0.0;
    for (d, &p) in dens.iter().zip(g.p()) {
        let overlap = ((p + dp / 2.0).min(hi) - (p - dp / 2.0).max(lo)).max(0.0);
        acc += d * overlap;
    }
    Ok(acc / psi.norm_sqr())
}

/// Power-law fit of the momentum density tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailFit {
    pub exponent: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fits `log|φ(p)|²` against `log|p|` over `|p| ∈ [p_max/40, p_max/4]`.
pub fn momentum_tail_diagnostic(psi: &WaveFunction) -> Result<TailFit, ObservableError> {
    check_norm(psi)?;
    let g = psi.grid();
    let (lo, hi) = (g.p_max() / 40.0, g.p_max() / 4.0);
    let dens = psi.momentum_density();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&d, &p) in dens.iter().zip(g.p()) {
        let a = p.abs();
        if a < lo || a > hi {
            continue;
        }
        if d < TAIL_FLOOR {
            return Err(ObservableError::InsufficientTail { p, density: d });
        }
        xs.push(a.ln());
        ys.push(d.ln());
    }
    let (slope, _, r2) = linear_fit(&xs, &ys);
    if !(r2 >= 0.9) {
        return Err(ObservableError::PoorFit(r2));
    }
    Ok(TailFit {
        exponent: slope,
        r_squared: r2,
        points: xs.len(),
    })
}

/// Ordinary least squares `y = a·x + b`; returns `(a, b, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (slope, my - slope * mx, r2)
}

/// Fitted versus predicted momentum diffusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionEstimate {
    /// Mean over trajectories of the fitted `d⟨p²⟩/dt`.
    pub fitted_slope: f64,
    pub slope_stderr: f64,
    /// `2ħ²κ` times the time-averaged ensemble `⟨μ′²⟩`.
    pub predicted: f64,
    /// `(fitted − predicted)/predicted`.
    pub relative_deviation: f64,
    /// Relative spread `(max − min)/mean` of the ensemble `⟨μ′²⟩` over the fit.
    pub profile_drift: f64,
}

/// Compares ensemble heating against `D_p = 2ħ²κ⟨(∂ₓμ)²⟩`.
///
/// `p2[i][k]` is `⟨p²⟩` of trajectory `i` at `times[k]`; `mu_prime_sq[k]` is
/// the ensemble average of `⟨μ′²⟩` at the same times.
pub fn diffusion_check(
    times: &[f64],
    p2: &[Vec<f64>],
    mu_prime_sq: &[f64],
    profile: &MeasurementProfile,
) -> Result<DiffusionEstimate, ObservableError> {
    if !profile.is_smooth() {
        return Err(ObservableError::StepProfile);
    }
    if times.len() < 3 {
        return Err(ObservableError::TooFewSamples {
            needed: 3,
            got: times.len(),
        });
    }
    if mu_prime_sq.len() != times.len()
        || p2.is_empty()
        || p2.iter().any(|r| r.len() != times.len())
    {
        return Err(ObservableError::Shape);
    }
    let slopes: Vec<f64> = p2.iter().map(|r| linear_fit(times, r).0).collect();
    let n = slopes.len() as f64;
    let mean = slopes.iter().sum::<f64>() / n;
    let stderr = if slopes.len() > 1 {
        (slopes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    let hbar = profile.grid().units().hbar;
    // Trapezoidal time average.
    let span = times[times.len() - 1] - times[0];
    let integral: f64 = times
        .windows(2)
        .zip(mu_prime_sq.windows(2))
        .map(|(t, m)| (t[1] - t[0]) * (m[0] + m[1]) / 2.0)
        .sum();
    let avg = integral / span;
    let predicted = 2.0 * hbar * hbar * profile.kappa() * avg;
    let (lo, hi) = mu_prime_sq
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let relative_deviation = if predicted > 0.0 {
        (mean - predicted) / predicted
    } else {
        f64::NAN
    };
    Ok(DiffusionEstimate {
        fitted_slope: mean,
        slope_stderr: stderr,
        predicted,
        relative_deviation,
        profile_drift: if avg > 0.0 { (hi - lo) / avg } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{gaussian_packet, PacketSpec, SpatialGrid, UnitsConfig};
    use crate::measurement::{make_profile, ProfileKind};
    use std::sync::Arc;

    fn grid(n: usize, lo: f64, hi: f64) -> Arc<SpatialGrid> {
        SpatialGrid::shared(n, lo, hi, UnitsConfig::default()).unwrap()
    }

    #[test]
    fn packet_moments() {
        let g = grid(2048, -160.0, 160.0);
        let psi = gaussian_packet(&g, &PacketSpec::new(-15.0, 1.0, 5.0)).unwrap();
        let m = moments(&psi, 0.0).unwrap();
        assert!((m.mean_x + 15.0).abs() < 1e-6);
        assert!((m.mean_p - 1.0).abs() < 1e-6);
        assert!((m.var_x - 25.0).abs() < 25e-6);
        assert!((m.var_p - 0.01).abs() < 1e-8);
        assert!((m.mean_p2 - 1.01).abs() < 1e-6);
        let unit = gaussian_packet(&g, &PacketSpec::new(0.0, 0.0, 1.0)).unwrap();
        let u = moments(&unit, 0.0).unwrap();
        assert!(((u.var_x * u.var_p).sqrt() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn plane_wave_has_no_momentum_spread() {
        let g = grid(64, 0.0, 64.0);
        let k = 5.0 * g.dp();
        let psi =
            WaveFunction::from_fn(g.clone(), |x| Complex64::from_polar(0.125, k * x)).unwrap();
        let m = moments(&psi, 0.0).unwrap();
        assert!(m.var_p.abs() < 1e-12);
        assert!((m.mean_p - k).abs() < 1e-12);
    }

    #[test]
    fn truncated_state_moments_match_direct_sums() {
        let g = grid(512, -40.0, 40.0);
        let psi0 = gaussian_packet(&g, &PacketSpec::new(1.0, 0.4, 3.0)).unwrap();
        let a: Vec<Complex64> = psi0
            .amplitudes()
            .iter()
            .zip(g.x())
            .map(|(c, &x)| {
                if x >= 0.0 {
                    *c
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        let mut psi = WaveFunction::new(g.clone(), a.clone()).unwrap();
        psi.normalize();
        let m = moments(&psi, 0.0).unwrap();
        // Independent oracle: direct DFT sums with explicit exponentials.
        let n = g.n_points();
        let dx = g.dx();
        let norm: f64 = a.iter().map(|c| c.norm_sqr()).sum::<f64>() * dx;
        let mean_x: f64 = a
            .iter()
            .zip(g.x())
            .map(|(c, x)| c.norm_sqr() * x)
            .sum::<f64>()
            * dx
            / norm;
        let (mut s1, mut s2) = (0.0, 0.0);
        for &p in g.p() {
            let mut amp = Complex64::new(0.0, 0.0);
            for (c, &x) in a.iter().zip(g.x()) {
                amp += c * Complex64::from_polar(1.0, -p * x);
            }
            let dens = amp.norm_sqr() * dx * dx / (2.0 * PI) / norm;
            s1 += dens * p * g.dp();
            s2 += dens * p * p * g.dp();
        }
        let _ = n;
        assert!((m.mean_x - mean_x).abs() < 1e-10);
        assert!((m.mean_p - s1).abs() < 1e-10);
        assert!((m.mean_p2 - s2).abs() < 1e-10 * s2.max(1.0));
    }

    #[test]
    fn unnormalized_input_rejected() {
        let g = grid(64, -8.0, 8.0);
        let mut psi = gaussian_packet(&g, &PacketSpec::new(0.0, 0.0, 1.0)).unwrap();
        psi.amplitudes_mut().iter_mut().for_each(|c| *c *= 1.1);
        assert!(matches!(
            moments(&psi, 0.0),
            Err(ObservableError::Unnormalized(_))
        ));
    }

    #[test]
    fn gaussian_wigner_is_positive_and_consistent() {
        let g = grid(256, -32.0, 32.0);
        let psi = gaussian_packet(&g, &PacketSpec::new(0.0, 0.0, 2.0)).unwrap();
        let w = wigner(&psi, (1, 1)).unwrap();
        assert!(w.min() >= -1e-12, "min {}", w.min());
        assert!((w.normalization() - 1.0).abs() < 1e-10);
        assert!((w.square_integral() * 2.0 * PI - 1.0).abs() < 1e-6);
        let xm = w.x_marginal();
        for (j, r) in psi.position_density().iter().enumerate() {
            assert!((xm[2 * j] - r).abs() < 1e-10);
        }
        let integ = wigner_integrity(&psi).unwrap();
        assert!(integ.passes(1e-8, 1e-6), "{integ:?}");
    }

    #[test]
    fn moving_packet_wigner_peak() {
        let g = grid(256, -32.0, 32.0);
        let psi = gaussian_packet(&g, &PacketSpec::new(-5.0, 1.0, 2.0)).unwrap();
        let w = wigner(&psi, (1, 1)).unwrap();
        let (im, _) = w
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let (i, m) = (im / w.n_p(), im % w.n_p());
        assert!((w.x[i] + 5.0).abs() <= w.dx);
        assert!((w.p[m] - 1.0).abs() <= w.dp);
        let integ = wigner_integrity(&psi).unwrap();
        assert!(integ.passes(1e-8, 1e-6), "{integ:?}");
        assert!(integ.purity_error.abs() < 1e-6);
    }

    fn cat(g: &Arc<SpatialGrid>, d: f64, phase: f64) -> WaveFunction {
        let a = gaussian_packet(g, &PacketSpec::new(-d / 2.0, 0.0, 1.0)).unwrap();
        let b = gaussian_packet(g, &PacketSpec::new(d / 2.0, 0.0, 1.0)).unwrap();
        let amps = a
            .amplitudes()
            .iter()
            .zip(b.amplitudes())
            .map(|(x, y)| x + y * Complex64::from_polar(1.0, phase))
            .collect();
        let mut psi = WaveFunction::new(g.clone(), amps).unwrap();
        psi.normalize();
        psi
    }

    fn fringe_row(w: &WignerField) -> Vec<f64> {
        let i = w.x.iter().position(|&x| x.abs() < 1e-12).unwrap();
        (0..w.n_p()).map(|m| w.at(i, m)).collect()
    }

    #[test]
    fn cat_state_fringes() {
        let g = grid(256, -32.0, 32.0);
        let d = 10.0;
        let psi = cat(&g, d, 0.0);
        let w = wigner(&psi, (1, 1)).unwrap();
        assert!(w.min() < 0.0);
        let row = fringe_row(&w);
        // Successive maxima near p = 0.
        let maxima: Vec<f64> = (1..row.len() - 1)
            .filter(|&m| row[m] > row[m - 1] && row[m] >= row[m + 1] && w.p[m].abs() < 2.0)
            .map(|m| w.p[m])
            .collect();
        let period = (maxima[maxima.len() - 1] - maxima[0]) / (maxima.len() - 1) as f64;
        assert!((period - 2.0 * PI / d).abs() <= w.dp, "{period}");
        let integ = wigner_integrity(&psi).unwrap();
        assert!(integ.passes(1e-8, 1e-6), "{integ:?}");
    }

    #[test]
    fn random_phase_mixture_suppresses_fringes() {
        use rand::{Rng, SeedableRng};
        let g = grid(256, -32.0, 32.0);
        let pure = fringe_row(&wigner(&cat(&g, 10.0, 0.0), (1, 1)).unwrap());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let k = 512;
        let mut mix = vec![0.0; pure.len()];
        for _ in 0..k {
            let ph = rng.random::<f64>() * 2.0 * PI;
            let row = fringe_row(&wigner(&cat(&g, 10.0, ph), (1, 1)).unwrap());
            mix.iter_mut()
                .zip(&row)
                .for_each(|(a, b)| *a += b / k as f64);
        }
        let amp = |r: &[f64]| r.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(
            amp(&pure) >= 10.0 * amp(&mix),
            "{} vs {}",
            amp(&pure),
            amp(&mix)
        );
    }

    #[test]
    fn coarsening_preserves_integrals() {
        let g = grid(128, -16.0, 16.0);
        let psi = gaussian_packet(&g, &PacketSpec::new(1.0, 0.5, 2.0)).unwrap();
        let w = wigner(&psi, (4, 4)).unwrap();
        assert_eq!(w.n_x(), 64);
        assert!((w.normalization() - 1.0).abs() < 1e-10);
        assert!(matches!(
            wigner(&psi, (3, 1)),
            Err(ObservableError::Coarsening { .. })
        ));
        assert!(matches!(
            wigner(&psi, (256, 1)),
            Err(ObservableError::Coarsening { .. })
        ));
    }

    #[test]
    fn sidecar_and_bytes() {
        let g = grid(64, -16.0, 16.0);
        let psi = gaussian_packet(&g, &PacketSpec::new(0.0, 0.0, 2.0)).unwrap();
        let w = wigner(&psi, (2, 2)).unwrap();
        let bytes = w.to_le_bytes();
        assert_eq!(bytes.len(), 8 * w.values.len());
        assert_eq!(
            f64::from_le_bytes(bytes[..8].try_into().unwrap()),
            w.values[0]
        );
        assert!(w
            .sidecar(1.5)
            .starts_with("format f64 little-endian row-major\nrows x 64"));
    }

    fn reflect(psi: &WaveFunction) -> WaveFunction {
        // p → −p is ψ(x) → ψ*(x) for a packet with real envelope about x0.
        let a = psi.amplitudes().iter().map(|c| c.conj()).collect();
        WaveFunction::new(psi.grid().clone(), a).unwrap()
    }

    #[test]
    fn coherent_reflection_window() {
        let g = grid(2048, -400.0, 400.0);
        let spec = PacketSpec::new(-30.0, 1.0, 10.0);
        let psi = gaussian_packet(&g, &spec).unwrap();
        let sp = spec.sigma_p(g.units());
        let pre = coherent_reflection_probability(&psi, 1.0, sp, 3.0).unwrap();
        assert!(pre < 1e-4);
        let refl = reflect(&psi);
        let r = coherent_reflection_probability(&refl, 1.0, sp, 3.0).unwrap();
        assert!((r - 0.9973002).abs() < 2e-4, "{r}");
        let mut half: Vec<Complex64> = psi
            .amplitudes()
            .iter()
            .zip(refl.amplitudes())
            .map(|(a, b)| a + b)
            .collect();
        half.iter_mut().for_each(|c| *c *= 1.0);
        let mut sup = WaveFunction::new(g.clone(), half).unwrap();
        sup.normalize();
        let s = coherent_reflection_probability(&sup, 1.0, sp, 3.0).unwrap();
        assert!((s - 0.4986501).abs() < 2e-4, "{s}");
        let short = grid(256, -20.0, 20.0);
        let psi_c = gaussian_packet(&short, &PacketSpec::new(0.0, 1.0, 2.0)).unwrap();
        assert!(matches!(
            coherent_reflection_probability(&psi_c, 1.0, 0.25, 3.0),
            Err(ObservableError::Resolution { .. })
        ));
        assert!(matches!(
            coherent_reflection_probability(&psi, 7.9, sp, 3.0),
            Err(ObservableError::WindowOutside { .. })
        ));
    }

    #[test]
    fn truncated_gaussian_has_inverse_square_tail() {
        let g = grid(2048, -51.2, 51.2);
        let psi0 = gaussian_packet(&g, &PacketSpec::new(0.0, 0.0, 2.0)).unwrap();
        let a: Vec<Complex64> = psi0
            .amplitudes()
            .iter()
            .zip(g.x())
            .map(|(c, &x)| {
                if x >= 0.0 {
                    *c
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        let mut psi = WaveFunction::new(g.clone(), a).unwrap();
        psi.normalize();
        let fit = momentum_tail_diagnostic(&psi).unwrap();
        assert!((fit.exponent + 2.0).abs() < 0.3, "{fit:?}");
        assert!(matches!(
            momentum_tail_diagnostic(&psi0),
            Err(ObservableError::InsufficientTail { .. })
        ));
    }

    #[test]
    fn diffusion_check_arithmetic() {
        let g = grid(256, -20.0, 20.0);
        let p = make_profile(ProfileKind::Gaussian { sigma_mu: 1.0 }, 5.0, &g).unwrap();
        let times = [0.0, 0.1, 0.2, 0.3];
        let mu2 = [0.3, 0.3, 0.3, 0.3];
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| times.iter().map(|t| 1.0 + i as f64 + 3.0 * t).collect())
            .collect();
        let est = diffusion_check(&times, &rows, &mu2, &p).unwrap();
        assert!((est.fitted_slope - 3.0).abs() < 1e-12);
        assert!((est.predicted - 3.0).abs() < 1e-12);
        assert!(est.relative_deviation.abs() < 1e-12);
        assert!(est.slope_stderr < 1e-12);
        let step = make_profile(ProfileKind::Step, 5.0, &g).unwrap();
        assert_eq!(
            diffusion_check(&times, &rows, &mu2, &step).unwrap_err(),
            ObservableError::StepProfile
        );
    }
}
