//! Executes a [`RunConfig`] and writes its output bundle.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, Experiment, RunConfig};
use crate::ensemble::{
    reflection_probability, run_ensemble, EnsembleError, EnsembleResult, Problem,
};
use crate::grid::gaussian_packet;
use crate::observables::{
    diffusion_check, moments, wigner, wigner_integrity, MomentSeries, WignerIntegrity,
};
use crate::physmap::{
    cavity_to_measurement, dipole_diffusion, dipole_to_measurement, matched_stark,
    measurement_diffusion, stark_cancellation,
};
use crate::propagator::{EdgePolicy, EdgeReport, NormStats, SampleEvent, Trajectory, Unraveling};
use crate::propagator::{NoiseStream, Propagator};
use crate::zeno::{log_grid, mode_match, reflection_curve, Curve, ZenoCurveSpec, ZenoInputs};

/// Wigner marginal tolerance of the integrity monitor.
pub const MARGINAL_TOL: f64 = 1e-8;
/// Wigner normalization tolerance of the integrity monitor.
pub const WIGNER_NORM_TOL: f64 = 1e-6;
/// Largest accepted drift of the squared norm at sample times.
pub const NORM_DRIFT_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Io { .. } => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Monitor {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Files written by one run, with their hashes.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputBundle {
    pub dir: PathBuf,
    pub config_hash: String,
    /// `(relative path, sha256)`, sorted by path.
    pub files: Vec<(String, String)>,
    pub monitors: Vec<Monitor>,
}

impl OutputBundle {
    pub fn passed(&self) -> bool {
        self.monitors.iter().all(|m| m.passed)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex(&Sha256::digest(data))
}

/// Hash of the code version, configuration text and effective seed.
pub fn config_hash(config: &RunConfig) -> String {
    let mut h = Sha256::new();
    h.update(env!("CARGO_PKG_VERSION").as_bytes());
    h.update(b"\n");
    h.update(config.source.as_bytes());
    h.update(format!("\nseed={}\n", config.seed).as_bytes());
    hex(&h.finalize())
}

struct Writer {
    dir: PathBuf,
    files: Vec<(String, String)>,
    log: String,
    monitors: Vec<Monitor>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self, RunError> {
        fs::create_dir_all(dir).map_err(|source| RunError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            log: String::new(),
            monitors: Vec::new(),
        })
    }

    fn write(&mut self, rel: &str, data: &[u8]) -> Result<(), RunError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| RunError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        fs::write(&path, data).map_err(|source| RunError::Io { path, source })?;
        self.files.push((rel.to_string(), sha256_hex(data)));
        Ok(())
    }

    fn line(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.log, "{key} = {value}");
    }

    fn monitor(&mut self, name: &str, passed: bool, detail: String) {
        let _ = writeln!(
            self.log,
            "monitor {name}: {} ({detail})",
            if passed { "pass" } else { "FAIL" }
        );
        self.monitors.push(Monitor {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    fn finish(
        mut self,
        config: &RunConfig,
        failure: Option<&Failure>,
    ) -> Result<OutputBundle, RunError> {
        let log = std::mem::take(&mut self.log);
        self.write("run.log", log.as_bytes())?;
        let failure = failure.cloned().or_else(|| {
            let failed: Vec<Monitor> = self
                .monitors
                .iter()
                .filter(|m| !m.passed)
                .cloned()
                .collect();
            (!failed.is_empty()).then(|| Failure {
                kind: "monitor".into(),
                experiment: config.experiment.name().into(),
                message: format!("{} monitor(s) failed", failed.len()),
                monitors: failed,
            })
        });
        if let Some(f) = &failure {
            let json = serde_json::to_string_pretty(f).expect("serializable failure record");
            self.write("failure.json", json.as_bytes())?;
        }
        let hash = config_hash(config);
        self.files.sort();
        let mut m = String::new();
        let _ = writeln!(m, "config_sha256 {hash}");
        let _ = writeln!(m, "version {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(m, "experiment {}", config.experiment.name());
        let _ = writeln!(m, "name {}", config.name);
        for (f, h) in &self.files {
            let _ = writeln!(m, "{h}  {f}");
        }
        let dir = self.dir.clone();
        fs::write(dir.join("manifest.txt"), m).map_err(|source| RunError::Io {
            path: dir.join("manifest.txt"),
            source,
        })?;
        Ok(OutputBundle {
            dir,
            config_hash: hash,
            files: self.files,
            monitors: self.monitors,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
struct Failure {
    kind: String,
    experiment: String,
    message: String,
    monitors: Vec<Monitor>,
}

/// Runs the experiment and writes the bundle to `out`. Numerical aborts
/// still produce a bundle with `failure.json` before returning the error.
pub fn run(config: &RunConfig, workers: usize, out: &Path) -> Result<OutputBundle, RunError> {
    let mut w = Writer::new(out)?;
    w.line("experiment", config.experiment.name());
    w.line("name", &config.name);
    if !config.note.is_empty() {
        w.line("note", &config.note);
    }
    w.line("seed", config.seed);
    let g = &config.grid;
    w.line(
        "grid",
        format!(
            "n={} x=[{}, {}) dx={} dp={}",
            g.n_points(),
            g.x_min(),
            g.x_max(),
            g.dx(),
            g.dp()
        ),
    );
    let res = match config.experiment {
        Experiment::SingleTrajectory => single(config, &mut w),
        Experiment::Ensemble | Experiment::DiffusionCheck => ensemble(config, workers, &mut w),
        Experiment::ZenoCurve => zeno(config, workers, &mut w),
        Experiment::PhysmapReport => physmap(config, &mut w),
    };
    match res {
        Ok(()) => w.finish(config, None),
        Err(RunError::Numerical(msg)) => {
            let f = Failure {
                kind: "abort".into(),
                experiment: config.experiment.name().into(),
                message: msg.clone(),
                monitors: vec![],
            };
            w.line("abort", &msg);
            w.finish(config, Some(&f))?;
            Err(RunError::Numerical(msg))
        }
        Err(e) => Err(e),
    }
}

fn numerical(e: impl std::fmt::Display) -> RunError {
    RunError::Numerical(e.to_string())
}

fn edge_monitor(w: &mut Writer, policy: EdgePolicy, edge: &EdgeReport) {
    let detail = format!("max edge mass {:.3e}, policy {:?}", edge.max_mass, policy);
    match policy {
        // Under the record policy the edge mass is a diagnostic, not a trip.
        EdgePolicy::Record => {
            w.line("edge_max_mass", format!("{:.3e}", edge.max_mass));
            if let Some(s) = edge.first_violation {
                w.line("edge_first_violation_step", s);
            }
        }
        EdgePolicy::Abort => w.monitor("edge", edge.passed(), detail),
    }
}

fn norm_monitor(w: &mut Writer, norm: &NormStats) {
    w.monitor(
        "norm",
        norm.max_drift <= NORM_DRIFT_TOL,
        format!("max drift {:.3e} at samples", norm.max_drift),
    );
}

fn integrity_monitor(w: &mut Writer, i: Option<WignerIntegrity>) {
    if let Some(i) = i {
        w.monitor(
            "wigner_integrity",
            i.passes(MARGINAL_TOL, WIGNER_NORM_TOL),
            format!(
                "x marginal {:.3e}, p marginal {:.3e}, normalization {:.3e}, purity {:.3e}",
                i.x_marginal_error, i.p_marginal_error, i.normalization_error, i.purity_error
            ),
        );
    }
}

fn single(config: &RunConfig, w: &mut Writer) -> Result<(), RunError> {
    let profile = config.profile.as_ref().expect("validated");
    let potential = config.potential.as_ref().expect("validated");
    let spec = config.trajectory.as_ref().expect("validated");
    let psi0 = gaussian_packet(&config.grid, &config.packet).map_err(numerical)?;
    let prop = Propagator::new(profile, potential, spec).map_err(numerical)?;
    let frames = config
        .wigner
        .as_ref()
        .map(|c| (c.samples.clone(), c.coarsen));
    let mut rows = Vec::new();
    let mut images = Vec::new();
    let mut worst: Option<WignerIntegrity> = None;
    let mut obs_err = None;
    let mut obs = |ev: &SampleEvent| {
        let r = (|| {
            rows.push(moments(ev.state, ev.time)?);
            let i = wigner_integrity(ev.state)?;
            worst = Some(worst.map_or(i, |wv| wv.worst(i)));
            if let Some((samples, coarsen)) = &frames {
                if samples.contains(&ev.index) {
                    images.push((ev.index, ev.time, wigner(ev.state, *coarsen)?));
                }
            }
            Ok::<_, crate::observables::ObservableError>(())
        })();
        if let Err(e) = r {
            obs_err.get_or_insert(e);
        }
    };
    let mut traj = Trajectory::new(prop, &psi0, NoiseStream::new(spec.seed)).map_err(numerical)?;
    let r = traj.run_to_end(&mut obs);
    if let Some(e) = obs_err {
        return Err(numerical(e));
    }
    r.map_err(numerical)?;
    let outcome = traj.finish();
    w.write("moments.tsv", MomentSeries { rows }.to_tsv().as_bytes())?;
    for (index, time, f) in &images {
        w.write(&format!("wigner/frame_{index:04}.bin"), &f.to_le_bytes())?;
        w.write(
            &format!("wigner/frame_{index:04}.txt"),
            f.sidecar(*time).as_bytes(),
        )?;
    }
    let dt = spec.effective_dt();
    match spec.unraveling {
        Unraveling::Homodyne { .. } => {
            let mut s = String::from("t\tdr\n");
            for (k, dr) in outcome.record.iter().enumerate() {
                let _ = writeln!(s, "{:.9e}\t{:.12e}", (k + 1) as f64 * dt, dr);
            }
            w.write("record.tsv", s.as_bytes())?;
        }
        Unraveling::Jump { .. } => {
            let mut s = String::from("t\n");
            for t in &outcome.jump_times {
                let _ = writeln!(s, "{t:.9e}");
            }
            w.write("jumps.tsv", s.as_bytes())?;
        }
        Unraveling::StochasticPotential => {}
    }
    let label = crate::ensemble::classify_outcome(&outcome.final_state, 0.9);
    w.line("unraveling", spec.unraveling.name());
    w.line("dt", dt);
    w.line("steps", outcome.steps);
    w.line("outcome", label.name());
    w.line("jumps", outcome.jump_times.len());
    edge_monitor(w, spec.edge_policy, &outcome.edge);
    norm_monitor(w, &outcome.norm);
    integrity_monitor(w, worst);
    Ok(())
}

fn ensemble_error(e: EnsembleError) -> RunError {
    numerical(e)
}

fn write_ensemble(w: &mut Writer, res: &EnsembleResult) -> Result<(), RunError> {
    w.write("moments.tsv", res.moments_tsv().as_bytes())?;
    w.write("outcomes.tsv", res.outcomes_tsv().as_bytes())?;
    for avg in &res.wigner {
        w.write(
            &format!("wigner/mean_s{:04}.bin", avg.sample),
            &avg.mean.to_le_bytes(),
        )?;
        w.write(
            &format!("wigner/mean_s{:04}.txt", avg.sample),
            avg.mean.sidecar(avg.time).as_bytes(),
        )?;
        for (gi, (g, n)) in avg.groups.iter().zip(&avg.group_counts).enumerate() {
            let rel = format!("wigner/group{gi}_s{:04}", avg.sample);
            w.write(&format!("{rel}.bin"), &g.to_le_bytes())?;
            let side = format!("{}trajectories {n}\n", g.sidecar(avg.time));
            w.write(&format!("{rel}.txt"), side.as_bytes())?;
        }
    }
    let (r, t, s) = res.label_counts();
    let n = res.trajectories.len();
    w.line("n_traj", n);
    w.line(
        "labels",
        format!(
            "reflected {r} ({:.4}) transmitted {t} ({:.4}) split {s} ({:.4})",
            r as f64 / n as f64,
            t as f64 / n as f64,
            s as f64 / n as f64
        ),
    );
    if res.reflection_window.is_some() {
        let (p, se) = reflection_probability(res).map_err(ensemble_error)?;
        w.line("coherent_reflection", format!("{p:.6} +- {se:.6}"));
    }
    Ok(())
}

fn ensemble(config: &RunConfig, workers: usize, w: &mut Writer) -> Result<(), RunError> {
    let spec = config.ensemble.as_ref().expect("validated");
    let problem = Problem {
        psi0: gaussian_packet(&config.grid, &config.packet).map_err(numerical)?,
        profile: config.profile.clone().expect("validated"),
        potential: config.potential.clone().expect("validated"),
    };
    let res = run_ensemble(&problem, spec, workers).map_err(ensemble_error)?;
    w.line("unraveling", spec.trajectory.unraveling.name());
    w.line("dt", spec.trajectory.effective_dt());
    write_ensemble(w, &res)?;
    if config.experiment == Experiment::DiffusionCheck {
        let d = diffusion_check(
            &res.times,
            &res.p2_series(),
            &res.mean_mu_prime_sq,
            &problem.profile,
        )
        .map_err(numerical)?;
        let mut s = String::new();
        let _ = writeln!(s, "fitted_slope {:.9e}", d.fitted_slope);
        let _ = writeln!(s, "slope_stderr {:.9e}", d.slope_stderr);
        let _ = writeln!(s, "predicted {:.9e}", d.predicted);
        let _ = writeln!(s, "relative_deviation {:.6e}", d.relative_deviation);
        let _ = writeln!(s, "profile_drift {:.6e}", d.profile_drift);
        w.write("diffusion.txt", s.as_bytes())?;
        w.line(
            "diffusion_relative_deviation",
            format!("{:.4}", d.relative_deviation),
        );
    }
    let norm = res
        .trajectories
        .iter()
        .fold(NormStats::default(), |a, r| NormStats {
            max_drift: a.max_drift.max(r.norm.max_drift),
            ..a
        });
    edge_monitor(w, spec.trajectory.edge_policy, &res.edge);
    norm_monitor(w, &norm);
    integrity_monitor(w, res.integrity);
    Ok(())
}

fn zeno(config: &RunConfig, workers: usize, w: &mut Writer) -> Result<(), RunError> {
    let z = config.zeno.as_ref().expect("validated");
    let spec = ZenoCurveSpec {
        grid: config.grid.clone(),
        packet: config.packet,
        kappas: z.kappas.clone(),
        n_traj: z.n_traj,
        master_seed: config.seed,
        t_final: z.t_final,
        dt: z.dt,
        window: z.window,
        n_samples: z.samples,
        integrity: z.integrity,
        workers,
        progress: true,
    };
    let curve = reflection_curve(&spec).map_err(numerical)?;
    w.write("zeno_curve.tsv", curve.to_tsv().as_bytes())?;
    let mut a = String::from("xi\tclosed_form_reflection\tmode_match_reflection\n");
    let units = config.grid.units();
    for xi in log_grid(1e-2, 1e4, 121) {
        let k = ZenoInputs::kappa_for_xi(xi, config.packet.p0, units);
        let m = mode_match(&ZenoInputs::new(k, config.packet.p0, units).map_err(numerical)?)
            .map_err(numerical)?;
        let _ = writeln!(
            a,
            "{xi:.6e}\t{:.9e}\t{:.9e}",
            1.0 - m.p_det_closed_form,
            m.r.norm_sqr()
        );
    }
    w.write("zeno_analytic.tsv", a.as_bytes())?;
    let (tracked, count) = curve.tracked(3.0);
    w.line("monotone_3sigma", curve.is_monotone(3.0));
    w.line(
        "agreement_closed_form",
        curve.agreement(Curve::ClosedForm, 3.0),
    );
    w.line("agreement_mode_match", curve.agreement(Curve::Oracle, 3.0));
    w.line(
        "tracked_curve",
        format!("{} ({count} of {})", tracked.name(), curve.rows.len()),
    );
    if let Some(r) = curve.rows.iter().find(|r| r.kappa == 0.0) {
        w.line(
            "xi0_row",
            format!(
                "mc {:.4}, closed form {:.4}, mode match {:.4} differ by construction",
                r.mc, r.closed_form, r.oracle
            ),
        );
    }
    let worst = curve
        .rows
        .iter()
        .filter_map(|r| r.integrity)
        .reduce(|a, b| a.worst(b));
    integrity_monitor(w, worst);
    let edge = curve
        .rows
        .iter()
        .map(|r| r.edge.max_mass)
        .fold(0.0, f64::max);
    w.line("edge_max_mass", format!("{edge:.3e}"));
    Ok(())
}

fn physmap(config: &RunConfig, w: &mut Writer) -> Result<(), RunError> {
    let pm = config.physmap.as_ref().expect("validated");
    let g = &config.grid;
    let x = g.x();
    let psi = gaussian_packet(g, &config.packet).map_err(numerical)?;
    let rho = psi.position_density();
    let mut report = String::new();
    if let Some(d) = &pm.dipole {
        let m = dipole_to_measurement(d, g).map_err(numerical)?;
        let dp_force = dipole_diffusion(d, g, &rho).map_err(numerical)?;
        let dp_meas = measurement_diffusion(&m.profile, &rho);
        let _ = writeln!(report, "[dipole]");
        let _ = writeln!(report, "kappa {:.9e}", m.kappa);
        let _ = writeln!(report, "diffusion_dipole {dp_force:.9e}");
        let _ = writeln!(report, "diffusion_measurement {dp_meas:.9e}");
        let rel = if dp_force != 0.0 {
            (dp_force - dp_meas).abs() / dp_force.abs()
        } else {
            0.0
        };
        let _ = writeln!(report, "diffusion_relative_difference {rel:.3e}");
        let _ = writeln!(report, "cusps {}", m.cusps.len());
        if !m.cusps.is_empty() {
            let _ = writeln!(
                report,
                "warning mode function crosses zero; |mu'| = |g'| fails at the cusps"
            );
        }
        let mut t = String::from("x\tg_re\tg_im\tmu\tdmu_dx\n");
        let (mu, dmu) = (m.profile.samples(), m.profile.derivative_samples());
        for (i, xi) in x.iter().enumerate() {
            let _ = writeln!(
                t,
                "{:.9e}\t{:.12e}\t{:.12e}\t{:.12e}\t{:.12e}",
                xi, m.mode[i].re, m.mode[i].im, mu[i], dmu[i]
            );
        }
        w.write("dipole_profile.tsv", t.as_bytes())?;
        w.line("dipole_kappa", format!("{:.9e}", m.kappa));
        if m.cusps.is_empty() {
            w.monitor(
                "diffusion_identity",
                rel <= 1e-10,
                format!("relative difference {rel:.3e}"),
            );
        }
    }
    if let Some(c) = &pm.cavity {
        let m = cavity_to_measurement(c, g, &config.packet).map_err(numerical)?;
        let _ = writeln!(report, "[cavity]");
        let _ = writeln!(report, "alpha {:.9e}", m.alpha);
        let _ = writeln!(report, "kappa {:.9e}", m.kappa);
        let peak = m.mean_potential.iter().cloned().fold(f64::MIN, f64::max);
        let _ = writeln!(report, "mean_potential_peak {peak:.9e}");
        let _ = writeln!(report, "[regime]");
        report.push_str(&m.regime.to_text());
        let residual = match pm.stark_detuning {
            Some(delta) => {
                let s = matched_stark(c, &m, delta).map_err(numerical)?;
                let r = stark_cancellation(&s, &m.mean_potential, g.units()).map_err(numerical)?;
                let max = r.iter().map(|v| v.abs()).fold(0.0, f64::max);
                let _ = writeln!(report, "[stark]");
                let _ = writeln!(report, "detuning {delta:.9e}");
                let _ = writeln!(
                    report,
                    "rabi_sq_peak {:.9e}",
                    s.rabi_sq.iter().cloned().fold(0.0, f64::max)
                );
                let _ = writeln!(report, "max_residual {max:.3e}");
                Some(r)
            }
            None => None,
        };
        let mut t = String::from("x\tmu\tmean_potential\tresidual\n");
        for i in 0..x.len() {
            let r = residual.as_ref().map_or(f64::NAN, |r| r[i]);
            let _ = writeln!(
                t,
                "{:.9e}\t{:.12e}\t{:.12e}\t{:.12e}",
                x[i],
                m.profile.samples()[i],
                m.mean_potential[i],
                r
            );
        }
        w.write("cavity_profile.tsv", t.as_bytes())?;
        w.line("cavity_kappa", format!("{:.9e}", m.kappa));
        w.line(
            "regime",
            if m.regime.passed() {
                "pass"
            } else {
                "violated (reported)"
            },
        );
    }
    w.write("physmap.txt", report.as_bytes())?;
    Ok(())
}
