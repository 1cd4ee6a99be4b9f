//! Run configuration files (TOML). Parsing collects every problem found
//! rather than stopping at the first.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;
use toml::{Table, Value};

use crate::ensemble::{
    interaction_complete, EnsembleSpec, ReflectionWindow, WignerAveraging, DEFAULT_MAX_WORK,
};
use crate::grid::{PacketSpec, SpatialGrid, UnitsConfig};
use crate::measurement::{
    make_profile, parse_grid_table, LocalOscillator, MeasurementProfile, ProfileKind,
};
use crate::physmap::{CavityParams, DipoleParams, ModeShape};
use crate::propagator::{
    default_dt, uniform_times, EdgePolicy, PotentialKind, PotentialSpec, Propagator,
    TrajectorySpec, Unraveling,
};
use crate::zeno::ZenoInputs;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(Violations),
}

/// All problems found in one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Violations(pub Vec<String>);

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} configuration error(s)", self.0.len())?;
        for v in &self.0 {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    SingleTrajectory,
    Ensemble,
    ZenoCurve,
    DiffusionCheck,
    PhysmapReport,
}

impl Experiment {
    pub const ALL: [(&'static str, Experiment); 5] = [
        ("single-trajectory", Experiment::SingleTrajectory),
        ("ensemble", Experiment::Ensemble),
        ("zeno-curve", Experiment::ZenoCurve),
        ("diffusion-check", Experiment::DiffusionCheck),
        ("physmap-report", Experiment::PhysmapReport),
    ];

    pub fn name(&self) -> &'static str {
        Self::ALL
            .iter()
            .find(|(_, e)| e == self)
            .map(|(n, _)| *n)
            .unwrap_or("?")
    }

    fn sections(&self) -> &'static [&'static str] {
        match self {
            Experiment::SingleTrajectory => &[
                "units",
                "grid",
                "packet",
                "profile",
                "potential",
                "trajectory",
                "wigner",
            ],
            Experiment::Ensemble | Experiment::DiffusionCheck => &[
                "units",
                "grid",
                "packet",
                "profile",
                "potential",
                "trajectory",
                "ensemble",
                "wigner",
            ],
            Experiment::ZenoCurve => &["units", "grid", "packet", "zeno"],
            Experiment::PhysmapReport => &["units", "grid", "packet", "physmap"],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WignerConfig {
    pub samples: Vec<usize>,
    pub coarsen: (usize, usize),
    pub groups: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZenoConfig {
    pub kappas: Vec<f64>,
    pub n_traj: usize,
    pub t_final: f64,
    pub dt: Option<f64>,
    pub window: f64,
    pub samples: usize,
    pub integrity: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysmapConfig {
    pub dipole: Option<DipoleParams>,
    pub cavity: Option<CavityParams>,
    pub stark_detuning: Option<f64>,
}

/// A fully validated run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub name: String,
    /// Free-form text kept with the outputs (e.g. full-scale parameters).
    pub note: String,
    /// Raw configuration text, hashed into the manifest.
    pub source: String,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub grid: Arc<SpatialGrid>,
    pub packet: PacketSpec,
    pub profile: Option<MeasurementProfile>,
    pub potential: Option<PotentialSpec>,
    pub trajectory: Option<TrajectorySpec>,
    pub ensemble: Option<EnsembleSpec>,
    pub wigner: Option<WignerConfig>,
    pub zeno: Option<ZenoConfig>,
    pub physmap: Option<PhysmapConfig>,
}

impl RunConfig {
    /// Replaces the master seed (and the trajectory seed).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let Some(t) = &mut self.trajectory {
            t.seed = seed;
        }
        if let Some(e) = &mut self.ensemble {
            e.master_seed = seed;
        }
        self
    }
}

/// Key reader for one table; remembers which keys were consumed.
struct Sec<'a> {
    name: String,
    table: &'a Table,
    used: BTreeSet<String>,
}

impl<'a> Sec<'a> {
    fn new(name: impl Into<String>, table: &'a Table) -> Self {
        Self {
            name: name.into(),
            table,
            used: BTreeSet::new(),
        }
    }

    fn key(&self, k: &str) -> String {
        if self.name.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.name)
        }
    }

    fn get(&mut self, k: &str) -> Option<&'a Value> {
        self.used.insert(k.to_string());
        self.table.get(k)
    }

    fn has(&self, k: &str) -> bool {
        self.table.contains_key(k)
    }

    fn opt_f64(&mut self, k: &str, errs: &mut Vec<String>) -> Option<f64> {
        match self.get(k)? {
            Value::Float(v) => Some(*v),
            Value::Integer(v) => Some(*v as f64),
            other => {
                errs.push(format!(
                    "{}: expected a number, found {}",
                    self.key(k),
                    other.type_str()
                ));
                None
            }
        }
    }

    fn f64(&mut self, k: &str, errs: &mut Vec<String>) -> Option<f64> {
        if !self.has(k) {
            errs.push(format!("{}: missing required value", self.key(k)));
            self.used.insert(k.to_string());
            return None;
        }
        self.opt_f64(k, errs)
    }

    fn opt_u64(&mut self, k: &str, errs: &mut Vec<String>) -> Option<u64> {
        match self.get(k)? {
            Value::Integer(v) if *v >= 0 => Some(*v as u64),
            other => {
                errs.push(format!(
                    "{}: expected a non-negative integer, found {other}",
                    self.key(k)
                ));
                None
            }
        }
    }

    fn usize(&mut self, k: &str, errs: &mut Vec<String>) -> Option<usize> {
        if !self.has(k) {
            errs.push(format!("{}: missing required value", self.key(k)));
            self.used.insert(k.to_string());
            return None;
        }
        self.opt_u64(k, errs).map(|v| v as usize)
    }

    fn opt_bool(&mut self, k: &str, errs: &mut Vec<String>) -> Option<bool> {
        match self.get(k)? {
            Value::Boolean(b) => Some(*b),
            other => {
                errs.push(format!(
                    "{}: expected true or false, found {}",
                    self.key(k),
                    other.type_str()
                ));
                None
            }
        }
    }

    fn opt_str(&mut self, k: &str, errs: &mut Vec<String>) -> Option<&'a str> {
        match self.get(k)? {
            Value::String(s) => Some(s.as_str()),
            other => {
                errs.push(format!(
                    "{}: expected a string, found {}",
                    self.key(k),
                    other.type_str()
                ));
                None
            }
        }
    }

    fn str(&mut self, k: &str, errs: &mut Vec<String>) -> Option<&'a str> {
        if !self.has(k) {
            errs.push(format!("{}: missing required value", self.key(k)));
            self.used.insert(k.to_string());
            return None;
        }
        self.opt_str(k, errs)
    }

    fn opt_list(&mut self, k: &str, errs: &mut Vec<String>) -> Option<Vec<f64>> {
        let key = self.key(k);
        match self.get(k)? {
            Value::Array(a) => {
                let mut out = Vec::with_capacity(a.len());
                for v in a {
                    match v {
                        Value::Float(f) => out.push(*f),
                        Value::Integer(i) => out.push(*i as f64),
                        other => {
                            errs.push(format!(
                                "{key}: expected numbers, found {}",
                                other.type_str()
                            ));
                            return None;
                        }
                    }
                }
                Some(out)
            }
            other => {
                errs.push(format!(
                    "{key}: expected an array, found {}",
                    other.type_str()
                ));
                None
            }
        }
    }

    fn opt_index_list(&mut self, k: &str, errs: &mut Vec<String>) -> Option<Vec<usize>> {
        let key = self.key(k);
        let v = self.opt_list(k, errs)?;
        if v.iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
            errs.push(format!("{key}: expected non-negative integers"));
            return None;
        }
        Some(v.into_iter().map(|x| x as usize).collect())
    }

    fn opt_table(&mut self, k: &str, errs: &mut Vec<String>) -> Option<Sec<'a>> {
        let name = self.key(k);
        match self.get(k)? {
            Value::Table(t) => Some(Sec::new(name, t)),
            other => {
                errs.push(format!(
                    "{name}: expected a table, found {}",
                    other.type_str()
                ));
                None
            }
        }
    }

    fn choice<T: Copy>(
        &mut self,
        k: &str,
        options: &[(&str, T)],
        default: Option<T>,
        errs: &mut Vec<String>,
    ) -> Option<T> {
        let s = if default.is_some() {
            self.opt_str(k, errs)
        } else {
            self.str(k, errs)
        };
        match s {
            None => default,
            Some(s) => match options.iter().find(|(n, _)| *n == s) {
                Some((_, v)) => Some(*v),
                None => {
                    let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                    errs.push(format!(
                        "{}: unknown value \"{s}\" (expected one of {})",
                        self.key(k),
                        names.join(", ")
                    ));
                    None
                }
            },
        }
    }

    fn finish(self, errs: &mut Vec<String>) {
        for k in self.table.keys() {
            if !self.used.contains(k) {
                errs.push(format!("{}: unknown key", self.key(k)));
            }
        }
    }
}

trait Positive {
    fn positive(self, key: &str, errs: &mut Vec<String>) -> Self;
}

impl Positive for Option<f64> {
    fn positive(self, key: &str, errs: &mut Vec<String>) -> Self {
        match self {
            Some(x) if x.is_finite() && x > 0.0 => Some(x),
            Some(x) => {
                errs.push(format!("{key}: must be > 0, got {x}"));
                None
            }
            None => None,
        }
    }
}

/// Reads and validates a configuration file. Relative data-file paths are
/// resolved against the file's directory.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_str(&text, &base)
}

pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig, ConfigError> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| {
        ConfigError::Invalid(Violations(vec![format!("syntax: {}", e.message())]))
    })?;
    let mut errs = Vec::new();
    let cfg = build(&table, text, base, &mut errs);
    match cfg {
        Some(c) if errs.is_empty() => Ok(c),
        _ => {
            if errs.is_empty() {
                errs.push("configuration incomplete".into());
            }
            Err(ConfigError::Invalid(Violations(errs)))
        }
    }
}

fn build<'a>(
    table: &'a Table,
    text: &str,
    base: &Path,
    errs: &mut Vec<String>,
) -> Option<RunConfig> {
    let mut top = Sec::new("", table);
    let experiment = top.choice("experiment", &Experiment::ALL, None, errs);
    let name = top.opt_str("name", errs).unwrap_or("run").to_string();
    let note = top.opt_str("note", errs).unwrap_or("").to_string();
    let seed = top.opt_u64("seed", errs).unwrap_or(0);
    let output = top.opt_str("output", errs).map(|s| base.join(s));

    let allowed: &[&str] = experiment.map(|e| e.sections()).unwrap_or(&[]);
    let section = |top: &mut Sec<'a>,
                   name: &str,
                   required: bool,
                   errs: &mut Vec<String>|
     -> Option<Sec<'a>> {
        if let Some(e) = experiment.filter(|_| !allowed.contains(&name)) {
            if top.has(name) {
                top.used.insert(name.to_string());
                errs.push(format!("[{name}]: not used by experiment {}", e.name()));
            }
            return None;
        }
        let s = top.opt_table(name, errs);
        if s.is_none() && required && !top.has(name) {
            errs.push(format!("[{name}]: missing required section"));
        }
        s
    };

    let units = match section(&mut top, "units", false, errs) {
        Some(mut s) => {
            let hbar = s.opt_f64("hbar", errs).unwrap_or(1.0);
            let mass = s.opt_f64("mass", errs).unwrap_or(1.0);
            s.finish(errs);
            match UnitsConfig::new(hbar, mass) {
                Ok(u) => Some(u),
                Err(e) => {
                    errs.push(format!("[units]: {e}"));
                    None
                }
            }
        }
        None => Some(UnitsConfig::default()),
    };

    let grid = section(&mut top, "grid", true, errs).and_then(|mut s| {
        let n = s.usize("n", errs);
        let lo = s.f64("x_min", errs);
        let hi = s.f64("x_max", errs);
        s.finish(errs);
        match SpatialGrid::shared(n?, lo?, hi?, units?) {
            Ok(g) => Some(g),
            Err(e) => {
                errs.push(format!("[grid]: {e}"));
                None
            }
        }
    });

    let packet = section(&mut top, "packet", true, errs).and_then(|mut s| {
        let x0 = s.f64("x0", errs);
        let p0 = s.f64("p0", errs);
        let sx = s.f64("sigma_x", errs);
        s.finish(errs);
        let p = PacketSpec::new(x0?, p0?, sx?);
        if let Some(g) = &grid {
            if let Err(e) = p.validate(g) {
                errs.push(format!("[packet]: {e}"));
            }
        }
        Some(p)
    });

    let profile = section(&mut top, "profile", true, errs).and_then(|mut s| {
        let kappa = s.f64("kappa", errs);
        let kind = s.choice(
            "kind",
            &[
                ("step", 0),
                ("gaussian", 1),
                ("constant", 2),
                ("tabulated", 3),
            ],
            None,
            errs,
        );
        let kind = match kind {
            Some(0) => Some(ProfileKind::Step),
            Some(1) => s
                .f64("sigma_mu", errs)
                .positive("profile.sigma_mu", errs)
                .map(|sigma_mu| ProfileKind::Gaussian { sigma_mu }),
            Some(2) => s
                .f64("value", errs)
                .map(|value| ProfileKind::Constant { value }),
            Some(3) => {
                let file = s.str("file", errs);
                match (file, &grid) {
                    (Some(f), Some(g)) => read_table(&base.join(f), g, "profile.file", errs)
                        .map(|samples| ProfileKind::Tabulated { samples }),
                    _ => None,
                }
            }
            _ => None,
        };
        s.finish(errs);
        match make_profile(kind?, kappa?, grid.as_ref()?) {
            Ok(p) => Some(p),
            Err(e) => {
                errs.push(format!("[profile]: {e}"));
                None
            }
        }
    });

    let potential = match section(&mut top, "potential", false, errs) {
        Some(mut s) => {
            let kind = s.choice(
                "kind",
                &[("none", 0), ("step", 1), ("gaussian", 2), ("tabulated", 3)],
                Some(0),
                errs,
            );
            let kind = match kind {
                Some(0) => Some(PotentialKind::None),
                Some(1) => s.f64("v0", errs).map(|v0| PotentialKind::Step { v0 }),
                Some(2) => {
                    let v0 = s.f64("v0", errs);
                    let sigma = s.f64("sigma", errs).positive("potential.sigma", errs);
                    v0.zip(sigma)
                        .map(|(v0, sigma)| PotentialKind::Gaussian { v0, sigma })
                }
                Some(3) => {
                    let file = s.str("file", errs);
                    match (file, &grid) {
                        (Some(f), Some(g)) => read_table(&base.join(f), g, "potential.file", errs)
                            .map(|samples| PotentialKind::Tabulated { samples }),
                        _ => None,
                    }
                }
                _ => None,
            };
            s.finish(errs);
            match (kind, &grid) {
                (Some(k), Some(g)) => match PotentialSpec::new(k, g) {
                    Ok(p) => Some(p),
                    Err(e) => {
                        errs.push(format!("[potential]: {e}"));
                        None
                    }
                },
                _ => None,
            }
        }
        None => grid.as_ref().map(|g| PotentialSpec::none(g)),
    };

    let trajectory = section(&mut top, "trajectory", true, errs).and_then(|mut s| {
        let unr = s.choice(
            "unraveling",
            &[("homodyne", 0), ("jump", 1), ("stochastic-potential", 2)],
            None,
            errs,
        );
        let phase = s.opt_f64("phase", errs);
        let lo_amp = s.opt_f64("lo_amplitude", errs);
        let lo_phase = s.opt_f64("lo_phase", errs);
        let unraveling = match unr {
            Some(0) => {
                if lo_amp.is_some() || lo_phase.is_some() {
                    errs.push(
                        "trajectory: lo_amplitude/lo_phase apply to the jump unraveling only"
                            .into(),
                    );
                }
                Some(Unraveling::Homodyne {
                    phase: phase.unwrap_or(0.0),
                })
            }
            Some(1) => {
                if phase.is_some() {
                    errs.push("trajectory.phase: applies to the homodyne unraveling only".into());
                }
                match LocalOscillator::new(lo_amp.unwrap_or(0.0), lo_phase.unwrap_or(0.0)) {
                    Ok(lo) => Some(Unraveling::Jump {
                        local_oscillator: lo,
                    }),
                    Err(e) => {
                        errs.push(format!("trajectory: {e}"));
                        None
                    }
                }
            }
            Some(2) => {
                if phase.is_some() || lo_amp.is_some() || lo_phase.is_some() {
                    errs.push(
                        "trajectory: phase/lo settings do not apply to stochastic-potential".into(),
                    );
                }
                Some(Unraveling::StochasticPotential)
            }
            _ => None,
        };
        let t_final = s.f64("t_final", errs);
        let dt = s.opt_f64("dt", errs).positive("trajectory.dt", errs);
        let n_samples = s.opt_u64("samples", errs);
        let times = s.opt_list("sample_times", errs);
        if n_samples.is_some() && times.is_some() {
            errs.push("trajectory: give either samples or sample_times, not both".into());
        }
        let policy = s.choice(
            "edge_policy",
            &[("abort", EdgePolicy::Abort), ("record", EdgePolicy::Record)],
            Some(EdgePolicy::Abort),
            errs,
        );
        let band = s.opt_f64("edge_band", errs);
        s.finish(errs);
        let t_final = t_final?;
        let kappa = profile.as_ref().map(|p| p.kappa()).unwrap_or(0.0);
        let dt = dt.unwrap_or_else(|| grid.as_ref().map(|g| default_dt(g, kappa)).unwrap_or(1.0));
        let times =
            times.unwrap_or_else(|| uniform_times(t_final, n_samples.unwrap_or(11) as usize));
        let mut spec = TrajectorySpec::new(unraveling?, dt, t_final, seed)
            .with_samples(times)
            .with_edge_policy(policy?);
        spec.edge_band = band;
        Some(spec)
    });

    if let (Some(prof), Some(pot), Some(traj)) = (&profile, &potential, &trajectory) {
        if let Err(e) = Propagator::new(prof, pot, traj) {
            errs.push(format!("[trajectory]: {e}"));
        }
    }

    let n_samples = trajectory
        .as_ref()
        .map(|t| t.sample_times.len())
        .unwrap_or(0);
    let wigner = match section(&mut top, "wigner", false, errs) {
        Some(mut s) => {
            let all = s.opt_bool("all", errs);
            let list = s.opt_index_list("samples", errs);
            let coarsen = s.opt_index_list("coarsen", errs);
            let groups = s.opt_u64("groups", errs).unwrap_or(2) as usize;
            s.finish(errs);
            let samples = match (all, list) {
                (Some(true), Some(_)) => {
                    errs.push("wigner: give either all = true or samples, not both".into());
                    vec![]
                }
                (Some(true), None) => (0..n_samples).collect(),
                (_, Some(l)) => l,
                (_, None) => vec![],
            };
            if let Some(&i) = samples.iter().find(|&&i| i >= n_samples) {
                errs.push(format!(
                    "wigner.samples: index {i} out of range (there are {n_samples} samples)"
                ));
            }
            let coarsen = match coarsen.as_deref() {
                None => (4, 4),
                Some([a, b]) if *a > 0 && *b > 0 => (*a, *b),
                Some(_) => {
                    errs.push("wigner.coarsen: expected two positive integers".into());
                    (1, 1)
                }
            };
            if let Some(g) = &grid {
                let n = 2 * g.n_points();
                if n % coarsen.0 != 0 || n % coarsen.1 != 0 {
                    errs.push(format!("wigner.coarsen: factors must divide {n}"));
                }
            }
            if groups == 0 {
                errs.push("wigner.groups: must be at least 1".into());
            }
            Some(WignerConfig {
                samples,
                coarsen,
                groups,
            })
        }
        None => match experiment {
            Some(Experiment::SingleTrajectory) => Some(WignerConfig {
                samples: (0..n_samples).collect(),
                coarsen: (1, 1),
                groups: 1,
            }),
            _ => None,
        },
    };

    let ensemble = section(
        &mut top,
        "ensemble",
        matches!(experiment, Some(Experiment::Ensemble | Experiment::DiffusionCheck)),
        errs,
    )
    .and_then(|mut s| {
        let n_traj = s.usize("n_traj", errs);
        let threshold = s.opt_f64("outcome_threshold", errs).unwrap_or(0.9);
        let share = s.opt_bool("share_prefix", errs).unwrap_or(true);
        let integrity = s.opt_bool("integrity", errs).unwrap_or(false);
        let progress = s.opt_bool("progress", errs).unwrap_or(true);
        let window = s.opt_f64("reflection_window", errs).positive("ensemble.reflection_window", errs);
        let max_work = s.opt_f64("max_work", errs).unwrap_or(DEFAULT_MAX_WORK);
        s.finish(errs);
        if n_traj == Some(0) {
            errs.push("ensemble.n_traj: must be at least 1".into());
        }
        if !(threshold > 0.5 && threshold <= 1.0) {
            errs.push(format!("ensemble.outcome_threshold: must lie in (0.5, 1], got {threshold}"));
        }
        let mut spec = EnsembleSpec::new(n_traj?, seed, trajectory.clone()?);
        spec.outcome_threshold = threshold;
        spec.share_prefix = share;
        spec.integrity = integrity;
        spec.progress = progress;
        spec.max_work = max_work;
        if let (Some(w), Some(p), Some(g)) = (window, &packet, &grid) {
            check_window(p, w, g, errs);
            let (ok, reach, needed) = interaction_complete(p, spec.trajectory.t_final, g.units().mass);
            if !ok {
                errs.push(format!(
                    "ensemble.reflection_window: interaction incomplete at t_final (packet center reaches {reach:.3}, needs {needed:.3})"
                ));
            }
            spec.reflection = Some(ReflectionWindow { packet: *p, width: w });
        }
        if let Some(w) = &wigner {
            if !w.samples.is_empty() {
                spec.wigner = Some(WignerAveraging {
                    samples: w.samples.clone(),
                    coarsen: w.coarsen,
                    groups: w.groups,
                });
            }
        }
        Some(spec)
    });

    if experiment == Some(Experiment::DiffusionCheck) {
        if let Some(p) = &profile {
            if !p.is_smooth() {
                errs.push("[profile]: diffusion-check needs a smooth profile".into());
            }
        }
        if n_samples < 3 {
            errs.push("trajectory: diffusion-check needs at least 3 samples".into());
        }
    }

    let zeno = section(&mut top, "zeno", experiment == Some(Experiment::ZenoCurve), errs).and_then(|mut s| {
        let kappas = s.opt_list("kappas", errs);
        let xis = s.opt_list("xi", errs);
        let n_traj = s.usize("n_traj", errs);
        let t_final = s.f64("t_final", errs).positive("zeno.t_final", errs);
        let dt = s.opt_f64("dt", errs).positive("zeno.dt", errs);
        let window = s.opt_f64("window", errs).positive("zeno.window", errs).unwrap_or(3.0);
        let samples = s.opt_u64("samples", errs).unwrap_or(5) as usize;
        let integrity = s.opt_bool("integrity", errs).unwrap_or(true);
        s.finish(errs);
        let p0 = packet.as_ref()?.p0;
        let kappas = match (kappas, xis) {
            (Some(k), None) => k,
            (None, Some(x)) => x
                .iter()
                .map(|&xi| ZenoInputs::kappa_for_xi(xi, p0, units.unwrap_or_default()))
                .collect(),
            (Some(_), Some(_)) => {
                errs.push("zeno: give either kappas or xi, not both".into());
                return None;
            }
            (None, None) => {
                errs.push("zeno.kappas: missing (or give zeno.xi)".into());
                return None;
            }
        };
        if kappas.is_empty() {
            errs.push("zeno.kappas: empty list".into());
        }
        if let Some(k) = kappas.iter().find(|k| !(k.is_finite() && **k >= 0.0)) {
            errs.push(format!("zeno.kappas: {k} is not a valid strength"));
        }
        if n_traj == Some(0) {
            errs.push("zeno.n_traj: must be at least 1".into());
        }
        let t_final = t_final?;
        if let (Some(g), Some(p)) = (&grid, &packet) {
            check_window(p, window, g, errs);
            let (ok, reach, needed) = interaction_complete(p, t_final, g.units().mass);
            if !ok {
                errs.push(format!(
                    "zeno.t_final: interaction incomplete (packet center reaches {reach:.3}, needs {needed:.3})"
                ));
            }
            for &k in kappas.iter().filter(|k| k.is_finite() && **k >= 0.0) {
                let dt = dt.unwrap_or_else(|| default_dt(g, k));
                let spec = TrajectorySpec::new(
                    Unraveling::Jump {
                        local_oscillator: LocalOscillator::default(),
                    },
                    dt,
                    t_final,
                    0,
                );
                if let Err(e) = spec.validate(g, k) {
                    errs.push(format!("zeno: kappa {k}: {e}"));
                }
            }
        }
        Some(ZenoConfig {
            kappas,
            n_traj: n_traj?,
            t_final,
            dt,
            window,
            samples,
            integrity,
        })
    });

    let physmap = section(
        &mut top,
        "physmap",
        experiment == Some(Experiment::PhysmapReport),
        errs,
    )
    .map(|mut s| {
        let dipole = s.opt_table("dipole", errs).and_then(|mut d| {
            let rabi = d
                .f64("rabi_max", errs)
                .positive("physmap.dipole.rabi_max", errs);
            let gamma = d
                .f64("gamma_sp", errs)
                .positive("physmap.dipole.gamma_sp", errs);
            let mode = read_mode(&mut d, errs);
            d.finish(errs);
            Some(DipoleParams {
                rabi_max: rabi?,
                gamma_sp: gamma?,
                mode: mode?,
            })
        });
        let cavity = s.opt_table("cavity", errs).and_then(|mut c| {
            let g0 = c.f64("g0", errs).positive("physmap.cavity.g0", errs);
            let detuning = c.f64("detuning", errs);
            let decay = c
                .f64("cavity_decay", errs)
                .positive("physmap.cavity.cavity_decay", errs);
            let drive = c.f64("drive", errs).positive("physmap.cavity.drive", errs);
            let gamma = c
                .f64("gamma_sp", errs)
                .positive("physmap.cavity.gamma_sp", errs);
            let mode = read_mode(&mut c, errs);
            c.finish(errs);
            if detuning == Some(0.0) {
                errs.push("physmap.cavity.detuning: must be nonzero".into());
            }
            Some(CavityParams {
                g0: g0?,
                detuning: detuning?,
                cavity_decay: decay?,
                drive: drive?,
                gamma_sp: gamma?,
                mode: mode?,
            })
        });
        let stark = s.opt_table("stark", errs).and_then(|mut st| {
            let d = st.f64("detuning", errs);
            st.finish(errs);
            d
        });
        s.finish(errs);
        if dipole.is_none() && cavity.is_none() {
            errs.push("[physmap]: needs a dipole or cavity table".into());
        }
        if stark.is_some() && cavity.is_none() {
            errs.push("physmap.stark: requires physmap.cavity".into());
        }
        if let Some(g) = &grid {
            for (name, mode) in [
                ("dipole", dipole.as_ref().map(|d| &d.mode)),
                ("cavity", cavity.as_ref().map(|c| &c.mode)),
            ] {
                if let Some(Err(e)) = mode.map(|m| m.sample(g)) {
                    errs.push(format!("physmap.{name}: {e}"));
                }
            }
        }
        PhysmapConfig {
            dipole,
            cavity,
            stark_detuning: stark,
        }
    });

    top.finish(errs);
    let experiment = experiment?;
    Some(RunConfig {
        experiment,
        name,
        note,
        source: text.to_string(),
        seed,
        output,
        grid: grid?,
        packet: packet?,
        profile,
        potential,
        trajectory,
        ensemble,
        wigner,
        zeno,
        physmap,
    })
}

fn read_mode(s: &mut Sec<'_>, errs: &mut Vec<String>) -> Option<ModeShape> {
    let kind = s.choice("mode", &[("gaussian", 0), ("standing", 1)], None, errs);
    match kind? {
        0 => {
            let center = s.opt_f64("mode_center", errs).unwrap_or(0.0);
            let width = s.f64("mode_width", errs);
            Some(ModeShape::Gaussian {
                center,
                width: width?,
            })
        }
        _ => {
            let k = s.f64("wavenumber", errs);
            let phase = s.opt_f64("mode_phase", errs).unwrap_or(0.0);
            Some(ModeShape::Standing {
                wavenumber: k?,
                phase,
            })
        }
    }
}

fn read_table(
    path: &Path,
    grid: &SpatialGrid,
    key: &str,
    errs: &mut Vec<String>,
) -> Option<Vec<f64>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            errs.push(format!("{key}: cannot read {}: {e}", path.display()));
            return None;
        }
    };
    match parse_grid_table(&text, grid) {
        Ok(v) if v.len() == grid.n_points() => Some(v),
        Ok(v) => {
            errs.push(format!(
                "{key}: {} rows, grid has {}",
                v.len(),
                grid.n_points()
            ));
            None
        }
        Err(e) => {
            errs.push(format!("{key}: {e}"));
            None
        }
    }
}

fn check_window(p: &PacketSpec, width: f64, g: &SpatialGrid, errs: &mut Vec<String>) {
    let sp = p.sigma_p(g.units());
    if sp < 4.0 * g.dp() {
        errs.push(format!(
            "reflection window: sigma_p = {sp:.4} is below 4 dp = {:.4}; enlarge the grid",
            4.0 * g.dp()
        ));
    }
    let (lo, hi) = (-p.p0 - width * sp, -p.p0 + width * sp);
    if lo < -g.p_max() || hi > g.p_max() - g.dp() {
        errs.push(format!(
            "reflection window [{lo:.3}, {hi:.3}] exceeds the momentum band +-{:.3}",
            g.p_max()
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
experiment = "ensemble"
seed = 3
[grid]
n = 256
x_min = -64.0
x_max = 64.0
[packet]
x0 = -15.0
p0 = 1.0
sigma_x = 5.0
[profile]
kind = "step"
kappa = 5.0
[trajectory]
unraveling = "jump"
t_final = 10.0
samples = 5
edge_policy = "record"
[ensemble]
n_traj = 8
"#;

    fn parse(text: &str) -> Result<RunConfig, Vec<String>> {
        parse_config_str(text, Path::new(".")).map_err(|e| match e {
            ConfigError::Invalid(v) => v.0,
            other => vec![other.to_string()],
        })
    }

    #[test]
    fn base_config_parses() {
        let c = parse(BASE).unwrap();
        assert_eq!(c.experiment, Experiment::Ensemble);
        let p = c.profile.unwrap();
        assert!(p.is_step() && p.kappa() == 5.0);
        let t = c.trajectory.unwrap();
        assert_eq!(t.sample_times.len(), 5);
        assert_eq!(t.dt, default_dt(&c.grid, 5.0));
        assert_eq!(c.ensemble.unwrap().n_traj, 8);
        assert!(c.potential.unwrap().is_zero());
    }

    #[test]
    fn measurement_and_potential_coexist() {
        let text = format!("{BASE}\n[potential]\nkind = \"step\"\nv0 = 0.5\n");
        let c = parse(&text).unwrap();
        assert!(!c.potential.unwrap().is_zero());
    }

    #[test]
    fn all_violations_are_reported() {
        let text = BASE
            .replace("kappa = 5.0", "kappa = 5.0\nkapa = 1.0")
            .replace("x0 = -15.0", "x0 = -63.0")
            .replace("n_traj = 8", "n_traj = 0\nworkers = 4")
            .replace("t_final = 10.0", "t_final = 10.0\ndt = 0.5");
        let errs = parse(&text).unwrap_err();
        let has = |s: &str| errs.iter().any(|e| e.contains(s));
        assert!(has("profile.kapa: unknown key"), "{errs:?}");
        assert!(has("ensemble.workers: unknown key"), "{errs:?}");
        assert!(has("[packet]"), "{errs:?}");
        assert!(has("n_traj"), "{errs:?}");
        assert!(has("[trajectory]"), "{errs:?}");
        assert!(errs.len() >= 5);
    }

    #[test]
    fn missing_and_misplaced_sections() {
        let errs = parse("experiment = \"ensemble\"\n[zeno]\nn_traj = 1\n").unwrap_err();
        let has = |s: &str| errs.iter().any(|e| e.contains(s));
        assert!(has("[grid]: missing"));
        assert!(has("[ensemble]: missing"));
        assert!(has("[zeno]: not used"));
        let errs = parse("experiment = \"bogus\"").unwrap_err();
        assert!(errs[0].contains("unknown value"));
    }

    #[test]
    fn reflection_window_checks() {
        let text = BASE.replace("n_traj = 8", "n_traj = 8\nreflection_window = 3.0");
        let errs = parse(&text).unwrap_err();
        assert!(
            errs.iter().any(|e| e.contains("interaction incomplete")),
            "{errs:?}"
        );
    }

    #[test]
    fn diffusion_needs_smooth_profile() {
        let text = BASE.replace("\"ensemble\"", "\"diffusion-check\"");
        let errs = parse(&text).unwrap_err();
        assert!(errs.iter().any(|e| e.contains("smooth")));
    }

    #[test]
    fn seed_override() {
        let c = parse(BASE).unwrap().with_seed(99);
        assert_eq!(c.ensemble.unwrap().master_seed, 99);
        assert_eq!(c.trajectory.unwrap().seed, 99);
    }

    #[test]
    fn zeno_from_xi() {
        let text = r#"
experiment = "zeno-curve"
[grid]
n = 1024
x_min = -320.0
x_max = 320.0
[packet]
x0 = -40.0
p0 = 1.0
sigma_x = 10.0
[zeno]
xi = [1.0, 4.0]
n_traj = 4
t_final = 80.0
"#;
        let c = parse(text).unwrap();
        assert_eq!(c.zeno.unwrap().kappas, vec![0.5, 2.0]);
    }
}
