//! Many independent trajectories with deterministic seeding, reduced in
//! trajectory-index order so results do not depend on scheduling.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{PacketSpec, WaveFunction};
use crate::measurement::MeasurementProfile;
use crate::observables::{
    coherent_reflection_probability, moments, wigner, wigner_integrity, MomentRow, ObservableError,
    WignerField, WignerIntegrity,
};
use crate::propagator::{
    EdgeReport, Noise, NoiseStream, NormStats, PotentialSpec, PropagationError, Propagator,
    SampleEvent, Trajectory, TrajectorySpec,
};

/// Golden-ratio increment of the seed sequence.
pub const SEED_INCREMENT: u64 = 0x9E37_79B9_7F4A_7C15;
/// Trajectories evaluated together before their results are reduced.
const CHUNK: usize = 64;
/// Default ceiling on `n_traj · steps · n·log₂n`.
pub const DEFAULT_MAX_WORK: f64 = 2e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("trajectory {index} (seed {seed}) aborted: {source}")]
    Propagation {
        index: usize,
        seed: u64,
        #[source]
        source: PropagationError,
    },
    #[error("trajectory {index} (seed {seed}): {source}")]
    Observable {
        index: usize,
        seed: u64,
        #[source]
        source: ObservableError,
    },
    #[error(transparent)]
    Setup(#[from] PropagationError),
    #[error("invalid ensemble: {0}")]
    Invalid(String),
    #[error("estimated work {work:.2e} exceeds the budget {max:.2e}")]
    Budget { work: f64, max: f64 },
    #[error("no reflection window was configured")]
    NoReflectionWindow,
    #[error("interaction not complete: packet center reaches {reach:.3}, needs >= {needed:.3}")]
    InteractionIncomplete { reach: f64, needed: f64 },
    #[error("worker pool: {0}")]
    Pool(String),
}

/// SplitMix64 finalizer; a bijection on `u64`.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trajectory `i`. Distinct indices give distinct seeds because the
/// argument of the bijective mixer differs.
pub fn derive_seed(master: u64, i: usize) -> u64 {
    mix64(master.wrapping_add(SEED_INCREMENT.wrapping_mul(i as u64 + 1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Reflected,
    Transmitted,
    Split,
}

impl Outcome {
    pub fn name(&self) -> &'static str {
        match self {
            Outcome::Reflected => "reflected",
            Outcome::Transmitted => "transmitted",
            Outcome::Split => "split",
        }
    }
}

/// Reflected: at least `threshold` of the probability at `x < 0` moving
/// left; transmitted: at least `threshold` at `x ≥ 0`; otherwise split.
pub fn classify_outcome(psi: &WaveFunction, threshold: f64) -> Outcome {
    let g = psi.grid();
    let rho = psi.position_density();
    let total: f64 = rho.iter().sum();
    let left: f64 = rho
        .iter()
        .zip(g.x())
        .filter(|(_, &x)| x < 0.0)
        .map(|(r, _)| r)
        .sum::<f64>()
        / total;
    let mean_p: f64 = psi
        .momentum_density()
        .iter()
        .zip(g.p())
        .map(|(d, p)| d * p)
        .sum::<f64>()
        * g.dp()
        / (total * g.dx());
    if left >= threshold && mean_p < 0.0 {
        Outcome::Reflected
    } else if 1.0 - left >= threshold {
        Outcome::Transmitted
    } else {
        Outcome::Split
    }
}

/// Final-time coherent reflection settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionWindow {
    /// Initial packet; supplies `p0` and `σp = ħ/(2σx)`.
    pub packet: PacketSpec,
    /// Half-width of the window in units of `σp`.
    pub width: f64,
}

/// Whether a free packet launched at `x0` would sit at least `3σx` beyond
/// the origin by the final time.
pub fn interaction_complete(packet: &PacketSpec, t_final: f64, mass: f64) -> (bool, f64, f64) {
    let reach = packet.x0 + packet.p0 * t_final / mass;
    let needed = 3.0 * packet.sigma_x;
    (reach >= needed, reach, needed)
}

/// Ensemble-averaged Wigner frames.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerAveraging {
    /// Sample indices to average.
    pub samples: Vec<usize>,
    /// Block-averaging factors `(x, p)`.
    pub coarsen: (usize, usize),
    /// Trajectory `i` also contributes to group `i mod groups`.
    pub groups: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub n_traj: usize,
    pub master_seed: u64,
    /// Template; its `seed` is replaced per trajectory.
    pub trajectory: TrajectorySpec,
    pub outcome_threshold: f64,
    pub reflection: Option<ReflectionWindow>,
    pub wigner: Option<WignerAveraging>,
    /// Run the Wigner consistency check on every sampled state.
    pub integrity: bool,
    /// Fork jump trajectories from one shared no-jump evolution.
    pub share_prefix: bool,
    pub progress: bool,
    pub max_work: f64,
}

impl EnsembleSpec {
    pub fn new(n_traj: usize, master_seed: u64, trajectory: TrajectorySpec) -> Self {
        Self {
            n_traj,
            master_seed,
            trajectory,
            outcome_threshold: 0.9,
            reflection: None,
            wigner: None,
            integrity: false,
            share_prefix: true,
            progress: false,
            max_work: DEFAULT_MAX_WORK,
        }
    }
}

/// Initial state, measurement and potential shared by all trajectories.
#[derive(Debug, Clone)]
pub struct Problem {
    pub psi0: WaveFunction,
    pub profile: MeasurementProfile,
    pub potential: PotentialSpec,
}

/// Per-trajectory summary kept in the result.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub index: usize,
    pub seed: u64,
    pub outcome: Outcome,
    pub jumps: usize,
    pub moments: Vec<MomentRow>,
    /// `⟨(∂ₓμ)²⟩` at each sample; empty for a discontinuous profile.
    pub mu_prime_sq: Vec<f64>,
    pub reflection: Option<f64>,
    pub integrity: Option<WignerIntegrity>,
    pub edge: EdgeReport,
    pub norm: NormStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WignerAverage {
    pub sample: usize,
    pub time: f64,
    pub mean: WignerField,
    pub groups: Vec<WignerField>,
    pub group_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    pub mean: Vec<MomentRow>,
    pub stderr: Vec<MomentRow>,
    pub mean_mu_prime_sq: Vec<f64>,
    pub trajectories: Vec<TrajectoryRecord>,
    pub wigner: Vec<WignerAverage>,
    pub integrity: Option<WignerIntegrity>,
    pub edge: EdgeReport,
    pub reflection_window: Option<ReflectionWindow>,
    pub interaction_complete: Option<(bool, f64, f64)>,
}

struct SampleData {
    moments: MomentRow,
    mu_prime_sq: Option<f64>,
    integrity: Option<WignerIntegrity>,
    frame: Option<WignerField>,
}

struct Partial {
    index: usize,
    seed: u64,
    samples: Vec<SampleData>,
    outcome: Outcome,
    jumps: usize,
    reflection: Option<f64>,
    edge: EdgeReport,
    norm: NormStats,
}

struct Ctx<'a> {
    spec: &'a EnsembleSpec,
    problem: &'a Problem,
    prop: Arc<Propagator>,
}

impl Ctx<'_> {
    fn sample(&self, ev: &SampleEvent) -> Result<SampleData, ObservableError> {
        let moments = moments(ev.state, ev.time)?;
        let mu_prime_sq = if self.problem.profile.is_smooth() {
            Some(
                self.problem
                    .profile
                    .mean_sqr_derivative(&ev.state.position_density()),
            )
        } else {
            None
        };
        let integrity = if self.spec.integrity {
            Some(wigner_integrity(ev.state)?)
        } else {
            None
        };
        let frame = match &self.spec.wigner {
            Some(w) if w.samples.contains(&ev.index) => Some(wigner(ev.state, w.coarsen)?),
            _ => None,
        };
        Ok(SampleData {
            moments,
            mu_prime_sq,
            integrity,
            frame,
        })
    }

    fn observer<'s>(
        &'s self,
        out: &'s mut Vec<SampleData>,
        err: &'s mut Option<ObservableError>,
    ) -> impl FnMut(&SampleEvent) + 's {
        move |ev: &SampleEvent| {
            if err.is_some() {
                return;
            }
            match self.sample(ev) {
                Ok(d) => out.push(d),
                Err(e) => *err = Some(e),
            }
        }
    }

    fn finish<N: Noise>(
        &self,
        index: usize,
        seed: u64,
        traj: Trajectory<N>,
        samples: Vec<SampleData>,
    ) -> Result<Partial, EnsembleError> {
        let jumps = traj.jump_count();
        let out = traj.finish();
        let outcome = classify_outcome(&out.final_state, self.spec.outcome_threshold);
        let reflection = match &self.spec.reflection {
            Some(w) => Some(
                coherent_reflection_probability(
                    &out.final_state,
                    w.packet.p0,
                    w.packet.sigma_p(out.final_state.grid().units()),
                    w.width,
                )
                .map_err(|source| EnsembleError::Observable {
                    index,
                    seed,
                    source,
                })?,
            ),
            None => None,
        };
        Ok(Partial {
            index,
            seed,
            samples,
            outcome,
            jumps,
            reflection,
            edge: out.edge,
            norm: out.norm,
        })
    }

    /// Runs trajectory `index` from the start, or continues a fork.
    fn run(
        &self,
        index: usize,
        seed: u64,
        mut traj: Trajectory<NoiseStream>,
        mut samples: Vec<SampleData>,
    ) -> Result<Partial, EnsembleError> {
        let start = Instant::now();
        let mut err = None;
        let res = {
            let mut obs = self.observer(&mut samples, &mut err);
            if traj.step_index() > 0 {
                // A fork resumes just before its pending jump decision.
                traj.post_step(&mut obs)
                    .and_then(|_| traj.run_to_end(&mut obs))
            } else {
                traj.run_to_end(&mut obs)
            }
        };
        res.map_err(|source| EnsembleError::Propagation {
            index,
            seed,
            source,
        })?;
        if let Some(source) = err {
            return Err(EnsembleError::Observable {
                index,
                seed,
                source,
            });
        }
        let p = self.finish(index, seed, traj, samples)?;
        self.log(&p, start);
        Ok(p)
    }

    fn log(&self, p: &Partial, start: Instant) {
        if self.spec.progress {
            eprintln!(
                "trajectory={} seed={} outcome={} jumps={} wall_ms={:.1}",
                p.index,
                p.seed,
                p.outcome.name(),
                p.jumps,
                start.elapsed().as_secs_f64() * 1e3
            );
        }
    }
}

fn clone_sample(s: &SampleData) -> SampleData {
    SampleData {
        moments: s.moments,
        mu_prime_sq: s.mu_prime_sq,
        integrity: s.integrity,
        frame: s.frame.clone(),
    }
}

/// Runs the ensemble on a pool of `workers` threads.
pub fn run_ensemble(
    problem: &Problem,
    spec: &EnsembleSpec,
    workers: usize,
) -> Result<EnsembleResult, EnsembleError> {
    if spec.n_traj == 0 {
        return Err(EnsembleError::Invalid("n_traj must be at least 1".into()));
    }
    if !(spec.outcome_threshold > 0.5 && spec.outcome_threshold <= 1.0) {
        return Err(EnsembleError::Invalid(format!(
            "outcome threshold {} must lie in (0.5, 1]",
            spec.outcome_threshold
        )));
    }
    if let Some(w) = &spec.wigner {
        if w.groups == 0 {
            return Err(EnsembleError::Invalid(
                "wigner groups must be at least 1".into(),
            ));
        }
        if let Some(&s) = w
            .samples
            .iter()
            .find(|&&s| s >= spec.trajectory.sample_times.len())
        {
            return Err(EnsembleError::Invalid(format!(
                "wigner sample index {s} out of range"
            )));
        }
    }
    let prop = Propagator::new(&problem.profile, &problem.potential, &spec.trajectory)?;
    let n = problem.psi0.grid().n_points() as f64;
    let work = spec.n_traj as f64 * prop.n_steps().max(1) as f64 * n * n.log2();
    if work > spec.max_work {
        return Err(EnsembleError::Budget {
            work,
            max: spec.max_work,
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| EnsembleError::Pool(e.to_string()))?;
    let ctx = Ctx {
        spec,
        problem,
        prop,
    };
    let seeds: Vec<u64> = (0..spec.n_traj)
        .map(|i| derive_seed(spec.master_seed, i))
        .collect();
    let mut acc = Accumulator::new(spec, &ctx.prop);

    if ctx.prop.has_deterministic_prefix() && spec.share_prefix {
        run_shared_prefix(&ctx, &seeds, &pool, &mut acc)?;
    } else {
        for chunk in (0..spec.n_traj).collect::<Vec<_>>().chunks(CHUNK) {
            let parts: Vec<Result<Partial, EnsembleError>> = pool.install(|| {
                chunk
                    .par_iter()
                    .map(|&i| {
                        let noise = NoiseStream::new(seeds[i]);
                        let traj = Trajectory::new(ctx.prop.clone(), &problem.psi0, noise)
                            .map_err(|source| EnsembleError::Propagation {
                                index: i,
                                seed: seeds[i],
                                source,
                            })?;
                        ctx.run(i, seeds[i], traj, Vec::new())
                    })
                    .collect()
            });
            for p in parts {
                acc.push(p?);
            }
        }
    }
    let complete = spec.reflection.map(|w| {
        interaction_complete(
            &w.packet,
            ctx.prop.n_steps() as f64 * ctx.prop.dt(),
            problem.psi0.grid().units().mass,
        )
    });
    Ok(acc.finish(spec, complete))
}

enum Source {
    Shared,
    Fork(Box<Trajectory<NoiseStream>>, usize),
}

fn run_shared_prefix(
    ctx: &Ctx,
    seeds: &[u64],
    pool: &rayon::ThreadPool,
    acc: &mut Accumulator,
) -> Result<(), EnsembleError> {
    let n = seeds.len();
    let mut noises: Vec<Option<NoiseStream>> = Vec::with_capacity(n);
    let mut thresholds = Vec::with_capacity(n);
    for &s in seeds {
        let mut noise = NoiseStream::new(s);
        thresholds.push(noise.uniform());
        noises.push(Some(noise));
    }
    // The no-jump survival only decreases, so trajectories fork in order of
    // decreasing threshold.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| thresholds[b].total_cmp(&thresholds[a]).then(a.cmp(&b)));

    let mut shared = Trajectory::new(ctx.prop.clone(), &ctx.problem.psi0, NoiseStream::new(0))
        .map_err(EnsembleError::Setup)?;
    shared.set_threshold(-1.0);
    let mut shared_samples = Vec::new();
    let mut obs_err = None;
    let mut sources: Vec<Option<Source>> = (0..n).map(|_| None).collect();
    let mut next = 0;
    let mut shared_err = None;
    {
        let mut obs = ctx.observer(&mut shared_samples, &mut obs_err);
        let mut run = || -> Result<(), PropagationError> {
            shared.start(&mut obs)?;
            while !shared.is_finished() {
                shared.advance_core()?;
                let s = shared.clock().survival;
                while next < n && s < thresholds[order[next]] {
                    let i = order[next];
                    let fork = shared.fork_with(noises[i].take().expect("unforked"), thresholds[i]);
                    sources[i] = Some(Source::Fork(Box::new(fork), usize::MAX));
                    next += 1;
                }
                shared.post_step(&mut obs)?;
            }
            Ok(())
        };
        if let Err(e) = run() {
            shared_err = Some(e);
        }
    }
    // A fork carries the shared samples emitted before its step.
    let counts = fork_sample_counts(ctx, &sources);
    for (i, src) in sources.iter_mut().enumerate() {
        match src {
            Some(Source::Fork(_, c)) => *c = counts[i],
            None => *src = Some(Source::Shared),
            _ => {}
        }
    }
    let shared_err = match (shared_err, obs_err) {
        (Some(e), _) => Some(SharedError::Propagation(e)),
        (None, Some(e)) => Some(SharedError::Observable(e)),
        (None, None) => None,
    };
    let shared_part = match shared_err {
        None => Some(ctx.finish(0, 0, shared, Vec::new())?),
        Some(_) => None,
    };
    finish_forks(
        ctx,
        seeds,
        pool,
        acc,
        sources,
        &shared_samples,
        shared_part,
        shared_err,
    )
}

enum SharedError {
    Propagation(PropagationError),
    Observable(ObservableError),
}

/// Number of shared samples emitted before each fork's step.
fn fork_sample_counts(ctx: &Ctx, sources: &[Option<Source>]) -> Vec<usize> {
    let steps = ctx.prop.sample_steps();
    sources
        .iter()
        .map(|s| match s {
            Some(Source::Fork(t, _)) => steps.iter().filter(|&&k| k < t.step_index()).count(),
            _ => 0,
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn finish_forks(
    ctx: &Ctx,
    seeds: &[u64],
    pool: &rayon::ThreadPool,
    acc: &mut Accumulator,
    mut sources: Vec<Option<Source>>,
    shared_samples: &[SampleData],
    shared: Option<Partial>,
    shared_err: Option<SharedError>,
) -> Result<(), EnsembleError> {
    let n = seeds.len();
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let jobs: Vec<(usize, Source)> = (start..end)
            .map(|i| (i, sources[i].take().expect("source")))
            .collect();
        let parts: Vec<Result<Partial, EnsembleError>> = pool.install(|| {
            jobs.into_par_iter()
                .map(|(i, src)| match src {
                    Source::Shared => match (&shared, &shared_err) {
                        (_, Some(SharedError::Propagation(e))) => Err(EnsembleError::Propagation {
                            index: i,
                            seed: seeds[i],
                            source: e.clone(),
                        }),
                        (_, Some(SharedError::Observable(e))) => Err(EnsembleError::Observable {
                            index: i,
                            seed: seeds[i],
                            source: e.clone(),
                        }),
                        (Some(p), None) => Ok(Partial {
                            index: i,
                            seed: seeds[i],
                            samples: shared_samples.iter().map(clone_sample).collect(),
                            outcome: p.outcome,
                            jumps: 0,
                            reflection: p.reflection,
                            edge: p.edge,
                            norm: p.norm,
                        }),
                        (None, None) => unreachable!("shared branch without result"),
                    },
                    Source::Fork(t, count) => {
                        let prefix = shared_samples[..count].iter().map(clone_sample).collect();
                        ctx.run(i, seeds[i], *t, prefix)
                    }
                })
                .collect()
        });
        for p in parts {
            acc.push(p?);
        }
    }
    Ok(())
}

/// Per sample index: group sums, group counts and the optional total.
type FrameSums = (usize, Vec<WignerField>, Vec<usize>, Option<WignerField>);

struct Accumulator {
    times: Vec<f64>,
    records: Vec<TrajectoryRecord>,
    frames: Vec<FrameSums>,
    groups: usize,
}

impl Accumulator {
    fn new(spec: &EnsembleSpec, prop: &Propagator) -> Self {
        let times = (0..prop.sample_steps().len())
            .map(|i| prop.sample_time(i))
            .collect();
        let (frames, groups) = match &spec.wigner {
            Some(w) => (
                w.samples
                    .iter()
                    .map(|&s| (s, Vec::new(), vec![0; w.groups], None))
                    .collect(),
                w.groups,
            ),
            None => (Vec::new(), 1),
        };
        Self {
            times,
            records: Vec::with_capacity(spec.n_traj),
            frames,
            groups,
        }
    }

    fn push(&mut self, p: Partial) {
        let group = p.index % self.groups;
        for (sample, sums, counts, total) in &mut self.frames {
            if let Some(f) = p.samples.get(*sample).and_then(|s| s.frame.as_ref()) {
                if sums.is_empty() {
                    *sums = (0..self.groups).map(|_| f.zeros_like()).collect();
                    *total = Some(f.zeros_like());
                }
                sums[group].add_scaled(f, 1.0);
                counts[group] += 1;
                total.as_mut().unwrap().add_scaled(f, 1.0);
            }
        }
        let integrity = p
            .samples
            .iter()
            .filter_map(|s| s.integrity)
            .reduce(|a, b| a.worst(b));
        self.records.push(TrajectoryRecord {
            index: p.index,
            seed: p.seed,
            outcome: p.outcome,
            jumps: p.jumps,
            moments: p.samples.iter().map(|s| s.moments).collect(),
            mu_prime_sq: p.samples.iter().filter_map(|s| s.mu_prime_sq).collect(),
            reflection: p.reflection,
            integrity,
            edge: p.edge,
            norm: p.norm,
        });
    }

    fn finish(self, spec: &EnsembleSpec, complete: Option<(bool, f64, f64)>) -> EnsembleResult {
        let n = self.records.len() as f64;
        let k = self.times.len();
        let field = |r: &MomentRow, f: usize| match f {
            0 => r.mean_x,
            1 => r.mean_p,
            2 => r.mean_p2,
            3 => r.var_x,
            4 => r.var_p,
            _ => r.norm,
        };
        let build = |t: f64, v: [f64; 6]| MomentRow {
            time: t,
            mean_x: v[0],
            mean_p: v[1],
            mean_p2: v[2],
            var_x: v[3],
            var_p: v[4],
            norm: v[5],
        };
        let mut mean = Vec::with_capacity(k);
        let mut stderr = Vec::with_capacity(k);
        let mut mean_mu = Vec::with_capacity(k);
        for s in 0..k {
            let mut m = [0.0; 6];
            let mut e = [0.0; 6];
            for (f, (mf, ef)) in m.iter_mut().zip(e.iter_mut()).enumerate() {
                let (mu, se) = mean_stderr(self.records.iter().map(|r| field(&r.moments[s], f)));
                *mf = mu;
                *ef = se;
            }
            mean.push(build(self.times[s], m));
            stderr.push(build(self.times[s], e));
            if self.records.iter().all(|r| r.mu_prime_sq.len() == k) {
                mean_mu.push(self.records.iter().map(|r| r.mu_prime_sq[s]).sum::<f64>() / n);
            }
        }
        let wigner = self
            .frames
            .into_iter()
            .filter_map(|(sample, sums, counts, total)| {
                let mut mean = total?;
                let norm = 1.0 / n;
                mean.values.iter_mut().for_each(|v| *v *= norm);
                let groups = sums
                    .into_iter()
                    .zip(&counts)
                    .map(|(mut g, &c)| {
                        let w = if c > 0 { 1.0 / c as f64 } else { 0.0 };
                        g.values.iter_mut().for_each(|v| *v *= w);
                        g
                    })
                    .collect();
                Some(WignerAverage {
                    sample,
                    time: self.times[sample],
                    mean,
                    groups,
                    group_counts: counts,
                })
            })
            .collect();
        let integrity = self
            .records
            .iter()
            .filter_map(|r| r.integrity)
            .reduce(|a, b| a.worst(b));
        let edge = self
            .records
            .iter()
            .fold(EdgeReport::default(), |acc, r| EdgeReport {
                max_mass: acc.max_mass.max(r.edge.max_mass),
                first_violation: match (acc.first_violation, r.edge.first_violation) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                },
            });
        EnsembleResult {
            times: self.times,
            mean,
            stderr,
            mean_mu_prime_sq: mean_mu,
            trajectories: self.records,
            wigner,
            integrity,
            edge,
            reflection_window: spec.reflection,
            interaction_complete: complete,
        }
    }
}

/// Sample mean and standard error `s/√n`.
pub fn mean_stderr(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean coherent reflection probability at the final time and its standard error.
pub fn reflection_probability(result: &EnsembleResult) -> Result<(f64, f64), EnsembleError> {
    let (ok, reach, needed) = result
        .interaction_complete
        .ok_or(EnsembleError::NoReflectionWindow)?;
    if !ok {
        return Err(EnsembleError::InteractionIncomplete { reach, needed });
    }
    Ok(mean_stderr(
        result
            .trajectories
            .iter()
            .map(|r| r.reflection.unwrap_or(0.0)),
    ))
}

impl EnsembleResult {
    pub fn label_counts(&self) -> (usize, usize, usize) {
        let count = |o: Outcome| self.trajectories.iter().filter(|r| r.outcome == o).count();
        (
            count(Outcome::Reflected),
            count(Outcome::Transmitted),
            count(Outcome::Split),
        )
    }

    /// Averaged moments with standard errors.
    pub fn moments_tsv(&self) -> String {
        let mut s = String::from(
            "t\tmean_x\tse_mean_x\tmean_p\tse_mean_p\tmean_p2\tse_mean_p2\tvar_x\tse_var_x\tvar_p\tse_var_p\n",
        );
        for (m, e) in self.mean.iter().zip(&self.stderr) {
            let _ = writeln!(
                s,
                "{}\t{:.12e}\t{:.6e}\t{:.12e}\t{:.6e}\t{:.12e}\t{:.6e}\t{:.12e}\t{:.6e}\t{:.12e}\t{:.6e}",
                m.time, m.mean_x, e.mean_x, m.mean_p, e.mean_p, m.mean_p2, e.mean_p2, m.var_x, e.var_x, m.var_p,
                e.var_p
            );
        }
        s
    }

    /// One line per trajectory: index, seed, outcome, jumps, final reflection.
    pub fn outcomes_tsv(&self) -> String {
        let mut s = String::from("index\tseed\toutcome\tjumps\treflection\tedge_max_mass\n");
        for r in &self.trajectories {
            let refl = r
                .reflection
                .map_or_else(|| "nan".to_string(), |v| format!("{v:.12e}"));
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{:.3e}",
                r.index,
                r.seed,
                r.outcome.name(),
                r.jumps,
                refl,
                r.edge.max_mass
            );
        }
        s
    }

    /// `⟨p²⟩` series per trajectory, for [`crate::observables::diffusion_check`].
    pub fn p2_series(&self) -> Vec<Vec<f64>> {
        self.trajectories
            .iter()
            .map(|r| r.moments.iter().map(|m| m.mean_p2).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{gaussian_packet, SpatialGrid, UnitsConfig};
    use crate::measurement::{make_profile, LocalOscillator, ProfileKind};
    use crate::propagator::{propagate, uniform_times, EdgePolicy, Unraveling};
    use std::collections::HashSet;

    fn step_problem(kappa: f64) -> Problem {
        let g = SpatialGrid::shared(256, -64.0, 64.0, UnitsConfig::default()).unwrap();
        Problem {
            psi0: gaussian_packet(&g, &PacketSpec::new(-12.0, 1.0, 4.0)).unwrap(),
            profile: make_profile(ProfileKind::Step, kappa, &g).unwrap(),
            potential: PotentialSpec::none(&g),
        }
    }

    fn traj_spec(unr: Unraveling) -> TrajectorySpec {
        TrajectorySpec::new(unr, 0.005, 15.0, 0)
            .with_samples(uniform_times(15.0, 4))
            .with_edge_policy(EdgePolicy::Record)
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let seeds: HashSet<u64> = (0..100_000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(seeds.len(), 100_000);
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
        assert_ne!(derive_seed(7, 3), derive_seed(8, 3));
    }

    #[test]
    fn single_trajectory_matches_propagate() {
        let pr = step_problem(1.0);
        let spec = EnsembleSpec::new(1, 5, traj_spec(Unraveling::Homodyne { phase: 0.0 }));
        let res = run_ensemble(&pr, &spec, 1).unwrap();
        let ts = TrajectorySpec {
            seed: derive_seed(5, 0),
            ..spec.trajectory.clone()
        };
        let direct = propagate(&pr.psi0, &pr.profile, &pr.potential, &ts).unwrap();
        for (row, s) in res.mean.iter().zip(&direct.samples) {
            assert_eq!(*row, moments(&s.state, s.time).unwrap());
        }
    }

    #[test]
    fn zero_kappa_has_no_spread() {
        let pr = step_problem(0.0);
        let spec = EnsembleSpec::new(6, 1, traj_spec(Unraveling::Homodyne { phase: 0.0 }));
        let res = run_ensemble(&pr, &spec, 2).unwrap();
        let first = &res.trajectories[0].moments;
        assert!(res.trajectories.iter().all(|r| &r.moments == first));
        for e in &res.stderr {
            assert!(e.mean_x < 1e-14 && e.mean_p2 < 1e-14);
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let pr = step_problem(1.0);
        for unr in [
            Unraveling::Homodyne { phase: 0.0 },
            Unraveling::Jump {
                local_oscillator: LocalOscillator::default(),
            },
        ] {
            let mut spec = EnsembleSpec::new(70, 9, traj_spec(unr));
            spec.wigner = Some(WignerAveraging {
                samples: vec![2],
                coarsen: (4, 4),
                groups: 2,
            });
            let a = run_ensemble(&pr, &spec, 1).unwrap();
            let b = run_ensemble(&pr, &spec, 3).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn shared_prefix_is_bit_identical() {
        let pr = step_problem(1.0);
        let mut spec = EnsembleSpec::new(
            40,
            3,
            traj_spec(Unraveling::Jump {
                local_oscillator: LocalOscillator::default(),
            }),
        );
        spec.integrity = true;
        let shared = run_ensemble(&pr, &spec, 1).unwrap();
        spec.share_prefix = false;
        let independent = run_ensemble(&pr, &spec, 1).unwrap();
        assert_eq!(shared, independent);
        assert!(shared.trajectories.iter().any(|r| r.jumps > 0));
        assert!(shared.trajectories.iter().any(|r| r.jumps == 0));
    }

    #[test]
    fn labels_partition_and_classify() {
        let pr = step_problem(1.0);
        let spec = EnsembleSpec::new(
            30,
            4,
            traj_spec(Unraveling::Jump {
                local_oscillator: LocalOscillator::default(),
            }),
        );
        let res = run_ensemble(&pr, &spec, 1).unwrap();
        let (r, t, s) = res.label_counts();
        assert_eq!(r + t + s, 30);
        let free = step_problem(0.0);
        let spec = EnsembleSpec::new(
            1,
            4,
            TrajectorySpec::new(Unraveling::StochasticPotential, 0.005, 40.0, 0)
                .with_edge_policy(EdgePolicy::Record),
        );
        let res = run_ensemble(&free, &spec, 1).unwrap();
        assert_eq!(res.trajectories[0].outcome, Outcome::Transmitted);
    }

    #[test]
    fn reflection_needs_completed_interaction() {
        let g = SpatialGrid::shared(512, -128.0, 128.0, UnitsConfig::default()).unwrap();
        let pr = Problem {
            psi0: gaussian_packet(&g, &PacketSpec::new(-12.0, 1.0, 4.0)).unwrap(),
            profile: make_profile(ProfileKind::Step, 0.0, &g).unwrap(),
            potential: PotentialSpec::none(&g),
        };
        let mut spec = EnsembleSpec::new(2, 4, traj_spec(Unraveling::StochasticPotential));
        spec.reflection = Some(ReflectionWindow {
            packet: PacketSpec::new(-12.0, 1.0, 4.0),
            width: 3.0,
        });
        let res = run_ensemble(&pr, &spec, 1).unwrap();
        assert!(matches!(
            reflection_probability(&res),
            Err(EnsembleError::InteractionIncomplete { .. })
        ));
        let mut spec2 = spec.clone();
        spec2.trajectory = TrajectorySpec::new(Unraveling::StochasticPotential, 0.005, 30.0, 0)
            .with_edge_policy(EdgePolicy::Record);
        let res = run_ensemble(&pr, &spec2, 1).unwrap();
        let (p, se) = reflection_probability(&res).unwrap();
        assert!(p < 1e-6 && se == 0.0);
    }

    #[test]
    fn budget_is_enforced() {
        let pr = step_problem(1.0);
        let mut spec = EnsembleSpec::new(10, 4, traj_spec(Unraveling::StochasticPotential));
        spec.max_work = 10.0;
        assert!(matches!(
            run_ensemble(&pr, &spec, 1),
            Err(EnsembleError::Budget { .. })
        ));
    }
}
