//! Ensemble moments from the three unravelings of the same measurement.
//! They differ trajectory by trajectory and agree on average.

use qmreflect::ensemble::{run_ensemble, EnsembleSpec, Problem};
use qmreflect::grid::{gaussian_packet, PacketSpec, SpatialGrid, UnitsConfig};
use qmreflect::measurement::{make_profile, LocalOscillator, ProfileKind};
use qmreflect::propagator::{default_dt, EdgePolicy, PotentialSpec, TrajectorySpec, Unraveling};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n_traj = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(64);
    let grid = SpatialGrid::shared(256, -64.0, 64.0, UnitsConfig::default())?;
    let kappa = 5.0;
    let problem = Problem {
        psi0: gaussian_packet(&grid, &PacketSpec::new(-15.0, 1.0, 5.0))?,
        profile: make_profile(ProfileKind::Step, kappa, &grid)?,
        potential: PotentialSpec::none(&grid),
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    for u in [
        Unraveling::Homodyne { phase: 0.0 },
        Unraveling::Jump {
            local_oscillator: LocalOscillator::default(),
        },
        Unraveling::StochasticPotential,
    ] {
        let traj = TrajectorySpec::new(u, default_dt(&grid, kappa), 30.0, 0)
            .with_samples(vec![10.0, 20.0, 30.0])
            .with_edge_policy(EdgePolicy::Record);
        let res = run_ensemble(&problem, &EnsembleSpec::new(n_traj, 1, traj), workers)?;
        for (m, s) in res.mean.iter().zip(&res.stderr) {
            println!(
                "{:21} t {:4.1}  <p> {:7.4} +- {:.4}  <p2> {:7.4} +- {:.4}",
                u.name(),
                m.time,
                m.mean_p,
                s.mean_p,
                m.mean_p2,
                s.mean_p2
            );
        }
    }
    Ok(())
}
