//! A handful of homodyne trajectories on the step profile, classified as
//! reflected, transmitted or split.

use qmreflect::ensemble::{classify_outcome, derive_seed};
use qmreflect::grid::{gaussian_packet, PacketSpec, SpatialGrid, UnitsConfig};
use qmreflect::measurement::{make_profile, ProfileKind};
use qmreflect::observables::moments;
use qmreflect::propagator::{
    default_dt, propagate, EdgePolicy, PotentialSpec, TrajectorySpec, Unraveling,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = SpatialGrid::shared(512, -80.0, 80.0, UnitsConfig::default())?;
    let psi0 = gaussian_packet(&grid, &PacketSpec::new(-15.0, 1.0, 5.0))?;
    let kappa = 5.0;
    let profile = make_profile(ProfileKind::Step, kappa, &grid)?;
    let none = PotentialSpec::none(&grid);
    for i in 0..8 {
        let seed = derive_seed(7, i);
        let spec = TrajectorySpec::new(
            Unraveling::Homodyne { phase: 0.0 },
            default_dt(&grid, kappa),
            30.0,
            seed,
        )
        .with_edge_policy(EdgePolicy::Record);
        let run = propagate(&psi0, &profile, &none, &spec)?;
        let last = &run.samples[0].state;
        let m = moments(last, 30.0)?;
        println!(
            "seed {seed:20}  {:11}  <x> {:8.3}  <p> {:7.4}  var_p {:.4}",
            classify_outcome(last, 0.9).name(),
            m.mean_x,
            m.mean_p,
            m.var_p
        );
    }
    Ok(())
}
