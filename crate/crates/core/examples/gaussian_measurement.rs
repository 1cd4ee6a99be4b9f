//! Homodyne trajectories through a Gaussian measurement profile. Even
//! profiles can leave the particle in a left/right superposition.

use qmreflect::ensemble::derive_seed;
use qmreflect::grid::{gaussian_packet, PacketSpec, SpatialGrid, UnitsConfig};
use qmreflect::measurement::{make_profile, ProfileKind};
use qmreflect::propagator::{
    default_dt, propagate, EdgePolicy, PotentialSpec, TrajectorySpec, Unraveling,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = SpatialGrid::shared(512, -80.0, 80.0, UnitsConfig::default())?;
    let psi0 = gaussian_packet(&grid, &PacketSpec::new(-18.0, 1.0, 5.0))?;
    let kappa = 5.0;
    let profile = make_profile(ProfileKind::Gaussian { sigma_mu: 1.0 }, kappa, &grid)?;
    let none = PotentialSpec::none(&grid);
    println!("seed\tleft\tright");
    for i in 0..10 {
        let seed = derive_seed(11, i);
        let spec = TrajectorySpec::new(
            Unraveling::Homodyne { phase: 0.0 },
            default_dt(&grid, kappa),
            36.0,
            seed,
        )
        .with_edge_policy(EdgePolicy::Record);
        let run = propagate(&psi0, &profile, &none, &spec)?;
        let psi = &run.samples[0].state;
        let left: f64 = psi
            .position_density()
            .iter()
            .zip(grid.x())
            .filter(|(_, &x)| x < 0.0)
            .map(|(d, _)| d * grid.dx())
            .sum();
        println!("{seed}\t{left:.3}\t{:.3}", 1.0 - left);
    }
    Ok(())
}
