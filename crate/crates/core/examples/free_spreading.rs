//! Free Gaussian packet: simulated moments against the closed form.

use qmreflect::grid::{gaussian_packet, PacketSpec, SpatialGrid, UnitsConfig};
use qmreflect::measurement::{make_profile, ProfileKind};
use qmreflect::observables::moments;
use qmreflect::propagator::{
    default_dt, free_gaussian_moments, propagate, uniform_times, PotentialSpec, TrajectorySpec,
    Unraveling,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let units = UnitsConfig::default();
    let grid = SpatialGrid::shared(512, -80.0, 80.0, units)?;
    let packet = PacketSpec::new(-20.0, 1.0, 2.0);
    let psi0 = gaussian_packet(&grid, &packet)?;
    let profile = make_profile(ProfileKind::Constant { value: 0.0 }, 0.0, &grid)?;
    let spec = TrajectorySpec::new(
        Unraveling::Homodyne { phase: 0.0 },
        default_dt(&grid, 0.0),
        20.0,
        0,
    )
    .with_samples(uniform_times(20.0, 5));
    let run = propagate(&psi0, &profile, &PotentialSpec::none(&grid), &spec)?;

    println!("t\t<x> sim\t<x> exact\tvar sim\tvar exact");
    for s in &run.samples {
        let m = moments(&s.state, s.time)?;
        let (x, v) = free_gaussian_moments(
            packet.x0,
            packet.p0,
            packet.sigma_x,
            s.time,
            units.hbar,
            units.mass,
        );
        println!(
            "{:.1}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            s.time, m.mean_x, x, m.var_x, v
        );
    }
    Ok(())
}
