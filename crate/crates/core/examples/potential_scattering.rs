//! Deterministic scattering off a potential step and a Gaussian barrier.
//!
//! `cargo run --release --example potential_scattering`

use qmreflect::grid::{gaussian_packet, PacketSpec, SpatialGrid, UnitsConfig, WaveFunction};
use qmreflect::measurement::{make_profile, ProfileKind};
use qmreflect::propagator::{
    default_dt, propagate, step_barrier_prediction, EdgePolicy, PotentialKind, PotentialSpec,
    TrajectorySpec, Unraveling,
};

fn split(psi: &WaveFunction) -> (f64, f64, f64) {
    let (mut wn, mut pn, mut wp, mut pp) = (0.0, 0.0, 0.0, 0.0);
    for (d, &p) in psi.momentum_density().iter().zip(psi.grid().p()) {
        if p < 0.0 {
            wn += d;
            pn += d * p;
        } else {
            wp += d;
            pp += d * p;
        }
    }
    (wn / (wn + wp), pn / wn, pp / wp)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = SpatialGrid::shared(1024, -160.0, 160.0, UnitsConfig::default())?;
    let profile = make_profile(ProfileKind::Constant { value: 0.0 }, 0.0, &grid)?;
    let cases = [
        ("step V0=0.5", PotentialKind::Step { v0: 0.5 }, -15.0, 60.0),
        (
            "gaussian V0=0.25",
            PotentialKind::Gaussian {
                v0: 0.25,
                sigma: 1.0,
            },
            -18.0,
            48.0,
        ),
    ];
    for (name, kind, x0, t) in cases {
        let psi0 = gaussian_packet(&grid, &PacketSpec::new(x0, 1.0, 5.0))?;
        let pot = PotentialSpec::new(kind.clone(), &grid)?;
        let spec = TrajectorySpec::new(
            Unraveling::Homodyne { phase: 0.0 },
            default_dt(&grid, 0.0),
            t,
            0,
        )
        .with_edge_policy(EdgePolicy::Record);
        let run = propagate(&psi0, &profile, &pot, &spec)?;
        let (r, pr, pt) = split(&run.samples[0].state);
        println!("{name}: R = {r:.4}, reflected <p> = {pr:.4}, transmitted <p> = {pt:.4}");
        if let PotentialKind::Step { v0 } = kind {
            let b = step_barrier_prediction(&psi0, v0);
            println!(
                "  stationary scattering: R = {:.4}, reflected <p> = {:.4}, transmitted <p> = {:.4}",
                b.reflection_probability, b.reflected_mean_p, b.transmitted_mean_p
            );
        }
    }
    Ok(())
}
