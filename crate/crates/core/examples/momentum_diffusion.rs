//! Heating of a narrow packet held on the flank of a Gaussian profile,
//! compared with `2ħ²κ⟨μ′²⟩`.

use qmreflect::ensemble::{run_ensemble, EnsembleSpec, Problem};
use qmreflect::grid::{gaussian_packet, PacketSpec, SpatialGrid, UnitsConfig};
use qmreflect::measurement::{make_profile, ProfileKind};
use qmreflect::observables::diffusion_check;
use qmreflect::propagator::{default_dt, uniform_times, PotentialSpec, TrajectorySpec, Unraveling};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = SpatialGrid::shared(512, -8.0, 8.0, UnitsConfig::default())?;
    let kappa = 5.0;
    let profile = make_profile(ProfileKind::Gaussian { sigma_mu: 1.0 }, kappa, &grid)?;
    let problem = Problem {
        psi0: gaussian_packet(&grid, &PacketSpec::new(1.0, 0.0, 0.2))?,
        profile: profile.clone(),
        potential: PotentialSpec::none(&grid),
    };
    let traj = TrajectorySpec::new(
        Unraveling::Homodyne { phase: 0.0 },
        default_dt(&grid, kappa),
        0.02,
        0,
    )
    .with_samples(uniform_times(0.02, 6));
    let res = run_ensemble(&problem, &EnsembleSpec::new(256, 5, traj), 1)?;
    let est = diffusion_check(
        &res.times,
        &res.p2_series(),
        &res.mean_mu_prime_sq,
        &profile,
    )?;
    println!(
        "fitted    {:.4} +- {:.4}",
        est.fitted_slope, est.slope_stderr
    );
    println!("predicted {:.4}", est.predicted);
    println!("deviation {:+.2}%", 100.0 * est.relative_deviation);
    Ok(())
}
