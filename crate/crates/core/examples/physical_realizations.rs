//! Resonance-fluorescence and dispersive-cavity mappings to a measurement
//! profile, with the regime checks and the matched Stark beam.

use qmreflect::grid::{gaussian_packet, PacketSpec, SpatialGrid, UnitsConfig};
use qmreflect::physmap::{
    cavity_to_measurement, dipole_diffusion, dipole_to_measurement, matched_stark,
    measurement_diffusion, stark_cancellation, CavityParams, DipoleParams, ModeShape,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let units = UnitsConfig::default();
    let grid = SpatialGrid::shared(512, -16.0, 16.0, units)?;
    let packet = PacketSpec::new(-2.0, 1.0, 1.0);
    let density = gaussian_packet(&grid, &packet)?.position_density();

    let dipole = DipoleParams {
        rabi_max: 3.0,
        gamma_sp: 1.0,
        mode: ModeShape::Gaussian {
            center: 0.0,
            width: std::f64::consts::FRAC_1_SQRT_2,
        },
    };
    let d = dipole_to_measurement(&dipole, &grid)?;
    println!("dipole: kappa = {}", d.kappa);
    println!(
        "  diffusion dipole      {:.6e}",
        dipole_diffusion(&dipole, &grid, &density)?
    );
    println!(
        "  diffusion measurement {:.6e}",
        measurement_diffusion(&d.profile, &density)
    );

    let cavity = CavityParams {
        g0: 1.0,
        detuning: 100.0,
        cavity_decay: 10.0,
        drive: 0.5,
        gamma_sp: 1.0,
        mode: ModeShape::Standing {
            wavenumber: 0.5,
            phase: 0.0,
        },
    };
    let c = cavity_to_measurement(&cavity, &grid, &packet)?;
    println!("cavity: alpha = {}, kappa = {:.3e}", c.alpha, c.kappa);
    print!("{}", c.regime.to_text());
    let stark = matched_stark(&cavity, &c, 50.0)?;
    let residual = stark_cancellation(&stark, &c.mean_potential, units)?;
    let worst = residual.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    println!("stark residual {worst:.2e}");
    Ok(())
}
