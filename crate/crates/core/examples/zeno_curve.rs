//! Coherent reflection from a step measurement, Monte Carlo against the
//! two analytic curves. Small ensembles by default; pass a trajectory count
//! to change that.

use qmreflect::grid::{PacketSpec, SpatialGrid, UnitsConfig};
use qmreflect::zeno::{reflection_curve, ZenoCurveSpec, ZenoInputs};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n_traj = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(32);
    let units = UnitsConfig::default();
    let packet = PacketSpec::new(-40.0, 1.0, 10.0);
    let spec = ZenoCurveSpec {
        grid: SpatialGrid::shared(2048, -256.0, 256.0, units)?,
        packet,
        kappas: [1.0, 6.0, 40.0]
            .iter()
            .map(|&xi| ZenoInputs::kappa_for_xi(xi, packet.p0, units))
            .collect(),
        n_traj,
        master_seed: 6,
        t_final: 80.0,
        dt: None,
        window: 3.0,
        n_samples: 2,
        integrity: false,
        workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        progress: false,
    };
    let curve = reflection_curve(&spec)?;
    print!("{}", curve.to_tsv());
    let (c, n) = curve.tracked(3.0);
    println!("tracks {} at {n} of {} points", c.name(), curve.rows.len());
    Ok(())
}
