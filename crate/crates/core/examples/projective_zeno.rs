//! Repeated projection onto `x < 0`: per-step leakage falls as `dt²`.

use qmreflect::grid::{gaussian_packet, PacketSpec, SpatialGrid, UnitsConfig};
use qmreflect::zeno::projective_limit_check;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = SpatialGrid::shared(256, -32.0, 32.0, UnitsConfig::default())?;
    let psi = gaussian_packet(&grid, &PacketSpec::new(-4.0, 1.0, 1.0))?;
    let t = 0.5;
    let mut prev: Option<f64> = None;
    for dt in [1e-3, 5e-4, 2.5e-4, 1.25e-4] {
        let r = projective_limit_check(&psi, dt, (t / dt).round() as usize)?;
        let d = r.mean_detection();
        let ratio = prev.map(|p| format!("{:.3}", p / d)).unwrap_or_default();
        println!(
            "dt {dt:.3e}  detection {d:.4e}  survival {:.6}  {ratio}",
            r.survival
        );
        prev = Some(d);
    }
    Ok(())
}
