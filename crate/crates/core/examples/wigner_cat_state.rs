//! Wigner function of a two-packet superposition: marginals, and the
//! fringe period `2πħ/d` along `p` at the midpoint. Writes the field to
//! `cat.bin` with its sidecar when given an output path.

use qmreflect::grid::{SpatialGrid, UnitsConfig, WaveFunction};
use qmreflect::observables::{wigner, wigner_integrity};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = SpatialGrid::shared(512, -32.0, 32.0, UnitsConfig::default())?;
    let d = 20.0;
    let mut psi = WaveFunction::from_fn(grid, |x| {
        ((-(x - d / 2.0).powi(2) / 4.0).exp() + (-(x + d / 2.0).powi(2) / 4.0).exp()).into()
    })?;
    psi.normalize();
    let integrity = wigner_integrity(&psi)?;
    println!("{integrity:?}");

    let w = wigner(&psi, (1, 1))?;
    let i0 =
        w.x.iter()
            .position(|&x| x.abs() < 1e-12)
            .expect("grid contains x = 0");
    let mut crossings = Vec::new();
    for m in 1..w.n_p() {
        let (a, b) = (w.at(i0, m - 1), w.at(i0, m));
        if w.p[m].abs() < 1.0 && a.signum() != b.signum() {
            crossings.push(w.p[m - 1] + w.dp * a / (a - b));
        }
    }
    let period =
        2.0 * (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64;
    println!(
        "fringe period {period:.5}, expected {:.5}, p bin {:.5}",
        2.0 * std::f64::consts::PI / d,
        w.dp
    );
    println!("min W = {:.4e}", w.min());

    if let Some(out) = std::env::args().nth(1) {
        let dir = std::path::Path::new(&out);
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("cat.bin"), w.to_le_bytes())?;
        std::fs::write(dir.join("cat.txt"), w.sidecar(0.0))?;
    }
    Ok(())
}
