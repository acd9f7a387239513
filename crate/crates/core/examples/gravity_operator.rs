//! Vertical gravity of a prism and the forward operator of a small 3D grid.

use nalgebra::DVector;
use seqgp::grid::Grid;
use seqgp::operators::{banerjee_gz, gravity_operator, GravityConfig, Prism};

fn main() -> seqgp::error::Result<()> {
    let cfg = GravityConfig::default();
    let prism = Prism::new((-25.0, 25.0), (-25.0, 25.0), (-150.0, -100.0))?;
    println!("50 m cube of 500 kg/m^3 excess density, 100 m below the top face");
    for h in [0.0, 50.0, 100.0, 200.0] {
        let gz = banerjee_gz(&prism, [0.0, 0.0, h], 500.0, &cfg)?;
        println!("  station height {h:>5} m: gz = {gz:+.6} mGal");
    }

    // 6 x 6 x 3 cells of 50 m, top face at z = 0
    let grid = Grid::new(3, &[6, 6, 3], &[50.0; 3], &[25.0, 25.0, -125.0])?;
    let stations: Vec<[f64; 3]> = (0..6).map(|i| [25.0 + 50.0 * i as f64, 150.0, 1.0]).collect();
    let g = gravity_operator(&grid, &stations, &cfg)?;
    let uniform = DVector::from_element(grid.len(), 2000.0);
    println!("\nprofile over a uniform 2000 kg/m^3 block");
    for (s, v) in stations.iter().zip(g.apply(&uniform).iter()) {
        println!("  x = {:>5} m: {v:+.4} mGal", s[0]);
    }
    Ok(())
}
