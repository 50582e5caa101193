// Computes the maximin direction `d` behind the one-sided t statistic
// `t_t = d'G⁻¹U` for a few covariance structures.
//
// ```bash
// cargo run --example maximin_direction
// ```

use minp::cone::maximin_direction;
use minp::linalg::SymMatrix;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let cases = [
        ("identity", SymMatrix::identity(2)),
        ("rho = 0.45", SymMatrix::from_rows(&[[1.0, 0.45], [0.45, 1.0]])?),
        ("rho = -0.45", SymMatrix::from_rows(&[[1.0, -0.45], [-0.45, 1.0]])?),
        ("unequal scales", SymMatrix::from_rows(&[[4.0, 0.0], [0.0, 1.0]])?),
    ];
    for (name, g) in cases {
        let m = maximin_direction(&g)?;
        println!(
            "{name:>15}: d = ({:.4}, {:.4})  min standardized power index = {:.4}",
            m.d[0], m.d[1], m.attained_min
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
