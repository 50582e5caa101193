// Projects score vectors onto the non-negative orthant in the `G⁻¹` metric
// and prints the cone statistic with its active set and KKT multipliers.
//
// ```bash
// cargo run --example cone_projection
// ```

use minp::cone::{project_orthant, OrthantProjector};
use minp::linalg::SymMatrix;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    // With strong positive correlation a negative second coordinate pulls the
    // projection of the first one upward: t_c = 19 although |U|² = 2.
    let g = SymMatrix::from_rows(&[[1.0, 0.9], [0.9, 1.0]])?;
    let p = project_orthant(&[1.0, -1.0], &g)?;
    println!("G = [[1, .9], [.9, 1]], U = (1, -1)");
    println!("  u_bar = {:?}  t_c = {:.4}  active = {:?}", p.u_bar, p.t_c, p.active_set);
    println!("  multipliers = {:?}", p.multipliers);
    assert!((p.t_c - 19.0).abs() < 1e-9);

    // A projector keeps G⁻¹ and its factor, so repeated projections are cheap.
    let g3 = SymMatrix::from_rows(&[[2.0, 0.3, -0.4], [0.3, 1.0, 0.2], [-0.4, 0.2, 1.5]])?;
    let mut proj = OrthantProjector::new(&g3)?;
    for u in [[0.5, 0.5, 0.5], [-1.0, 0.4, 2.0], [-1.0, -1.0, -1.0]] {
        let p = proj.project(&u)?;
        let rounded: Vec<String> = p.u_bar.iter().map(|v| format!("{v:.4}")).collect();
        println!("U = {u:?} -> u_bar = [{}], t_c = {:.4}", rounded.join(", "), p.t_c);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
