// Simulates chi-bar-squared level probabilities and uses them for an
// asymptotic p-value.
//
// ```bash
// cargo run --release --example chibar_weights
// ```

use minp::cone::{chibar_survival, chibar_weights, ChiBarWeights};
use minp::linalg::{RngStream, SymMatrix};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let draws = 200_000;
    let w = chibar_weights(&SymMatrix::identity(3), draws, RngStream::new(7, 0))?;
    println!("G = I3, {draws} draws: {:?}", round(&w.w));
    println!("binomial weights:      {:?}", round(&ChiBarWeights::binomial(3).w));

    // For k = 2 the weights have a closed form in the correlation.
    let rho: f64 = 0.6;
    let g = SymMatrix::from_rows(&[[1.0, rho], [rho, 1.0]])?;
    let w = chibar_weights(&g, draws, RngStream::new(7, 1))?;
    let w2 = 0.25 + rho.asin() / (2.0 * std::f64::consts::PI);
    println!("rho = {rho}: simulated w2 = {:.4}, closed form {:.4}", w.w[2], w2);

    for t in [1.0, 2.7, 5.0] {
        println!("  P(chi-bar >= {t}) = {:.4}", chibar_survival(t, &w));
    }
    Ok(())
}

fn round(w: &[f64]) -> Vec<f64> {
    w.iter().map(|v| (v * 1e4).round() / 1e4).collect()
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
