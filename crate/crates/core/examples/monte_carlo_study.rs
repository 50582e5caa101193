// Runs a small Monte Carlo study and prints the rate table in markdown.
// Raise `replications` to 2000 and `b` to 999 for table-quality numbers.
//
// ```bash
// cargo run --release --example monte_carlo_study
// ```

use minp::inference::MinPVariant;
use minp::mcstudy::{emit_se_table, emit_table, run_study, DgpSpec, McConfig, TableFormat};
use minp::models::Family;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let configs: Vec<McConfig> = [vec![0.0, 0.0], vec![0.3, 0.0]]
        .into_iter()
        .map(|gamma| McConfig {
            spec: DgpSpec::new(Family::Linear, 100, gamma),
            replications: 40,
            b: 199,
            alpha: 0.05,
            seed: 2024,
            variants: MinPVariant::ALL.to_vec(),
            include_reference: true,
        })
        .collect();
    let results = configs.iter().map(run_study).collect::<Result<Vec<_>, _>>()?;
    print!("{}", emit_table(&results, TableFormat::Markdown));
    println!();
    println!("Monte Carlo standard errors:");
    print!("{}", emit_se_table(&results, TableFormat::Markdown));
    for r in &results {
        println!("mean seconds per replication: {:.4}", r.diagnostics.mean_runtime_secs);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
