//! Mean final fidelity against the number of interventions on a fixed noise
//! path, with a logistic fit of the points.
//!
//! `cargo run --release --example intervention_sweep -- [M]`

use cvdecouple::engine::{logistic_fit, sweep_interventions, SimConfig};
use cvdecouple::noise::NoiseConfig;

fn main() -> cvdecouple::Result<()> {
    let m: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(50);
    let base = SimConfig {
        noise: NoiseConfig {
            segments: 100,
            ..Default::default()
        },
        seed: 5,
        ..Default::default()
    };
    let rows = sweep_interventions(&base, &[1, 2, 5, 10, 20, 25, 50, 100], m)?;
    for r in &rows {
        println!(
            "n = {:>3}  F = {:.4} ± {:.4}",
            r.interventions, r.mean_final_fidelity, r.stderr
        );
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.interventions as f64, r.mean_final_fidelity))
        .collect();
    let fit = logistic_fit(&pts)?;
    println!(
        "L = {:.4}  k = {:.4}  n0 = {:.2}  converged {}",
        fit.l, fit.k, fit.n0, fit.converged
    );
    Ok(())
}
