//! Filter-function prediction for displacement noise under parity control:
//! build `Σ_n` from the kick kernel, convolve the input Wigner function with
//! the Gaussian filter, and compare with a Monte Carlo ensemble.
//!
//! `cargo run --release --example filter_prediction -- [M]`

use cvdecouple::engine::{batch_wigner_stats, run_ensemble, SimConfig};
use cvdecouple::filter::{
    convolve, gaussian_filter, sigma_matrix, Filter, Kernel, SwitchingFunction,
};
use cvdecouple::fock::{gaussian_mixture_state, GaussianMixtureSpec};
use cvdecouple::noise::{KernelTable, KernelUnits, NoiseConfig};
use cvdecouple::protocol::ProtocolKind;
use cvdecouple::wigner::wigner_of_state;
use num_complex::Complex64;

fn main() -> cvdecouple::Result<()> {
    let m: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(500);
    let n = 6;
    let cfg = SimConfig {
        noise: NoiseConfig {
            eta: 0.5,
            sigma_disp: 0.15,
            segments: n,
            ..Default::default()
        },
        protocol: ProtocolKind::Parity,
        initial_state: GaussianMixtureSpec::coherent(Complex64::new(1.0, 0.0)),
        trajectories: m,
        batches: 20.min(m),
        seed: 4,
        ..Default::default()
    };

    let f = SwitchingFunction::from_schedule(&cfg.schedule()?, 1.0)?;
    let table = KernelTable::cpp(
        n,
        cfg.noise.sigma_disp.powi(2),
        cfg.noise.eta,
        KernelUnits::Amplitude,
    );
    let spec = sigma_matrix(&f, &Kernel::Kicks(table))?;
    println!("signs {:?}", f.signs());
    println!(
        "Σ_n = [[{:.5}, {:.5}], [{:.5}, {:.5}]]",
        spec.a, spec.c, spec.c, spec.b
    );

    let w0 = wigner_of_state(
        &gaussian_mixture_state(&cfg.initial_state, &cfg.space()?)?,
        &cfg.grid,
    )?;
    let prediction = convolve(&Filter::Field(gaussian_filter(&spec, &cfg.grid)?), &w0)?;
    let mc = run_ensemble(&cfg)?;
    let (_, stderr) = batch_wigner_stats(&mc.batch_states, &cfg.grid)?;
    println!(
        "M = {m}: L1(prediction, MC) = {:.3e}   L1 of MC stderr = {:.3e}   L1(input, MC) = {:.3e}",
        prediction.l1_distance(&mc.averaged_wigner)?,
        stderr.abs_integral(),
        w0.l1_distance(&mc.averaged_wigner)?
    );
    Ok(())
}
