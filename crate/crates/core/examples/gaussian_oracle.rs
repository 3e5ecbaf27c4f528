//! Exact phase-space propagation of a Gaussian state along a noise path,
//! checked against the truncated Fock-space engine on the same trajectory.

use cvdecouple::engine::evolve_trajectory;
use cvdecouple::fock::{fidelity, gaussian_mixture_state, FockSpace, GaussianMixtureSpec};
use cvdecouple::gaussian::{trajectory_fidelities, GaussianState};
use cvdecouple::noise::{sample_trajectory, NoiseConfig, NoiseKind};
use cvdecouple::protocol::InterventionSchedule;
use num_complex::Complex64;

fn main() -> cvdecouple::Result<()> {
    let cfg = NoiseConfig {
        kind: NoiseKind::Combined,
        sigma_disp: 0.05,
        sigma_sqz: 0.05,
        segments: 20,
        seed: 3,
        ..Default::default()
    };
    let spec = GaussianMixtureSpec::coherent(Complex64::new(0.5, 0.2));
    let schedule = InterventionSchedule::combined(20)?;
    let space = FockSpace::new(60)?;
    let rho0 = gaussian_mixture_state(&spec, &space)?;
    let g0 = GaussianState::from_spec(&spec)?;

    let mut worst = 0.0f64;
    for id in 0..5 {
        let t = sample_trajectory(&cfg, id)?;
        let exact = trajectory_fidelities(&g0, &t, &schedule)?;
        let fock: Vec<f64> = evolve_trajectory(&rho0, &t, &schedule)?
            .iter()
            .map(|s| fidelity(&rho0, s))
            .collect::<cvdecouple::Result<_>>()?;
        let d = exact
            .iter()
            .zip(&fock)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(d);
        println!(
            "trajectory {id}: final F = {:.6} (phase space) {:.6} (Fock)",
            exact[20], fock[20]
        );
    }
    println!("largest curve difference {worst:.2e}");
    Ok(())
}
