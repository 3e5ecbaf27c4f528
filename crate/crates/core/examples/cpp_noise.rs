//! Compound-Poisson noise paths: reproducible streams, jump statistics, and
//! the sample covariance against the analytic `σ²(1 − η)^{|k − k'|}` kernel.

use cvdecouple::noise::{
    empirical_covariance, sample_trajectory, KernelTable, KernelUnits, NoiseConfig,
};

fn main() -> cvdecouple::Result<()> {
    let cfg = NoiseConfig {
        segments: 30,
        seed: 9,
        ..Default::default()
    };
    let t = sample_trajectory(&cfg, 0)?;
    println!("stream 0 jumps at {:?}", t.jumps);
    println!(
        "first values: {:.4} {:.4} {:.4}",
        t.alpha(0),
        t.alpha(1),
        t.alpha(2)
    );
    assert_eq!(t, sample_trajectory(&cfg, 0)?);

    let trajs = (0..20_000)
        .map(|id| sample_trajectory(&cfg, id))
        .collect::<cvdecouple::Result<Vec<_>>>()?;
    let mean_jumps = trajs.iter().map(|t| t.jumps.len()).sum::<usize>() as f64 / trajs.len() as f64;
    println!(
        "mean jumps {mean_jumps:.3} (expected {:.3})",
        cfg.eta * (cfg.segments - 1) as f64
    );

    let emp = empirical_covariance(&trajs)?;
    let exact = KernelTable::cpp(
        cfg.segments,
        cfg.sigma_disp.powi(2),
        cfg.eta,
        KernelUnits::Amplitude,
    );
    println!(" lag   empirical    analytic");
    for lag in [0, 1, 2, 5, 10] {
        println!(
            "{lag:>4}  {:.3e}  {:.3e}",
            emp.xx[(0, lag)],
            exact.xx[(0, lag)]
        );
    }
    Ok(())
}
