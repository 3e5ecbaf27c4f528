//! Wigner functions on a phase-space grid: a cat-like Gaussian mixture and a
//! Fock state, their normalization, and CSV export.
//!
//! `cargo run --example wigner_grid -- OUT_DIR` writes `cat.csv` and `fock3.csv`.

use cvdecouple::fock::{
    gaussian_mixture_state, DensityMatrix, FockSpace, GaussianMixtureSpec, MixtureComponent,
};
use cvdecouple::wigner::{wigner_of_mixture, wigner_of_state, PhaseSpaceGrid};
use num_complex::Complex64;
use std::f64::consts::FRAC_1_SQRT_2;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = PhaseSpaceGrid::square(5.0, 101)?;
    let space = FockSpace::new(60)?;
    let lobe = |re: f64| MixtureComponent {
        weight: 0.5,
        center: Complex64::new(re, 0.0),
        spread: FRAC_1_SQRT_2,
    };
    let spec = GaussianMixtureSpec::new(vec![lobe(1.5), lobe(-1.5)])?;

    let direct = wigner_of_mixture(&spec, &grid)?;
    let via_fock = wigner_of_state(&gaussian_mixture_state(&spec, &space)?, &grid)?;
    println!(
        "mixture: ∬W = {:.6}  purity = {:.4}",
        direct.integral(),
        direct.purity()
    );
    println!(
        "closed form vs Fock path: max |ΔW| = {:.2e}",
        direct.max_abs_diff(&via_fock)?
    );

    let fock3 = wigner_of_state(&DensityMatrix::fock(space, 3)?, &grid)?;
    println!(
        "|3⟩: ∬W = {:.6}  W(0,0) = {:.6} (−1/π)",
        fock3.integral(),
        fock3.at(50, 50)
    );

    if let Some(dir) = std::env::args().nth(1) {
        let dir = std::path::PathBuf::from(dir);
        std::fs::create_dir_all(&dir)?;
        direct.save_csv(&dir.join("cat.csv"))?;
        fock3.save_csv(&dir.join("fock3.csv"))?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}
