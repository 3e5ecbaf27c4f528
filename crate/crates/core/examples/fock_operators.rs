//! Ladder operators, displacement and squeeze unitaries in a truncated Fock
//! space, and the sign flips that parity and quarter rotations induce.

use cvdecouple::fock::{self, FockSpace};
use cvdecouple::protocol::ControlOp;
use num_complex::Complex64;

fn main() -> cvdecouple::Result<()> {
    let space = FockSpace::new(60)?;
    let a = fock::annihilation(&space);
    let n = fock::number(&space);
    println!(
        "dim {}  guard band starts at level {}",
        space.dim(),
        space.guard_start()
    );
    println!(
        "‖a†a − N‖ = {:.1e}",
        fock::max_abs_diff(&fock::matmul(&a.adjoint(), &a), &n)
    );

    let alpha = Complex64::new(0.6, -0.4);
    let d = fock::displacement(&space, alpha)?;
    let d_neg = fock::displacement(&space, -alpha)?;
    let pi = ControlOp::PARITY.matrix(&space);
    let flipped = fock::matmul(&pi, &fock::matmul(&d, &pi));
    println!(
        "‖Π D(α) Π − D(−α)‖ = {:.1e}",
        fock::max_abs_diff(&flipped, &d_neg)
    );

    let z = Complex64::new(0.25, 0.0);
    let s = fock::squeeze(&space, z)?;
    let r = ControlOp::quarter().matrix(&space);
    let rotated = fock::matmul(&r.adjoint(), &fock::matmul(&s, &r));
    println!(
        "‖R† S(z) R − S(−z)‖ = {:.1e}",
        fock::max_abs_diff(&rotated, &fock::squeeze(&space, -z)?)
    );
    println!(
        "unitarity deviation of D(α): {:.1e}",
        fock::unitarity_deviation(&d)
    );

    // Too large for this truncation: the guard reports the size that would do.
    match fock::displacement(&FockSpace::new(20)?, Complex64::new(3.5, 0.0)) {
        Err(e) => println!("D(3.5) at dim 20: {e}"),
        Ok(_) => println!("D(3.5) at dim 20 fits"),
    }
    Ok(())
}
