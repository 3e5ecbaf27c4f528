//! Truncated Fock-space operators.
//!
//! Conventions: ħ = 1, `a = (x + ip)/√2`, vacuum variances `Var(x) = Var(p) = 1/2`.
//! Rotations use the number operator, `R_θ = exp(-iθ a†a)`.

mod linalg;
mod state;

pub use linalg::{
    adj_matmul, expm, is_finite, matmul, matmul_adj, max_abs, max_abs_diff, sandwich,
    unitarity_deviation, ComplexMatrix,
};
pub use state::{
    conjugate, fidelity, gaussian_mixture_state, DensityMatrix, FidelityReference,
    GaussianMixtureSpec, MixtureComponent,
};

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Number basis truncated to `dim` levels, with a leak monitor on the top guard band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FockSpace {
    dim: usize,
    leak_threshold: f64,
}

impl FockSpace {
    pub const DEFAULT_DIM: usize = 60;
    pub const DEFAULT_LEAK_THRESHOLD: f64 = 1e-6;
    pub const MIN_DIM: usize = 4;

    pub fn new(dim: usize) -> Result<Self> {
        Self::with_leak_threshold(dim, Self::DEFAULT_LEAK_THRESHOLD)
    }

    pub fn with_leak_threshold(dim: usize, leak_threshold: f64) -> Result<Self> {
        if dim < Self::MIN_DIM {
            return Err(Error::invalid(format!(
                "fock dim must be >= {}, got {dim}",
                Self::MIN_DIM
            )));
        }
        if !(leak_threshold > 0.0 && leak_threshold < 1.0) {
            return Err(Error::invalid(format!(
                "leak threshold must lie in (0, 1), got {leak_threshold}"
            )));
        }
        Ok(Self {
            dim,
            leak_threshold,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn leak_threshold(&self) -> f64 {
        self.leak_threshold
    }

    /// Width of the guard band: the top 10% of levels, at least one.
    pub fn guard_width(&self) -> usize {
        guard_width(self.dim)
    }

    /// First level of the guard band.
    pub fn guard_start(&self) -> usize {
        self.dim - self.guard_width()
    }

    pub fn identity(&self) -> ComplexMatrix {
        ComplexMatrix::identity(self.dim, self.dim)
    }

    pub fn basis(&self, n: usize) -> DVector<Complex64> {
        let mut v = DVector::zeros(self.dim);
        v[n] = Complex64::new(1.0, 0.0);
        v
    }

    pub(crate) fn check_same(&self, other: &FockSpace) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        Ok(())
    }
}

impl Default for FockSpace {
    fn default() -> Self {
        Self {
            dim: Self::DEFAULT_DIM,
            leak_threshold: Self::DEFAULT_LEAK_THRESHOLD,
        }
    }
}

fn guard_width(dim: usize) -> usize {
    dim.div_ceil(10).max(1)
}

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// `a φ_n = √n φ_{n-1}`: entries `a[n-1, n] = √n`.
pub fn annihilation(space: &FockSpace) -> ComplexMatrix {
    let d = space.dim;
    let mut a = ComplexMatrix::zeros(d, d);
    for n in 1..d {
        a[(n - 1, n)] = re((n as f64).sqrt());
    }
    a
}

pub fn creation(space: &FockSpace) -> ComplexMatrix {
    annihilation(space).adjoint()
}

pub fn number(space: &FockSpace) -> ComplexMatrix {
    ComplexMatrix::from_diagonal(&DVector::from_fn(space.dim, |n, _| re(n as f64)))
}

/// `x = (a + a†)/√2`
pub fn position(space: &FockSpace) -> ComplexMatrix {
    let a = annihilation(space);
    (a.adjoint() + &a) * re(std::f64::consts::FRAC_1_SQRT_2)
}

/// `p = (a − a†)/(i√2)`
pub fn momentum(space: &FockSpace) -> ComplexMatrix {
    let a = annihilation(space);
    (&a - a.adjoint()) * Complex64::new(0.0, -std::f64::consts::FRAC_1_SQRT_2)
}

/// `a^p`, computed from the single band so the result is exact up to the √ products.
pub fn annihilation_power(space: &FockSpace, p: usize) -> ComplexMatrix {
    let d = space.dim;
    let mut m = ComplexMatrix::zeros(d, d);
    for n in p..d {
        let coeff: f64 = (n - p + 1..=n).map(|k| (k as f64).sqrt()).product();
        m[(n - p, n)] = re(coeff);
    }
    m
}

/// `α a† − α* a`
pub fn displacement_generator(space: &FockSpace, alpha: Complex64) -> ComplexMatrix {
    let a = annihilation(space);
    a.adjoint() * alpha - a * alpha.conj()
}

/// `(z* a² − z a†²)/2`
pub fn squeeze_generator(space: &FockSpace, z: Complex64) -> ComplexMatrix {
    let a2 = annihilation_power(space, 2);
    (&a2 * z.conj() - a2.adjoint() * z) * re(0.5)
}

/// `D(α) = exp(α a† − α* a)`.
///
/// Fails if a coherent state of amplitude `|α|` would already put more than the
/// leak threshold into the guard band; the error names a sufficient dimension.
pub fn displacement(space: &FockSpace, alpha: Complex64) -> Result<ComplexMatrix> {
    if !(alpha.re.is_finite() && alpha.im.is_finite()) {
        return Err(Error::NonFinite("displacement parameter"));
    }
    let tail = |d: usize| coherent_tail(alpha.norm_sqr(), d - guard_width(d));
    guard(space, tail, || format!("displacement D({alpha})"))?;
    expm(&displacement_generator(space, alpha))
}

/// `S(z) = exp((z* a² − z a†²)/2)`, with the same leak guard applied to the squeezed vacuum.
pub fn squeeze(space: &FockSpace, z: Complex64) -> Result<ComplexMatrix> {
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(Error::NonFinite("squeeze parameter"));
    }
    let tail = |d: usize| squeezed_vacuum_tail(z.norm(), d - guard_width(d));
    guard(space, tail, || format!("squeeze S({z})"))?;
    expm(&squeeze_generator(space, z))
}

/// `R_θ = diag(e^{-iθn})`.
pub fn rotation(space: &FockSpace, theta: f64) -> ComplexMatrix {
    ComplexMatrix::from_diagonal(&DVector::from_fn(space.dim, |n, _| {
        Complex64::from_polar(1.0, -theta * n as f64)
    }))
}

/// `Π = diag((−1)^n)`.
pub fn parity(space: &FockSpace) -> ComplexMatrix {
    ComplexMatrix::from_diagonal(&DVector::from_fn(space.dim, |n, _| {
        re(if n % 2 == 0 { 1.0 } else { -1.0 })
    }))
}

fn guard(
    space: &FockSpace,
    tail: impl Fn(usize) -> f64,
    context: impl FnOnce() -> String,
) -> Result<()> {
    let population = tail(space.dim);
    if population <= space.leak_threshold {
        return Ok(());
    }
    let required_dim = (space.dim + 1..=20_000).find(|&d| tail(d) <= space.leak_threshold);
    Err(Error::Truncation {
        context: context(),
        population,
        threshold: space.leak_threshold,
        required_dim,
    })
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// `P(N ≥ start)` for `N ~ Poisson(mean)`.
pub(crate) fn coherent_tail(mean: f64, start: usize) -> f64 {
    if mean == 0.0 {
        return if start == 0 { 1.0 } else { 0.0 };
    }
    let mut ln_p = -mean + start as f64 * mean.ln() - ln_factorial(start);
    let mut total = 0.0;
    let mut n = start;
    loop {
        let p = ln_p.exp();
        total += p;
        n += 1;
        ln_p += mean.ln() - (n as f64).ln();
        if (n as f64) > mean && p < total * 1e-17 || n > start + 100_000 {
            break;
        }
    }
    total.min(1.0)
}

/// Population of levels `≥ start` in the squeezed vacuum `S(r)|0⟩`.
pub(crate) fn squeezed_vacuum_tail(r: f64, start: usize) -> f64 {
    if r == 0.0 {
        return if start == 0 { 1.0 } else { 0.0 };
    }
    let t2 = r.tanh().powi(2);
    let ln_norm = -r.cosh().ln();
    let mut m = start.div_ceil(2);
    let mut total = 0.0;
    // P(2m) = (2m)! / (4^m (m!)²) · tanh^{2m} r / cosh r
    let mut ln_p = ln_factorial(2 * m) - 2.0 * ln_factorial(m) - (m as f64) * 4f64.ln()
        + (m as f64) * t2.ln()
        + ln_norm;
    loop {
        let p = ln_p.exp();
        total += p;
        m += 1;
        let mf = m as f64;
        ln_p += ((2.0 * mf - 1.0) / (2.0 * mf)).ln() + t2.ln();
        if p < total * 1e-17 || m > start + 1_000_000 {
            break;
        }
    }
    total.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(d: usize) -> FockSpace {
        FockSpace::new(d).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn space_invariants() {
        assert!(FockSpace::new(3).is_err());
        assert!(FockSpace::with_leak_threshold(10, 0.0).is_err());
        assert!(FockSpace::with_leak_threshold(10, 1.5).is_err());
        let s = space(60);
        assert_eq!(s.guard_width(), 6);
        assert_eq!(s.guard_start(), 54);
        assert_eq!(space(4).guard_width(), 1);
    }

    #[test]
    fn annihilation_entries() {
        let s = FockSpace {
            dim: 3,
            leak_threshold: 1e-6,
        };
        let a = annihilation(&s);
        let expected = ComplexMatrix::from_row_slice(
            3,
            3,
            &[
                re(0.0),
                re(1.0),
                re(0.0),
                re(0.0),
                re(0.0),
                re(2f64.sqrt()),
                re(0.0),
                re(0.0),
                re(0.0),
            ],
        );
        assert_eq!(a, expected);
    }

    #[test]
    fn canonical_commutator_below_edge() {
        let s = space(12);
        let a = annihilation(&s);
        let comm = &a * a.adjoint() - a.adjoint() * &a;
        for i in 0..11 {
            for j in 0..11 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((comm[(i, j)] - re(want)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn annihilation_kills_vacuum() {
        let s = space(8);
        let v = annihilation(&s) * s.basis(0);
        assert!(v.iter().all(|z| *z == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn annihilation_power_matches_product() {
        let s = space(15);
        let a = annihilation(&s);
        let a3 = &a * &a * &a;
        assert!(max_abs_diff(&annihilation_power(&s, 3), &a3) < 1e-12);
        assert_eq!(annihilation_power(&s, 0), s.identity());
    }

    #[test]
    fn displacement_zero_is_identity() {
        let s = space(20);
        assert_eq!(displacement(&s, c(0.0, 0.0)).unwrap(), s.identity());
        assert_eq!(squeeze(&s, c(0.0, 0.0)).unwrap(), s.identity());
        assert_eq!(rotation(&s, 0.0), s.identity());
    }

    #[test]
    fn displacement_unitary_at_unit_amplitude() {
        let s = space(60);
        let d = displacement(&s, c(0.6, 0.8)).unwrap();
        assert!(unitarity_deviation(&d) < 1e-9);
    }

    #[test]
    fn coherent_amplitudes() {
        // D(α)|0⟩ = e^{-|α|²/2} Σ α^n/√n! |n⟩
        let s = space(60);
        let alpha = c(0.3, 0.2);
        let v = displacement(&s, alpha).unwrap() * s.basis(0);
        let mut amp = Complex64::from((-alpha.norm_sqr() / 2.0).exp());
        let mut max_dev: f64 = 0.0;
        for n in 0..60 {
            if n > 0 {
                amp = amp * alpha / (n as f64).sqrt();
            }
            max_dev = max_dev.max((v[n] - amp).norm());
        }
        assert!(max_dev < 1e-8, "{max_dev:e}");
    }

    #[test]
    fn parity_inverts_displacement() {
        let s = space(60);
        let pi = parity(&s);
        for alpha in [c(0.3, -0.2), c(1.0, 0.0), c(-0.5, 0.7)] {
            let lhs = &pi * displacement(&s, alpha).unwrap() * &pi;
            let rhs = displacement(&s, -alpha).unwrap();
            assert!(max_abs_diff(&lhs, &rhs) < 1e-9);
        }
    }

    #[test]
    fn squeezed_vacuum_variance() {
        let s = space(60);
        let gamma = 0.2;
        let v = squeeze(&s, re(gamma)).unwrap() * s.basis(0);
        let x = position(&s);
        let xv = &x * &v;
        let mean = v.dotc(&xv).re;
        let var = xv.dotc(&xv).re - mean * mean;
        assert!((var - (-2.0 * gamma).exp() / 2.0).abs() < 1e-6);
    }

    #[test]
    fn quarter_rotation_reverses_squeeze() {
        let s = space(60);
        let r = rotation(&s, std::f64::consts::FRAC_PI_2);
        let z = c(0.1, 0.05);
        let lhs = r.adjoint() * squeeze(&s, z).unwrap() * &r;
        assert!(max_abs_diff(&lhs, &squeeze(&s, -z).unwrap()) < 1e-9);
    }

    #[test]
    fn rotation_phases_annihilation() {
        // R_θ = e^{-iθ a†a} gives R_θ a R_θ† = e^{iθ} a, i.e. R_θ† a R_θ = e^{-iθ} a.
        let s = space(25);
        let a = annihilation(&s);
        for theta in [0.3, 1.0, std::f64::consts::PI, 5.5] {
            let r = rotation(&s, theta);
            let lhs = &r * &a * r.adjoint();
            let rhs = &a * Complex64::from_polar(1.0, theta);
            assert!(max_abs_diff(&lhs, &rhs) < 1e-13);
        }
    }

    #[test]
    fn half_turn_is_parity() {
        let s = space(40);
        let r = rotation(&s, std::f64::consts::PI);
        assert!(max_abs_diff(&r, &parity(&s)) < 1e-12);
    }

    #[test]
    fn parity_identities() {
        let s = space(30);
        let pi = parity(&s);
        assert_eq!(&pi * &pi, s.identity());
        let v = &pi * s.basis(0);
        assert_eq!(v, s.basis(0));
        let x = position(&s);
        let p = momentum(&s);
        assert_eq!(
            (&x + &pi * &x * &pi) * re(0.5),
            ComplexMatrix::zeros(30, 30)
        );
        assert_eq!(&pi * &p * &pi, -p);
    }

    #[test]
    fn leak_guard_names_required_dim() {
        let s = space(20);
        match displacement(&s, c(3.0, 0.0)) {
            Err(Error::Truncation {
                required_dim: Some(d),
                ..
            }) => {
                assert!(d > 20);
                let bigger = space(d);
                assert!(displacement(&bigger, c(3.0, 0.0)).is_ok());
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
        assert!(matches!(
            squeeze(&space(60), re(2.0)),
            Err(Error::Truncation { .. })
        ));
    }

    #[test]
    fn tails_match_direct_sums() {
        let mean: f64 = 2.3;
        let direct: f64 = (5..200)
            .map(|n| (-mean + n as f64 * mean.ln() - ln_factorial(n)).exp())
            .sum();
        assert!((coherent_tail(mean, 5) - direct).abs() < 1e-14);
        assert!((coherent_tail(mean, 0) - 1.0).abs() < 1e-12);
        assert!((squeezed_vacuum_tail(0.7, 0) - 1.0).abs() < 1e-12);
        // odd levels carry no population
        assert_eq!(squeezed_vacuum_tail(0.7, 3), squeezed_vacuum_tail(0.7, 4));
    }
}
