use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::linalg::{
    adj_matmul, hermitian_eigen, hermitian_eigenvalues, is_finite, matmul, sandwich,
    unitarity_deviation, ComplexMatrix,
};
use super::{displacement, squeeze, FockSpace};
use crate::error::{Error, Result};

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-8;
const PSD_TOL: f64 = -1e-8;
const UNITARY_TOL: f64 = 1e-8;
const RENORM_WARN: f64 = 1e-6;

/// Hermitian, unit-trace, positive semidefinite matrix on a [`FockSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    mat: ComplexMatrix,
    space: FockSpace,
}

impl DensityMatrix {
    /// Validates every invariant, including positivity via an eigendecomposition.
    pub fn new(space: FockSpace, mat: ComplexMatrix) -> Result<Self> {
        let rho = Self::from_parts(space, mat)?;
        rho.check_hermitian_trace()?;
        let min_eig = hermitian_eigenvalues(&rho.mat)
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < PSD_TOL {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(rho)
    }

    fn from_parts(space: FockSpace, mat: ComplexMatrix) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::invalid("density matrix must be square"));
        }
        if mat.nrows() != space.dim() {
            return Err(Error::DimensionMismatch {
                left: space.dim(),
                right: mat.nrows(),
            });
        }
        if !is_finite(&mat) {
            return Err(Error::NonFinite("density matrix"));
        }
        Ok(Self { mat, space })
    }

    fn check_hermitian_trace(&self) -> Result<()> {
        let d = self.space.dim();
        let mut herm: f64 = 0.0;
        for i in 0..d {
            for j in i..d {
                herm = herm.max((self.mat[(i, j)] - self.mat[(j, i)].conj()).norm());
            }
        }
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!(
                "not Hermitian (deviation {herm:.3e})"
            )));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr}")));
        }
        Ok(())
    }

    /// `|ψ⟩⟨ψ|` for a normalized state vector.
    pub fn pure(space: FockSpace, psi: &DVector<Complex64>) -> Result<Self> {
        if psi.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                left: space.dim(),
                right: psi.len(),
            });
        }
        let norm = psi.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidState(format!("state vector norm {norm}")));
        }
        let psi = psi / Complex64::new(norm, 0.0);
        Ok(Self {
            mat: &psi * psi.adjoint(),
            space,
        })
    }

    pub fn fock(space: FockSpace, n: usize) -> Result<Self> {
        if n >= space.dim() {
            return Err(Error::invalid(format!(
                "level {n} outside fock dim {}",
                space.dim()
            )));
        }
        Self::pure(space, &space.basis(n))
    }

    pub fn vacuum(space: FockSpace) -> Self {
        Self::fock(space, 0).expect("vacuum always fits")
    }

    /// `D(α)|0⟩⟨0|D(α)†`.
    pub fn coherent(space: FockSpace, alpha: Complex64) -> Result<Self> {
        let psi = displacement(&space, alpha)? * space.basis(0);
        Self::pure(space, &psi)
    }

    pub fn mat(&self) -> &ComplexMatrix {
        &self.mat
    }

    pub fn into_mat(self) -> ComplexMatrix {
        self.mat
    }

    pub fn space(&self) -> &FockSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn trace(&self) -> f64 {
        self.mat.diagonal().iter().map(|z| z.re).sum()
    }

    /// `Tr ρ²`
    pub fn purity(&self) -> f64 {
        self.mat.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `Tr(ρ X)`
    pub fn expect(&self, op: &ComplexMatrix) -> Complex64 {
        // Tr(ρX) = Σ_ij ρ_ij X_ji
        let d = self.dim();
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..d {
            for i in 0..d {
                acc += self.mat[(i, j)] * op[(j, i)];
            }
        }
        acc
    }

    /// Fock-level populations `ρ_nn`.
    pub fn populations(&self) -> Vec<f64> {
        self.mat.diagonal().iter().map(|z| z.re).collect()
    }

    /// Population in the top guard band.
    pub fn guard_population(&self) -> f64 {
        let start = self.space.guard_start();
        (start..self.dim()).map(|n| self.mat[(n, n)].re).sum()
    }

    /// Smallest `k` with all but `tol` of the population below level `k`, at least one.
    pub fn support_dim(&self, tol: f64) -> usize {
        let pops = self.populations();
        let mut tail = 0.0;
        for k in (0..pops.len()).rev() {
            tail += pops[k].max(0.0);
            if tail > tol {
                return k + 1;
            }
        }
        1
    }

    /// Full invariant check, including positivity.
    pub fn validate(&self) -> Result<()> {
        Self::new(self.space, self.mat.clone()).map(|_| ())
    }

    /// Re-Hermitize, renormalize the trace and run the leak monitor.
    pub(crate) fn from_evolved(
        space: FockSpace,
        mat: ComplexMatrix,
        context: &str,
    ) -> Result<Self> {
        let mut rho = Self::from_parts(space, mat)?;
        rho.rehermitize();
        let tr = rho.trace();
        if !(tr > 0.0) {
            return Err(Error::InvalidState(format!("trace {tr} after {context}")));
        }
        if (tr - 1.0).abs() > RENORM_WARN {
            log::warn!("trace drifted to {tr} during {context}; renormalizing");
        }
        rho.mat /= Complex64::new(tr, 0.0);
        rho.check_leak(context)?;
        Ok(rho)
    }

    fn rehermitize(&mut self) {
        let d = self.dim();
        for i in 0..d {
            self.mat[(i, i)].im = 0.0;
            for j in i + 1..d {
                let avg = (self.mat[(i, j)] + self.mat[(j, i)].conj()) * 0.5;
                self.mat[(i, j)] = avg;
                self.mat[(j, i)] = avg.conj();
            }
        }
    }

    pub(crate) fn check_leak(&self, context: &str) -> Result<()> {
        let population = self.guard_population();
        if population > self.space.leak_threshold() {
            return Err(Error::Truncation {
                context: context.to_string(),
                population,
                threshold: self.space.leak_threshold(),
                required_dim: None,
            });
        }
        Ok(())
    }

    /// `U ρ U†` for a unitary that the caller has already validated.
    pub(crate) fn conjugated_unchecked(&self, u: &ComplexMatrix, context: &str) -> Result<Self> {
        Self::from_evolved(self.space, sandwich(u, &self.mat), context)
    }

    /// `U ρ U†` for diagonal `U = diag(phases)`; exact up to rounding of the products.
    pub fn conjugated_diagonal(&self, phases: &[Complex64]) -> Self {
        let d = self.dim();
        assert_eq!(phases.len(), d, "phase vector length");
        let mut mat = self.mat.clone();
        for j in 0..d {
            let pj = phases[j].conj();
            for i in 0..d {
                mat[(i, j)] *= phases[i] * pj;
            }
        }
        Self {
            mat,
            space: self.space,
        }
    }

    /// Uniform average of states on a common space, summed as a balanced tree
    /// so the result does not depend on how the inputs were produced.
    pub fn average(states: &[DensityMatrix]) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| Error::invalid("cannot average zero states"))?;
        for s in states {
            first.space.check_same(&s.space)?;
        }
        let sum = tree_sum(states);
        let mat = sum / Complex64::new(states.len() as f64, 0.0);
        Self::from_evolved(first.space, mat, "ensemble average")
    }
}

pub(crate) fn tree_sum(states: &[DensityMatrix]) -> ComplexMatrix {
    match states.len() {
        1 => states[0].mat.clone(),
        n => tree_sum(&states[..n / 2]) + tree_sum(&states[n / 2..]),
    }
}

/// `U ρ U†`, checking that `U` is unitary within 1e-8 and that the result stays
/// clear of the truncation edge.
pub fn conjugate(rho: &DensityMatrix, u: &ComplexMatrix) -> Result<DensityMatrix> {
    if u.nrows() != rho.dim() || u.ncols() != rho.dim() {
        return Err(Error::DimensionMismatch {
            left: rho.dim(),
            right: u.nrows(),
        });
    }
    if !is_finite(u) {
        return Err(Error::NonFinite("unitary"));
    }
    let deviation = unitarity_deviation(u);
    if deviation > UNITARY_TOL {
        return Err(Error::NotUnitary { deviation });
    }
    rho.conjugated_unchecked(u, "conjugation")
}

/// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    FidelityReference::new(rho).fidelity(sigma)
}

/// Precomputed square-root factor of a reference state.
///
/// With `ρ = V Λ V†` restricted to its numerical support, `√ρ σ √ρ` has the same
/// nonzero spectrum as `K = (VΛ^{1/2})† σ (VΛ^{1/2})`, which is only rank × rank.
#[derive(Debug, Clone)]
pub struct FidelityReference {
    space: FockSpace,
    factor: ComplexMatrix,
}

impl FidelityReference {
    pub fn new(rho: &DensityMatrix) -> Self {
        let eig = hermitian_eigen(&rho.mat);
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..rho.dim())
            .filter(|&k| eig.eigenvalues[k] > 1e-14 * max)
            .collect();
        let mut factor = ComplexMatrix::zeros(rho.dim(), keep.len());
        for (c, &k) in keep.iter().enumerate() {
            let s = eig.eigenvalues[k].sqrt();
            for r in 0..rho.dim() {
                factor[(r, c)] = eig.eigenvectors[(r, k)] * s;
            }
        }
        Self {
            space: rho.space,
            factor,
        }
    }

    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    pub fn fidelity(&self, sigma: &DensityMatrix) -> Result<f64> {
        self.space.check_same(&sigma.space)?;
        let k = adj_matmul(&self.factor, &matmul(&sigma.mat, &self.factor));
        let root_sum: f64 = if k.nrows() == 1 {
            k[(0, 0)].re.max(0.0).sqrt()
        } else {
            let mut k = k;
            let r = k.nrows();
            for i in 0..r {
                k[(i, i)].im = 0.0;
                for j in i + 1..r {
                    let avg = (k[(i, j)] + k[(j, i)].conj()) * 0.5;
                    k[(i, j)] = avg;
                    k[(j, i)] = avg.conj();
                }
            }
            hermitian_eigenvalues(&k)
                .iter()
                .map(|&mu| mu.max(0.0).sqrt())
                .sum()
        };
        Ok((root_sum * root_sum).clamp(0.0, 1.0))
    }
}

/// One term `p_r ρ_r` of a Gaussian mixture: a squeezed vacuum of position spread
/// `spread`, displaced to `center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub center: Complex64,
    pub spread: f64,
}

impl MixtureComponent {
    /// Squeezing parameter realizing the spread: `γ = −ln(σ√2)`.
    pub fn squeezing(&self) -> f64 {
        -(self.spread * std::f64::consts::SQRT_2).ln()
    }

    /// Phase-space center `(x, p) = √2 (Re β, Im β)`.
    pub fn phase_space_center(&self) -> (f64, f64) {
        let s = std::f64::consts::SQRT_2;
        (s * self.center.re, s * self.center.im)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureSpec {
    components: Vec<MixtureComponent>,
}

impl GaussianMixtureSpec {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        for (i, c) in components.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::invalid(format!(
                    "component {i}: weight must be positive, got {}",
                    c.weight
                )));
            }
            if !(c.spread > 0.0 && c.spread.is_finite()) {
                return Err(Error::invalid(format!(
                    "component {i}: spread must be positive, got {}",
                    c.spread
                )));
            }
            if !(c.center.re.is_finite() && c.center.im.is_finite()) {
                return Err(Error::NonFinite("mixture center"));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { components })
    }

    pub fn vacuum() -> Self {
        Self::coherent(Complex64::new(0.0, 0.0))
    }

    pub fn coherent(center: Complex64) -> Self {
        Self {
            components: vec![MixtureComponent {
                weight: 1.0,
                center,
                spread: std::f64::consts::FRAC_1_SQRT_2,
            }],
        }
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    /// `Σ p_r β_r`, the expected `⟨a⟩`.
    pub fn mean(&self) -> Complex64 {
        self.components.iter().map(|c| c.center * c.weight).sum()
    }
}

/// `Σ p_r D(β_r) S(γ_r) |0⟩⟨0| S(γ_r)† D(β_r)†` with `γ_r = −ln(σ_r √2)`.
pub fn gaussian_mixture_state(
    spec: &GaussianMixtureSpec,
    space: &FockSpace,
) -> Result<DensityMatrix> {
    let d = space.dim();
    let mut mat = ComplexMatrix::zeros(d, d);
    for c in &spec.components {
        let mut psi = space.basis(0);
        let gamma = c.squeezing();
        if gamma != 0.0 {
            psi = squeeze(space, Complex64::new(gamma, 0.0))? * psi;
        }
        if c.center != Complex64::new(0.0, 0.0) {
            psi = displacement(space, c.center)? * psi;
        }
        mat += &psi * psi.adjoint() * Complex64::new(c.weight, 0.0);
    }
    DensityMatrix::from_evolved(*space, mat, "gaussian mixture preparation")
}

#[cfg(test)]
mod tests {
    use super::super::{annihilation, rotation};
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn rejects_invalid_matrices() {
        let s = FockSpace::new(6).unwrap();
        let mut m = ComplexMatrix::identity(6, 6);
        assert!(DensityMatrix::new(s, m.clone()).is_err());
        m /= c(6.0, 0.0);
        assert!(DensityMatrix::new(s, m.clone()).is_ok());
        m[(0, 1)] = c(0.1, 0.0);
        assert!(DensityMatrix::new(s, m.clone()).is_err());
        let mut neg = ComplexMatrix::zeros(6, 6);
        neg[(0, 0)] = c(1.5, 0.0);
        neg[(1, 1)] = c(-0.5, 0.0);
        assert!(DensityMatrix::new(s, neg).is_err());
    }

    #[test]
    fn identity_conjugation_is_noop() {
        let s = FockSpace::new(20).unwrap();
        let rho = DensityMatrix::coherent(s, c(0.4, -0.1)).unwrap();
        let out = conjugate(&rho, &s.identity()).unwrap();
        assert!(super::super::max_abs_diff(out.mat(), rho.mat()) < 1e-15);
    }

    #[test]
    fn coherent_mean_after_conjugation() {
        let s = FockSpace::new(60).unwrap();
        let alpha = c(0.0, 0.5);
        let rho = conjugate(&DensityMatrix::vacuum(s), &displacement(&s, alpha).unwrap()).unwrap();
        assert!((rho.expect(&annihilation(&s)) - alpha).norm() < 1e-8);
        assert!((rho.trace() - 1.0).abs() < 1e-10);
        rho.validate().unwrap();
    }

    #[test]
    fn conjugate_rejects_non_unitary() {
        let s = FockSpace::new(8).unwrap();
        let m = s.identity() * c(1.1, 0.0);
        assert!(matches!(
            conjugate(&DensityMatrix::vacuum(s), &m),
            Err(Error::NotUnitary { .. })
        ));
    }

    #[test]
    fn conjugate_reports_leak() {
        let s = FockSpace::new(10).unwrap();
        // shift the vacuum straight into the top level
        let mut u = ComplexMatrix::zeros(10, 10);
        for n in 0..10 {
            u[((n + 9) % 10, n)] = c(1.0, 0.0);
        }
        assert!(matches!(
            conjugate(&DensityMatrix::vacuum(s), &u),
            Err(Error::Truncation { .. })
        ));
    }

    #[test]
    fn diagonal_conjugation_matches_dense() {
        let s = FockSpace::new(15).unwrap();
        let rho = DensityMatrix::coherent(s, c(0.7, 0.3)).unwrap();
        let r = rotation(&s, 0.9);
        let phases: Vec<_> = r.diagonal().iter().cloned().collect();
        let dense = conjugate(&rho, &r).unwrap();
        let diag = rho.conjugated_diagonal(&phases);
        assert!(super::super::max_abs_diff(dense.mat(), diag.mat()) < 1e-14);
    }

    #[test]
    fn fidelity_survives_subnormal_tail() {
        let spec = GaussianMixtureSpec::coherent(c(4.68e-4, 3.53e-4));
        let rho = gaussian_mixture_state(&spec, &FockSpace::new(60).unwrap()).unwrap();
        assert_eq!(FidelityReference::new(&rho).rank(), 1);
        assert!((fidelity(&rho, &rho).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fidelity_cases() {
        let s = FockSpace::new(60).unwrap();
        let vac = DensityMatrix::vacuum(s);
        let coh = DensityMatrix::coherent(s, c(0.8, 0.0)).unwrap();
        assert!((fidelity(&vac, &vac).unwrap() - 1.0).abs() < 1e-8);
        assert!((fidelity(&vac, &coh).unwrap() - (-0.64f64).exp()).abs() < 1e-7);

        let spec = GaussianMixtureSpec::new(vec![
            MixtureComponent {
                weight: 0.3,
                center: c(0.5, 0.0),
                spread: 0.6,
            },
            MixtureComponent {
                weight: 0.7,
                center: c(-0.2, 0.4),
                spread: 0.8,
            },
        ])
        .unwrap();
        let mixed = gaussian_mixture_state(&spec, &s).unwrap();
        let other = conjugate(&mixed, &displacement(&s, c(0.1, 0.1)).unwrap()).unwrap();
        let f1 = fidelity(&mixed, &other).unwrap();
        let f2 = fidelity(&other, &mixed).unwrap();
        assert!((f1 - f2).abs() < 1e-9, "{f1} {f2}");
        assert!((fidelity(&mixed, &mixed).unwrap() - 1.0).abs() < 1e-8);
        assert!(fidelity(
            &vac,
            &FockSpace::new(10).map(DensityMatrix::vacuum).unwrap()
        )
        .is_err());
    }

    #[test]
    fn mixture_vacuum_component() {
        let s = FockSpace::new(30).unwrap();
        let rho = gaussian_mixture_state(&GaussianMixtureSpec::vacuum(), &s).unwrap();
        assert!(super::super::max_abs_diff(rho.mat(), DensityMatrix::vacuum(s).mat()) < 1e-15);
    }

    #[test]
    fn mixture_cat_like() {
        let s = FockSpace::new(60).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let spec = GaussianMixtureSpec::new(vec![
            MixtureComponent {
                weight: 0.5,
                center: c(1.0, 0.0),
                spread: h,
            },
            MixtureComponent {
                weight: 0.5,
                center: c(-1.0, 0.0),
                spread: h,
            },
        ])
        .unwrap();
        let rho = gaussian_mixture_state(&spec, &s).unwrap();
        assert!((rho.trace() - 1.0).abs() < 1e-12);
        assert!(rho.purity() < 1.0 - 1e-3);
        rho.validate().unwrap();
        assert!((rho.expect(&annihilation(&s)) - spec.mean()).norm() < 1e-7);
    }

    #[test]
    fn mixture_weights_validated() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let comp = |w| MixtureComponent {
            weight: w,
            center: c(0.0, 0.0),
            spread: h,
        };
        assert!(GaussianMixtureSpec::new(vec![comp(0.5), comp(0.4)]).is_err());
        assert!(GaussianMixtureSpec::new(vec![comp(1.0), comp(0.0)]).is_err());
        assert!(GaussianMixtureSpec::new(vec![]).is_err());
    }

    #[test]
    fn support_dim_tracks_population() {
        let s = FockSpace::new(40).unwrap();
        assert_eq!(DensityMatrix::vacuum(s).support_dim(1e-16), 1);
        let coh = DensityMatrix::coherent(s, c(1.0, 0.0)).unwrap();
        let k = coh.support_dim(1e-16);
        assert!(k > 5 && k < 40);
    }

    #[test]
    fn tree_average_is_uniform() {
        let s = FockSpace::new(12).unwrap();
        let states: Vec<_> = (0..5).map(|n| DensityMatrix::fock(s, n).unwrap()).collect();
        let avg = DensityMatrix::average(&states).unwrap();
        for n in 0..5 {
            assert!((avg.mat()[(n, n)].re - 0.2).abs() < 1e-15);
        }
    }
}
