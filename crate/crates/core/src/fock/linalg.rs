//! Dense complex kernels on column-major `nalgebra` storage.
//!
//! Products go through `matrixmultiply::zgemm`; the generic nalgebra product is
//! an order of magnitude slower for complex scalars at the sizes used here.

use matrixmultiply::CGemmOption;
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;

const ONE: [f64; 2] = [1.0, 0.0];
const ZERO: [f64; 2] = [0.0, 0.0];

#[derive(Clone, Copy)]
enum Layout {
    Plain,
    Adjoint,
}

fn gemm(a: &ComplexMatrix, la: Layout, b: &ComplexMatrix, lb: Layout) -> ComplexMatrix {
    let (m, k) = match la {
        Layout::Plain => a.shape(),
        Layout::Adjoint => (a.ncols(), a.nrows()),
    };
    let (kb, n) = match lb {
        Layout::Plain => b.shape(),
        Layout::Adjoint => (b.ncols(), b.nrows()),
    };
    assert_eq!(k, kb, "inner dimensions differ");
    let mut c = ComplexMatrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // zgemm has no conjugation flag, so an adjoint operand is conjugated into a
    // copy and then read through transposed strides.
    let conj_a;
    let conj_b;
    let (pa, rsa, csa) = match la {
        Layout::Plain => (a, 1, a.nrows() as isize),
        Layout::Adjoint => {
            conj_a = a.conjugate();
            (&conj_a, a.nrows() as isize, 1)
        }
    };
    let (pb, rsb, csb) = match lb {
        Layout::Plain => (b, 1, b.nrows() as isize),
        Layout::Adjoint => {
            conj_b = b.conjugate();
            (&conj_b, b.nrows() as isize, 1)
        }
    };
    // SAFETY: Complex64 is repr(C) {re, im}, identical to [f64; 2]. Shapes and
    // strides above describe the column-major buffers exactly, and `c` is a
    // freshly allocated m×n buffer that does not alias the inputs.
    unsafe {
        matrixmultiply::zgemm(
            CGemmOption::Standard,
            CGemmOption::Standard,
            m,
            k,
            n,
            ONE,
            pa.as_ptr() as *const [f64; 2],
            rsa,
            csa,
            pb.as_ptr() as *const [f64; 2],
            rsb,
            csb,
            ZERO,
            c.as_mut_ptr() as *mut [f64; 2],
            1,
            m as isize,
        );
    }
    c
}

/// `a · b`
pub fn matmul(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    gemm(a, Layout::Plain, b, Layout::Plain)
}

/// `a · b†`
pub fn matmul_adj(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    gemm(a, Layout::Plain, b, Layout::Adjoint)
}

/// `a† · b`
pub fn adj_matmul(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    gemm(a, Layout::Adjoint, b, Layout::Plain)
}

/// `u · m · u†`
pub fn sandwich(u: &ComplexMatrix, m: &ComplexMatrix) -> ComplexMatrix {
    matmul_adj(&matmul(u, m), u)
}

/// Largest entry modulus.
pub fn max_abs(m: &ComplexMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `max |a - b|` entrywise.
pub fn max_abs_diff(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// `‖u†u − I‖_max`
pub fn unitarity_deviation(u: &ComplexMatrix) -> f64 {
    let mut g = adj_matmul(u, u);
    for i in 0..g.nrows() {
        g[(i, i)] -= Complex64::new(1.0, 0.0);
    }
    max_abs(&g)
}

pub fn is_finite(m: &ComplexMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Hermitian eigenvalues (and optionally eigenvectors) after zeroing entries below
/// `ε²·max|m_ij|`. Such entries cannot move the spectrum at double precision, but
/// subnormal inputs drive the QR iteration to `inf`/`NaN`.
pub fn hermitian_eigen(m: &ComplexMatrix) -> nalgebra::SymmetricEigen<Complex64, nalgebra::Dyn> {
    flushed(m).symmetric_eigen()
}

pub fn hermitian_eigenvalues(m: &ComplexMatrix) -> nalgebra::DVector<f64> {
    flushed(m).symmetric_eigenvalues()
}

fn flushed(m: &ComplexMatrix) -> ComplexMatrix {
    let max = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let floor = (max * f64::EPSILON * f64::EPSILON).max(f64::MIN_POSITIVE);
    m.map(|z| {
        if z.norm() < floor {
            Complex64::new(0.0, 0.0)
        } else {
            z
        }
    })
}

fn norm1(m: &ComplexMatrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

// Padé coefficients and 1-norm thresholds of Higham's scaling-and-squaring method.
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152e0;

fn scaled_identity(n: usize, s: f64) -> ComplexMatrix {
    ComplexMatrix::from_diagonal_element(n, n, Complex64::new(s, 0.0))
}

fn axpy(acc: &mut ComplexMatrix, s: f64, x: &ComplexMatrix) {
    acc.zip_apply(x, |a, b| *a += b * s);
}

fn pade_solve(u: ComplexMatrix, v: ComplexMatrix) -> Result<ComplexMatrix> {
    let p = &v + &u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .ok_or_else(|| Error::invalid("singular Padé denominator in expm"))
}

fn pade_low(a: &ComplexMatrix, b: &[f64]) -> Result<ComplexMatrix> {
    let n = a.nrows();
    let a2 = matmul(a, a);
    // even powers A^0, A^2, A^4, ... up to degree b.len()-1
    let mut powers = vec![scaled_identity(n, 1.0), a2.clone()];
    while 2 * powers.len() < b.len() {
        let next = matmul(powers.last().unwrap(), &a2);
        powers.push(next);
    }
    let mut odd = ComplexMatrix::zeros(n, n);
    let mut even = ComplexMatrix::zeros(n, n);
    for (j, p) in powers.iter().enumerate() {
        axpy(&mut even, b[2 * j], p);
        if 2 * j + 1 < b.len() {
            axpy(&mut odd, b[2 * j + 1], p);
        }
    }
    pade_solve(matmul(a, &odd), even)
}

fn pade13(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = a.nrows();
    let b = &PADE13;
    let a2 = matmul(a, a);
    let a4 = matmul(&a2, &a2);
    let a6 = matmul(&a4, &a2);
    let mut t = ComplexMatrix::zeros(n, n);
    axpy(&mut t, b[13], &a6);
    axpy(&mut t, b[11], &a4);
    axpy(&mut t, b[9], &a2);
    let mut inner = matmul(&a6, &t);
    axpy(&mut inner, b[7], &a6);
    axpy(&mut inner, b[5], &a4);
    axpy(&mut inner, b[3], &a2);
    inner += scaled_identity(n, b[1]);
    let u = matmul(a, &inner);

    let mut t = ComplexMatrix::zeros(n, n);
    axpy(&mut t, b[12], &a6);
    axpy(&mut t, b[10], &a4);
    axpy(&mut t, b[8], &a2);
    let mut v = matmul(&a6, &t);
    axpy(&mut v, b[6], &a6);
    axpy(&mut v, b[4], &a4);
    axpy(&mut v, b[2], &a2);
    v += scaled_identity(n, b[0]);
    pade_solve(u, v)
}

/// Matrix exponential by scaling and squaring with a diagonal Padé approximant.
pub fn expm(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    if !m.is_square() {
        return Err(Error::invalid("expm of a non-square matrix"));
    }
    if !is_finite(m) {
        return Err(Error::NonFinite("expm input"));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(m.clone());
    }
    let nrm = norm1(m);
    if nrm == 0.0 {
        return Ok(scaled_identity(n, 1.0));
    }
    for (degree, theta) in THETA {
        if nrm <= theta {
            let b: &[f64] = match degree {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            return pade_low(m, b);
        }
    }
    let s = (nrm / THETA13).log2().ceil().max(0.0) as i32;
    let scaled = m * Complex64::new(2f64.powi(-s), 0.0);
    let mut r = pade13(&scaled)?;
    for _ in 0..s {
        r = matmul(&r, &r);
    }
    if !is_finite(&r) {
        return Err(Error::NonFinite("expm result"));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn sample(n: usize, scale: f64) -> ComplexMatrix {
        ComplexMatrix::from_fn(n, n, |i, j| {
            let t = (i * 7 + j * 3) as f64;
            c((t * 0.37).sin(), (t * 0.11 + 0.5).cos()) * scale
        })
    }

    #[test]
    fn products_match_nalgebra() {
        let a = sample(7, 1.0);
        let b = sample(7, 0.5).transpose();
        assert!(max_abs_diff(&matmul(&a, &b), &(&a * &b)) < 1e-13);
        assert!(max_abs_diff(&matmul_adj(&a, &b), &(&a * b.adjoint())) < 1e-13);
        assert!(max_abs_diff(&adj_matmul(&a, &b), &(a.adjoint() * &b)) < 1e-13);
    }

    #[test]
    fn expm_zero_is_identity() {
        let z = ComplexMatrix::zeros(5, 5);
        assert_eq!(expm(&z).unwrap(), ComplexMatrix::identity(5, 5));
    }

    #[test]
    fn expm_of_diagonal() {
        let thetas = [0.0, 0.3, -1.7, 4.0, 9.5];
        let m = ComplexMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            5,
            thetas.iter().map(|&t| c(0.0, t)),
        ));
        let e = expm(&m).unwrap();
        for (i, &t) in thetas.iter().enumerate() {
            assert!((e[(i, i)] - c(t.cos(), t.sin())).norm() < 1e-12);
        }
        assert!(max_abs(&(e.clone() - ComplexMatrix::from_diagonal(&e.diagonal()))) < 1e-14);
    }

    #[test]
    fn expm_against_power_series() {
        // Taylor series with enough terms is an independent oracle for moderate norms.
        for scale in [0.005, 0.1, 0.5, 1.2, 3.0] {
            let m = sample(6, scale);
            let mut term = ComplexMatrix::identity(6, 6);
            let mut sum = term.clone();
            for k in 1..200 {
                term = &term * &m / c(k as f64, 0.0);
                sum += &term;
            }
            let e = expm(&m).unwrap();
            let rel = max_abs_diff(&e, &sum) / max_abs(&sum);
            assert!(rel < 1e-12, "scale {scale}: rel err {rel:e}");
        }
    }

    #[test]
    fn expm_large_norm_inverse_pair() {
        let m = sample(8, 1.3);
        let h = (&m - m.adjoint()) * c(0.5, 0.0);
        let e = expm(&h).unwrap();
        let ei = expm(&(-h)).unwrap();
        let prod = matmul(&e, &ei);
        assert!(max_abs_diff(&prod, &ComplexMatrix::identity(8, 8)) < 1e-11);
    }

    #[test]
    fn expm_rejects_nan() {
        let mut m = ComplexMatrix::zeros(3, 3);
        m[(1, 2)] = c(f64::NAN, 0.0);
        assert!(matches!(expm(&m), Err(Error::NonFinite(_))));
    }
}
