//! Filter functions for displacement noise under sign-switching control.
//!
//! A control schedule that flips the sign of displacement kicks turns the
//! averaged output Wigner function into a convolution of the input with a
//! filter `f_n`. For Gaussian kick statistics `f_n` is a Gaussian whose
//! covariance `Σ_n` integrates the noise kernel against the switching function.
//! Squeezing noise acts multiplicatively on phase space and is averaged by
//! Monte Carlo over the net squeezing parameter instead.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{num_complex::Complex as FftComplex, FftPlanner};

use crate::error::{Error, Result};
use crate::noise::{KernelTable, KernelUnits};
use crate::protocol::InterventionSchedule;
use crate::wigner::{self, PhaseSpaceField, PhaseSpaceGrid};

/// Piecewise `±1` function with `F(ℓ) = s_k` on `(ℓ_{k−1}, ℓ_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingFunction {
    boundaries: Vec<f64>,
    signs: Vec<i8>,
}

impl SwitchingFunction {
    pub fn new(boundaries: Vec<f64>, signs: Vec<i8>) -> Result<Self> {
        if signs.is_empty() || boundaries.len() != signs.len() + 1 {
            return Err(Error::invalid(
                "switching function needs n >= 1 signs and n + 1 boundaries",
            ));
        }
        if boundaries[0] != 0.0 {
            return Err(Error::invalid("switching function must start at 0"));
        }
        if boundaries
            .windows(2)
            .any(|w| !(w[1] > w[0]) || !w[1].is_finite())
        {
            return Err(Error::invalid("switching boundaries must be increasing"));
        }
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::invalid("switching signs must be +1 or -1"));
        }
        Ok(Self { boundaries, signs })
    }

    /// `n` equal segments of length `delta_ell` with signs `s_k = (−1)^k`.
    pub fn alternating(n: usize, delta_ell: f64) -> Result<Self> {
        let boundaries = (0..=n).map(|k| k as f64 * delta_ell).collect();
        let signs = (1..=n).map(|k| if k % 2 == 0 { 1 } else { -1 }).collect();
        Self::new(boundaries, signs)
    }

    /// `n` equal segments, all `+1` (no control).
    pub fn constant(n: usize, delta_ell: f64) -> Result<Self> {
        let boundaries = (0..=n).map(|k| k as f64 * delta_ell).collect();
        Self::new(boundaries, vec![1; n])
    }

    /// Signs seen by each segment under a parity-type schedule: `−1` where the
    /// cumulative control before the segment is `Π`, `+1` where it is `I`.
    pub fn from_schedule(schedule: &InterventionSchedule, delta_ell: f64) -> Result<Self> {
        let n = schedule.segments();
        let signs = (1..=n)
            .map(|k| {
                let c = schedule.cumulative(k - 1);
                if c.is_identity() {
                    Ok(1)
                } else if c.is_parity() {
                    Ok(-1)
                } else {
                    Err(Error::invalid(format!(
                        "segment {k} sees control {c}, which is not a sign switch"
                    )))
                }
            })
            .collect::<Result<Vec<i8>>>()?;
        let boundaries = (0..=n).map(|k| k as f64 * delta_ell).collect();
        Self::new(boundaries, signs)
    }

    pub fn segments(&self) -> usize {
        self.signs.len()
    }

    pub fn length(&self) -> f64 {
        *self.boundaries.last().expect("nonempty")
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn delta(&self, k: usize) -> f64 {
        self.boundaries[k + 1] - self.boundaries[k]
    }

    pub fn value(&self, ell: f64) -> f64 {
        let k = self.boundaries[1..]
            .partition_point(|&b| b < ell)
            .min(self.segments() - 1);
        self.signs[k] as f64
    }
}

/// Covariance density `(E x_ℓ x_ℓ', E p_ℓ p_ℓ', E x_ℓ p_ℓ')` of a continuous
/// path, in quadrature units.
pub type KernelFn = dyn Fn(f64, f64) -> [f64; 3] + Send + Sync;

#[derive(Clone)]
pub enum Kernel {
    /// Covariances of the per-segment kicks themselves (a kick equals the noise
    /// value, with no path-length factor). This is what sampled trajectories give.
    Kicks(KernelTable),
    /// Covariance density constant on each segment block; integrated exactly,
    /// so block `(k, k')` contributes `δℓ_k δℓ_k'` times its entry.
    Segmented(KernelTable),
    /// Covariance density defined on `[0, length]²`, integrated by
    /// Gauss–Legendre quadrature on every segment block. Diagonal blocks are
    /// split along `ℓ = ℓ'` so a kink there does not spoil convergence.
    Continuous { length: f64, density: Arc<KernelFn> },
}

impl std::fmt::Debug for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Kernel::Kicks(t) => f.debug_tuple("Kicks").field(t).finish(),
            Kernel::Segmented(t) => f.debug_tuple("Segmented").field(t).finish(),
            Kernel::Continuous { length, .. } => f
                .debug_struct("Continuous")
                .field("length", length)
                .finish_non_exhaustive(),
        }
    }
}

/// Symmetric `Σ_n = [[A, C], [C, B]]` in quadrature units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceSpec {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl CovarianceSpec {
    pub fn isotropic(var: f64) -> Self {
        Self {
            a: var,
            b: var,
            c: 0.0,
        }
    }

    pub fn det(&self) -> f64 {
        self.a * self.b - self.c * self.c
    }

    pub fn is_positive_definite(&self) -> bool {
        self.a > 0.0 && self.det() > 1e-12
    }
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
fn gauss_legendre(order: usize) -> Vec<(f64, f64)> {
    (0..order)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=order {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = order as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

const QUADRATURE_ORDER: usize = 12;

/// `A = ∬ F F E(x x')`, `B = ∬ F F E(p p')`, `C = ½ ∬ F F (E(x p') + E(p x'))`.
///
/// Amplitude-unit tables are converted to quadrature units (a factor of 2), so
/// the result can be fed to [`gaussian_filter`] on `(x, p)` grids directly.
pub fn sigma_matrix(f: &SwitchingFunction, kernel: &Kernel) -> Result<CovarianceSpec> {
    let n = f.segments();
    let s = |k: usize| f.signs[k] as f64;
    match kernel {
        Kernel::Kicks(t) | Kernel::Segmented(t) => {
            if t.segments() != n {
                return Err(Error::DimensionMismatch {
                    left: n,
                    right: t.segments(),
                });
            }
            let weighted = matches!(kernel, Kernel::Segmented(_));
            let u = t.units.to_quadrature();
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for k in 0..n {
                for l in 0..n {
                    let w = if weighted {
                        f.delta(k) * f.delta(l)
                    } else {
                        1.0
                    };
                    let ss = s(k) * s(l) * w;
                    a += ss * t.xx[(k, l)];
                    b += ss * t.pp[(k, l)];
                    c += ss * 0.5 * (t.xp[(k, l)] + t.xp[(l, k)]);
                }
            }
            Ok(CovarianceSpec {
                a: u * a,
                b: u * b,
                c: u * c,
            })
        }
        Kernel::Continuous { length, density } => {
            if (length - f.length()).abs() > 1e-12 * length.abs().max(1.0) {
                return Err(Error::invalid(format!(
                    "kernel domain [0, {length}] does not match path length {}",
                    f.length()
                )));
            }
            let rule = gauss_legendre(QUADRATURE_ORDER);
            // Nodes (x, y, weight) for block (k, l). Off-diagonal blocks use the
            // tensor rule. Diagonal blocks are split along x = y, where path
            // kernels typically have a kink, and each triangle is mapped to the
            // unit square by x = lo + h s, y = lo + h s t (Jacobian h² s).
            let block = |k: usize, l: usize| -> Vec<(f64, f64, f64)> {
                let map = |x: f64| 0.5 * (x + 1.0);
                if k != l {
                    let (xlo, xh) = (f.boundaries[k], f.delta(k));
                    let (ylo, yh) = (f.boundaries[l], f.delta(l));
                    let mut out = Vec::with_capacity(rule.len() * rule.len());
                    for &(u, wu) in &rule {
                        for &(v, wv) in &rule {
                            out.push((
                                xlo + xh * map(u),
                                ylo + yh * map(v),
                                0.25 * wu * wv * xh * yh,
                            ));
                        }
                    }
                    return out;
                }
                let (lo, h) = (f.boundaries[k], f.delta(k));
                let mut out = Vec::with_capacity(2 * rule.len() * rule.len());
                for &(u, wu) in &rule {
                    for &(v, wv) in &rule {
                        let (s, t) = (map(u), map(v));
                        let w = 0.25 * wu * wv * h * h * s;
                        let (x, y) = (lo + h * s, lo + h * s * t);
                        out.push((x, y, w));
                        out.push((y, x, w));
                    }
                }
                out
            };
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for k in 0..n {
                for l in 0..n {
                    let ss = s(k) * s(l);
                    for (x, y, w) in block(k, l) {
                        let [kxx, kpp, kxp] = density(x, y);
                        let [_, _, kpx] = density(y, x);
                        let w = ss * w;
                        a += w * kxx;
                        b += w * kpp;
                        c += w * 0.5 * (kxp + kpx);
                    }
                }
            }
            Ok(CovarianceSpec { a, b, c })
        }
    }
}

/// Filter to convolve a Wigner function with.
#[derive(Debug, Clone, PartialEq)]
pub enum Filter {
    /// Delta filter: convolution leaves the field unchanged.
    Identity,
    Field(PhaseSpaceField),
}

impl Filter {
    pub fn is_identity(&self) -> bool {
        matches!(self, Filter::Identity)
    }
}

/// `f(α) = (2π √det Σ)^{−1} exp(−½ αᵀ Σ^{−1} α)` on the grid.
pub fn gaussian_filter(spec: &CovarianceSpec, grid: &PhaseSpaceGrid) -> Result<PhaseSpaceField> {
    if !spec.is_positive_definite() {
        return Err(Error::NotPositiveDefinite { det: spec.det() });
    }
    let det = spec.det();
    let (ia, ib, ic) = (spec.b / det, spec.a / det, -spec.c / det);
    let norm = 1.0 / (2.0 * std::f64::consts::PI * det.sqrt());
    PhaseSpaceField::from_fn(*grid, |x, p| {
        norm * (-0.5 * (ia * x * x + 2.0 * ic * x * p + ib * p * p)).exp()
    })
}

/// Filter for static replacement-jump noise under alternating signs: the kicks
/// cancel in pairs, leaving nothing for even `n` and one kick for odd `n`.
///
/// `sigma_jump` is the std of the jump per quadrature (`√2` times the std of
/// each component of `α`), and a kick over a segment is `delta_ell · sigma_jump`.
pub fn cpp_static_filter(
    n: usize,
    delta_ell: f64,
    sigma_jump: f64,
    grid: &PhaseSpaceGrid,
) -> Result<Filter> {
    if n == 0 {
        return Err(Error::invalid("n must be >= 1"));
    }
    if n % 2 == 0 || sigma_jump == 0.0 || delta_ell == 0.0 {
        return Ok(Filter::Identity);
    }
    let var = (delta_ell * sigma_jump).powi(2);
    gaussian_filter(&CovarianceSpec::isotropic(var), grid).map(Filter::Field)
}

fn fft2(data: &mut [FftComplex<f64>], rows: usize, cols: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row_fft, col_fft) = if inverse {
        (
            planner.plan_fft_inverse(cols),
            planner.plan_fft_inverse(rows),
        )
    } else {
        (
            planner.plan_fft_forward(cols),
            planner.plan_fft_forward(rows),
        )
    };
    for row in data.chunks_mut(cols) {
        row_fft.process(row);
    }
    let mut col = vec![FftComplex::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            col[r] = data[r * cols + c];
        }
        col_fft.process(&mut col);
        for r in 0..rows {
            data[r * cols + c] = col[r];
        }
    }
}

/// Index of the node at coordinate 0, if the origin sits on a node.
fn origin_index(min: f64, step: f64, count: usize) -> Option<usize> {
    let u = -min / step;
    let i = u.round();
    ((u - i).abs() < 1e-9 && i >= 0.0 && (i as usize) < count).then_some(i as usize)
}

/// `(f ∗ W)(x) = ∬ f(y) W(x − y) dy` on the common grid, zero-padded.
///
/// The filter is a probability density; its discrete mass is scaled to one so
/// that filters narrower than the grid spacing do not bias the total.
pub fn convolve(filter: &Filter, w: &PhaseSpaceField) -> Result<PhaseSpaceField> {
    let f = match filter {
        Filter::Identity => return Ok(w.clone()),
        Filter::Field(f) => f,
    };
    let g = *w.grid();
    g.check_same(f.grid())?;
    let (i0, j0) = match (
        origin_index(g.x_min, g.dx(), g.nx),
        origin_index(g.p_min, g.dp(), g.np),
    ) {
        (Some(i), Some(j)) => (i, j),
        _ => {
            return Err(Error::GridMismatch(
                "convolution needs the origin on a grid node".into(),
            ))
        }
    };
    let mass: f64 = f.values().iter().sum();
    if !(mass > 0.0) {
        return Err(Error::invalid("filter has no positive mass"));
    }
    let (rows, cols) = (2 * g.nx - 1, 2 * g.np - 1);
    let pad = |src: &PhaseSpaceField| {
        let mut out = vec![FftComplex::new(0.0, 0.0); rows * cols];
        for i in 0..g.nx {
            for j in 0..g.np {
                out[i * cols + j] = FftComplex::new(src.at(i, j), 0.0);
            }
        }
        out
    };
    let mut fa = pad(f);
    let mut wa = pad(w);
    fft2(&mut fa, rows, cols, false);
    fft2(&mut wa, rows, cols, false);
    for (a, b) in fa.iter_mut().zip(&wa) {
        *a *= b;
    }
    fft2(&mut fa, rows, cols, true);
    let scale = 1.0 / (mass * (rows * cols) as f64);
    let values = (0..g.nx)
        .flat_map(|i| (0..g.np).map(move |j| (i, j)))
        .map(|(i, j)| fa[(i + i0) * cols + j + j0].re * scale)
        .collect();
    PhaseSpaceField::new(g, values)
}

/// Monte Carlo average of the squeezing action `W(e^{Γ}x, e^{−Γ}p)` over draws
/// of the net squeezing parameter `Γ`.
pub fn squeeze_average(w: &PhaseSpaceField, gammas: &[f64]) -> Result<PhaseSpaceField> {
    if gammas.len() < 100 {
        return Err(Error::invalid(format!(
            "squeeze average needs at least 100 samples, got {}",
            gammas.len()
        )));
    }
    let fields = gammas
        .par_iter()
        .map(|&g| wigner::scale(w, g))
        .collect::<Result<Vec<_>>>()?;
    let sum = tree_sum_fields(&fields);
    let inv = 1.0 / gammas.len() as f64;
    Ok(sum.map(|v| v * inv))
}

pub(crate) fn tree_sum_fields(fields: &[PhaseSpaceField]) -> PhaseSpaceField {
    match fields.len() {
        1 => fields[0].clone(),
        n => {
            let (l, r) = rayon::join(
                || tree_sum_fields(&fields[..n / 2]),
                || tree_sum_fields(&fields[n / 2..]),
            );
            l.zip_with(&r, |a, b| a + b)
        }
    }
}

/// Kernel in quadrature units for independent segments of per-quadrature
/// variance `var`, as a covariance density constant on each segment block.
pub fn iid_kernel(n: usize, var: f64) -> Kernel {
    Kernel::Segmented(KernelTable::iid(n, var, KernelUnits::Quadrature))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::GaussianMixtureSpec;
    use crate::noise::KernelUnits;
    use num_complex::Complex64;

    fn grid() -> PhaseSpaceGrid {
        PhaseSpaceGrid::default()
    }

    fn gaussian_state(var: f64) -> PhaseSpaceField {
        gaussian_filter(&CovarianceSpec::isotropic(var), &grid()).unwrap()
    }

    #[test]
    fn switching_function_basics() {
        let f = SwitchingFunction::alternating(4, 0.5).unwrap();
        assert_eq!(f.signs(), &[-1, 1, -1, 1]);
        assert_eq!(f.length(), 2.0);
        assert_eq!(f.value(0.2), -1.0);
        assert_eq!(f.value(0.7), 1.0);
        assert_eq!(f.value(2.0), 1.0);
        assert!(SwitchingFunction::new(vec![0.0, 1.0, 0.5], vec![1, 1]).is_err());
        assert!(SwitchingFunction::new(vec![0.1, 1.0], vec![1]).is_err());
        assert!(SwitchingFunction::new(vec![0.0, 1.0], vec![2]).is_err());
        let from_sched =
            SwitchingFunction::from_schedule(&InterventionSchedule::displacement(4).unwrap(), 0.5)
                .unwrap();
        assert_eq!(from_sched, f);
        assert!(
            SwitchingFunction::from_schedule(&InterventionSchedule::combined(4).unwrap(), 1.0)
                .is_err()
        );
    }

    #[test]
    fn sigma_of_zero_kernel() {
        let f = SwitchingFunction::alternating(3, 1.0).unwrap();
        let s = sigma_matrix(
            &f,
            &Kernel::Kicks(KernelTable::zeros(3, KernelUnits::Quadrature)),
        )
        .unwrap();
        assert_eq!((s.a, s.b, s.c), (0.0, 0.0, 0.0));
    }

    #[test]
    fn constant_kernel_cancels_for_even_n() {
        let f = SwitchingFunction::alternating(6, 0.3).unwrap();
        let s = sigma_matrix(
            &f,
            &Kernel::Segmented(KernelTable::constant(6, 0.7, KernelUnits::Quadrature)),
        )
        .unwrap();
        assert!(s.a.abs() < 1e-15 && s.b.abs() < 1e-15);
        let odd = SwitchingFunction::alternating(5, 0.3).unwrap();
        let s = sigma_matrix(
            &odd,
            &Kernel::Segmented(KernelTable::constant(5, 0.7, KernelUnits::Quadrature)),
        )
        .unwrap();
        assert!((s.a - 0.7 * 0.09).abs() < 1e-15);
    }

    #[test]
    fn iid_kernel_adds_segment_variances() {
        let (n, dl, s2) = (7, 0.25, 0.3);
        let f = SwitchingFunction::alternating(n, dl).unwrap();
        let s = sigma_matrix(&f, &iid_kernel(n, s2)).unwrap();
        let want = n as f64 * dl * dl * s2;
        assert!((s.a - want).abs() < 1e-15 && (s.b - want).abs() < 1e-15);
        assert_eq!(s.c, 0.0);
        // amplitude kick tables pick up the factor 2
        let kicks = Kernel::Kicks(KernelTable::iid(n, 0.04, KernelUnits::Amplitude));
        let s = sigma_matrix(&f, &kicks).unwrap();
        assert!((s.a - 2.0 * 0.04 * n as f64).abs() < 1e-15);
    }

    #[test]
    fn table_must_align_with_segments() {
        let f = SwitchingFunction::alternating(4, 1.0).unwrap();
        assert!(sigma_matrix(&f, &iid_kernel(5, 1.0)).is_err());
        let k = Kernel::Continuous {
            length: 3.0,
            density: Arc::new(|_, _| [1.0, 1.0, 0.0]),
        };
        assert!(sigma_matrix(&f, &k).is_err());
    }

    #[test]
    fn continuous_kernel_quadrature() {
        // exponential kernel e^{−|ℓ−ℓ'|} against a single segment of length L:
        // ∬ = 2(L − 1 + e^{−L})
        let l = 2.0;
        let f = SwitchingFunction::constant(1, l).unwrap();
        let k = Kernel::Continuous {
            length: l,
            density: Arc::new(|x: f64, y: f64| {
                let v = (-(x - y).abs()).exp();
                [v, 2.0 * v, 0.0]
            }),
        };
        let s = sigma_matrix(&f, &k).unwrap();
        let exact = 2.0 * (l - 1.0 + (-l).exp());
        assert!((s.a - exact).abs() < 1e-12, "{} vs {exact}", s.a);
        assert!((s.b - 2.0 * exact).abs() < 1e-12);
        // a smooth kernel is integrated to rounding error
        let smooth = Kernel::Continuous {
            length: l,
            density: Arc::new(|x: f64, y: f64| [x * y, 0.0, x]),
        };
        let s = sigma_matrix(&f, &smooth).unwrap();
        assert!((s.a - 4.0).abs() < 1e-13);
        assert!((s.c - 0.5 * (2.0 * 2.0 + 2.0 * 2.0)).abs() < 1e-13);
        // piecewise-constant density agrees with the segment-exact path
        let n = 4;
        let f = SwitchingFunction::alternating(n, 0.5).unwrap();
        let blocky = Kernel::Continuous {
            length: 2.0,
            density: Arc::new(|x: f64, y: f64| {
                let same = (x / 0.5).floor() == (y / 0.5).floor();
                [if same { 0.3 } else { 0.0 }, 0.0, 0.0]
            }),
        };
        let a = sigma_matrix(&f, &blocky).unwrap().a;
        let b = sigma_matrix(&f, &iid_kernel(n, 0.3)).unwrap().a;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gaussian_filter_shape() {
        let s2 = 0.2;
        let f = gaussian_state(s2);
        let ci = grid().nx / 2;
        assert!((f.at(ci, ci) - 1.0 / (2.0 * std::f64::consts::PI * s2)).abs() < 1e-12);
        assert!((f.integral() - 1.0).abs() < 1e-3);
        // peak grows like det^{-1/2}
        let peak = |det: f64| {
            let spec = CovarianceSpec {
                a: 1.0,
                b: det,
                c: 0.0,
            };
            gaussian_filter(&spec, &grid()).unwrap().at(ci, ci)
        };
        assert!((peak(1e-2) / peak(4e-2) - 2.0).abs() < 1e-12);
        let bad = CovarianceSpec {
            a: 1.0,
            b: 1.0,
            c: 1.0,
        };
        let err = gaussian_filter(&bad, &grid()).unwrap_err();
        assert!(err.to_string().contains("no Gaussian closed form"));
    }

    #[test]
    fn cpp_static_dichotomy() {
        assert!(cpp_static_filter(4, 1.0, 0.3, &grid())
            .unwrap()
            .is_identity());
        assert!(cpp_static_filter(3, 1.0, 0.0, &grid())
            .unwrap()
            .is_identity());
        match cpp_static_filter(3, 0.5, 0.8, &grid()).unwrap() {
            Filter::Field(f) => {
                let (vx, vp) = f.variances();
                assert!((vx - 0.16).abs() < 1e-6 && (vp - 0.16).abs() < 1e-6);
            }
            Filter::Identity => panic!("odd n must broaden"),
        }
    }

    #[test]
    fn convolution_adds_variances() {
        let w = gaussian_state(0.5);
        assert_eq!(convolve(&Filter::Identity, &w).unwrap(), w);
        let out = convolve(&Filter::Field(gaussian_state(0.3)), &w).unwrap();
        let exact = gaussian_state(0.8);
        assert!(out.max_abs_diff(&exact).unwrap() < 2e-3);
        assert!((out.integral() - 1.0).abs() < 2e-3);
    }

    #[test]
    fn convolution_of_shifted_state() {
        let g = grid();
        let w = wigner::wigner_of_mixture(
            &GaussianMixtureSpec::coherent(Complex64::new(0.5, -0.3)),
            &g,
        )
        .unwrap();
        let out = convolve(&Filter::Field(gaussian_state(0.2)), &w).unwrap();
        let (mx, mp) = out.mean();
        assert!((mx - 0.5 * 2f64.sqrt()).abs() < 1e-6 && (mp + 0.3 * 2f64.sqrt()).abs() < 1e-6);
        let (vx, vp) = out.variances();
        assert!((vx - 0.7).abs() < 1e-3 && (vp - 0.7).abs() < 1e-3);
    }

    #[test]
    fn convolution_needs_origin_node() {
        let g = PhaseSpaceGrid::new(-5.0, 5.0, -5.0, 5.0, 100, 100).unwrap();
        let f = PhaseSpaceField::from_fn(g, |x, p| (-(x * x + p * p)).exp()).unwrap();
        assert!(convolve(&Filter::Field(f.clone()), &f).is_err());
        let other = PhaseSpaceField::zeros(grid());
        assert!(convolve(&Filter::Field(other), &gaussian_state(0.5)).is_err());
    }

    #[test]
    fn squeeze_average_cases() {
        let w = gaussian_state(0.5);
        assert!(squeeze_average(&w, &[0.0; 50]).is_err());
        let same = squeeze_average(&w, &vec![0.0; 100]).unwrap();
        assert!(same.max_abs_diff(&w).unwrap() < 1e-15);
        // ±γ symmetric samples: exchanging x and p maps the average to itself
        let gammas: Vec<f64> = (0..200)
            .map(|i| if i % 2 == 0 { 0.2 } else { -0.2 })
            .collect();
        let avg = squeeze_average(&w, &gammas).unwrap();
        let n = grid().nx;
        for i in 0..n {
            for j in 0..n {
                assert!((avg.at(i, j) - avg.at(j, i)).abs() < 1e-12);
            }
        }
        let (vx, vp) = avg.variances();
        let expected = 0.5 * (0.5 * (0.4f64).exp() + 0.5 * (-0.4f64).exp());
        assert!((vx - expected).abs() < 2e-3 && (vp - expected).abs() < 2e-3);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let rule = gauss_legendre(QUADRATURE_ORDER);
        let total: f64 = rule.iter().map(|&(_, w)| w).sum();
        assert!((total - 2.0).abs() < 1e-14);
        let x10: f64 = rule.iter().map(|&(x, w)| w * x.powi(10)).sum();
        assert!((x10 - 2.0 / 11.0).abs() < 1e-14);
    }
}
