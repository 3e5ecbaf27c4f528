//! Wigner functions on rectangular phase-space grids.
//!
//! Coordinates follow `a = (x + ip)/√2`, so a coherent state `|α⟩` sits at
//! `√2 (Re α, Im α)` and the vacuum is `(1/π) e^{−(x²+p²)}`.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{ComplexMatrix, DensityMatrix, GaussianMixtureSpec};

use std::f64::consts::{FRAC_1_PI, SQRT_2};

/// Mass allowed to fall off the grid during a resampling.
pub const BOUNDARY_MASS_LIMIT: f64 = 1e-4;

/// Populations below this are ignored when choosing how many levels to evaluate.
const SUPPORT_TOL: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpaceGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub nx: usize,
    pub np: usize,
}

impl Default for PhaseSpaceGrid {
    fn default() -> Self {
        Self {
            x_min: -5.0,
            x_max: 5.0,
            p_min: -5.0,
            p_max: 5.0,
            nx: 101,
            np: 101,
        }
    }
}

impl PhaseSpaceGrid {
    pub fn new(
        x_min: f64,
        x_max: f64,
        p_min: f64,
        p_max: f64,
        nx: usize,
        np: usize,
    ) -> Result<Self> {
        let g = Self {
            x_min,
            x_max,
            p_min,
            p_max,
            nx,
            np,
        };
        g.validate()?;
        Ok(g)
    }

    /// Square grid `[−half, half]²` with `n` points per axis.
    pub fn square(half: f64, n: usize) -> Result<Self> {
        Self::new(-half, half, -half, half, n, n)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.p_min, self.p_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("grid bounds"));
        }
        if !(self.x_max > self.x_min && self.p_max > self.p_min) {
            return Err(Error::invalid("grid bounds must satisfy max > min"));
        }
        if self.nx < 8 || self.np < 8 {
            return Err(Error::invalid("grid needs at least 8 points per axis"));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn dp(&self) -> f64 {
        (self.p_max - self.p_min) / (self.np - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn p(&self, j: usize) -> f64 {
        self.p_min + j as f64 * self.dp()
    }

    pub fn len(&self) -> usize {
        self.nx * self.np
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trapezoid weight of node `(i, j)`, including the cell area.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let wx = if i == 0 || i + 1 == self.nx { 0.5 } else { 1.0 };
        let wp = if j == 0 || j + 1 == self.np { 0.5 } else { 1.0 };
        wx * wp * self.dx() * self.dp()
    }

    fn same_as(&self, other: &PhaseSpaceGrid) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
        self.nx == other.nx
            && self.np == other.np
            && close(self.x_min, other.x_min)
            && close(self.x_max, other.x_max)
            && close(self.p_min, other.p_min)
            && close(self.p_max, other.p_max)
    }

    pub(crate) fn check_same(&self, other: &PhaseSpaceGrid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

/// Real values on a [`PhaseSpaceGrid`], stored row-major over `x` then `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceField {
    grid: PhaseSpaceGrid,
    values: Vec<f64>,
}

impl PhaseSpaceField {
    pub fn new(grid: PhaseSpaceGrid, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                grid.nx,
                grid.np
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("phase-space field"));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: PhaseSpaceGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    /// Sample `f(x, p)` at every node.
    pub fn from_fn(grid: PhaseSpaceGrid, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<Self> {
        grid.validate()?;
        let values: Vec<f64> = (0..grid.nx)
            .into_par_iter()
            .flat_map_iter(|i| {
                let x = grid.x(i);
                let f = &f;
                (0..grid.np).map(move |j| f(x, grid.p(j)))
            })
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &PhaseSpaceGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.np + j]
    }

    /// `∬ f dx dp` by the trapezoid rule.
    pub fn integral(&self) -> f64 {
        self.weighted_sum(|v| v)
    }

    /// `∬ |f| dx dp`
    pub fn abs_integral(&self) -> f64 {
        self.weighted_sum(f64::abs)
    }

    fn weighted_sum(&self, g: impl Fn(f64) -> f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.grid.nx {
            for j in 0..self.grid.np {
                acc += self.grid.weight(i, j) * g(self.at(i, j));
            }
        }
        acc
    }

    /// `∬ f g dx dp`
    pub fn overlap(&self, other: &PhaseSpaceField) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        let mut acc = 0.0;
        for i in 0..self.grid.nx {
            for j in 0..self.grid.np {
                acc += self.grid.weight(i, j) * self.at(i, j) * other.at(i, j);
            }
        }
        Ok(acc)
    }

    /// `2π ∬ W²`, which equals `Tr ρ²` for a state's Wigner function.
    pub fn purity(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.weighted_sum(|v| v * v)
    }

    /// `∬ (x, p) W dx dp`
    pub fn mean(&self) -> (f64, f64) {
        let (mut mx, mut mp) = (0.0, 0.0);
        for i in 0..self.grid.nx {
            for j in 0..self.grid.np {
                let w = self.grid.weight(i, j) * self.at(i, j);
                mx += w * self.grid.x(i);
                mp += w * self.grid.p(j);
            }
        }
        (mx, mp)
    }

    /// Second central moments `(Var x, Var p)`.
    pub fn variances(&self) -> (f64, f64) {
        let (mx, mp) = self.mean();
        let norm = self.integral();
        let (mut vx, mut vp) = (0.0, 0.0);
        for i in 0..self.grid.nx {
            for j in 0..self.grid.np {
                let w = self.grid.weight(i, j) * self.at(i, j);
                vx += w * (self.grid.x(i) - mx).powi(2);
                vp += w * (self.grid.p(j) - mp).powi(2);
            }
        }
        (vx / norm, vp / norm)
    }

    pub fn max_abs_diff(&self, other: &PhaseSpaceField) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// `∬ |f − g| dx dp`
    pub fn l1_distance(&self, other: &PhaseSpaceField) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        let diff = self.zip_with(other, |a, b| a - b);
        Ok(diff.abs_integral())
    }

    pub(crate) fn zip_with(&self, other: &PhaseSpaceField, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Bilinear interpolation; reads outside the grid return 0.
    pub fn sample(&self, x: f64, p: f64) -> f64 {
        let g = &self.grid;
        let u = (x - g.x_min) / g.dx();
        let v = (p - g.p_min) / g.dp();
        let eps = 1e-9;
        if !(u >= -eps && v >= -eps && u <= (g.nx - 1) as f64 + eps && v <= (g.np - 1) as f64 + eps)
        {
            return 0.0;
        }
        let u = u.clamp(0.0, (g.nx - 1) as f64);
        let v = v.clamp(0.0, (g.np - 1) as f64);
        let i = (u.floor() as usize).min(g.nx - 2);
        let j = (v.floor() as usize).min(g.np - 2);
        let (fu, fv) = (u - i as f64, v - j as f64);
        self.at(i, j) * (1.0 - fu) * (1.0 - fv)
            + self.at(i + 1, j) * fu * (1.0 - fv)
            + self.at(i, j + 1) * (1.0 - fu) * fv
            + self.at(i + 1, j + 1) * fu * fv
    }

    /// Resample `out(x, p) = self(source(x, p))`.
    ///
    /// `image` maps a source node to where it lands in the output; mass on nodes
    /// whose image leaves the grid is reported as boundary loss.
    fn resample(
        &self,
        source: impl Fn(f64, f64) -> (f64, f64) + Sync,
        image: impl Fn(f64, f64) -> (f64, f64),
    ) -> Result<Self> {
        let g = self.grid;
        let mut lost = 0.0;
        let tol = 1e-9 * (g.dx() + g.dp());
        for i in 0..g.nx {
            for j in 0..g.np {
                let (x, p) = image(g.x(i), g.p(j));
                let inside = x >= g.x_min - tol
                    && x <= g.x_max + tol
                    && p >= g.p_min - tol
                    && p <= g.p_max + tol;
                if !inside {
                    lost += g.weight(i, j) * self.at(i, j).abs();
                }
            }
        }
        if lost > BOUNDARY_MASS_LIMIT {
            return Err(Error::BoundaryMass {
                mass: lost,
                limit: BOUNDARY_MASS_LIMIT,
            });
        }
        Self::from_fn(g, |x, p| {
            let (sx, sp) = source(x, p);
            self.sample(sx, sp)
        })
    }

    /// Write `x,p,w` rows, row-major over `x` then `p`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::invalid(format!("csv write: {e}"));
        w.write_record(["x", "p", "w"]).map_err(io)?;
        for i in 0..self.grid.nx {
            for j in 0..self.grid.np {
                w.write_record([
                    format!("{:.14e}", self.grid.x(i)),
                    format!("{:.14e}", self.grid.p(j)),
                    format!("{:.14e}", self.at(i, j)),
                ])
                .map_err(io)?;
            }
        }
        w.flush()
            .map_err(|e| Error::invalid(format!("csv write: {e}")))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| std::io::Error::other(e.to_string()))
    }

    /// Read a field written by [`write_csv`](Self::write_csv); the grid is
    /// recovered from the coordinate columns.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let bad = |msg: String| Error::invalid(format!("csv read: {msg}"));
        let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["x", "p", "w"] {
            return Err(bad(format!("expected header x,p,w, got {headers:?}")));
        }
        let mut xs = Vec::new();
        let mut ps = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let num = |k: usize| -> Result<f64> {
                rec[k]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("{e}: {:?}", &rec[k])))
            };
            xs.push(num(0)?);
            ps.push(num(1)?);
            values.push(num(2)?);
        }
        let np = ps
            .iter()
            .skip(1)
            .position(|&p| p == ps[0])
            .map_or(ps.len(), |k| k + 1);
        if np == 0 || values.len() % np != 0 {
            return Err(bad("rows do not form a rectangular grid".into()));
        }
        let nx = values.len() / np;
        let grid = PhaseSpaceGrid::new(xs[0], xs[values.len() - 1], ps[0], ps[np - 1], nx, np)?;
        Self::new(grid, values)
    }
}

/// Matrix elements `⟨n|D(β)|m⟩` for `n, m < k`, stored as `t[n * k + m]`.
///
/// Uses `⟨m+j|D(β)|m⟩ = √(m!/(m+j)!) β^j e^{−|β|²/2} L_m^{(j)}(|β|²)` and the
/// mirrored form above the diagonal. The Laguerre values come from the forward
/// three-term recurrence in `m`, which stays accurate far from the origin where
/// a direct recurrence on the matrix elements loses all digits.
fn displacement_elements(beta: Complex64, k: usize, t: &mut Vec<Complex64>) {
    t.clear();
    t.resize(k * k, Complex64::new(0.0, 0.0));
    let y = beta.norm_sqr();
    let r = beta.norm();
    let theta = beta.arg();
    for j in 0..k {
        // prefactor for m = 0: |β|^j e^{−y/2} / √j!
        let mut pref = if j == 0 {
            (-y / 2.0).exp()
        } else if r == 0.0 {
            0.0
        } else {
            let ln_fact: f64 = (2..=j).map(|q| (q as f64).ln()).sum();
            (-y / 2.0 + j as f64 * r.ln() - 0.5 * ln_fact).exp()
        };
        if pref == 0.0 {
            continue;
        }
        let below = Complex64::from_polar(1.0, j as f64 * theta);
        let above = if j % 2 == 0 {
            below.conj()
        } else {
            -below.conj()
        };
        let jf = j as f64;
        let (mut l_prev, mut l_cur) = (0.0, 1.0);
        for m in 0..k - j {
            let mag = pref * l_cur;
            t[(m + j) * k + m] = below * mag;
            if j > 0 {
                t[m * k + m + j] = above * mag;
            }
            let mf = m as f64;
            let l_next = ((2.0 * mf + 1.0 + jf - y) * l_cur - (mf + jf) * l_prev) / (mf + 1.0);
            l_prev = l_cur;
            l_cur = l_next;
            pref *= ((mf + 1.0) / (mf + jf + 1.0)).sqrt();
        }
    }
}

/// `Tr[M D(2α) Π]` over the leading `k` levels.
fn displaced_parity_trace(
    m: &ComplexMatrix,
    alpha: Complex64,
    k: usize,
    t: &mut Vec<Complex64>,
) -> Complex64 {
    displacement_elements(alpha * 2.0, k, t);
    let mut acc = Complex64::new(0.0, 0.0);
    for col in 0..k {
        let mut s = Complex64::new(0.0, 0.0);
        for n in 0..k {
            s += m[(col, n)] * t[n * k + col];
        }
        if col % 2 == 0 {
            acc += s;
        } else {
            acc -= s;
        }
    }
    acc
}

fn displaced_parity_field(
    m: &ComplexMatrix,
    k: usize,
    grid: &PhaseSpaceGrid,
    scale: f64,
) -> Result<PhaseSpaceField> {
    grid.validate()?;
    let values: Vec<f64> = (0..grid.nx)
        .into_par_iter()
        .flat_map_iter(|i| {
            let x = grid.x(i);
            let mut t = Vec::with_capacity(k * k);
            (0..grid.np)
                .map(|j| {
                    let alpha = Complex64::new(x, grid.p(j)) / SQRT_2;
                    scale * displaced_parity_trace(m, alpha, k, &mut t).re
                })
                .collect::<Vec<_>>()
        })
        .collect();
    PhaseSpaceField::new(*grid, values)
}

/// `W(x, p) = (1/π) Tr[ρ D(2α) Π]` with `α = (x + ip)/√2`.
///
/// Grid points are rejected if the displaced state they probe cannot be
/// represented: the parity kernel at `α` needs roughly `|2α|²` extra levels.
pub fn wigner_of_state(rho: &DensityMatrix, grid: &PhaseSpaceGrid) -> Result<PhaseSpaceField> {
    rho.check_leak("wigner evaluation")?;
    let k = rho.support_dim(SUPPORT_TOL);
    displaced_parity_field(rho.mat(), k, grid, FRAC_1_PI)
}

/// Weyl symbol `g(x, p) = 2 Tr[G D(2α) Π]`, so that `Tr(Gρ) = ∬ g W_ρ dx dp`.
///
/// The symbol of a truncated operator oscillates pointwise (the parity trace
/// of a finite identity does not converge to 1), but its overlap with any state
/// supported well below the truncation is exact.
pub fn dual_field(op: &ComplexMatrix, grid: &PhaseSpaceGrid) -> Result<PhaseSpaceField> {
    if op.nrows() != op.ncols() {
        return Err(Error::invalid("operator must be square"));
    }
    displaced_parity_field(op, op.nrows(), grid, 2.0)
}

/// Closed-form Wigner function of a Gaussian mixture.
pub fn wigner_of_mixture(
    spec: &GaussianMixtureSpec,
    grid: &PhaseSpaceGrid,
) -> Result<PhaseSpaceField> {
    let comps: Vec<_> = spec
        .components()
        .iter()
        .map(|c| {
            let (x0, p0) = c.phase_space_center();
            (c.weight, x0, p0, c.spread * c.spread)
        })
        .collect();
    PhaseSpaceField::from_fn(*grid, |x, p| {
        comps
            .iter()
            .map(|&(w, x0, p0, s2)| {
                w * FRAC_1_PI * (-(x - x0).powi(2) / (2.0 * s2) - 2.0 * s2 * (p - p0).powi(2)).exp()
            })
            .sum()
    })
}

/// `W'(x, p) = W(x + x', p + p')` with `(x', p') = √2 (Re α', Im α')`.
pub fn translate(field: &PhaseSpaceField, alpha: Complex64) -> Result<PhaseSpaceField> {
    if alpha == Complex64::new(0.0, 0.0) {
        return Ok(field.clone());
    }
    let (dx, dp) = (SQRT_2 * alpha.re, SQRT_2 * alpha.im);
    field.resample(move |x, p| (x + dx, p + dp), move |x, p| (x - dx, p - dp))
}

/// Phase-space action of conjugation by `S(γ)` for real `γ`:
/// `W'(x, p) = W(e^{γ} x, e^{−γ} p)`, squeezing `x` for `γ > 0`.
pub fn scale(field: &PhaseSpaceField, gamma: f64) -> Result<PhaseSpaceField> {
    if gamma == 0.0 {
        return Ok(field.clone());
    }
    let (a, b) = (gamma.exp(), (-gamma).exp());
    field.resample(move |x, p| (a * x, b * p), move |x, p| (b * x, a * p))
}

/// `∬ W^G W_ρ dx dp` where `W^G` is the Weyl symbol produced by [`dual_field`].
pub fn expectation(w: &PhaseSpaceField, dual: &PhaseSpaceField) -> Result<f64> {
    w.overlap(dual)
}
