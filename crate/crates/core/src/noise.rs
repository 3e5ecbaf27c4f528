//! Piecewise-constant compound-Poisson noise along the transmission path.
//!
//! Each segment carries one noise sample. The first segment draws from the jump
//! distribution; at every later segment boundary a fresh draw replaces the
//! current value with probability `eta`.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{self, ComplexMatrix, FockSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type")]
pub enum NoiseKind {
    /// `D(α)` with complex `α`.
    Displacement,
    /// `S(γ)` with real `γ`.
    Squeezing,
    /// `D(α) S(γ)` per segment.
    Combined,
    /// `exp(Σ_{k ≤ m} b_k a†^k − b_k* a^k)`, with the `k = 2` term written as a squeeze.
    Polynomial { m: usize },
}

impl NoiseKind {
    pub fn label(&self) -> String {
        match self {
            NoiseKind::Displacement => "displacement".into(),
            NoiseKind::Squeezing => "squeezing".into(),
            NoiseKind::Combined => "combined".into(),
            NoiseKind::Polynomial { m } => format!("polynomial({m})"),
        }
    }

    pub fn has_displacement(&self) -> bool {
        match self {
            NoiseKind::Displacement | NoiseKind::Combined => true,
            NoiseKind::Squeezing => false,
            NoiseKind::Polynomial { m } => *m >= 1,
        }
    }

    pub fn has_squeezing(&self) -> bool {
        match self {
            NoiseKind::Squeezing | NoiseKind::Combined => true,
            NoiseKind::Displacement => false,
            NoiseKind::Polynomial { m } => *m >= 2,
        }
    }
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    /// Per-segment jump probability.
    pub eta: f64,
    /// Std of each real component of `α`.
    pub sigma_disp: f64,
    /// Std of the squeezing parameter (each component when complex).
    pub sigma_sqz: f64,
    /// Std of each component of the order-3+ coefficients of polynomial noise.
    pub sigma_higher: f64,
    pub segments: usize,
    pub seed: u64,
    /// Hold the first draw for the whole path.
    pub static_noise: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Displacement,
            eta: 0.2,
            sigma_disp: 0.05,
            sigma_sqz: 0.0,
            sigma_higher: 0.0,
            segments: 50,
            seed: 0,
            static_noise: false,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::invalid(format!(
                "noise.eta must lie in [0, 1], got {}",
                self.eta
            )));
        }
        for (name, v) in [
            ("noise.sigma_disp", self.sigma_disp),
            ("noise.sigma_sqz", self.sigma_sqz),
            ("noise.sigma_higher", self.sigma_higher),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.segments == 0 {
            return Err(Error::invalid("noise.segments must be >= 1"));
        }
        if let NoiseKind::Polynomial { m } = self.kind {
            if m == 0 {
                return Err(Error::invalid("polynomial noise degree must be >= 1"));
            }
        }
        Ok(())
    }
}

/// Noise parameters of one segment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NoiseSample {
    pub alpha: Complex64,
    pub z: Complex64,
    /// Coefficients `b_3, b_4, …` of polynomial noise.
    pub higher: Vec<Complex64>,
}

impl NoiseSample {
    pub fn is_zero(&self) -> bool {
        let zero = Complex64::new(0.0, 0.0);
        self.alpha == zero && self.z == zero && self.higher.iter().all(|b| *b == zero)
    }

    /// Unitary applied for this sample. Combined noise applies the squeeze first.
    pub fn unitary(&self, kind: NoiseKind, space: &FockSpace) -> Result<ComplexMatrix> {
        match kind {
            NoiseKind::Displacement => fock::displacement(space, self.alpha),
            NoiseKind::Squeezing => fock::squeeze(space, self.z),
            NoiseKind::Combined => Ok(fock::matmul(
                &fock::displacement(space, self.alpha)?,
                &fock::squeeze(space, self.z)?,
            )),
            NoiseKind::Polynomial { .. } => fock::expm(&self.generator(space)),
        }
    }

    /// Anti-Hermitian generator `G` with `U = exp(G)`.
    pub fn generator(&self, space: &FockSpace) -> ComplexMatrix {
        let mut g = fock::displacement_generator(space, self.alpha)
            + fock::squeeze_generator(space, self.z);
        for (i, &b) in self.higher.iter().enumerate() {
            let ak = fock::annihilation_power(space, i + 3);
            g += ak.adjoint() * b - ak * b.conj();
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTrajectory {
    pub kind: NoiseKind,
    pub samples: Vec<NoiseSample>,
    /// Segments (0-based) at which a fresh value was drawn after the first.
    pub jumps: Vec<usize>,
    pub seed: u64,
    pub stream_id: u64,
}

impl NoiseTrajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn alpha(&self, k: usize) -> Complex64 {
        self.samples[k].alpha
    }

    pub fn z(&self, k: usize) -> Complex64 {
        self.samples[k].z
    }

    /// Trajectory holding `sample` on every segment.
    pub fn constant(kind: NoiseKind, sample: NoiseSample, segments: usize) -> Self {
        Self {
            kind,
            samples: vec![sample; segments],
            jumps: Vec::new(),
            seed: 0,
            stream_id: 0,
        }
    }

    /// Trajectory from explicit per-segment samples.
    pub fn from_samples(kind: NoiseKind, samples: Vec<NoiseSample>) -> Self {
        let jumps = (1..samples.len())
            .filter(|&k| samples[k] != samples[k - 1])
            .collect();
        Self {
            kind,
            samples,
            jumps,
            seed: 0,
            stream_id: 0,
        }
    }
}

/// Generator for trajectory `stream_id`: ChaCha20 keyed by the seed, with the
/// stream id selecting an independent stream.
pub fn stream_rng(seed: u64, stream_id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

fn draw(cfg: &NoiseConfig, rng: &mut ChaCha20Rng) -> NoiseSample {
    let normal = |s: f64| Normal::new(0.0, s).expect("validated std");
    let (nd, ns, nh) = (
        normal(cfg.sigma_disp),
        normal(cfg.sigma_sqz),
        normal(cfg.sigma_higher),
    );
    let mut complex = |n: &Normal<f64>| Complex64::new(n.sample(rng), n.sample(rng));
    match cfg.kind {
        NoiseKind::Displacement => NoiseSample {
            alpha: complex(&nd),
            ..Default::default()
        },
        NoiseKind::Squeezing => NoiseSample {
            z: Complex64::new(ns.sample(rng), 0.0),
            ..Default::default()
        },
        NoiseKind::Combined => {
            let alpha = complex(&nd);
            NoiseSample {
                alpha,
                z: Complex64::new(ns.sample(rng), 0.0),
                ..Default::default()
            }
        }
        NoiseKind::Polynomial { m } => {
            let alpha = complex(&nd);
            let z = if m >= 2 {
                complex(&ns)
            } else {
                Complex64::new(0.0, 0.0)
            };
            let higher = (3..=m).map(|_| complex(&nh)).collect();
            NoiseSample { alpha, z, higher }
        }
    }
}

/// Sample one trajectory; deterministic in `(cfg.seed, stream_id)`.
pub fn sample_trajectory(cfg: &NoiseConfig, stream_id: u64) -> Result<NoiseTrajectory> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, stream_id);
    let mut current = draw(cfg, &mut rng);
    let mut samples = Vec::with_capacity(cfg.segments);
    let mut jumps = Vec::new();
    samples.push(current.clone());
    for k in 1..cfg.segments {
        if !cfg.static_noise && rng.random::<f64>() < cfg.eta {
            current = draw(cfg, &mut rng);
            jumps.push(k);
        }
        samples.push(current.clone());
    }
    Ok(NoiseTrajectory {
        kind: cfg.kind,
        samples,
        jumps,
        seed: cfg.seed,
        stream_id,
    })
}

/// Whether kernel entries describe `(Re α, Im α)` or the quadrature shifts
/// `(x, p) = √2 (Re α, Im α)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelUnits {
    Amplitude,
    Quadrature,
}

impl KernelUnits {
    /// Factor converting a covariance in these units to quadrature units.
    pub fn to_quadrature(&self) -> f64 {
        match self {
            KernelUnits::Amplitude => 2.0,
            KernelUnits::Quadrature => 1.0,
        }
    }
}

/// Segment-indexed covariances `E(x_k x_k')`, `E(p_k p_k')`, `E(x_k p_k')`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    pub xx: DMatrix<f64>,
    pub pp: DMatrix<f64>,
    pub xp: DMatrix<f64>,
    pub units: KernelUnits,
}

impl KernelTable {
    pub fn zeros(n: usize, units: KernelUnits) -> Self {
        Self {
            xx: DMatrix::zeros(n, n),
            pp: DMatrix::zeros(n, n),
            xp: DMatrix::zeros(n, n),
            units,
        }
    }

    pub fn segments(&self) -> usize {
        self.xx.nrows()
    }

    /// Independent segments of variance `var` in each quadrature.
    pub fn iid(n: usize, var: f64, units: KernelUnits) -> Self {
        let mut t = Self::zeros(n, units);
        t.xx.fill_diagonal(var);
        t.pp.fill_diagonal(var);
        t
    }

    /// Fully correlated (static) process.
    pub fn constant(n: usize, var: f64, units: KernelUnits) -> Self {
        let mut t = Self::zeros(n, units);
        t.xx.fill(var);
        t.pp.fill(var);
        t
    }

    /// Replacement-jump process: `var (1 − η)^{|k − k'|}`.
    pub fn cpp(n: usize, var: f64, eta: f64, units: KernelUnits) -> Self {
        let mut t = Self::zeros(n, units);
        for k in 0..n {
            for l in 0..n {
                let c = var * (1.0 - eta).powi((k as i32 - l as i32).abs());
                t.xx[(k, l)] = c;
                t.pp[(k, l)] = c;
            }
        }
        t
    }
}

/// Unbiased sample covariance of `(Re α_k, Im α_k)` across trajectories.
pub fn empirical_covariance(trajectories: &[NoiseTrajectory]) -> Result<KernelTable> {
    let m = trajectories.len();
    if m < 100 {
        return Err(Error::invalid(format!(
            "empirical covariance needs at least 100 trajectories, got {m}"
        )));
    }
    let n = trajectories[0].len();
    if let Some(t) = trajectories.iter().find(|t| t.len() != n) {
        return Err(Error::DimensionMismatch {
            left: n,
            right: t.len(),
        });
    }
    let xs = DMatrix::from_fn(m, n, |i, k| trajectories[i].alpha(k).re);
    let ps = DMatrix::from_fn(m, n, |i, k| trajectories[i].alpha(k).im);
    let center = |a: DMatrix<f64>| {
        let mean = a.row_mean();
        DMatrix::from_fn(m, n, |i, k| a[(i, k)] - mean[k])
    };
    let (xs, ps) = (center(xs), center(ps));
    let denom = (m - 1) as f64;
    Ok(KernelTable {
        xx: xs.transpose() * &xs / denom,
        pp: ps.transpose() * &ps / denom,
        xp: xs.transpose() * &ps / denom,
        units: KernelUnits::Amplitude,
    })
}

/// Trajectory dump with header `traj_id,segment,alpha_re,alpha_im,z_re,z_im`;
/// segments are numbered from 1.
pub fn write_trajectories_csv<W: Write>(out: W, trajectories: &[NoiseTrajectory]) -> Result<()> {
    let err = |e: csv::Error| Error::invalid(format!("csv write: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["traj_id", "segment", "alpha_re", "alpha_im", "z_re", "z_im"])
        .map_err(err)?;
    for t in trajectories {
        for (k, s) in t.samples.iter().enumerate() {
            w.write_record([
                t.stream_id.to_string(),
                (k + 1).to_string(),
                format!("{:.14e}", s.alpha.re),
                format!("{:.14e}", s.alpha.im),
                format!("{:.14e}", s.z.re),
                format!("{:.14e}", s.z.im),
            ])
            .map_err(err)?;
        }
    }
    w.flush()
        .map_err(|e| Error::invalid(format!("csv write: {e}")))
}
