//! Exact phase-space propagation of Gaussian states.
//!
//! Displacements, squeezes and rotations act on a Gaussian state as an affine
//! map of its mean and a congruence of its covariance, with no truncation. This
//! gives an infinite-dimensional reference for the Fock-space engine whenever
//! the noise is Gaussian and the input is a single displaced squeezed vacuum.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::GaussianMixtureSpec;
use crate::noise::{NoiseKind, NoiseSample, NoiseTrajectory};
use crate::protocol::{ControlOp, InterventionSchedule};

use std::f64::consts::SQRT_2;

/// Mean `(⟨x⟩, ⟨p⟩)` and covariance of a Gaussian state; the vacuum has `V = I/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianState {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

/// `ρ → U ρ U†` for a rotation `R_θ = e^{−iθ a†a}`: `⟨a⟩ → e^{−iθ}⟨a⟩`.
fn rotation_map(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, s, -s, c)
}

/// `ρ → S(z) ρ S(z)†`. For real `z = γ` this is `diag(e^{−γ}, e^{γ})`;
/// a phase `z = r e^{iφ}` conjugates that by `R_{φ/2}`.
fn squeeze_map(z: Complex64) -> Matrix2<f64> {
    let (r, phi) = (z.norm(), z.arg());
    let s = Matrix2::new((-r).exp(), 0.0, 0.0, r.exp());
    rotation_map(-phi / 2.0) * s * rotation_map(phi / 2.0)
}

impl GaussianState {
    pub fn vacuum() -> Self {
        Self {
            mean: Vector2::zeros(),
            cov: Matrix2::identity() * 0.5,
        }
    }

    /// The pure state of a one-component mixture spec.
    pub fn from_spec(spec: &GaussianMixtureSpec) -> Result<Self> {
        let [c] = spec.components() else {
            return Err(Error::invalid(
                "only single-component specs are Gaussian states",
            ));
        };
        let (x0, p0) = c.phase_space_center();
        let s2 = c.spread * c.spread;
        Ok(Self {
            mean: Vector2::new(x0, p0),
            cov: Matrix2::new(s2, 0.0, 0.0, 0.25 / s2),
        })
    }

    fn apply_linear(&mut self, m: &Matrix2<f64>) {
        self.mean = m * self.mean;
        self.cov = m * self.cov * m.transpose();
    }

    pub fn displace(&mut self, alpha: Complex64) {
        self.mean += Vector2::new(SQRT_2 * alpha.re, SQRT_2 * alpha.im);
    }

    pub fn squeeze(&mut self, z: Complex64) {
        self.apply_linear(&squeeze_map(z));
    }

    pub fn rotate(&mut self, op: &ControlOp) {
        self.apply_linear(&rotation_map(op.angle()));
    }

    /// One noise step; combined noise squeezes first, then displaces.
    pub fn apply_noise(&mut self, kind: NoiseKind, sample: &NoiseSample) -> Result<()> {
        match kind {
            NoiseKind::Displacement => self.displace(sample.alpha),
            NoiseKind::Squeezing => self.squeeze(sample.z),
            NoiseKind::Combined => {
                self.squeeze(sample.z);
                self.displace(sample.alpha);
            }
            NoiseKind::Polynomial { m } if m <= 1 => self.displace(sample.alpha),
            NoiseKind::Polynomial { .. } => {
                return Err(Error::invalid(
                    "polynomial noise of degree >= 2 has no Gaussian propagation",
                ))
            }
        }
        Ok(())
    }

    /// Fidelity with another Gaussian state, at least one of them pure:
    /// `F = exp(−½ Δᵀ (V₁+V₂)^{−1} Δ) / √det(V₁+V₂)`.
    pub fn fidelity_pure(&self, other: &GaussianState) -> f64 {
        let sum = self.cov + other.cov;
        let det = sum.determinant();
        let d = self.mean - other.mean;
        let inv = sum
            .try_inverse()
            .expect("covariances are positive definite");
        ((-0.5 * d.dot(&(inv * d))).exp() / det.sqrt()).clamp(0.0, 1.0)
    }
}

/// Fidelity curve of one trajectory propagated in phase space, with the same
/// stepping and frame convention as the Fock-space engine.
pub fn trajectory_fidelities(
    initial: &GaussianState,
    trajectory: &NoiseTrajectory,
    schedule: &InterventionSchedule,
) -> Result<Vec<f64>> {
    let n = schedule.segments();
    if n == 0 || trajectory.len() % n != 0 {
        return Err(Error::invalid(format!(
            "{} noise steps cannot be split into {n} intervals",
            trajectory.len()
        )));
    }
    let steps = trajectory.len() / n;
    let mut state = *initial;
    state.rotate(&schedule.op(0));
    let mut curve = Vec::with_capacity(n + 1);
    let frame = |st: &GaussianState, k: usize| {
        let mut s = *st;
        s.rotate(&schedule.cumulative(k).inverse());
        s
    };
    curve.push(initial.fidelity_pure(&frame(&state, 0)));
    for k in 1..=n {
        for sample in &trajectory.samples[(k - 1) * steps..k * steps] {
            state.apply_noise(trajectory.kind, sample)?;
        }
        state.rotate(&schedule.op(k));
        curve.push(initial.fidelity_pure(&frame(&state, k)));
    }
    Ok(curve)
}
