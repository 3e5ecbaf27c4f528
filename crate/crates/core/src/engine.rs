//! Trajectory evolution, ensemble averaging and intervention sweeps.
//!
//! A trajectory carries `noise.segments` noise steps. With `n` interventions
//! the path is cut into `n` equal intervals; each interval applies its noise
//! steps in order and is followed by the control `A_k`. Fidelity at `ℓ_k` is
//! taken after undoing the cumulative control, i.e. as if the path were closed
//! at that point, so every curve starts at exactly one.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fock::{
    gaussian_mixture_state, ComplexMatrix, DensityMatrix, FidelityReference, FockSpace,
    GaussianMixtureSpec,
};
use crate::gaussian::{self, GaussianState};
use crate::noise::{sample_trajectory, NoiseConfig, NoiseSample, NoiseTrajectory};
use crate::protocol::{ControlOp, InterventionSchedule, ProtocolKind};
use crate::wigner::{wigner_of_state, PhaseSpaceField, PhaseSpaceGrid};

/// Trajectories per reduction chunk. Fixed so sums never depend on the thread count.
const CHUNK: usize = 32;

/// What to do when a trajectory populates the guard band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LeakPolicy {
    /// Abort the run.
    #[default]
    Error,
    /// Drop the trajectory from every average and list it in [`SimResult::leaked`].
    Record,
    /// Evaluate the trajectory's fidelity curve exactly in phase space and
    /// drop it from the averaged state only. Needs Gaussian noise and a
    /// single-component initial state.
    Gaussian,
}

impl std::str::FromStr for LeakPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "error" => Ok(Self::Error),
            "record" => Ok(Self::Record),
            "gaussian" => Ok(Self::Gaussian),
            other => Err(Error::invalid(format!("unknown leak policy {other:?}"))),
        }
    }
}

impl std::fmt::Display for LeakPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Error => "error",
            Self::Record => "record",
            Self::Gaussian => "gaussian",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// `noise.seed` is ignored; trajectories are keyed by [`SimConfig::seed`].
    pub noise: NoiseConfig,
    pub protocol: ProtocolKind,
    /// Interventions `n`; must divide `noise.segments`. `None` intervenes after every step.
    pub interventions: Option<usize>,
    pub initial_state: GaussianMixtureSpec,
    pub trajectories: usize,
    pub fock_dim: usize,
    pub leak_threshold: f64,
    pub grid: PhaseSpaceGrid,
    pub seed: u64,
    /// Total path length `λ`; only sets the `ell` coordinate of curves.
    pub path_length: f64,
    pub leak_policy: LeakPolicy,
    /// Contiguous trajectory batches whose averaged states are kept for
    /// batch-means error estimates. 1 keeps none.
    pub batches: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            noise: NoiseConfig::default(),
            protocol: ProtocolKind::Parity,
            interventions: None,
            initial_state: GaussianMixtureSpec::vacuum(),
            trajectories: 200,
            fock_dim: 60,
            leak_threshold: 1e-6,
            grid: PhaseSpaceGrid::default(),
            seed: 0,
            path_length: 1.0,
            leak_policy: LeakPolicy::Error,
            batches: 1,
        }
    }
}

impl SimConfig {
    pub fn interventions(&self) -> usize {
        self.interventions.unwrap_or(self.noise.segments)
    }

    pub fn space(&self) -> Result<FockSpace> {
        FockSpace::with_leak_threshold(self.fock_dim, self.leak_threshold)
    }

    pub fn noise_config(&self) -> NoiseConfig {
        NoiseConfig {
            seed: self.seed,
            ..self.noise.clone()
        }
    }

    pub fn schedule(&self) -> Result<InterventionSchedule> {
        InterventionSchedule::for_protocol(&self.protocol, self.interventions())
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.grid.validate()?;
        if self.trajectories == 0 {
            return Err(Error::invalid("sim.trajectories must be >= 1"));
        }
        let n = self.interventions();
        if n == 0 || self.noise.segments % n != 0 {
            return Err(Error::invalid(format!(
                "sim.interventions = {n} must divide noise.segments = {}",
                self.noise.segments
            )));
        }
        if self.batches == 0 || self.batches > self.trajectories {
            return Err(Error::invalid(format!(
                "sim.batches = {} must lie in 1..=trajectories",
                self.batches
            )));
        }
        if !(self.path_length > 0.0 && self.path_length.is_finite()) {
            return Err(Error::invalid("sim.path_length must be > 0"));
        }
        if !self.protocol.suits(self.noise.kind) {
            log::warn!(
                "protocol {} is not designed for {} noise",
                self.protocol,
                self.noise.kind
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelityStats {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl FidelityStats {
    pub fn from_values(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
                count,
            };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let stderr = if count > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
            (var / count as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            stderr,
            count,
        }
    }
}

/// A trajectory that populated the guard band.
#[derive(Debug, Clone, PartialEq)]
pub struct LeakRecord {
    pub trajectory: usize,
    pub segment: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub interventions: usize,
    /// `ℓ_k = kλ/n`, `k = 0..=n`.
    pub ells: Vec<f64>,
    /// Trajectory id of each row of `fidelity_curves`.
    pub curve_ids: Vec<usize>,
    pub fidelity_curves: Vec<Vec<f64>>,
    pub mean_curve: Vec<f64>,
    /// Uniform average of the final states that stayed inside the truncation.
    pub averaged_state: DensityMatrix,
    pub averaged_wigner: PhaseSpaceField,
    pub final_fidelity: FidelityStats,
    pub leaked: Vec<LeakRecord>,
    /// Per-batch averaged states when `batches > 1`.
    pub batch_states: Vec<DensityMatrix>,
}

/// Apply `A_0`, the noise steps of each interval followed by `A_k`, and the
/// closing correction. Returns the `n + 1` states at `ℓ_0..ℓ_n` in the frame
/// with the cumulative control undone; the last one is the transmitted state.
///
/// The trajectory length must be a multiple of the schedule's segment count.
pub fn evolve_trajectory(
    rho0: &DensityMatrix,
    trajectory: &NoiseTrajectory,
    schedule: &InterventionSchedule,
) -> Result<Vec<DensityMatrix>> {
    let mut states = Vec::with_capacity(schedule.segments() + 1);
    evolve_with(rho0, trajectory, schedule, |_, s| {
        states.push(s.clone());
        Ok(())
    })?;
    Ok(states)
}

fn evolve_with(
    rho0: &DensityMatrix,
    trajectory: &NoiseTrajectory,
    schedule: &InterventionSchedule,
    mut visit: impl FnMut(usize, &DensityMatrix) -> Result<()>,
) -> Result<DensityMatrix> {
    let n = schedule.segments();
    if trajectory.len() % n != 0 || trajectory.is_empty() {
        return Err(Error::invalid(format!(
            "{} noise steps cannot be split into {n} intervals",
            trajectory.len()
        )));
    }
    let steps = trajectory.len() / n;
    let space = *rho0.space();
    let dim = space.dim();
    let undo = |rho: &DensityMatrix, cumulative: &ControlOp| {
        if cumulative.is_identity() {
            rho.clone()
        } else {
            rho.conjugated_diagonal(&cumulative.inverse().phases(dim))
        }
    };

    let mut cumulative = schedule.op(0);
    let mut rho = undo(rho0, &cumulative.inverse());
    let mut frame = undo(&rho, &cumulative);
    visit(0, &frame)?;

    let mut cache: Option<(&NoiseSample, ComplexMatrix)> = None;
    for k in 1..=n {
        let seg = |e: Error| e.at_segment(k);
        for sample in &trajectory.samples[(k - 1) * steps..k * steps] {
            if sample.is_zero() {
                continue;
            }
            let u = match &cache {
                Some((s, u)) if *s == sample => u,
                _ => {
                    let u = sample.unitary(trajectory.kind, &space).map_err(seg)?;
                    &cache.insert((sample, u)).1
                }
            };
            rho = rho.conjugated_unchecked(u, "noise step").map_err(seg)?;
        }
        let op = schedule.op(k);
        if !op.is_identity() {
            rho = rho.conjugated_diagonal(&op.phases(dim));
        }
        cumulative = op.compose(&cumulative);
        frame = undo(&rho, &cumulative);
        visit(k, &frame)?;
    }
    Ok(frame)
}

enum Outcome {
    Kept {
        curve: Vec<f64>,
        state: DensityMatrix,
    },
    /// Leaked, with an exact phase-space curve when the policy provides one.
    Leaked {
        record: LeakRecord,
        curve: Option<Vec<f64>>,
    },
}

struct Prepared {
    space: FockSpace,
    rho0: DensityMatrix,
    reference: FidelityReference,
    schedule: InterventionSchedule,
    noise: NoiseConfig,
    gaussian: Option<GaussianState>,
}

fn prepare(cfg: &SimConfig) -> Result<Prepared> {
    cfg.validate()?;
    let space = cfg.space()?;
    let rho0 = gaussian_mixture_state(&cfg.initial_state, &space)?;
    let gaussian = match cfg.leak_policy {
        LeakPolicy::Gaussian => Some(GaussianState::from_spec(&cfg.initial_state)?),
        _ => None,
    };
    Ok(Prepared {
        space,
        reference: FidelityReference::new(&rho0),
        rho0,
        schedule: cfg.schedule()?,
        noise: cfg.noise_config(),
        gaussian,
    })
}

fn run_one(p: &Prepared, policy: LeakPolicy, id: usize) -> Result<Outcome> {
    let traj = sample_trajectory(&p.noise, id as u64)?;
    let mut curve = Vec::with_capacity(p.schedule.segments() + 1);
    let result = evolve_with(&p.rho0, &traj, &p.schedule, |_, s| {
        curve.push(p.reference.fidelity(s)?);
        Ok(())
    });
    match result {
        Ok(state) => Ok(Outcome::Kept { curve, state }),
        Err(Error::Segment { segment, source })
            if policy != LeakPolicy::Error && matches!(*source, Error::Truncation { .. }) =>
        {
            let curve = match &p.gaussian {
                Some(g0) => Some(gaussian::trajectory_fidelities(g0, &traj, &p.schedule)?),
                None => None,
            };
            let record = LeakRecord {
                trajectory: id,
                segment,
                message: source.to_string(),
            };
            log::debug!("trajectory {id} leaked at segment {segment}");
            Ok(Outcome::Leaked { record, curve })
        }
        Err(e) => Err(e),
    }
}

/// Balanced pairwise reduction; the pairing depends only on the length.
fn tree_reduce<T>(mut items: Vec<T>, f: impl Fn(T, T) -> T) -> Option<T> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => f(a, b),
                None => a,
            });
        }
        items = next;
    }
    items.pop()
}

#[derive(Default)]
struct Accumulated {
    curve_ids: Vec<usize>,
    curves: Vec<Vec<f64>>,
    leaked: Vec<LeakRecord>,
    batch_sums: Vec<(ComplexMatrix, usize)>,
}

fn accumulate(p: &Prepared, cfg: &SimConfig) -> Result<Accumulated> {
    let m = cfg.trajectories;
    let mut acc = Accumulated::default();
    for b in 0..cfg.batches {
        let (lo, hi) = (b * m / cfg.batches, (b + 1) * m / cfg.batches);
        let mut chunk_sums = Vec::new();
        let mut kept = 0usize;
        for start in (lo..hi).step_by(CHUNK) {
            let ids: Vec<usize> = (start..(start + CHUNK).min(hi)).collect();
            let outcomes: Vec<Outcome> = ids
                .par_iter()
                .map(|&id| run_one(p, cfg.leak_policy, id).map_err(|e| e.in_trajectory(id)))
                .collect::<Result<_>>()?;
            let mut states = Vec::with_capacity(outcomes.len());
            for (id, outcome) in ids.into_iter().zip(outcomes) {
                match outcome {
                    Outcome::Kept { curve, state } => {
                        acc.curve_ids.push(id);
                        acc.curves.push(curve);
                        states.push(state.into_mat());
                    }
                    Outcome::Leaked { record, curve } => {
                        if let Some(curve) = curve {
                            acc.curve_ids.push(id);
                            acc.curves.push(curve);
                        }
                        acc.leaked.push(record);
                    }
                }
            }
            kept += states.len();
            if let Some(s) = tree_reduce(states, |a, b| a + b) {
                chunk_sums.push(s);
            }
        }
        let sum = tree_reduce(chunk_sums, |a, b| a + b)
            .unwrap_or_else(|| ComplexMatrix::zeros(p.space.dim(), p.space.dim()));
        acc.batch_sums.push((sum, kept));
    }
    Ok(acc)
}

fn averaged(
    space: FockSpace,
    sum: ComplexMatrix,
    count: usize,
    what: &str,
) -> Result<DensityMatrix> {
    if count == 0 {
        return Err(Error::InvalidState(format!(
            "every trajectory of the {what} leaked out of the truncation"
        )));
    }
    DensityMatrix::from_evolved(
        space,
        sum / num_complex::Complex64::new(count as f64, 0.0),
        what,
    )
}

fn mean_curve(curves: &[Vec<f64>], len: usize) -> Vec<f64> {
    (0..len)
        .map(|k| curves.iter().map(|c| c[k]).sum::<f64>() / curves.len() as f64)
        .collect()
}

/// Run `cfg.trajectories` trajectories on stream ids `0..M`. Bit-identical for
/// a given config whatever the size of the rayon pool.
pub fn run_ensemble(cfg: &SimConfig) -> Result<SimResult> {
    let p = prepare(cfg)?;
    let acc = accumulate(&p, cfg)?;
    let n = p.schedule.segments();

    let batch_states = if cfg.batches > 1 {
        acc.batch_sums
            .iter()
            .map(|(s, c)| averaged(p.space, s.clone(), *c, "batch average"))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let kept: usize = acc.batch_sums.iter().map(|(_, c)| c).sum();
    let total = tree_reduce(
        acc.batch_sums.into_iter().map(|(s, _)| s).collect(),
        |a, b| a + b,
    )
    .expect("at least one batch");
    let averaged_state = averaged(p.space, total, kept, "ensemble average")?;
    let averaged_wigner = wigner_of_state(&averaged_state, &cfg.grid)?;

    let finals: Vec<f64> = acc.curves.iter().map(|c| c[n]).collect();
    Ok(SimResult {
        interventions: n,
        ells: (0..=n)
            .map(|k| cfg.path_length * k as f64 / n as f64)
            .collect(),
        mean_curve: mean_curve(&acc.curves, n + 1),
        final_fidelity: FidelityStats::from_values(&finals),
        curve_ids: acc.curve_ids,
        fidelity_curves: acc.curves,
        averaged_state,
        averaged_wigner,
        leaked: acc.leaked,
        batch_states,
    })
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed used for the sweep point with `n` interventions.
pub fn sweep_seed(base: u64, n: usize) -> u64 {
    base ^ splitmix64(n as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub interventions: usize,
    pub mean_final_fidelity: f64,
    pub stderr: f64,
    pub leaked: usize,
}

/// One ensemble per `n`, each with `m_per_point` trajectories and seed
/// [`sweep_seed`]`(base.seed, n)`. The noise path resolution `noise.segments`
/// is held fixed, so every `n` must divide it.
pub fn sweep_interventions(
    base: &SimConfig,
    n_values: &[usize],
    m_per_point: usize,
) -> Result<Vec<SweepRow>> {
    if n_values.is_empty() {
        return Err(Error::invalid("sweep.n_values must not be empty"));
    }
    n_values
        .iter()
        .map(|&n| {
            let cfg = SimConfig {
                interventions: Some(n),
                trajectories: m_per_point,
                seed: sweep_seed(base.seed, n),
                batches: 1,
                ..base.clone()
            };
            let p = prepare(&cfg)?;
            let acc = accumulate(&p, &cfg)?;
            let finals: Vec<f64> = acc.curves.iter().map(|c| c[n]).collect();
            let stats = FidelityStats::from_values(&finals);
            log::info!("n = {n}: F = {:.6} ± {:.2e}", stats.mean, stats.stderr);
            Ok(SweepRow {
                interventions: n,
                mean_final_fidelity: stats.mean,
                stderr: stats.stderr,
                leaked: acc.leaked.len(),
            })
        })
        .collect()
}

/// Pointwise mean and standard error of the Wigner functions of batch states.
pub fn batch_wigner_stats(
    states: &[DensityMatrix],
    grid: &PhaseSpaceGrid,
) -> Result<(PhaseSpaceField, PhaseSpaceField)> {
    if states.len() < 2 {
        return Err(Error::invalid("batch statistics need at least two batches"));
    }
    let fields: Vec<PhaseSpaceField> = states
        .iter()
        .map(|s| wigner_of_state(s, grid))
        .collect::<Result<_>>()?;
    let b = fields.len() as f64;
    let len = grid.len();
    let mut mean = vec![0.0; len];
    let mut err = vec![0.0; len];
    for i in 0..len {
        let mu = fields.iter().map(|f| f.values()[i]).sum::<f64>() / b;
        let var = fields
            .iter()
            .map(|f| (f.values()[i] - mu).powi(2))
            .sum::<f64>()
            / (b - 1.0);
        mean[i] = mu;
        err[i] = (var / b).sqrt();
    }
    Ok((
        PhaseSpaceField::new(*grid, mean)?,
        PhaseSpaceField::new(*grid, err)?,
    ))
}

/// Least-squares fit of `L / (1 + e^{−k(n − n0)})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticFit {
    pub l: f64,
    pub k: f64,
    pub n0: f64,
    pub rss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The data carry no sigmoidal information (constant, or `k` collapsed to 0).
    pub degenerate: bool,
}

impl LogisticFit {
    pub fn eval(&self, n: f64) -> f64 {
        self.l / (1.0 + (-self.k * (n - self.n0)).exp())
    }
}

fn logistic_residuals(x: &[f64], y: &[f64], p: &Vector3<f64>) -> (f64, Matrix3<f64>, Vector3<f64>) {
    let (l, k, n0) = (p[0], p[1], p[2]);
    let mut rss = 0.0;
    let mut jtj = Matrix3::zeros();
    let mut jtr = Vector3::zeros();
    for (&xi, &yi) in x.iter().zip(y) {
        let e = (-k * (xi - n0)).exp();
        let d = 1.0 + e;
        let r = l / d - yi;
        let g = Vector3::new(1.0 / d, l * e * (xi - n0) / (d * d), -l * e * k / (d * d));
        rss += r * r;
        jtj += g * g.transpose();
        jtr += g * r;
    }
    (rss, jtj, jtr)
}

/// Levenberg–Marquardt fit over `(n, F)` points. Needs at least four points.
/// Non-convergence is reported in the result, not as an error.
pub fn logistic_fit(points: &[(f64, f64)]) -> Result<LogisticFit> {
    if points.len() < 4 {
        return Err(Error::invalid("logistic fit needs at least 4 points"));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite("logistic fit data"));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (ymin, ymax) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let (xmin, xmax) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let xmean = x.iter().sum::<f64>() / x.len() as f64;
    let scale = ymax.abs().max(ymin.abs()).max(1e-300);
    if ymax - ymin <= 1e-12 * scale || xmax - xmin <= 0.0 {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        return Ok(LogisticFit {
            l: 2.0 * mean,
            k: 0.0,
            n0: xmean,
            rss: y.iter().map(|v| (v - mean).powi(2)).sum(),
            iterations: 0,
            converged: true,
            degenerate: true,
        });
    }

    // Start from the midpoint crossing with the trend's sign.
    let cov: f64 = x.iter().zip(&y).map(|(&xi, &yi)| (xi - xmean) * yi).sum();
    let sign = if cov >= 0.0 { 1.0 } else { -1.0 };
    let l0 = if sign > 0.0 { ymax } else { ymin.max(ymax) };
    let half = 0.5 * (ymin + ymax);
    let n00 = x
        .iter()
        .zip(&y)
        .min_by(|a, b| (a.1 - half).abs().total_cmp(&(b.1 - half).abs()))
        .map(|(&xi, _)| xi)
        .unwrap_or(xmean);
    let mut p = Vector3::new(l0, sign * 4.0 / (xmax - xmin), n00);

    let (mut rss, mut jtj, mut jtr) = logistic_residuals(&x, &y, &p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=500 {
        iterations = it;
        let mut a = jtj;
        for i in 0..3 {
            a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
        }
        let Some(step) = a.lu().solve(&(-jtr)) else {
            lambda *= 10.0;
            continue;
        };
        let trial = p + step;
        let (r2, j2, g2) = logistic_residuals(&x, &y, &trial);
        if r2.is_finite() && r2 <= rss {
            let small = step.norm() <= 1e-12 * (1.0 + p.norm()) || rss - r2 <= 1e-15 * (1.0 + rss);
            p = trial;
            rss = r2;
            jtj = j2;
            jtr = g2;
            lambda = (lambda * 0.3).max(1e-12);
            if small {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                converged = jtr.norm() <= 1e-9 * (1.0 + rss.sqrt());
                break;
            }
        }
    }
    if !converged {
        log::warn!("logistic fit did not converge after {iterations} iterations");
    }
    let degenerate = p[1].abs() * (xmax - xmin) < 1e-6;
    Ok(LogisticFit {
        l: p[0],
        k: p[1],
        n0: p[2],
        rss,
        iterations,
        converged,
        degenerate,
    })
}
