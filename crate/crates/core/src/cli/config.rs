//! Run configuration files: flat `section.key = value` lines (a TOML subset).
//!
//! Every accepted key is listed in [`KEYS`]; anything else is rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;
use toml::Value;

use crate::engine::SimConfig;
use crate::fock::{GaussianMixtureSpec, MixtureComponent};
use crate::noise::NoiseKind;
use crate::protocol::ProtocolKind;

/// Accepted keys with a one-line description each.
pub const KEYS: &[(&str, &str)] = &[
    (
        "noise.kind",
        "displacement | squeezing | combined | polynomial",
    ),
    ("noise.degree", "degree m of polynomial noise"),
    ("noise.eta", "jump probability per noise step"),
    ("noise.sigma_disp", "std of Re α and Im α per draw"),
    ("noise.sigma_sqz", "std of the squeezing parameter per draw"),
    (
        "noise.sigma_higher",
        "std of order-3+ polynomial coefficients",
    ),
    ("noise.segments", "noise steps along the path"),
    ("noise.static", "hold the first draw for the whole path"),
    (
        "sim.protocol",
        "none | parity | squeezing | combined | cyclic(m)",
    ),
    (
        "sim.interventions",
        "interventions n (divides noise.segments; default: one per step)",
    ),
    ("sim.trajectories", "Monte Carlo trajectories M"),
    ("sim.seed", "RNG seed"),
    ("sim.fock_dim", "Fock-space truncation"),
    (
        "sim.leak_threshold",
        "guard-band population that counts as a leak",
    ),
    ("sim.leak_policy", "error | record | gaussian"),
    ("sim.path_length", "path length used for the ell column"),
    ("sim.batches", "batches kept for batch-means error bars"),
    ("state.alpha", "[re, im] coherent initial state"),
    (
        "state.components",
        "[[weight, re, im, spread], ...] Gaussian mixture",
    ),
    ("grid.x_min", "phase-space grid"),
    ("grid.x_max", "phase-space grid"),
    ("grid.p_min", "phase-space grid"),
    ("grid.p_max", "phase-space grid"),
    ("grid.nx", "phase-space grid"),
    ("grid.np", "phase-space grid"),
    ("sweep.n_values", "list of intervention counts"),
    (
        "sweep.trajectories",
        "trajectories per sweep point (default sim.trajectories)",
    ),
    ("sweep.fit", "fit a logistic curve to the sweep"),
    ("filter.kernel", "noise | iid_density | empirical"),
    (
        "filter.variance",
        "per-quadrature variance density of iid_density",
    ),
    ("filter.delta_ell", "segment length of iid_density"),
    (
        "filter.empirical_trajectories",
        "trajectories sampled for the empirical kernel",
    ),
    (
        "filter.mc_trajectories",
        "Monte Carlo reference size (0 = none)",
    ),
    ("filter.mc_batches", "batches for the Monte Carlo error bar"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub key: Option<String>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.key {
            Some(k) => write!(f, "config key `{k}`: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        key: Some(key.to_string()),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKernelChoice {
    /// Kick covariances implied by the noise section.
    Noise,
    /// Independent segments with a constant variance density.
    IidDensity,
    /// Sample covariance of generated trajectories.
    Empirical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub n_values: Vec<usize>,
    pub trajectories: Option<usize>,
    pub fit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSettings {
    pub kernel: FilterKernelChoice,
    pub variance: f64,
    pub delta_ell: f64,
    pub empirical_trajectories: usize,
    pub mc_trajectories: usize,
    pub mc_batches: usize,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            kernel: FilterKernelChoice::Noise,
            variance: 0.0,
            delta_ell: 1.0,
            empirical_trajectories: 1000,
            mc_trajectories: 0,
            mc_batches: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub sweep: SweepSettings,
    pub filter: FilterSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            sweep: SweepSettings {
                n_values: Vec::new(),
                trajectories: None,
                fit: false,
            },
            filter: FilterSettings::default(),
        }
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn f64_of(key: &str, v: &Value) -> Result<f64, ConfigError> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(err(key, "expected a number")),
    }
}

fn u64_of(key: &str, v: &Value) -> Result<u64, ConfigError> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        Value::Integer(_) => Err(err(key, "must be >= 0")),
        // Seeds above i64::MAX are written as strings.
        Value::String(s) => s
            .parse()
            .map_err(|_| err(key, "expected a non-negative integer")),
        _ => Err(err(key, "expected a non-negative integer")),
    }
}

fn usize_of(key: &str, v: &Value) -> Result<usize, ConfigError> {
    u64_of(key, v).map(|u| u as usize)
}

fn bool_of(key: &str, v: &Value) -> Result<bool, ConfigError> {
    v.as_bool()
        .ok_or_else(|| err(key, "expected true or false"))
}

fn str_of<'a>(key: &str, v: &'a Value) -> Result<&'a str, ConfigError> {
    v.as_str().ok_or_else(|| err(key, "expected a string"))
}

fn floats_of(key: &str, v: &Value) -> Result<Vec<f64>, ConfigError> {
    v.as_array()
        .ok_or_else(|| err(key, "expected an array"))?
        .iter()
        .map(|x| f64_of(key, x))
        .collect()
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError {
            key: None,
            message: e.to_string(),
        })?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);

        let mut cfg = RunConfig::default();
        let mut kind_name: Option<String> = None;
        let mut degree: Option<usize> = None;
        let mut alpha: Option<Complex64> = None;
        let mut components: Option<Vec<MixtureComponent>> = None;
        let sim = &mut cfg.sim;
        for (key, v) in &flat {
            let k = key.as_str();
            match k {
                "noise.kind" => kind_name = Some(str_of(k, v)?.to_string()),
                "noise.degree" => degree = Some(usize_of(k, v)?),
                "noise.eta" => sim.noise.eta = f64_of(k, v)?,
                "noise.sigma_disp" => sim.noise.sigma_disp = f64_of(k, v)?,
                "noise.sigma_sqz" => sim.noise.sigma_sqz = f64_of(k, v)?,
                "noise.sigma_higher" => sim.noise.sigma_higher = f64_of(k, v)?,
                "noise.segments" => sim.noise.segments = usize_of(k, v)?,
                "noise.static" => sim.noise.static_noise = bool_of(k, v)?,
                "sim.protocol" => {
                    sim.protocol = str_of(k, v)?
                        .parse()
                        .map_err(|e: crate::Error| err(k, e.to_string()))?
                }
                "sim.interventions" => sim.interventions = Some(usize_of(k, v)?),
                "sim.trajectories" => sim.trajectories = usize_of(k, v)?,
                "sim.seed" => sim.seed = u64_of(k, v)?,
                "sim.fock_dim" => sim.fock_dim = usize_of(k, v)?,
                "sim.leak_threshold" => sim.leak_threshold = f64_of(k, v)?,
                "sim.leak_policy" => {
                    sim.leak_policy = str_of(k, v)?
                        .parse()
                        .map_err(|e: crate::Error| err(k, e.to_string()))?
                }
                "sim.path_length" => sim.path_length = f64_of(k, v)?,
                "sim.batches" => sim.batches = usize_of(k, v)?,
                "state.alpha" => {
                    let a = floats_of(k, v)?;
                    let [re, im] = a[..] else {
                        return Err(err(k, "expected [re, im]"));
                    };
                    alpha = Some(Complex64::new(re, im));
                }
                "state.components" => {
                    let rows = v
                        .as_array()
                        .ok_or_else(|| err(k, "expected an array of rows"))?;
                    let parsed = rows
                        .iter()
                        .map(|row| {
                            let r = floats_of(k, row)?;
                            let [weight, re, im, spread] = r[..] else {
                                return Err(err(k, "each row is [weight, re, im, spread]"));
                            };
                            Ok(MixtureComponent {
                                weight,
                                center: Complex64::new(re, im),
                                spread,
                            })
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    components = Some(parsed);
                }
                "grid.x_min" => sim.grid.x_min = f64_of(k, v)?,
                "grid.x_max" => sim.grid.x_max = f64_of(k, v)?,
                "grid.p_min" => sim.grid.p_min = f64_of(k, v)?,
                "grid.p_max" => sim.grid.p_max = f64_of(k, v)?,
                "grid.nx" => sim.grid.nx = usize_of(k, v)?,
                "grid.np" => sim.grid.np = usize_of(k, v)?,
                "sweep.n_values" => {
                    cfg.sweep.n_values = v
                        .as_array()
                        .ok_or_else(|| err(k, "expected an array of integers"))?
                        .iter()
                        .map(|x| usize_of(k, x))
                        .collect::<Result<_, _>>()?
                }
                "sweep.trajectories" => cfg.sweep.trajectories = Some(usize_of(k, v)?),
                "sweep.fit" => cfg.sweep.fit = bool_of(k, v)?,
                "filter.kernel" => {
                    cfg.filter.kernel = match str_of(k, v)? {
                        "noise" => FilterKernelChoice::Noise,
                        "iid_density" => FilterKernelChoice::IidDensity,
                        "empirical" => FilterKernelChoice::Empirical,
                        other => return Err(err(k, format!("unknown kernel {other:?}"))),
                    }
                }
                "filter.variance" => cfg.filter.variance = f64_of(k, v)?,
                "filter.delta_ell" => cfg.filter.delta_ell = f64_of(k, v)?,
                "filter.empirical_trajectories" => {
                    cfg.filter.empirical_trajectories = usize_of(k, v)?
                }
                "filter.mc_trajectories" => cfg.filter.mc_trajectories = usize_of(k, v)?,
                "filter.mc_batches" => cfg.filter.mc_batches = usize_of(k, v)?,
                _ => return Err(err(k, "unknown key")),
            }
        }

        if let Some(name) = kind_name {
            sim.noise.kind = match name.as_str() {
                "displacement" => NoiseKind::Displacement,
                "squeezing" => NoiseKind::Squeezing,
                "combined" => NoiseKind::Combined,
                "polynomial" => NoiseKind::Polynomial {
                    m: degree
                        .ok_or_else(|| err("noise.degree", "required for polynomial noise"))?,
                },
                other => return Err(err("noise.kind", format!("unknown noise kind {other:?}"))),
            };
        } else if degree.is_some() {
            return Err(err(
                "noise.degree",
                "only valid with noise.kind = \"polynomial\"",
            ));
        }
        sim.initial_state = match (alpha, components) {
            (Some(_), Some(_)) => {
                return Err(err(
                    "state.alpha",
                    "give either state.alpha or state.components",
                ))
            }
            (Some(a), None) => GaussianMixtureSpec::coherent(a),
            (None, Some(c)) => {
                GaussianMixtureSpec::new(c).map_err(|e| err("state.components", e.to_string()))?
            }
            (None, None) => GaussianMixtureSpec::vacuum(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks, each reported against the key that sets the value.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.sim;
        let n = &s.noise;
        if !(0.0..=1.0).contains(&n.eta) {
            return Err(err(
                "noise.eta",
                format!("must lie in [0, 1], got {}", n.eta),
            ));
        }
        for (k, v) in [
            ("noise.sigma_disp", n.sigma_disp),
            ("noise.sigma_sqz", n.sigma_sqz),
            ("noise.sigma_higher", n.sigma_higher),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(err(k, format!("must be >= 0, got {v}")));
            }
        }
        if n.segments == 0 {
            return Err(err("noise.segments", "must be >= 1"));
        }
        if let NoiseKind::Polynomial { m: 0 } = n.kind {
            return Err(err("noise.degree", "must be >= 1"));
        }
        if s.trajectories == 0 {
            return Err(err("sim.trajectories", "must be >= 1"));
        }
        if let Some(k) = s.interventions {
            if k == 0 || n.segments % k != 0 {
                return Err(err(
                    "sim.interventions",
                    format!("{k} must divide noise.segments = {}", n.segments),
                ));
            }
        }
        if s.fock_dim < crate::fock::FockSpace::MIN_DIM {
            return Err(err(
                "sim.fock_dim",
                format!("must be >= {}", crate::fock::FockSpace::MIN_DIM),
            ));
        }
        if !(s.leak_threshold > 0.0 && s.leak_threshold < 1.0) {
            return Err(err("sim.leak_threshold", "must lie in (0, 1)"));
        }
        if !(s.path_length > 0.0 && s.path_length.is_finite()) {
            return Err(err("sim.path_length", "must be > 0"));
        }
        if s.batches == 0 || s.batches > s.trajectories {
            return Err(err("sim.batches", "must lie in 1..=sim.trajectories"));
        }
        s.grid.validate().map_err(|e| err("grid", e.to_string()))?;
        if let Some(0) = self.sweep.trajectories {
            return Err(err("sweep.trajectories", "must be >= 1"));
        }
        if self.sweep.n_values.contains(&0) {
            return Err(err("sweep.n_values", "entries must be >= 1"));
        }
        let f = &self.filter;
        if !(f.delta_ell > 0.0 && f.delta_ell.is_finite()) {
            return Err(err("filter.delta_ell", "must be > 0"));
        }
        if !(f.variance >= 0.0 && f.variance.is_finite()) {
            return Err(err("filter.variance", "must be >= 0"));
        }
        if f.mc_trajectories > 0 && (f.mc_batches < 2 || f.mc_batches > f.mc_trajectories) {
            return Err(err(
                "filter.mc_batches",
                "must lie in 2..=filter.mc_trajectories",
            ));
        }
        Ok(())
    }

    /// Every setting, resolved, in the accepted file format. Parsing the
    /// output gives back an identical configuration.
    pub fn to_toml_string(&self) -> String {
        let s = &self.sim;
        let n = &s.noise;
        let mut out = String::new();
        let (kind, degree) = match n.kind {
            NoiseKind::Polynomial { m } => ("polynomial", Some(m)),
            other => (
                match other {
                    NoiseKind::Displacement => "displacement",
                    NoiseKind::Squeezing => "squeezing",
                    _ => "combined",
                },
                None,
            ),
        };
        let f = |v: f64| format!("{v:?}");
        let _ = writeln!(out, "noise.kind = \"{kind}\"");
        if let Some(m) = degree {
            let _ = writeln!(out, "noise.degree = {m}");
        }
        let _ = writeln!(out, "noise.eta = {}", f(n.eta));
        let _ = writeln!(out, "noise.sigma_disp = {}", f(n.sigma_disp));
        let _ = writeln!(out, "noise.sigma_sqz = {}", f(n.sigma_sqz));
        let _ = writeln!(out, "noise.sigma_higher = {}", f(n.sigma_higher));
        let _ = writeln!(out, "noise.segments = {}", n.segments);
        let _ = writeln!(out, "noise.static = {}", n.static_noise);
        match &s.protocol {
            ProtocolKind::Custom { .. } => {
                log::warn!("custom protocols cannot be written to a config file; recording none")
            }
            p => {
                let _ = writeln!(out, "sim.protocol = \"{p}\"");
            }
        }
        if let Some(k) = s.interventions {
            let _ = writeln!(out, "sim.interventions = {k}");
        }
        let _ = writeln!(out, "sim.trajectories = {}", s.trajectories);
        if s.seed > i64::MAX as u64 {
            let _ = writeln!(out, "sim.seed = \"{}\"", s.seed);
        } else {
            let _ = writeln!(out, "sim.seed = {}", s.seed);
        }
        let _ = writeln!(out, "sim.fock_dim = {}", s.fock_dim);
        let _ = writeln!(out, "sim.leak_threshold = {}", f(s.leak_threshold));
        let _ = writeln!(out, "sim.leak_policy = \"{}\"", s.leak_policy);
        let _ = writeln!(out, "sim.path_length = {}", f(s.path_length));
        let _ = writeln!(out, "sim.batches = {}", s.batches);
        let rows: Vec<String> = s
            .initial_state
            .components()
            .iter()
            .map(|c| {
                format!(
                    "[{}, {}, {}, {}]",
                    f(c.weight),
                    f(c.center.re),
                    f(c.center.im),
                    f(c.spread)
                )
            })
            .collect();
        let _ = writeln!(out, "state.components = [{}]", rows.join(", "));
        let g = &s.grid;
        let _ = writeln!(out, "grid.x_min = {}", f(g.x_min));
        let _ = writeln!(out, "grid.x_max = {}", f(g.x_max));
        let _ = writeln!(out, "grid.p_min = {}", f(g.p_min));
        let _ = writeln!(out, "grid.p_max = {}", f(g.p_max));
        let _ = writeln!(out, "grid.nx = {}", g.nx);
        let _ = writeln!(out, "grid.np = {}", g.np);
        let nv: Vec<String> = self.sweep.n_values.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "sweep.n_values = [{}]", nv.join(", "));
        if let Some(m) = self.sweep.trajectories {
            let _ = writeln!(out, "sweep.trajectories = {m}");
        }
        let _ = writeln!(out, "sweep.fit = {}", self.sweep.fit);
        let fl = &self.filter;
        let kernel = match fl.kernel {
            FilterKernelChoice::Noise => "noise",
            FilterKernelChoice::IidDensity => "iid_density",
            FilterKernelChoice::Empirical => "empirical",
        };
        let _ = writeln!(out, "filter.kernel = \"{kernel}\"");
        let _ = writeln!(out, "filter.variance = {}", f(fl.variance));
        let _ = writeln!(out, "filter.delta_ell = {}", f(fl.delta_ell));
        let _ = writeln!(
            out,
            "filter.empirical_trajectories = {}",
            fl.empirical_trajectories
        );
        let _ = writeln!(out, "filter.mc_trajectories = {}", fl.mc_trajectories);
        let _ = writeln!(out, "filter.mc_batches = {}", fl.mc_batches);
        out
    }
}
