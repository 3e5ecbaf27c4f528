//! Intervention schedules built from phase-space rotations and parity.
//!
//! Every control is diagonal in the number basis, `R_θ = diag(e^{−iθn})` with
//! `θ` a rational multiple of π, and parity is `R_π`. Angles are kept as exact
//! fractions so cumulative products and closing corrections cancel exactly.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{annihilation_power, ComplexMatrix, FockSpace};
use crate::noise::NoiseKind;

/// Diagonal control `R_θ` with `θ = num·π/den`, normalized to `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ControlOp {
    num: u64,
    den: u64,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl ControlOp {
    pub const IDENTITY: ControlOp = ControlOp { num: 0, den: 1 };
    pub const PARITY: ControlOp = ControlOp { num: 1, den: 1 };

    /// `R_{num·π/den}`.
    pub fn rotation(num: i64, den: u64) -> Self {
        assert!(den > 0, "rotation denominator must be positive");
        let period = 2 * den as i64;
        let num = num.rem_euclid(period) as u64;
        let g = gcd(num, den).max(1);
        Self {
            num: num / g,
            den: den / g,
        }
    }

    /// `R_{π/2}`
    pub fn quarter() -> Self {
        Self::rotation(1, 2)
    }

    pub fn is_identity(&self) -> bool {
        self.num == 0
    }

    pub fn is_parity(&self) -> bool {
        *self == Self::PARITY
    }

    /// `(num, den)` with the angle `num·π/den` in `[0, 2π)`.
    pub fn fraction(&self) -> (u64, u64) {
        (self.num, self.den)
    }

    pub fn angle(&self) -> f64 {
        std::f64::consts::PI * self.num as f64 / self.den as f64
    }

    /// `self · other`; rotations commute, so the order does not matter.
    pub fn compose(&self, other: &ControlOp) -> ControlOp {
        let den = self.den / gcd(self.den, other.den) * other.den;
        let num = self.num * (den / self.den) + other.num * (den / other.den);
        Self::rotation(num as i64, den)
    }

    pub fn inverse(&self) -> ControlOp {
        Self::rotation(-(self.num as i64), self.den)
    }

    /// Diagonal `e^{−iθn}` for `n < dim`, exact at multiples of π/2.
    pub fn phases(&self, dim: usize) -> Vec<Complex64> {
        let period = 2 * self.den;
        (0..dim as u64)
            .map(|n| {
                // e^{−iπ r/den} with r = num·n mod 2den
                let r = ((self.num as u128 * n as u128) % period as u128) as u64;
                if (2 * r) % self.den == 0 {
                    match (2 * r / self.den) % 4 {
                        0 => Complex64::new(1.0, 0.0),
                        1 => Complex64::new(0.0, -1.0),
                        2 => Complex64::new(-1.0, 0.0),
                        _ => Complex64::new(0.0, 1.0),
                    }
                } else {
                    Complex64::from_polar(1.0, -std::f64::consts::PI * r as f64 / self.den as f64)
                }
            })
            .collect()
    }

    pub fn matrix(&self, space: &FockSpace) -> ComplexMatrix {
        ComplexMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.phases(space.dim())))
    }
}

impl fmt::Display for ControlOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_identity() {
            f.write_str("I")
        } else if self.is_parity() {
            f.write_str("P")
        } else {
            write!(f, "R({}/{})", self.num, self.den)
        }
    }
}

impl FromStr for ControlOp {
    type Err = Error;

    /// Accepts `I`, `P` (parity), or `R(num/den)` for the angle `num·π/den`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t {
            "I" | "id" | "identity" => return Ok(Self::IDENTITY),
            "P" | "parity" => return Ok(Self::PARITY),
            _ => {}
        }
        let inner = t
            .strip_prefix("R(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| Error::invalid(format!("unknown control {t:?}")))?;
        let (num, den) = inner.split_once('/').unwrap_or((inner, "1"));
        let num: i64 = num
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad control {t:?}")))?;
        let den: u64 = den
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad control {t:?}")))?;
        if den == 0 {
            return Err(Error::invalid(format!("bad control {t:?}")));
        }
        Ok(Self::rotation(num, den))
    }
}

impl Serialize for ControlOp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ControlOp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupLabel {
    ParityGroup,
    SqueezeSet,
    GaussianGroup,
    Cyclic(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlGroup {
    pub label: GroupLabel,
    pub elements: Vec<ControlOp>,
}

impl ControlGroup {
    /// `{I, Π}`
    pub fn parity() -> Self {
        Self {
            label: GroupLabel::ParityGroup,
            elements: vec![ControlOp::IDENTITY, ControlOp::PARITY],
        }
    }

    /// `{I, R_{π/2}}`. Not closed under products; squeezes only need the sign flip.
    pub fn squeeze_set() -> Self {
        Self {
            label: GroupLabel::SqueezeSet,
            elements: vec![ControlOp::IDENTITY, ControlOp::quarter()],
        }
    }

    /// `{I, R_{π/2}, R_π, R_{3π/2}}`
    pub fn gaussian() -> Self {
        Self {
            label: GroupLabel::GaussianGroup,
            elements: (0..4).map(|j| ControlOp::rotation(j, 2)).collect(),
        }
    }

    /// `{R_{jπ/m}}` for `j = 0..2m`.
    pub fn cyclic(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("cyclic group order m must be >= 1"));
        }
        Ok(Self {
            label: GroupLabel::Cyclic(m),
            elements: (0..2 * m as i64)
                .map(|j| ControlOp::rotation(j, m as u64))
                .collect(),
        })
    }

    pub fn from_label(label: GroupLabel) -> Result<Self> {
        match label {
            GroupLabel::ParityGroup => Ok(Self::parity()),
            GroupLabel::SqueezeSet => Ok(Self::squeeze_set()),
            GroupLabel::GaussianGroup => Ok(Self::gaussian()),
            GroupLabel::Cyclic(m) => Self::cyclic(m),
        }
    }

    /// Powers `p` such that `a^p` and `a†^p` are averaged away by design.
    pub fn designed_powers(&self) -> Vec<usize> {
        match self.label {
            GroupLabel::ParityGroup => vec![1],
            GroupLabel::SqueezeSet => vec![2],
            GroupLabel::GaussianGroup => vec![1, 2],
            GroupLabel::Cyclic(m) => (1..=m).collect(),
        }
    }

    /// `(name, X)` for every designed generator.
    pub fn designed_generators(&self, space: &FockSpace) -> Vec<(String, ComplexMatrix)> {
        let mut out = Vec::new();
        for p in self.designed_powers() {
            let ap = annihilation_power(space, p);
            out.push((power_label("a†", p), ap.adjoint()));
            out.push((power_label("a", p), ap));
        }
        out
    }
}

pub(crate) fn power_label(base: &str, p: usize) -> String {
    if p == 1 {
        base.to_string()
    } else {
        format!("{base}^{p}")
    }
}

impl FromStr for GroupLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t {
            "parity" | "parity_group" => Ok(GroupLabel::ParityGroup),
            "squeeze" | "squeeze_set" | "squeezing" => Ok(GroupLabel::SqueezeSet),
            "gaussian" | "gaussian_group" | "combined" => Ok(GroupLabel::GaussianGroup),
            _ => parse_cyclic(t)
                .map(GroupLabel::Cyclic)
                .ok_or_else(|| Error::invalid(format!("unknown control group {t:?}"))),
        }
    }
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupLabel::ParityGroup => f.write_str("parity_group"),
            GroupLabel::SqueezeSet => f.write_str("squeeze_set"),
            GroupLabel::GaussianGroup => f.write_str("gaussian_group"),
            GroupLabel::Cyclic(m) => write!(f, "cyclic({m})"),
        }
    }
}

/// `cyclic(3)` or `cyclic:3`
fn parse_cyclic(t: &str) -> Option<usize> {
    let rest = t.strip_prefix("cyclic")?;
    let digits = rest
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .or_else(|| rest.strip_prefix(':'))?;
    digits.trim().parse().ok().filter(|&m| m >= 1)
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut q = 2;
    while q * q <= n {
        if n % q == 0 {
            out.push(q);
            while n % q == 0 {
                n /= q;
            }
        }
        q += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// `Σ_g e^{−iθ_g δ}` over the group elements.
///
/// Every term is a `2D`-th root of unity. Complete regular polygons of roots
/// sum to exactly zero, so they are cancelled in integer arithmetic before the
/// remainder is summed in floating point. This keeps designed residuals at
/// exactly zero instead of a few ulps times the generator norm.
fn phase_sum(elements: &[ControlOp], delta: i64) -> Complex64 {
    let d = elements.iter().fold(1, |acc, g| lcm(acc, g.den));
    let period = 2 * d;
    let mut counts = vec![0u32; period as usize];
    for g in elements {
        let e = (g.num as i128 * (d / g.den) as i128 * delta as i128).rem_euclid(period as i128);
        counts[e as usize] += 1;
    }
    for q in prime_factors(period) {
        let step = (period / q) as usize;
        for r in 0..step {
            loop {
                let full = (0..q as usize).all(|k| counts[r + k * step] > 0);
                if !full {
                    break;
                }
                for k in 0..q as usize {
                    counts[r + k * step] -= 1;
                }
            }
        }
    }
    let unit = ControlOp { num: 1, den: d };
    let roots = unit.phases(period as usize);
    counts
        .iter()
        .zip(&roots)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &w)| w * c as f64)
        .sum()
}

/// `‖(1/|G|) Σ_g g† X g‖_max`.
///
/// For diagonal `g`, `(g† X g)_ij = e^{−iθ_g (j − i)} X_ij`, so each entry is
/// `X_ij` times a phase sum that depends only on `j − i`.
pub fn group_average_residual(group: &ControlGroup, generator: &ComplexMatrix) -> Result<f64> {
    let d = generator.nrows();
    if generator.ncols() != d {
        return Err(Error::invalid("generator must be square"));
    }
    if group.elements.is_empty() {
        return Err(Error::invalid("empty control group"));
    }
    let scale = 1.0 / group.elements.len() as f64;
    let sums: Vec<Complex64> = (0..2 * d as i64 - 1)
        .map(|k| phase_sum(&group.elements, k - (d as i64 - 1)))
        .collect();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let x = generator[(i, j)];
            if x == Complex64::new(0.0, 0.0) {
                continue;
            }
            let s = sums[j + d - 1 - i];
            worst = worst.max((x * s * scale).norm());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    None,
    Parity,
    Squeezing,
    Combined,
    Cyclic(usize),
    /// `A_0 = first`, then `cycle` repeated for `A_1..A_n`.
    Custom {
        first: ControlOp,
        cycle: Vec<ControlOp>,
    },
}

impl ProtocolKind {
    /// The protocol built for a noise kind.
    pub fn designed_for(noise: NoiseKind) -> ProtocolKind {
        match noise {
            NoiseKind::Displacement => ProtocolKind::Parity,
            NoiseKind::Squeezing => ProtocolKind::Squeezing,
            NoiseKind::Combined => ProtocolKind::Combined,
            NoiseKind::Polynomial { m } => ProtocolKind::Cyclic(m),
        }
    }

    /// Whether the schedule's group averages away every generator of `noise`.
    pub fn suits(&self, noise: NoiseKind) -> bool {
        let covers = |powers: &[usize]| {
            let needed: Vec<usize> = match noise {
                NoiseKind::Displacement => vec![1],
                NoiseKind::Squeezing => vec![2],
                NoiseKind::Combined => vec![1, 2],
                NoiseKind::Polynomial { m } => (1..=m).collect(),
            };
            needed.iter().all(|p| powers.contains(p))
        };
        match self {
            ProtocolKind::None | ProtocolKind::Custom { .. } => true,
            ProtocolKind::Parity => covers(&[1]),
            ProtocolKind::Squeezing => covers(&[2]),
            ProtocolKind::Combined => covers(&[1, 2]),
            ProtocolKind::Cyclic(m) => covers(&(1..=*m).collect::<Vec<_>>()),
        }
    }
}

impl FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t {
            "none" => Ok(ProtocolKind::None),
            "parity" | "displacement" => Ok(ProtocolKind::Parity),
            "squeezing" | "rotation" => Ok(ProtocolKind::Squeezing),
            "combined" | "gaussian" => Ok(ProtocolKind::Combined),
            _ => parse_cyclic(t)
                .map(ProtocolKind::Cyclic)
                .ok_or_else(|| Error::invalid(format!("unknown protocol {t:?}"))),
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolKind::None => f.write_str("none"),
            ProtocolKind::Parity => f.write_str("parity"),
            ProtocolKind::Squeezing => f.write_str("squeezing"),
            ProtocolKind::Combined => f.write_str("combined"),
            ProtocolKind::Cyclic(m) => write!(f, "cyclic({m})"),
            ProtocolKind::Custom { .. } => f.write_str("custom"),
        }
    }
}

/// Controls `A_0..A_n` around `n` noise segments, plus an optional closing
/// correction that returns the cumulative control to the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionSchedule {
    ops: Vec<ControlOp>,
    closing: Option<ControlOp>,
}

impl InterventionSchedule {
    /// Adds the closing correction when the controls do not already multiply to `I`.
    pub fn from_ops(ops: Vec<ControlOp>) -> Result<Self> {
        if ops.len() < 2 {
            return Err(Error::invalid("schedule needs at least one segment"));
        }
        let total = ops
            .iter()
            .fold(ControlOp::IDENTITY, |acc, op| acc.compose(op));
        let closing = (!total.is_identity()).then(|| total.inverse());
        Ok(Self { ops, closing })
    }

    fn check_n(n: usize) -> Result<()> {
        if n == 0 {
            Err(Error::invalid("schedule needs n >= 1 segments"))
        } else {
            Ok(())
        }
    }

    /// No interventions.
    pub fn none(n: usize) -> Result<Self> {
        Self::check_n(n)?;
        Self::from_ops(vec![ControlOp::IDENTITY; n + 1])
    }

    /// `A_k = Π` for every boundary.
    pub fn displacement(n: usize) -> Result<Self> {
        Self::check_n(n)?;
        Self::from_ops(vec![ControlOp::PARITY; n + 1])
    }

    /// `A_0 = R_{π/2}`, then alternating `R_{π/2}†`, `R_{π/2}`.
    pub fn squeezing(n: usize) -> Result<Self> {
        Self::check_n(n)?;
        let r = ControlOp::quarter();
        let ops = (0..=n)
            .map(|k| if k % 2 == 0 { r } else { r.inverse() })
            .collect();
        Self::from_ops(ops)
    }

    /// `A_0 = I`, `A_k = R_{π/2}`: the cumulative control cycles the four-element group.
    pub fn combined(n: usize) -> Result<Self> {
        Self::cyclic(2, n)
    }

    /// `A_0 = I`, `A_k = R_{π/m}`.
    pub fn cyclic(m: usize, n: usize) -> Result<Self> {
        Self::check_n(n)?;
        if m == 0 {
            return Err(Error::invalid("cyclic order m must be >= 1"));
        }
        let step = ControlOp::rotation(1, m as u64);
        let mut ops = vec![ControlOp::IDENTITY];
        ops.extend(std::iter::repeat_n(step, n));
        Self::from_ops(ops)
    }

    pub fn custom(first: ControlOp, cycle: &[ControlOp], n: usize) -> Result<Self> {
        Self::check_n(n)?;
        if cycle.is_empty() {
            return Err(Error::invalid("custom protocol needs a nonempty cycle"));
        }
        let mut ops = vec![first];
        ops.extend((0..n).map(|k| cycle[k % cycle.len()]));
        Self::from_ops(ops)
    }

    pub fn for_protocol(kind: &ProtocolKind, n: usize) -> Result<Self> {
        match kind {
            ProtocolKind::None => Self::none(n),
            ProtocolKind::Parity => Self::displacement(n),
            ProtocolKind::Squeezing => Self::squeezing(n),
            ProtocolKind::Combined => Self::combined(n),
            ProtocolKind::Cyclic(m) => Self::cyclic(*m, n),
            ProtocolKind::Custom { first, cycle } => Self::custom(*first, cycle, n),
        }
    }

    pub fn segments(&self) -> usize {
        self.ops.len() - 1
    }

    pub fn ops(&self) -> &[ControlOp] {
        &self.ops
    }

    pub fn op(&self, k: usize) -> ControlOp {
        self.ops[k]
    }

    pub fn closing(&self) -> Option<ControlOp> {
        self.closing
    }

    /// `C_k = A_k ··· A_0`
    pub fn cumulative(&self, k: usize) -> ControlOp {
        self.ops[..=k]
            .iter()
            .fold(ControlOp::IDENTITY, |acc, op| acc.compose(op))
    }

    /// Product of every control including the closing correction.
    pub fn total(&self) -> ControlOp {
        let c = self.cumulative(self.segments());
        match self.closing {
            Some(z) => c.compose(&z),
            None => c,
        }
    }

    /// Audit dump with header `k,op,angle`; the closing correction is the row `closing`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let err = |e: csv::Error| Error::invalid(format!("csv write: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "op", "angle"]).map_err(err)?;
        let rows = self
            .ops
            .iter()
            .enumerate()
            .map(|(k, op)| (k.to_string(), op))
            .chain(self.closing.iter().map(|op| ("closing".to_string(), op)));
        for (k, op) in rows {
            w.write_record([k, op.to_string(), format!("{:.17e}", op.angle())])
                .map_err(err)?;
        }
        w.flush()
            .map_err(|e| Error::invalid(format!("csv write: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{
        self, annihilation, conjugate, displacement, fidelity, matmul, max_abs_diff, momentum,
        position, squeeze, DensityMatrix,
    };

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// `closing · A_n N_n ··· A_1 N_1 A_0` with `N_k = noise[k-1]`.
    fn channel(
        space: &FockSpace,
        sched: &InterventionSchedule,
        noise: &[ComplexMatrix],
    ) -> ComplexMatrix {
        let mut u = sched.op(0).matrix(space);
        for (k, nk) in noise.iter().enumerate() {
            u = matmul(&sched.op(k + 1).matrix(space), &matmul(nk, &u));
        }
        if let Some(z) = sched.closing() {
            u = matmul(&z.matrix(space), &u);
        }
        u
    }

    fn vacuum_fidelity(space: &FockSpace, u: &ComplexMatrix) -> f64 {
        let vac = DensityMatrix::vacuum(*space);
        fidelity(&vac, &conjugate(&vac, u).unwrap()).unwrap()
    }

    #[test]
    fn control_arithmetic() {
        let r = ControlOp::quarter();
        assert_eq!(r.compose(&r), ControlOp::PARITY);
        assert_eq!(r.compose(&r.inverse()), ControlOp::IDENTITY);
        assert_eq!(ControlOp::rotation(-1, 2), ControlOp::rotation(3, 2));
        assert_eq!(ControlOp::rotation(4, 2), ControlOp::IDENTITY);
        assert_eq!(
            ControlOp::rotation(1, 3).compose(&ControlOp::rotation(1, 6)),
            r
        );
        for s in ["I", "P", "R(1/2)", "R(5/3)"] {
            assert_eq!(s.parse::<ControlOp>().unwrap().to_string(), s);
        }
        assert!("Q".parse::<ControlOp>().is_err());
    }

    #[test]
    fn exact_quarter_phases() {
        let p = ControlOp::quarter().phases(5);
        assert_eq!(
            p,
            vec![
                c(1.0, 0.0),
                c(0.0, -1.0),
                c(-1.0, 0.0),
                c(0.0, 1.0),
                c(1.0, 0.0)
            ]
        );
        let s = FockSpace::new(40).unwrap();
        assert_eq!(ControlOp::PARITY.matrix(&s), fock::parity(&s));
        let theta = ControlOp::rotation(1, 3);
        assert!(max_abs_diff(&theta.matrix(&s), &fock::rotation(&s, theta.angle())) < 1e-13);
    }

    #[test]
    fn group_residuals_vanish_for_designed_generators() {
        let s = FockSpace::new(40).unwrap();
        for g in [
            ControlGroup::parity(),
            ControlGroup::squeeze_set(),
            ControlGroup::gaussian(),
            ControlGroup::cyclic(3).unwrap(),
            ControlGroup::cyclic(5).unwrap(),
            ControlGroup::cyclic(7).unwrap(),
        ] {
            for (name, x) in g.designed_generators(&s) {
                let r = group_average_residual(&g, &x).unwrap();
                assert_eq!(r, 0.0, "{:?} {name}", g.label);
            }
        }
        assert_eq!(
            group_average_residual(&ControlGroup::parity(), &position(&s)).unwrap(),
            0.0
        );
        assert_eq!(
            group_average_residual(&ControlGroup::parity(), &momentum(&s)).unwrap(),
            0.0
        );
    }

    #[test]
    fn out_of_design_generator_survives() {
        let s = FockSpace::new(20).unwrap();
        // the four quarter turns remove every power except multiples of four
        let a3 = annihilation_power(&s, 3);
        assert_eq!(
            group_average_residual(&ControlGroup::cyclic(2).unwrap(), &a3).unwrap(),
            0.0
        );
        let a4 = annihilation_power(&s, 4);
        assert!(group_average_residual(&ControlGroup::cyclic(2).unwrap(), &a4).unwrap() > 0.1);
        let n = fock::number(&s);
        assert!(group_average_residual(&ControlGroup::gaussian(), &n).unwrap() > 0.1);
        let a = annihilation(&s);
        assert!(group_average_residual(&ControlGroup::squeeze_set(), &a).unwrap() > 0.1);
    }

    #[test]
    fn every_schedule_closes() {
        for n in 1..=9 {
            for kind in [
                ProtocolKind::None,
                ProtocolKind::Parity,
                ProtocolKind::Squeezing,
                ProtocolKind::Combined,
                ProtocolKind::Cyclic(1),
                ProtocolKind::Cyclic(3),
                ProtocolKind::Custom {
                    first: ControlOp::quarter(),
                    cycle: vec![ControlOp::rotation(1, 3), ControlOp::PARITY],
                },
            ] {
                let s = InterventionSchedule::for_protocol(&kind, n).unwrap();
                assert_eq!(s.segments(), n);
                assert!(s.total().is_identity(), "{kind} n={n}");
            }
        }
        assert!(InterventionSchedule::displacement(0).is_err());
    }

    #[test]
    fn parity_closing_only_for_even_n() {
        assert_eq!(
            InterventionSchedule::displacement(3).unwrap().closing(),
            None
        );
        assert_eq!(
            InterventionSchedule::displacement(2).unwrap().closing(),
            Some(ControlOp::PARITY)
        );
        assert_eq!(
            InterventionSchedule::squeezing(2).unwrap().closing(),
            Some(ControlOp::quarter().inverse())
        );
        assert_eq!(InterventionSchedule::squeezing(3).unwrap().closing(), None);
    }

    #[test]
    fn combined_construction() {
        let s = InterventionSchedule::combined(1).unwrap();
        assert_eq!(s.ops(), &[ControlOp::IDENTITY, ControlOp::quarter()]);
        assert_eq!(s.closing(), Some(ControlOp::rotation(-1, 2)));
        assert_eq!(
            InterventionSchedule::combined(7).unwrap(),
            InterventionSchedule::cyclic(2, 7).unwrap()
        );
        for k in 0..8 {
            assert_eq!(
                InterventionSchedule::combined(8).unwrap().cumulative(k),
                ControlOp::rotation(k as i64, 2)
            );
        }
    }

    #[test]
    fn parity_static_displacement_cancels() {
        let s = FockSpace::new(60).unwrap();
        let d = displacement(&s, c(0.3, -0.4)).unwrap();
        let sched = InterventionSchedule::displacement(2).unwrap();
        let u = channel(&s, &sched, &[d.clone(), d.clone()]);
        assert!((vacuum_fidelity(&s, &u) - 1.0).abs() < 1e-8);
        // a single intervention between two kicks: Π D Π D is a phase times I
        let pi = fock::parity(&s);
        let prod = matmul(&pi, &matmul(&d, &matmul(&pi, &d)));
        assert!((vacuum_fidelity(&s, &prod) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn parity_signs_sum_kicks() {
        let s = FockSpace::new(60).unwrap();
        let alphas = [c(0.1, 0.05), c(-0.2, 0.1), c(0.15, -0.1), c(0.05, 0.2)];
        let kicks: Vec<_> = alphas
            .iter()
            .map(|&a| displacement(&s, a).unwrap())
            .collect();
        let sched = InterventionSchedule::displacement(4).unwrap();
        let u = channel(&s, &sched, &kicks);
        // segment k sees the frame C_{k-1}; with A_0 = Π the first kick is flipped
        let net: Complex64 = alphas
            .iter()
            .enumerate()
            .map(|(k, &a)| if k % 2 == 0 { -a } else { a })
            .sum();
        let vac = DensityMatrix::vacuum(s);
        let lhs = conjugate(&vac, &u).unwrap();
        let rhs = conjugate(&vac, &displacement(&s, net).unwrap()).unwrap();
        assert!(max_abs_diff(lhs.mat(), rhs.mat()) < 1e-10);
    }

    #[test]
    fn squeezing_static_cancels() {
        let s = FockSpace::new(60).unwrap();
        let sq = |g: f64| squeeze(&s, c(g, 0.0)).unwrap();
        let sched = InterventionSchedule::squeezing(2).unwrap();
        let u = channel(&s, &sched, &[sq(0.2), sq(0.2)]);
        assert!((vacuum_fidelity(&s, &u) - 1.0).abs() < 1e-8);
        assert!(max_abs_diff(&matmul(&sq(-0.2), &sq(0.2)), &s.identity()) < 1e-12);
        let sched = InterventionSchedule::squeezing(3).unwrap();
        let u = channel(&s, &sched, &[sq(0.1), sq(0.2), sq(0.1)]);
        assert!((vacuum_fidelity(&s, &u) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn combined_static_cancels_over_four_segments() {
        let s = FockSpace::new(60).unwrap();
        let seg = matmul(
            &displacement(&s, c(0.2, 0.0)).unwrap(),
            &squeeze(&s, c(0.1, 0.0)).unwrap(),
        );
        let sched = InterventionSchedule::combined(4).unwrap();
        let u = channel(&s, &sched, &vec![seg; 4]);
        assert!((vacuum_fidelity(&s, &u) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cyclic_one_acts_like_parity() {
        let s = FockSpace::new(40).unwrap();
        let rho = DensityMatrix::coherent(s, c(0.4, 0.3)).unwrap();
        let via_r = conjugate(&rho, &ControlOp::rotation(1, 1).matrix(&s)).unwrap();
        let via_p = conjugate(&rho, &fock::parity(&s)).unwrap();
        assert!(max_abs_diff(via_r.mat(), via_p.mat()) < 1e-12);
        assert_eq!(
            ControlGroup::cyclic(1).unwrap().elements,
            ControlGroup::parity().elements
        );
    }

    #[test]
    fn labels_parse() {
        assert_eq!(
            "cyclic(3)".parse::<GroupLabel>().unwrap(),
            GroupLabel::Cyclic(3)
        );
        assert_eq!(
            "cyclic:4".parse::<ProtocolKind>().unwrap(),
            ProtocolKind::Cyclic(4)
        );
        assert!("cyclic(0)".parse::<GroupLabel>().is_err());
        assert!("bogus".parse::<GroupLabel>().is_err());
        assert!(ProtocolKind::Parity.suits(NoiseKind::Displacement));
        assert!(!ProtocolKind::Parity.suits(NoiseKind::Squeezing));
        assert!(ProtocolKind::Cyclic(3).suits(NoiseKind::Polynomial { m: 3 }));
    }

    #[test]
    fn schedule_csv() {
        let mut buf = Vec::new();
        InterventionSchedule::combined(2)
            .unwrap()
            .write_csv(&mut buf)
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "k,op,angle");
        assert!(lines[1].starts_with("0,I,"));
        assert!(lines[3].starts_with("2,R(1/2),"));
        assert!(lines[4].starts_with("closing,P,"));
    }
}
