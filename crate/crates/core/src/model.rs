//! Cells, routes, session laws and the network description.
//!
//! A network has `C` cells numbered `1..=C` and a list of routes. Each route
//! is an ordered cell sequence with its own Poisson rate of new sessions and
//! a session law describing how long a session stays at each stage. Session
//! laws come in two forms:
//!
//! * [`DiscreteSessionLaw`]: stage-count probabilities `p_k` and, for every
//!   `k`, a finite set of weighted holding-time vectors of length `k`.
//! * [`GenerativeSessionLaw`]: a session duration `T` and per-stage dwell
//!   times `tau_j`, from which the holding times follow by
//!   [`stage_holding_time`].
//!
//! All times are in seconds and all rates are per second.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Tolerance on probability vectors summing to one.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// A 1-based cell index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellId(pub u32);

impl CellId {
    pub fn index(self) -> u32 {
        self.0
    }

    /// Zero-based offset, for indexing per-cell vectors.
    pub fn offset(self) -> usize {
        (self.0 as usize).saturating_sub(1)
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ordered cell sequence; the `j`-th entry (1-based) is the cell of stage `j`.
/// Cells may repeat.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Route {
    pub cells: Vec<CellId>,
}

impl Route {
    pub fn new(cells: impl IntoIterator<Item = u32>) -> Self {
        Self { cells: cells.into_iter().map(CellId).collect() }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Cell of stage `j` (1-based).
    pub fn cell(&self, stage: usize) -> Option<CellId> {
        stage.checked_sub(1).and_then(|i| self.cells.get(i)).copied()
    }
}

/// One weighted holding-time vector of a discrete law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub weight: f64,
    pub holding: Vec<f64>,
}

/// Stage-count probabilities plus, for every stage count `k`, the weighted
/// realizations of the `k`-stage holding-time vector.
///
/// `realizations[k - 1]` holds the realizations for sessions lasting exactly
/// `k` stages. It may be empty when `stage_probs[k - 1]` is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSessionLaw {
    pub stage_probs: Vec<f64>,
    pub realizations: Vec<Vec<Realization>>,
}

impl DiscreteSessionLaw {
    /// A law that always produces the same `holding` vector.
    pub fn deterministic(holding: Vec<f64>) -> Self {
        let k = holding.len();
        let mut stage_probs = vec![0.0; k];
        let mut realizations = vec![Vec::new(); k];
        if k > 0 {
            stage_probs[k - 1] = 1.0;
            realizations[k - 1].push(Realization { weight: 1.0, holding });
        }
        Self { stage_probs, realizations }
    }

    /// Perfectly correlated holding times: a session of `k` stages holds
    /// `scale * base[j]` at stage `j`, with one `scale` drawn per session from
    /// the weighted `scales`. Per-stage means equal `base` when the scales
    /// average to one.
    pub fn shared_speed(stage_probs: Vec<f64>, base: &[f64], scales: &[(f64, f64)]) -> Self {
        let realizations = stage_probs
            .iter()
            .enumerate()
            .map(|(idx, &p)| {
                if p == 0.0 {
                    return Vec::new();
                }
                scales
                    .iter()
                    .map(|&(weight, scale)| Realization {
                        weight,
                        holding: base[..=idx].iter().map(|b| b * scale).collect(),
                    })
                    .collect()
            })
            .collect();
        Self { stage_probs, realizations }
    }

    pub fn max_stages(&self) -> usize {
        self.stage_probs.len()
    }

    /// Iterates `(k, P_ki, holding)` over every realization, with
    /// `P_ki = p_k * q_ki`.
    pub fn joint(&self) -> impl Iterator<Item = (usize, f64, &[f64])> + '_ {
        self.stage_probs.iter().zip(&self.realizations).enumerate().flat_map(|(idx, (&p, reals))| {
            reals.iter().map(move |r| (idx + 1, p * r.weight, r.holding.as_slice()))
        })
    }

    fn check(&self, path: &str, out: &mut Vec<Violation>) {
        if self.stage_probs.is_empty() {
            out.push(Violation::new(format!("{path}.stage_probs"), "must not be empty"));
            return;
        }
        if self.stage_probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            out.push(Violation::new(format!("{path}.stage_probs"), "entries must be finite and non-negative"));
        }
        let total: f64 = self.stage_probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOLERANCE {
            out.push(Violation::new(format!("{path}.stage_probs"), format!("sum to {total}, expected 1")));
        }
        if self.realizations.len() != self.stage_probs.len() {
            out.push(Violation::new(
                format!("{path}.realizations"),
                format!("has {} stage-count groups, expected {}", self.realizations.len(), self.stage_probs.len()),
            ));
            return;
        }
        for (idx, (reals, &p)) in self.realizations.iter().zip(&self.stage_probs).enumerate() {
            let k = idx + 1;
            let gpath = format!("{path}.realizations[{k}]");
            if reals.is_empty() {
                if p > 0.0 {
                    out.push(Violation::new(gpath, format!("no realizations although p_{k} = {p}")));
                }
                continue;
            }
            let wsum: f64 = reals.iter().map(|r| r.weight).sum();
            if (wsum - 1.0).abs() > PROB_TOLERANCE {
                out.push(Violation::new(gpath.clone(), format!("weights sum to {wsum}, expected 1")));
            }
            for (i, r) in reals.iter().enumerate() {
                let rpath = format!("{gpath}[{}]", i + 1);
                if !r.weight.is_finite() || r.weight < 0.0 {
                    out.push(Violation::new(format!("{rpath}.weight"), "must be finite and non-negative"));
                }
                if r.holding.len() != k {
                    out.push(Violation::new(
                        format!("{rpath}.holding"),
                        format!("has length {}, expected {k}", r.holding.len()),
                    ));
                }
                if r.holding.iter().any(|t| !t.is_finite() || *t <= 0.0) {
                    out.push(Violation::new(format!("{rpath}.holding"), "holding times must be positive"));
                }
            }
        }
    }
}

/// A primitive duration distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Exponential { mean: f64 },
    Deterministic { value: f64 },
    /// `exp(N(mu, sigma^2))`.
    Lognormal { mu: f64, sigma: f64 },
    Uniform { low: f64, high: f64 },
    Hyperexponential { branches: Vec<Branch> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub prob: f64,
    pub mean: f64,
}

impl Family {
    pub fn mean(&self) -> f64 {
        match self {
            Family::Exponential { mean } => *mean,
            Family::Deterministic { value } => *value,
            Family::Lognormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            Family::Uniform { low, high } => 0.5 * (low + high),
            Family::Hyperexponential { branches } => branches.iter().map(|b| b.prob * b.mean).sum(),
        }
    }

    /// Draws one value. Assumes the parameters passed [`Family::check`].
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Family::Exponential { mean } => Exp::new(1.0 / mean).expect("checked rate").sample(rng),
            Family::Deterministic { value } => *value,
            Family::Lognormal { mu, sigma } => LogNormal::new(*mu, *sigma).expect("checked sigma").sample(rng),
            Family::Uniform { low, high } => {
                if low == high {
                    *low
                } else {
                    rng.random_range(*low..*high)
                }
            }
            Family::Hyperexponential { branches } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = &branches[branches.len() - 1];
                for b in branches {
                    acc += b.prob;
                    if u < acc {
                        chosen = b;
                        break;
                    }
                }
                Exp::new(1.0 / chosen.mean).expect("checked rate").sample(rng)
            }
        }
    }

    fn check(&self, path: &str, out: &mut Vec<Violation>) {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        let bad = match self {
            Family::Exponential { mean } => (!positive(*mean)).then_some("mean must be positive"),
            Family::Deterministic { value } => (!positive(*value)).then_some("value must be positive"),
            Family::Lognormal { mu, sigma } => {
                (!mu.is_finite() || !sigma.is_finite() || *sigma < 0.0).then_some("needs finite mu and sigma >= 0")
            }
            Family::Uniform { low, high } => {
                (!positive(*low) || !high.is_finite() || high < low).then_some("needs 0 < low <= high")
            }
            Family::Hyperexponential { branches } => {
                let total: f64 = branches.iter().map(|b| b.prob).sum();
                if branches.is_empty() || (total - 1.0).abs() > PROB_TOLERANCE {
                    Some("branch probabilities must sum to 1")
                } else if branches.iter().any(|b| !positive(b.mean) || b.prob < 0.0) {
                    Some("branch means must be positive and probabilities non-negative")
                } else {
                    None
                }
            }
        };
        if let Some(msg) = bad {
            out.push(Violation::new(path.to_string(), msg));
        }
    }

    fn exponential_mean(&self) -> Option<f64> {
        match self {
            Family::Exponential { mean } => Some(*mean),
            _ => None,
        }
    }
}

/// How the dwell times of one session depend on each other.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coupling {
    /// Dwell times are drawn independently of each other and of `T`.
    #[default]
    Independent,
    /// One latent multiplier, drawn per session from `scale`, multiplies
    /// every dwell time of that session.
    SharedSpeed { scale: Family },
}

/// Session duration and dwell-time laws for one route.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerativeSessionLaw {
    pub duration: Family,
    /// One entry per route stage.
    pub dwell: Vec<Family>,
    #[serde(default)]
    pub coupling: Coupling,
}

impl GenerativeSessionLaw {
    /// Draws `(T, tau_1..tau_N)`.
    pub fn sample_raw<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, Vec<f64>) {
        let duration = self.duration.sample(rng);
        let mut taus: Vec<f64> = self.dwell.iter().map(|f| f.sample(rng)).collect();
        if let Coupling::SharedSpeed { scale } = &self.coupling {
            let s = scale.sample(rng);
            taus.iter_mut().for_each(|t| *t *= s);
        }
        (duration, taus)
    }

    /// Draws one session's holding-time vector.
    pub fn sample_holding<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let (duration, taus) = self.sample_raw(rng);
        holding_vector(duration, &taus)
    }

    /// Closed-form stage moments, available when `T` and every dwell time are
    /// independent exponentials.
    ///
    /// At stage `j` the remaining duration is again exponential, so the
    /// holding time is exponential with rate `mu + nu_j` and the session moves
    /// on with probability `nu_j / (mu + nu_j)`; the last stage always ends
    /// the session.
    pub fn memoryless_moments(&self) -> Option<SessionMoments> {
        if self.coupling != Coupling::Independent {
            return None;
        }
        let mu = 1.0 / self.duration.exponential_mean()?;
        let nus: Vec<f64> = self.dwell.iter().map(|f| f.exponential_mean().map(|m| 1.0 / m)).collect::<Option<_>>()?;
        let n = nus.len();
        let mut stage_probs = Vec::with_capacity(n);
        let mut mean_holding = Vec::with_capacity(n);
        let mut survival = 1.0;
        for (j, &nu) in nus.iter().enumerate() {
            mean_holding.push(Some(1.0 / (mu + nu)));
            if j + 1 == n {
                stage_probs.push(survival);
            } else {
                stage_probs.push(survival * mu / (mu + nu));
                survival *= nu / (mu + nu);
            }
        }
        Some(SessionMoments { stage_probs, mean_holding })
    }

    /// Monte Carlo estimate of the stage moments from `samples` sessions.
    pub fn estimate_moments(&self, samples: usize, seed: u64) -> SessionMoments {
        let n = self.dwell.len();
        let mut rng = rng::stream(seed, 0);
        let mut stage_counts = vec![0u64; n];
        let mut sums = vec![0.0; n];
        for _ in 0..samples {
            let h = self.sample_holding(&mut rng);
            stage_counts[h.len() - 1] += 1;
            for (s, t) in sums.iter_mut().zip(&h) {
                *s += t;
            }
        }
        let total = samples.max(1) as f64;
        let stage_probs: Vec<f64> = stage_counts.iter().map(|&c| c as f64 / total).collect();
        let mut reached = samples as u64;
        let mean_holding = (0..n)
            .map(|j| {
                let m = (reached > 0).then(|| sums[j] / reached as f64);
                reached -= stage_counts[j];
                m
            })
            .collect();
        SessionMoments { stage_probs, mean_holding }
    }

    fn check(&self, path: &str, route_len: usize, out: &mut Vec<Violation>) {
        self.duration.check(&format!("{path}.duration"), out);
        if self.dwell.len() != route_len {
            out.push(Violation::new(
                format!("{path}.dwell"),
                format!("has {} entries, route has {route_len} stages", self.dwell.len()),
            ));
        }
        for (j, f) in self.dwell.iter().enumerate() {
            f.check(&format!("{path}.dwell[{}]", j + 1), out);
        }
        if let Coupling::SharedSpeed { scale } = &self.coupling {
            scale.check(&format!("{path}.coupling.scale"), out);
        }
    }
}

/// Stage-count distribution and mean holding time per stage.
///
/// `mean_holding[j - 1]` is `None` for stages that are never reached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMoments {
    pub stage_probs: Vec<f64>,
    pub mean_holding: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionLaw {
    Discrete(DiscreteSessionLaw),
    Generative(GenerativeSessionLaw),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteSpec {
    #[serde(rename = "cells")]
    pub route: Route,
    /// New-session arrival rate, sessions per second.
    pub arrival_rate: f64,
    pub law: SessionLaw,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Planar coordinates in meters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    #[serde(rename = "cells")]
    pub cell_count: u32,
    pub routes: Vec<RouteSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cell_meta: Vec<CellMeta>,
}

impl NetworkSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn cells(&self) -> usize {
        self.cell_count as usize
    }

    /// Cell coordinates, if every cell has both `x` and `y`.
    pub fn coordinates(&self) -> Option<Vec<(f64, f64)>> {
        if self.cell_meta.len() != self.cells() {
            return None;
        }
        self.cell_meta.iter().map(|m| Some((m.x?, m.y?))).collect()
    }

    /// Display label for a cell.
    pub fn cell_label(&self, cell: CellId) -> String {
        self.cell_meta
            .get(cell.offset())
            .and_then(|m| m.name.clone())
            .unwrap_or_else(|| format!("cell{}", cell.index()))
    }

    /// Returns the spec, or every violation as an error.
    pub fn validated(self) -> Result<Self> {
        let v = validate(&self);
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidSpec(v))
        }
    }
}

/// One invariant violation, with a dotted path to the offending field.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    fn new(path: String, message: impl Into<String>) -> Self {
        Self { path, message: message.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Lists every invariant violation of `spec`; an empty list means valid.
pub fn validate(spec: &NetworkSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    if spec.cell_count == 0 {
        out.push(Violation::new("cells".into(), "must be at least 1"));
    }
    if spec.routes.is_empty() {
        out.push(Violation::new("routes".into(), "at least one route is required"));
    }
    if !spec.cell_meta.is_empty() && spec.cell_meta.len() != spec.cells() {
        out.push(Violation::new(
            "cell_meta".into(),
            format!("has {} entries, expected {}", spec.cell_meta.len(), spec.cell_count),
        ));
    }
    for (l, rs) in spec.routes.iter().enumerate() {
        let path = format!("routes[{}]", l + 1);
        if rs.route.is_empty() {
            out.push(Violation::new(format!("{path}.cells"), "route must visit at least one cell"));
        }
        if let Some(bad) = rs.route.cells.iter().find(|c| c.0 == 0 || c.0 > spec.cell_count) {
            out.push(Violation::new(
                format!("{path}.cells"),
                format!("cell {bad} outside 1..={}", spec.cell_count),
            ));
        }
        if !rs.arrival_rate.is_finite() || rs.arrival_rate <= 0.0 {
            out.push(Violation::new(format!("{path}.arrival_rate"), "must be positive"));
        }
        let lpath = format!("{path}.law");
        match &rs.law {
            SessionLaw::Discrete(d) => {
                d.check(&lpath, &mut out);
                if d.max_stages() != rs.route.len() {
                    out.push(Violation::new(
                        format!("{lpath}.stage_probs"),
                        format!("has {} entries, route has {} stages", d.max_stages(), rs.route.len()),
                    ));
                }
            }
            SessionLaw::Generative(g) => g.check(&lpath, rs.route.len(), &mut out),
        }
    }
    out
}

/// Holding time at stage `j` (1-based) for session duration `duration` and
/// dwell times `taus`; `None` when the session ends before reaching stage `j`.
///
/// Stage 1 holds `min(T, tau_1)`. A later stage is reached only while
/// `T > tau_1 + ... + tau_{j-1}` and then holds
/// `min(T - tau_1 - ... - tau_{j-1}, tau_j)`.
pub fn stage_holding_time(duration: f64, taus: &[f64], stage: usize) -> Result<Option<f64>> {
    if stage == 0 || stage > taus.len() {
        return Err(Error::StageOutOfRange { stage, max: taus.len() });
    }
    let elapsed: f64 = taus[..stage - 1].iter().sum();
    if stage == 1 {
        return Ok(Some(duration.min(taus[0])));
    }
    if duration > elapsed {
        Ok(Some((duration - elapsed).min(taus[stage - 1])))
    } else {
        Ok(None)
    }
}

/// Holding times for every reached stage; never empty for non-empty `taus`.
pub fn holding_vector(duration: f64, taus: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(taus.len());
    let mut elapsed = 0.0;
    for (j, &tau) in taus.iter().enumerate() {
        if j > 0 && duration <= elapsed {
            break;
        }
        out.push((duration - elapsed).min(tau));
        elapsed += tau;
    }
    out
}

/// Approximates a generative law by a discrete one.
///
/// Draws `samples` sessions from stream `(seed, 0)`, rounds every holding
/// time to the nearest multiple of `bin_width` (at least one bin), and merges
/// identical vectors. `p_k` and `q_ki` are relative frequencies.
pub fn discretize(law: &GenerativeSessionLaw, samples: usize, bin_width: f64, seed: u64) -> Result<DiscreteSessionLaw> {
    if samples == 0 {
        return Err(Error::InvalidArgument("discretize needs at least one sample".into()));
    }
    if !bin_width.is_finite() || bin_width <= 0.0 {
        return Err(Error::InvalidArgument(format!("bin width must be positive, got {bin_width}")));
    }
    let n = law.dwell.len();
    let mut rng = rng::stream(seed, 0);
    let mut groups: Vec<BTreeMap<Vec<u64>, u64>> = vec![BTreeMap::new(); n];
    for _ in 0..samples {
        let bins: Vec<u64> = law
            .sample_holding(&mut rng)
            .iter()
            .map(|t| ((t / bin_width).round() as u64).max(1))
            .collect();
        *groups[bins.len() - 1].entry(bins).or_default() += 1;
    }
    let total = samples as f64;
    let mut stage_probs = Vec::with_capacity(n);
    let mut realizations = Vec::with_capacity(n);
    for group in groups {
        let count: u64 = group.values().sum();
        stage_probs.push(count as f64 / total);
        realizations.push(
            group
                .into_iter()
                .map(|(bins, c)| Realization {
                    weight: c as f64 / count as f64,
                    holding: bins.into_iter().map(|b| b as f64 * bin_width).collect(),
                })
                .collect(),
        );
    }
    Ok(DiscreteSessionLaw { stage_probs, realizations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_route_spec() -> NetworkSpec {
        NetworkSpec {
            cell_count: 3,
            routes: vec![
                RouteSpec {
                    route: Route::new([1, 2]),
                    arrival_rate: 0.5,
                    law: SessionLaw::Discrete(DiscreteSessionLaw {
                        stage_probs: vec![0.5, 0.5],
                        realizations: vec![
                            vec![Realization { weight: 1.0, holding: vec![2.0] }],
                            vec![Realization { weight: 1.0, holding: vec![6.0, 8.0] }],
                        ],
                    }),
                },
                RouteSpec {
                    route: Route::new([3]),
                    arrival_rate: 1.0,
                    law: SessionLaw::Generative(GenerativeSessionLaw {
                        duration: Family::Exponential { mean: 10.0 },
                        dwell: vec![Family::Deterministic { value: 5.0 }],
                        coupling: Coupling::Independent,
                    }),
                },
            ],
            cell_meta: vec![],
        }
    }

    #[test]
    fn well_formed_spec_has_no_violations() {
        assert!(validate(&two_route_spec()).is_empty());
    }

    #[test]
    fn stage_probs_short_of_one_is_reported() {
        let mut spec = two_route_spec();
        if let SessionLaw::Discrete(d) = &mut spec.routes[0].law {
            d.stage_probs = vec![0.5, 0.4];
        }
        let v = validate(&spec);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].path.ends_with("stage_probs"));
    }

    #[test]
    fn out_of_range_cell_is_reported() {
        let mut spec = two_route_spec();
        spec.routes[1].route = Route::new([4]);
        let v = validate(&spec);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].path, "routes[2].cells");
    }

    #[test]
    fn holding_times_follow_duration_and_dwell() {
        let taus = [3.0, 3.0, 3.0];
        assert_eq!(stage_holding_time(7.0, &taus, 2).unwrap(), Some(3.0));
        assert_eq!(stage_holding_time(7.0, &taus, 3).unwrap(), Some(1.0));
        assert_eq!(stage_holding_time(2.0, &[3.0, 3.0], 2).unwrap(), None);
        assert!(stage_holding_time(2.0, &[3.0], 2).is_err());
        assert!(stage_holding_time(2.0, &[3.0], 0).is_err());
        assert_eq!(holding_vector(7.0, &taus), vec![3.0, 3.0, 1.0]);
        assert_eq!(holding_vector(25.0, &[10.0, 10.0, 10.0]), vec![10.0, 10.0, 5.0]);
        // Session outlives the route: leaves at the end of the last dwell.
        assert_eq!(holding_vector(100.0, &[10.0, 10.0]), vec![10.0, 10.0]);
    }

    #[test]
    fn discretize_deterministic_laws() {
        let law = GenerativeSessionLaw {
            duration: Family::Deterministic { value: 5.0 },
            dwell: vec![Family::Deterministic { value: 10.0 }],
            coupling: Coupling::Independent,
        };
        let d = discretize(&law, 10, 1.0, 1).unwrap();
        assert_eq!(d.stage_probs, vec![1.0]);
        assert_eq!(d.realizations[0], vec![Realization { weight: 1.0, holding: vec![5.0] }]);

        let law = GenerativeSessionLaw {
            duration: Family::Deterministic { value: 25.0 },
            dwell: vec![Family::Deterministic { value: 10.0 }; 3],
            coupling: Coupling::Independent,
        };
        let d = discretize(&law, 3, 1.0, 1).unwrap();
        assert_eq!(d.stage_probs, vec![0.0, 0.0, 1.0]);
        assert_eq!(d.realizations[2][0].holding, vec![10.0, 10.0, 5.0]);
    }

    #[test]
    fn discretize_clamps_to_one_bin() {
        let law = GenerativeSessionLaw {
            duration: Family::Deterministic { value: 0.1 },
            dwell: vec![Family::Deterministic { value: 10.0 }],
            coupling: Coupling::Independent,
        };
        let d = discretize(&law, 1, 2.0, 1).unwrap();
        assert_eq!(d.realizations[0][0].holding, vec![2.0]);
    }

    #[test]
    fn discretize_rejects_bad_arguments() {
        let law = GenerativeSessionLaw {
            duration: Family::Deterministic { value: 1.0 },
            dwell: vec![Family::Deterministic { value: 1.0 }],
            coupling: Coupling::Independent,
        };
        assert!(discretize(&law, 0, 1.0, 1).is_err());
        assert!(discretize(&law, 1, 0.0, 1).is_err());
        assert!(discretize(&law, 1, -1.0, 1).is_err());
    }

    #[test]
    fn discretize_exponential_duration_stage_one_probability() {
        // p_1 = P[T <= 5] for T ~ Exp(mean 10).
        let law = GenerativeSessionLaw {
            duration: Family::Exponential { mean: 10.0 },
            dwell: vec![Family::Deterministic { value: 5.0 }; 3],
            coupling: Coupling::Independent,
        };
        let d = discretize(&law, 1_000_000, 0.01, 11).unwrap();
        let oracle = 1.0 - (-0.5f64).exp();
        assert!((d.stage_probs[0] - oracle).abs() < 0.002, "{} vs {oracle}", d.stage_probs[0]);
        let total: f64 = d.stage_probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mut spec = two_route_spec();
        spec.routes[1] = RouteSpec { route: Route::new([1, 2, 3]), arrival_rate: 1.0, law: SessionLaw::Discrete(d) };
        assert!(validate(&spec).is_empty());
    }

    #[test]
    fn memoryless_moments_match_simulation() {
        let law = GenerativeSessionLaw {
            duration: Family::Exponential { mean: 20.0 },
            dwell: vec![Family::Exponential { mean: 10.0 }, Family::Exponential { mean: 5.0 }],
            coupling: Coupling::Independent,
        };
        let exact = law.memoryless_moments().unwrap();
        let est = law.estimate_moments(400_000, 3);
        for (a, b) in exact.stage_probs.iter().zip(&est.stage_probs) {
            assert!((a - b).abs() < 0.005, "{a} vs {b}");
        }
        for (a, b) in exact.mean_holding.iter().zip(&est.mean_holding) {
            let (a, b) = (a.unwrap(), b.unwrap());
            assert!((a - b).abs() / a < 0.01, "{a} vs {b}");
        }
        let coupled = GenerativeSessionLaw {
            coupling: Coupling::SharedSpeed { scale: Family::Uniform { low: 0.5, high: 1.5 } },
            ..law
        };
        assert!(coupled.memoryless_moments().is_none());
    }

    #[test]
    fn shared_speed_law_is_valid_and_keeps_base_means() {
        let d = DiscreteSessionLaw::shared_speed(vec![0.2, 0.0, 0.8], &[10.0, 20.0, 30.0], &[(0.5, 0.5), (0.5, 1.5)]);
        assert!(d.realizations[1].is_empty());
        assert_eq!(d.realizations[2][1].holding, vec![15.0, 30.0, 45.0]);
        let mut out = Vec::new();
        d.check("law", &mut out);
        assert!(out.is_empty(), "{out:?}");
    }

    #[test]
    fn toml_round_trip_is_lossless() {
        let mut spec = two_route_spec();
        spec.cell_meta = vec![
            CellMeta { name: Some("AP1".into()), x: Some(0.0), y: Some(1.5) },
            CellMeta::default(),
            CellMeta { name: None, x: Some(0.1 + 0.2), y: None },
        ];
        let text = spec.to_toml_string().unwrap();
        let back = NetworkSpec::from_toml_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
