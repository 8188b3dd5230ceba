//! Closed-form stationary means and product-form distributions.
//!
//! For route `l` with new-session rate `lambda_0`, stage `j` is reached with
//! probability `S_j = p_j + ... + p_N` and then holds for `tbar_j` on
//! average. Its stationary occupancy is Poisson with mean
//! `w_j = lambda_0 * S_j * tbar_j`, independently across stages and routes.
//! Summing the stage means that map onto one cell gives that cell's Poisson
//! mean `m_n = lambdabar_n * tbar_n`.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{CellId, DiscreteSessionLaw, NetworkSpec, Route, RouteSpec, SessionLaw, SessionMoments};

/// Mass that a truncated per-coordinate support must cover.
pub const TRUNCATION_MASS: f64 = 1.0 - 1e-8;

/// Relative tolerance of the decoupled-branch identity check.
const IDENTITY_TOLERANCE: f64 = 1e-9;

fn check_stage(stage_probs: &[f64], stage: usize) -> Result<()> {
    if stage == 0 || stage > stage_probs.len() {
        Err(Error::StageOutOfRange { stage, max: stage_probs.len() })
    } else {
        Ok(())
    }
}

/// Probability that a session reaches stage `j` (1-based).
///
/// Computed as the tail sum `p_j + ... + p_N`, which equals
/// `1 - (p_1 + ... + p_{j-1})` for a normalized law and is exactly zero past
/// the last stage with positive probability.
pub fn survival(stage_probs: &[f64], stage: usize) -> Result<f64> {
    check_stage(stage_probs, stage)?;
    Ok(stage_probs[stage - 1..].iter().rev().sum())
}

/// `(continue, terminate)` probabilities for a session in stage `k`.
pub fn transition_prob(stage_probs: &[f64], stage: usize) -> Result<(f64, f64)> {
    check_stage(stage_probs, stage)?;
    let rest: f64 = stage_probs[stage..].iter().rev().sum();
    let here = stage_probs[stage - 1];
    let tail = here + rest;
    if tail <= 0.0 {
        return Err(Error::UnreachableStage { stage });
    }
    Ok((rest / tail, here / tail))
}

/// Mean holding time of every stage, `None` for unreachable stages.
pub fn mean_holding_times(law: &DiscreteSessionLaw) -> Vec<Option<f64>> {
    let n = law.max_stages();
    let mut weighted = vec![0.0; n];
    for (_, prob, holding) in law.joint() {
        for (acc, t) in weighted.iter_mut().zip(holding) {
            *acc += prob * t;
        }
    }
    (1..=n)
        .map(|j| {
            let s = survival(&law.stage_probs, j).expect("stage in range");
            (s > 0.0).then(|| weighted[j - 1] / s)
        })
        .collect()
}

/// Mean holding time of stage `j`; errors for unreachable stages.
pub fn mean_holding_time(law: &DiscreteSessionLaw, stage: usize) -> Result<f64> {
    check_stage(&law.stage_probs, stage)?;
    mean_holding_times(law)[stage - 1].ok_or(Error::UnreachableStage { stage })
}

pub fn discrete_moments(law: &DiscreteSessionLaw) -> SessionMoments {
    SessionMoments { stage_probs: law.stage_probs.clone(), mean_holding: mean_holding_times(law) }
}

/// Stage moments of one route: exact for discrete laws and for fully
/// exponential generative laws. Other generative laws must be discretized.
pub fn route_moments(rs: &RouteSpec, route_index: usize) -> Result<SessionMoments> {
    match &rs.law {
        SessionLaw::Discrete(d) => Ok(discrete_moments(d)),
        SessionLaw::Generative(g) => g.memoryless_moments().ok_or(Error::NeedsDiscreteLaw { route: route_index + 1 }),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageMean {
    /// 1-based stage index.
    pub stage: usize,
    pub cell: CellId,
    /// `lambda_0 * S_j`, sessions per second entering the stage.
    pub invariant_measure: f64,
    /// `1 / tbar_j`.
    pub service_rate: f64,
    pub mean_holding: f64,
    /// Expected stationary occupancy `w_j`.
    pub occupancy: f64,
}

/// Per-stage means of one route. Unreachable stages are omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageMeans {
    pub stages: Vec<StageMean>,
}

impl StageMeans {
    pub fn occupancies(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.occupancy).collect()
    }

    pub fn stage(&self, stage: usize) -> Option<&StageMean> {
        self.stages.iter().find(|s| s.stage == stage)
    }
}

pub fn stage_means_from_moments(route: &Route, arrival_rate: f64, moments: &SessionMoments) -> StageMeans {
    let stages = moments
        .mean_holding
        .iter()
        .enumerate()
        .filter_map(|(idx, hold)| {
            let hold = (*hold)?;
            let survival = survival(&moments.stage_probs, idx + 1).ok()?;
            (survival > 0.0).then(|| {
                let invariant_measure = arrival_rate * survival;
                StageMean {
                    stage: idx + 1,
                    cell: route.cells[idx],
                    invariant_measure,
                    service_rate: 1.0 / hold,
                    mean_holding: hold,
                    occupancy: invariant_measure * hold,
                }
            })
        })
        .collect();
    StageMeans { stages }
}

/// Stage means of a route. For discrete laws this also checks that the
/// decoupled branch means add up to every stage mean.
pub fn stage_means(rs: &RouteSpec) -> Result<StageMeans> {
    let moments = route_moments(rs, 0)?;
    let means = stage_means_from_moments(&rs.route, rs.arrival_rate, &moments);
    if let SessionLaw::Discrete(_) = rs.law {
        let sums = decoupled_stage_sums(rs)?;
        for s in &means.stages {
            let lhs = sums[s.stage - 1];
            if (lhs - s.occupancy).abs() > IDENTITY_TOLERANCE * s.occupancy.abs().max(1.0) {
                return Err(Error::IdentityViolated { route: 1, stage: s.stage, lhs, rhs: s.occupancy });
            }
        }
    }
    Ok(means)
}

/// One queue of the decoupled network: branch `k` (stage count),
/// realization `i`, stage `j`, all 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoupledMean {
    pub stage_count: usize,
    pub realization: usize,
    pub stage: usize,
    /// `P_ki * lambda_0`.
    pub invariant_measure: f64,
    /// `P_ki * lambda_0 * t_kij`.
    pub occupancy: f64,
}

/// Means of every queue of the decoupled network of a discrete-law route.
pub fn decoupled_means(rs: &RouteSpec) -> Result<Vec<DecoupledMean>> {
    let SessionLaw::Discrete(law) = &rs.law else {
        return Err(Error::NeedsDiscreteLaw { route: 1 });
    };
    let mut out = Vec::new();
    for (k, reals) in law.realizations.iter().enumerate() {
        let p = law.stage_probs[k];
        for (i, r) in reals.iter().enumerate() {
            let invariant_measure = p * r.weight * rs.arrival_rate;
            for (j, t) in r.holding.iter().enumerate() {
                out.push(DecoupledMean {
                    stage_count: k + 1,
                    realization: i + 1,
                    stage: j + 1,
                    invariant_measure,
                    occupancy: invariant_measure * t,
                });
            }
        }
    }
    Ok(out)
}

/// Sum of decoupled occupancies per stage `j`, over all branches `k >= j`.
pub fn decoupled_stage_sums(rs: &RouteSpec) -> Result<Vec<f64>> {
    let mut sums = vec![0.0; rs.route.len()];
    for d in decoupled_means(rs)? {
        sums[d.stage - 1] += d.occupancy;
    }
    Ok(sums)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMean {
    pub cell: CellId,
    /// Total (new plus handoff) arrival rate, per second.
    pub arrival_rate: f64,
    /// Mean holding time over all visits; `None` for unvisited cells.
    pub mean_holding: Option<f64>,
    pub poisson_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMeans {
    pub cells: Vec<CellMean>,
}

impl CellMeans {
    pub fn poisson_means(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.poisson_mean).collect()
    }

    pub fn product_form(&self) -> ProductForm {
        ProductForm { means: self.poisson_means() }
    }

    /// CSV with header `cell,arrival_rate,mean_holding,poisson_mean`; an
    /// unvisited cell has an empty `mean_holding`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["cell", "arrival_rate", "mean_holding", "poisson_mean"])?;
        for c in &self.cells {
            wtr.write_record([
                c.cell.to_string(),
                c.arrival_rate.to_string(),
                c.mean_holding.map(|t| t.to_string()).unwrap_or_default(),
                c.poisson_mean.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Per-route moments for every route of `spec`.
pub fn network_moments(spec: &NetworkSpec) -> Result<Vec<SessionMoments>> {
    spec.routes.iter().enumerate().map(|(l, rs)| route_moments(rs, l)).collect()
}

/// Exact moments where a closed form exists; otherwise a Monte Carlo
/// estimate from `samples` sessions, drawn for route `l` (0-based) under
/// seed `seed + l`.
pub fn network_moments_or_estimate(spec: &NetworkSpec, samples: usize, seed: u64) -> Vec<SessionMoments> {
    spec.routes
        .iter()
        .enumerate()
        .map(|(l, rs)| match &rs.law {
            SessionLaw::Discrete(d) => discrete_moments(d),
            SessionLaw::Generative(g) => {
                g.memoryless_moments().unwrap_or_else(|| g.estimate_moments(samples, seed.wrapping_add(l as u64)))
            }
        })
        .collect()
}

/// Stages with zero survival under `moments`, as `(route, stage)` pairs.
pub fn unreachable_from_moments(moments: &[SessionMoments]) -> Vec<(usize, usize)> {
    moments
        .iter()
        .enumerate()
        .flat_map(|(l, m)| {
            m.mean_holding.iter().enumerate().filter(|(_, h)| h.is_none()).map(move |(j, _)| (l + 1, j + 1))
        })
        .collect()
}

pub fn cell_means(spec: &NetworkSpec) -> Result<CellMeans> {
    cell_means_from_moments(spec, &network_moments(spec)?)
}

/// Aggregates stage means onto cells, summing over every `(l, j)` with
/// `c(l, j) = n`; a route revisiting a cell contributes once per visit.
pub fn cell_means_from_moments(spec: &NetworkSpec, moments: &[SessionMoments]) -> Result<CellMeans> {
    if moments.len() != spec.routes.len() {
        return Err(Error::DimensionMismatch { expected: spec.routes.len(), got: moments.len() });
    }
    let c = spec.cells();
    let mut rate = vec![0.0; c];
    let mut work = vec![0.0; c];
    for (rs, m) in spec.routes.iter().zip(moments) {
        for s in stage_means_from_moments(&rs.route, rs.arrival_rate, m).stages {
            let n = s.cell.offset();
            if n >= c {
                return Err(Error::IndexOutOfRange { index: s.cell.index() as usize, dimension: c });
            }
            rate[n] += s.invariant_measure;
            work[n] += s.occupancy;
        }
    }
    let cells = (0..c)
        .map(|n| {
            let mean_holding = (rate[n] > 0.0).then(|| work[n] / rate[n]);
            CellMean {
                cell: CellId(n as u32 + 1),
                arrival_rate: rate[n],
                mean_holding,
                poisson_mean: mean_holding.map_or(0.0, |t| rate[n] * t),
            }
        })
        .collect();
    Ok(CellMeans { cells })
}

/// `ln P[Y = y]` for `Y ~ Poisson(mean)`; `-inf` when impossible.
pub fn poisson_ln_pmf(mean: f64, y: u32) -> f64 {
    if mean == 0.0 {
        return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let y = f64::from(y);
    -mean + y * mean.ln() - ln_gamma(y + 1.0)
}

/// Smallest `K` with `P[Y <= K] >= mass` for `Y ~ Poisson(mean)`.
pub fn poisson_truncation(mean: f64, mass: f64) -> u32 {
    let mut cdf = 0.0;
    let mut k = 0u32;
    loop {
        cdf += poisson_ln_pmf(mean, k).exp();
        if cdf >= mass || k > 1_000_000 {
            return k;
        }
        k += 1;
    }
}

/// Independent Poisson coordinates with the given means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductForm {
    pub means: Vec<f64>,
}

impl ProductForm {
    pub fn new(means: Vec<f64>) -> Result<Self> {
        if let Some(bad) = means.iter().find(|m| !m.is_finite() || **m < 0.0) {
            return Err(Error::InvalidArgument(format!("Poisson means must be finite and >= 0, got {bad}")));
        }
        Ok(Self { means })
    }

    pub fn dimension(&self) -> usize {
        self.means.len()
    }

    /// Log-probability of `counts`; `-inf` when a zero-mean coordinate has a
    /// positive count.
    pub fn ln_pmf(&self, counts: &[u32]) -> Result<f64> {
        if counts.len() != self.means.len() {
            return Err(Error::DimensionMismatch { expected: self.means.len(), got: counts.len() });
        }
        Ok(self.means.iter().zip(counts).map(|(&m, &y)| poisson_ln_pmf(m, y)).sum())
    }

    pub fn pmf(&self, counts: &[u32]) -> Result<f64> {
        self.ln_pmf(counts).map(f64::exp)
    }

    /// Per-coordinate support cap covering [`TRUNCATION_MASS`].
    pub fn truncation(&self) -> Vec<u32> {
        self.means.iter().map(|&m| poisson_truncation(m, TRUNCATION_MASS)).collect()
    }

    pub fn marginal(&self, coord: usize) -> Result<ProductForm> {
        self.means
            .get(coord)
            .map(|&m| ProductForm { means: vec![m] })
            .ok_or(Error::IndexOutOfRange { index: coord, dimension: self.means.len() })
    }

    /// Projection onto `coords` (0-based), in the given order.
    pub fn project(&self, coords: &[usize]) -> Result<ProductForm> {
        let means = coords
            .iter()
            .map(|&c| self.means.get(c).copied().ok_or(Error::IndexOutOfRange { index: c, dimension: self.means.len() }))
            .collect::<Result<_>>()?;
        Ok(ProductForm { means })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u32> {
        self.means
            .iter()
            .map(|&m| if m > 0.0 { Poisson::new(m).expect("positive mean").sample(rng) as u32 } else { 0 })
            .collect()
    }
}

/// Sums coordinates over disjoint index sets (0-based). The sums are again
/// independent Poisson with the summed means.
pub fn compose_poisson(means: &[f64], partition: &[Vec<usize>]) -> Result<ProductForm> {
    let mut seen = vec![false; means.len()];
    let mut out = Vec::with_capacity(partition.len());
    for set in partition {
        let mut v = 0.0;
        for &j in set {
            let slot = seen.get_mut(j).ok_or(Error::IndexOutOfRange { index: j, dimension: means.len() })?;
            if *slot {
                return Err(Error::OverlappingPartition(j));
            }
            *slot = true;
            v += means[j];
        }
        out.push(v);
    }
    ProductForm::new(out)
}

/// Identifies one coordinate of the stage-level product form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageKey {
    /// 1-based route index.
    pub route: usize,
    /// 1-based stage index.
    pub stage: usize,
    pub cell: CellId,
}

/// Joint stationary law of all reachable `(route, stage)` occupancies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageProductForm {
    pub keys: Vec<StageKey>,
    pub form: ProductForm,
}

impl StageProductForm {
    /// Index sets grouping stage coordinates by cell, one set per cell.
    pub fn cell_partition(&self, cells: usize) -> Vec<Vec<usize>> {
        let mut sets = vec![Vec::new(); cells];
        for (idx, key) in self.keys.iter().enumerate() {
            if let Some(set) = sets.get_mut(key.cell.offset()) {
                set.push(idx);
            }
        }
        sets
    }
}

pub fn stage_product_form(spec: &NetworkSpec) -> Result<StageProductForm> {
    let moments = network_moments(spec)?;
    let mut keys = Vec::new();
    let mut means = Vec::new();
    for (l, (rs, m)) in spec.routes.iter().zip(&moments).enumerate() {
        for s in stage_means_from_moments(&rs.route, rs.arrival_rate, m).stages {
            keys.push(StageKey { route: l + 1, stage: s.stage, cell: s.cell });
            means.push(s.occupancy);
        }
    }
    Ok(StageProductForm { keys, form: ProductForm::new(means)? })
}

/// Stages with zero survival, as `(route, stage)` pairs (1-based).
pub fn unreachable_stages(spec: &NetworkSpec) -> Result<Vec<(usize, usize)>> {
    Ok(unreachable_from_moments(&network_moments(spec)?))
}
