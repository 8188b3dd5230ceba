//! Empirical occupancy distributions and information-theoretic metrics.
//!
//! All entropies and divergences are in bits. Empirical distributions keep
//! exact integer counts in a `BTreeMap`, so every sum runs in a fixed order
//! and results are bit-reproducible.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{poisson_ln_pmf, ProductForm};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_THRESHOLD: f64 = 0.15;
pub const DEFAULT_TEST_INTERVAL: f64 = 3600.0;

/// Slack allowed below zero for entropy gaps.
pub const GAP_SLACK: f64 = 1e-9;

/// Relative-frequency distribution over occupancy vectors.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    counts: BTreeMap<Vec<u32>, u64>,
    total: u64,
    dimension: usize,
}

impl EmpiricalDistribution {
    /// Counts the rows projected onto `subset` (0-based coordinates).
    pub fn from_rows<R: AsRef<[u32]>>(rows: &[R], subset: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("empirical distribution needs at least one sample"));
        }
        let mut counts: HashMap<Vec<u32>, u64> = HashMap::new();
        let mut key = Vec::with_capacity(subset.len());
        for row in rows {
            let row = row.as_ref();
            key.clear();
            for &c in subset {
                key.push(*row.get(c).ok_or(Error::IndexOutOfRange { index: c, dimension: row.len() })?);
            }
            match counts.get_mut(key.as_slice()) {
                Some(n) => *n += 1,
                None => {
                    counts.insert(key.clone(), 1);
                }
            }
        }
        let counts: BTreeMap<Vec<u32>, u64> = counts.into_iter().collect();
        Ok(Self { counts, total: rows.len() as u64, dimension: subset.len() })
    }

    /// Counts whole rows.
    pub fn from_full_rows<R: AsRef<[u32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        Self::from_rows(rows, &(0..dim).collect::<Vec<_>>())
    }

    /// Builds from explicit counts, dropping zero entries.
    pub fn from_counts(counts: impl IntoIterator<Item = (Vec<u32>, u64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut dimension = None;
        for (k, c) in counts {
            if c == 0 {
                continue;
            }
            match dimension {
                None => dimension = Some(k.len()),
                Some(d) if d != k.len() => return Err(Error::DimensionMismatch { expected: d, got: k.len() }),
                _ => {}
            }
            *map.entry(k).or_insert(0) += c;
        }
        let total = map.values().sum();
        if total == 0 {
            return Err(Error::EmptyInput("empirical distribution needs at least one sample"));
        }
        Ok(Self { counts: map, total, dimension: dimension.unwrap_or(0) })
    }

    /// One-dimensional distribution of scalar samples.
    pub fn from_values(values: &[u32]) -> Result<Self> {
        Self::from_counts(values.iter().map(|&v| (vec![v], 1)))
    }

    pub fn sample_count(&self) -> u64 {
        self.total
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn support_size(&self) -> usize {
        self.counts.len()
    }

    pub fn probability(&self, x: &[u32]) -> f64 {
        self.counts.get(x).map_or(0.0, |&c| c as f64 / self.total as f64)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u32], f64)> + '_ {
        let n = self.total as f64;
        self.counts.iter().map(move |(k, &c)| (k.as_slice(), c as f64 / n))
    }

    pub fn counts(&self) -> impl Iterator<Item = (&[u32], u64)> + '_ {
        self.counts.iter().map(|(k, &c)| (k.as_slice(), c))
    }

    /// Marginal over `coords`, by summing counts.
    pub fn project(&self, coords: &[usize]) -> Result<Self> {
        if let Some(&bad) = coords.iter().find(|&&c| c >= self.dimension) {
            return Err(Error::IndexOutOfRange { index: bad, dimension: self.dimension });
        }
        let mut counts = BTreeMap::new();
        for (k, &c) in &self.counts {
            *counts.entry(coords.iter().map(|&i| k[i]).collect::<Vec<_>>()).or_insert(0) += c;
        }
        Ok(Self { counts, total: self.total, dimension: coords.len() })
    }

    pub fn marginal(&self, coord: usize) -> Result<Self> {
        self.project(&[coord])
    }

    /// Sample mean of each coordinate.
    pub fn means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dimension];
        for (k, p) in self.iter() {
            for (acc, &v) in m.iter_mut().zip(k) {
                *acc += p * f64::from(v);
            }
        }
        m
    }
}

/// Anything with a log-probability over occupancy vectors.
pub trait LogPmf {
    fn dimension(&self) -> usize;
    /// Natural-log probability; `-inf` outside the support.
    fn ln_prob(&self, x: &[u32]) -> f64;
}

impl LogPmf for ProductForm {
    fn dimension(&self) -> usize {
        self.means.len()
    }

    fn ln_prob(&self, x: &[u32]) -> f64 {
        self.means.iter().zip(x).map(|(&m, &y)| poisson_ln_pmf(m, y)).sum()
    }
}

/// Shannon entropy in bits.
pub fn entropy(dist: &EmpiricalDistribution) -> f64 {
    let h: f64 = dist.iter().map(|(_, p)| -p * p.log2()).sum();
    h.max(0.0)
}

/// `KL(P || Q)` in bits; `f64::INFINITY` when `P` puts mass where `Q` has none.
pub fn kl_divergence<Q: LogPmf + ?Sized>(p: &EmpiricalDistribution, q: &Q) -> Result<f64> {
    if p.dimension() != q.dimension() {
        return Err(Error::DimensionMismatch { expected: q.dimension(), got: p.dimension() });
    }
    let mut kl = 0.0;
    for (x, px) in p.iter() {
        let lq = q.ln_prob(x);
        if lq == f64::NEG_INFINITY {
            return Ok(f64::INFINITY);
        }
        kl += px * (px.ln() - lq);
    }
    Ok((kl / std::f64::consts::LN_2).max(0.0))
}

/// Sum of marginal entropies minus the joint entropy.
pub fn entropy_gap(joint: &EmpiricalDistribution) -> Result<f64> {
    if joint.dimension() < 2 {
        return Err(Error::InvalidArgument(format!("entropy gap needs dimension >= 2, got {}", joint.dimension())));
    }
    let marginals: f64 = (0..joint.dimension()).map(|i| joint.marginal(i).map(|m| entropy(&m))).sum::<Result<f64>>()?;
    Ok(marginals - entropy(joint))
}

/// Symmetric KL between two empirical distributions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetricKl {
    /// `KL(P'||Q') + KL(Q'||P')` over the common support, each side
    /// renormalized to that support.
    pub divergence: f64,
    /// Mass of `P` outside the common support.
    pub uncovered_p: f64,
    /// Mass of `Q` outside the common support.
    pub uncovered_q: f64,
}

pub fn symmetric_kl(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> Result<SymmetricKl> {
    if p.dimension() != q.dimension() {
        return Err(Error::DimensionMismatch { expected: p.dimension(), got: q.dimension() });
    }
    let common: Vec<(f64, f64)> = p.iter().filter_map(|(x, px)| Some((px, q.counts.get(x).map(|&c| c as f64 / q.total as f64)?))).collect();
    let mass_p: f64 = common.iter().map(|c| c.0).sum();
    let mass_q: f64 = common.iter().map(|c| c.1).sum();
    let divergence = if common.is_empty() {
        f64::INFINITY
    } else {
        common
            .iter()
            .map(|&(a, b)| {
                let (a, b) = (a / mass_p, b / mass_q);
                (a - b) * (a / b).log2()
            })
            .sum::<f64>()
            .max(0.0)
    };
    Ok(SymmetricKl { divergence, uncovered_p: 1.0 - mass_p, uncovered_q: 1.0 - mass_q })
}

/// Effective sample size of an autocorrelated series by batch means.
///
/// With batch variance `var_b` of the means of consecutive batches of size
/// `b` and overall variance `var`, the integrated autocorrelation time is
/// estimated as `b * var_b / var` and `n_eff = n / tau`, capped at `n`.
pub fn effective_sample_size(series: &[f64], batch: usize) -> f64 {
    let n = series.len();
    let batches = n.checked_div(batch).unwrap_or(0);
    if batches < 2 {
        return n as f64;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return n as f64;
    }
    let bmeans: Vec<f64> = series.chunks_exact(batch).map(|c| c.iter().sum::<f64>() / batch as f64).collect();
    let bmean = bmeans.iter().sum::<f64>() / batches as f64;
    let bvar = bmeans.iter().map(|x| (x - bmean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    let tau = (batch as f64 * bvar / var).max(1.0);
    n as f64 / tau
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    /// The statistic is undefined (zero entropy or no arrivals).
    Degenerate,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
            Outcome::Degenerate => "degenerate",
        })
    }
}

/// Result of an arrival-process test. `outcome` is `Pass` exactly when
/// `statistic < threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: Option<f64>,
    pub threshold: f64,
    pub outcome: Outcome,
    pub intervals: usize,
    pub interval: f64,
    pub total_arrivals: u64,
    /// Entropy of single-interval counts, bits.
    pub entropy_single: f64,
    /// Entropy of consecutive-interval count pairs (independence test), bits.
    pub entropy_pair: Option<f64>,
    /// KL of counts against the fitted Poisson (distribution test), bits.
    pub kl_poisson: Option<f64>,
}

impl TestReport {
    pub fn passed(&self) -> bool {
        self.outcome == Outcome::Pass
    }
}

fn verdict(statistic: Option<f64>, threshold: f64) -> Outcome {
    match statistic {
        None => Outcome::Degenerate,
        Some(s) if s < threshold => Outcome::Pass,
        Some(_) => Outcome::Fail,
    }
}

/// Independence test on per-interval arrival counts.
///
/// `blocks` are runs of consecutive intervals (for example one run per
/// day); pairs `(c_i, c_{i+1})` are formed inside each run, never across
/// runs. `eta = (2 H1 - H2) / H2` with `H1` the entropy of single counts and
/// `H2` that of the pairs.
pub fn independence_test(blocks: &[Vec<u32>], interval: f64, threshold: f64) -> Result<TestReport> {
    let singles: Vec<u32> = blocks.iter().flatten().copied().collect();
    let pairs: Vec<[u32; 2]> = blocks.iter().flat_map(|b| b.windows(2).map(|w| [w[0], w[1]])).collect();
    if singles.len() < 2 || pairs.is_empty() {
        return Err(Error::InvalidArgument("independence test needs at least two consecutive intervals".into()));
    }
    let h1 = entropy(&EmpiricalDistribution::from_values(&singles)?);
    let h2 = entropy(&EmpiricalDistribution::from_rows(&pairs, &[0, 1])?);
    let statistic = (h2 > 0.0).then(|| (2.0 * h1 - h2) / h2);
    Ok(TestReport {
        statistic,
        threshold,
        outcome: verdict(statistic, threshold),
        intervals: singles.len(),
        interval,
        total_arrivals: singles.iter().map(|&c| u64::from(c)).sum(),
        entropy_single: h1,
        entropy_pair: Some(h2),
        kl_poisson: None,
    })
}

/// Poisson distribution test: `theta = KL(counts || Poisson(mean)) / H1`.
pub fn poisson_dist_test(counts: &[u32], interval: f64, threshold: f64) -> Result<TestReport> {
    if counts.is_empty() {
        return Err(Error::InvalidArgument("Poisson test needs at least one interval".into()));
    }
    let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    let dist = EmpiricalDistribution::from_values(counts)?;
    let h1 = entropy(&dist);
    let mean = total as f64 / counts.len() as f64;
    let kl = (total > 0).then(|| kl_divergence(&dist, &ProductForm { means: vec![mean] })).transpose()?;
    let statistic = match kl {
        Some(k) if h1 > 0.0 => Some(k / h1),
        _ => None,
    };
    Ok(TestReport {
        statistic,
        threshold,
        outcome: verdict(statistic, threshold),
        intervals: counts.len(),
        interval,
        total_arrivals: total,
        entropy_single: h1,
        entropy_pair: None,
        kl_poisson: kl,
    })
}

/// Empirical joint versus model product form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub labels: Vec<String>,
    pub samples: u64,
    pub h_kl: f64,
    /// `None` for a single dimension.
    pub h_gap: Option<f64>,
    pub h_real: f64,
    /// `h_kl / h_real`; small means the model approximates the data well.
    pub kl_ratio: f64,
    /// `h_gap / h_real`; small means the coordinates are nearly independent.
    pub gap_ratio: Option<f64>,
}

pub fn compare_joint(empirical: &EmpiricalDistribution, model: &ProductForm, labels: Vec<String>) -> Result<CompareReport> {
    if empirical.dimension() != model.dimension() {
        return Err(Error::DimensionMismatch { expected: model.dimension(), got: empirical.dimension() });
    }
    let h_real = entropy(empirical);
    let h_kl = kl_divergence(empirical, model)?;
    let h_gap = (empirical.dimension() >= 2).then(|| entropy_gap(empirical)).transpose()?;
    let ratio = |x: f64| if h_real > 0.0 { x / h_real } else { f64::INFINITY };
    Ok(CompareReport {
        labels,
        samples: empirical.sample_count(),
        h_kl,
        h_gap,
        h_real,
        kl_ratio: ratio(h_kl),
        gap_ratio: h_gap.map(ratio),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub stddev: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, stddev: f64::NAN };
        }
        if values.iter().all(|&v| v == values[0]) {
            return Self { mean: values[0], stddev: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stddev =
            if n < 2 { 0.0 } else { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
        Self { mean, stddev }
    }
}

/// Inputs for [`random_subset_study`].
#[derive(Clone, Copy, Debug)]
pub struct StudySource<'a, R: AsRef<[u32]>> {
    /// Full occupancy vectors, one per observation.
    pub rows: &'a [R],
    /// Model Poisson mean per column of `rows`.
    pub means: &'a [f64],
    /// Columns eligible for selection; all columns when `None`.
    pub candidates: Option<&'a [usize]>,
    /// Planar position per column, meters.
    pub coordinates: Option<&'a [(f64, f64)]>,
    pub labels: Option<&'a [String]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub subset_size: usize,
    pub repeats: usize,
    /// Pairwise distance limit (strict), meters.
    pub max_distance: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    pub repeat: usize,
    pub cells: Vec<usize>,
    pub report: CompareReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub subset_size: usize,
    pub repeats: usize,
    pub h_kl: MeanStd,
    pub h_gap: Option<MeanStd>,
    pub h_real: MeanStd,
    pub subsets: Vec<SubsetResult>,
}

/// Attempts per repeat before falling back to enumerating feasible subsets.
const REJECTION_ATTEMPTS: usize = 10_000;
/// Largest number of combinations enumerated by the fallback.
const ENUMERATION_LIMIT: u128 = 5_000_000;

fn feasible(cells: &[usize], coords: Option<&[(f64, f64)]>, max_distance: Option<f64>) -> bool {
    let (Some(coords), Some(limit)) = (coords, max_distance) else { return true };
    cells.iter().enumerate().all(|(i, &a)| {
        cells[i + 1..].iter().all(|&b| {
            let (dx, dy) = (coords[a].0 - coords[b].0, coords[a].1 - coords[b].1);
            (dx * dx + dy * dy).sqrt() < limit
        })
    })
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

fn enumerate_feasible(pool: &[usize], n: usize, coords: Option<&[(f64, f64)]>, limit: Option<f64>) -> Vec<Vec<usize>> {
    fn rec(pool: &[usize], n: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>, coords: Option<&[(f64, f64)]>, limit: Option<f64>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for i in start..pool.len() {
            cur.push(pool[i]);
            if feasible(cur, coords, limit) {
                rec(pool, n, i + 1, cur, out, coords, limit);
            }
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(pool, n, 0, &mut Vec::new(), &mut out, coords, limit);
    out
}

/// Repeatedly draws a random `n`-cell subset (respecting the distance
/// limit), compares the empirical joint of those cells with the model, and
/// summarizes `H_kl`, `H_gap` and `H_real` by mean and standard deviation.
///
/// Repeat `r` draws its subset from stream `(seed, r)`; repeats run in
/// parallel and are merged in repeat order.
pub fn random_subset_study<R: AsRef<[u32]> + Sync>(source: &StudySource<'_, R>, opts: &StudyOptions) -> Result<StudySummary> {
    let width = source.means.len();
    if let Some(first) = source.rows.first() {
        if first.as_ref().len() != width {
            return Err(Error::DimensionMismatch { expected: width, got: first.as_ref().len() });
        }
    }
    if opts.repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    let pool: Vec<usize> = source.candidates.map_or_else(|| (0..width).collect(), <[usize]>::to_vec);
    let n = opts.subset_size;
    if n == 0 || n > pool.len() {
        return Err(Error::InvalidArgument(format!("subset size {n} not in 1..={}", pool.len())));
    }
    if let Some(coords) = source.coordinates {
        if coords.len() != width {
            return Err(Error::DimensionMismatch { expected: width, got: coords.len() });
        }
    }
    let model = ProductForm::new(source.means.to_vec())?;
    let coords = source.coordinates;
    let limit = opts.max_distance.filter(|_| coords.is_some());
    let no_subset = || Error::NoFeasibleSubset { n, max_distance: limit.unwrap_or(f64::INFINITY) };
    let fallback = std::sync::OnceLock::new();

    let draw = |r: usize| -> Result<Vec<usize>> {
        let mut rng = rng::stream(opts.seed, r as u64);
        for _ in 0..REJECTION_ATTEMPTS {
            let mut pick: Vec<usize> = sample_indices(&mut rng, pool.len(), n).into_iter().map(|i| pool[i]).collect();
            pick.sort_unstable();
            if feasible(&pick, coords, limit) {
                return Ok(pick);
            }
        }
        if binomial(pool.len(), n) > ENUMERATION_LIMIT {
            return Err(no_subset());
        }
        let all: &Vec<Vec<usize>> = fallback.get_or_init(|| enumerate_feasible(&pool, n, coords, limit));
        if all.is_empty() {
            return Err(no_subset());
        }
        use rand::Rng;
        Ok(all[rng.random_range(0..all.len())].clone())
    };

    let subsets: Vec<SubsetResult> = (0..opts.repeats)
        .into_par_iter()
        .map(|r| {
            let cells = draw(r)?;
            let emp = EmpiricalDistribution::from_rows(source.rows, &cells)?;
            let labels = cells
                .iter()
                .map(|&c| source.labels.and_then(|l| l.get(c).cloned()).unwrap_or_else(|| format!("{}", c + 1)))
                .collect();
            let report = compare_joint(&emp, &model.project(&cells)?, labels)?;
            Ok(SubsetResult { repeat: r, cells, report })
        })
        .collect::<Result<_>>()?;
    let kl: Vec<f64> = subsets.iter().map(|s| s.report.h_kl).collect();
    let real: Vec<f64> = subsets.iter().map(|s| s.report.h_real).collect();
    let gaps: Option<Vec<f64>> = subsets.iter().map(|s| s.report.h_gap).collect();
    Ok(StudySummary {
        subset_size: n,
        repeats: opts.repeats,
        h_kl: MeanStd::of(&kl),
        h_gap: gaps.map(|g| MeanStd::of(&g)),
        h_real: MeanStd::of(&real),
        subsets,
    })
}
