use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::preprocess::{preprocess, stage_counts, Preprocessed, StageCounts};
use super::{ExclusionMode, PollRecord, PreprocessConfig, SessionRecord};
use crate::error::{Error, Result};
use crate::stats::{self, EmpiricalDistribution, Outcome, TestReport};

/// Fitted parameters of one AP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellEstimate {
    pub ap: String,
    pub entries: u64,
    pub observed_time: f64,
    /// Stage entries per second of observed time.
    pub arrival_rate: f64,
    /// Mean stage holding time, seconds.
    pub mean_holding: f64,
    /// `arrival_rate * mean_holding`.
    pub poisson_mean: f64,
    /// Standard error of `arrival_rate`, treating entries as Poisson.
    pub arrival_rate_se: f64,
    /// Standard error of `mean_holding`.
    pub mean_holding_se: f64,
}

/// Per-AP rates and mean holding times from the stages of `sessions`.
///
/// Every AP in `aps` must have positive observed time and at least one
/// stage entry.
pub fn estimate_cell_params(
    sessions: &[SessionRecord],
    aps: &[String],
    observed_time: &BTreeMap<String, f64>,
) -> Result<Vec<CellEstimate>> {
    let mut holds: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in sessions {
        for st in &s.stages {
            holds.entry(&st.ap).or_default().push(st.holding());
        }
    }
    aps.iter()
        .map(|ap| {
            let t = observed_time.get(ap).copied().unwrap_or(0.0);
            if t <= 0.0 {
                return Err(Error::ZeroObservedTime(ap.clone()));
            }
            let h = holds.get(ap.as_str()).filter(|h| !h.is_empty()).ok_or_else(|| Error::NoEntries(ap.clone()))?;
            let n = h.len() as f64;
            let mean = h.iter().sum::<f64>() / n;
            let var = if h.len() > 1 { h.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            let rate = n / t;
            Ok(CellEstimate {
                ap: ap.clone(),
                entries: h.len() as u64,
                observed_time: t,
                arrival_rate: rate,
                mean_holding: mean,
                poisson_mean: rate * mean,
                arrival_rate_se: n.sqrt() / t,
                mean_holding_se: (var / n).sqrt(),
            })
        })
        .collect()
}

/// APs with at least one stage in `sessions`, sorted.
pub fn session_aps(sessions: &[SessionRecord]) -> Vec<String> {
    sessions.iter().flat_map(|s| s.stages.iter().map(|st| st.ap.clone())).collect::<BTreeSet<_>>().into_iter().collect()
}

/// New-session arrival counts per AP: one block per retained day, one count
/// per test interval. A session counts at its first AP unless its start is
/// censored by the window opening.
pub fn arrival_series(
    sessions: &[SessionRecord],
    aps: &[String],
    retained: &BTreeMap<String, BTreeSet<NaiveDate>>,
    cfg: &PreprocessConfig,
) -> BTreeMap<String, Vec<Vec<u32>>> {
    let buckets = (cfg.window.length() / cfg.test_interval).ceil().max(1.0) as usize;
    let mut counts: BTreeMap<(&str, NaiveDate), Vec<u32>> = BTreeMap::new();
    for s in sessions.iter().filter(|s| !s.censored_start) {
        let (lo, _) = cfg.window.bounds(s.day);
        let b = (((s.stages[0].entry - lo) / cfg.test_interval).floor() as usize).min(buckets - 1);
        counts.entry((s.first_ap(), s.day)).or_insert_with(|| vec![0; buckets])[b] += 1;
    }
    aps.iter()
        .map(|ap| {
            let days = retained.get(ap).map(|d| d.iter().copied().collect::<Vec<_>>()).unwrap_or_default();
            let blocks =
                days.iter().map(|&d| counts.get(&(ap.as_str(), d)).cloned().unwrap_or_else(|| vec![0; buckets])).collect();
            (ap.clone(), blocks)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApValidity {
    pub ap: String,
    /// `None` when there are too few intervals to form a pair.
    pub independence: Option<TestReport>,
    pub distribution: Option<TestReport>,
    pub valid: bool,
}

impl ApValidity {
    pub fn passes_independence(&self) -> bool {
        self.independence.as_ref().is_some_and(TestReport::passed)
    }

    pub fn passes_distribution(&self) -> bool {
        self.distribution.as_ref().is_some_and(TestReport::passed)
    }
}

/// Runs the independence test and then the Poisson distribution test on
/// each AP's new-arrival series. An AP is valid when it passes both; a
/// degenerate statistic counts as not passing.
pub fn ap_validity(series: &BTreeMap<String, Vec<Vec<u32>>>, cfg: &PreprocessConfig) -> Vec<ApValidity> {
    series
        .iter()
        .map(|(ap, blocks)| {
            let flat: Vec<u32> = blocks.iter().flatten().copied().collect();
            let independence = stats::independence_test(blocks, cfg.test_interval, cfg.threshold_eta).ok();
            let distribution = stats::poisson_dist_test(&flat, cfg.test_interval, cfg.threshold_theta).ok();
            let mut v = ApValidity { ap: ap.clone(), independence, distribution, valid: false };
            v.valid = v.passes_independence() && v.passes_distribution();
            v
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValiditySummary {
    pub aps: usize,
    pub pass_independence: usize,
    /// APs passing the distribution test among those passing independence.
    pub pass_both: usize,
    pub degenerate: usize,
}

pub fn validity_summary(v: &[ApValidity]) -> ValiditySummary {
    ValiditySummary {
        aps: v.len(),
        pass_independence: v.iter().filter(|a| a.passes_independence()).count(),
        pass_both: v.iter().filter(|a| a.valid).count(),
        degenerate: v
            .iter()
            .filter(|a| {
                [&a.independence, &a.distribution].iter().any(|t| t.as_ref().is_none_or(|t| t.outcome == Outcome::Degenerate))
            })
            .count(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub sessions: Vec<SessionRecord>,
    /// Occupancy dimensions (APs) kept.
    pub dims: Vec<String>,
    pub removed_invalid_start: u64,
    pub removed_one_stage: u64,
}

/// Applies an exclusion mode and the optional one-stage filter.
///
/// Mode 1 drops sessions whose first stage is at an invalid AP; mode 2
/// keeps every session but drops invalid APs as dimensions, so handoff
/// traffic through them still counts at valid APs; mode 3 changes nothing.
/// Dimensions are the APs that still have stages, minus invalid APs under
/// mode 2.
pub fn exclusion_modes(sessions: &[SessionRecord], validity: &[ApValidity], mode: ExclusionMode, exclude_one_stage: bool) -> Excluded {
    let invalid: BTreeSet<&str> = validity.iter().filter(|v| !v.valid).map(|v| v.ap.as_str()).collect();
    let mut removed_invalid_start = 0;
    let mut removed_one_stage = 0;
    let kept: Vec<SessionRecord> = sessions
        .iter()
        .filter(|s| {
            if mode == ExclusionMode::SessionsFromInvalid && invalid.contains(s.first_ap()) {
                removed_invalid_start += 1;
                return false;
            }
            if exclude_one_stage && s.stages.len() == 1 {
                removed_one_stage += 1;
                return false;
            }
            true
        })
        .cloned()
        .collect();
    let dims = session_aps(&kept)
        .into_iter()
        .filter(|ap| mode != ExclusionMode::InvalidAps || !invalid.contains(ap.as_str()))
        .collect();
    Excluded { sessions: kept, dims, removed_invalid_start, removed_one_stage }
}

/// Days on which every AP in `dims` was retained.
pub fn common_days(dims: &[String], retained: &BTreeMap<String, BTreeSet<NaiveDate>>) -> Vec<NaiveDate> {
    let mut it = dims.iter().map(|ap| retained.get(ap).cloned().unwrap_or_default());
    let Some(first) = it.next() else { return Vec::new() };
    it.fold(first, |acc, s| acc.intersection(&s).copied().collect()).into_iter().collect()
}

/// Occupancy vectors sampled on `days` at the poll grid: times
/// `open + cadence/2 + i*cadence` inside the window. Entry `n` counts the
/// sessions attached to `dims[n]` at that instant.
pub fn occupancy_rows(sessions: &[SessionRecord], dims: &[String], days: &[NaiveDate], cadence: f64, cfg: &PreprocessConfig) -> Vec<Vec<u32>> {
    let slots = ((cfg.window.length() - cadence / 2.0) / cadence).floor() as i64 + 1;
    let slots = slots.max(0) as usize;
    let index: BTreeMap<&str, usize> = dims.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
    let day_index: BTreeMap<NaiveDate, usize> = days.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let mut rows = vec![vec![0u32; dims.len()]; days.len() * slots];
    for s in sessions {
        let Some(&di) = day_index.get(&s.day) else { continue };
        let (lo, _) = cfg.window.bounds(s.day);
        let origin = lo + cadence / 2.0;
        for st in &s.stages {
            let Some(&col) = index.get(st.ap.as_str()) else { continue };
            let first = ((st.entry - origin) / cadence).ceil().max(0.0) as usize;
            let last = (((st.exit - origin) / cadence).ceil().max(0.0) as usize).min(slots);
            for row in &mut rows[di * slots + first.min(last)..di * slots + last] {
                row[col] += 1;
            }
        }
    }
    rows
}

/// Entropies of channel holding times at the first stages of long sessions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DependenceReport {
    pub stages: usize,
    pub bin: f64,
    pub sessions: u64,
    pub marginal_entropies: Vec<f64>,
    pub joint_entropy: f64,
    /// Sum of marginal entropies minus the joint entropy.
    pub gap: f64,
}

/// Holding times of the first `stages` stages of every session with at
/// least that many stages, binned to multiples of `bin` (nearest).
pub fn holding_time_dependence(sessions: &[SessionRecord], stages: usize, bin: f64) -> Result<Option<DependenceReport>> {
    if stages < 2 || bin.is_nan() || bin <= 0.0 {
        return Err(Error::InvalidArgument(format!("need at least 2 stages and a positive bin, got {stages} and {bin}")));
    }
    let rows: Vec<Vec<u32>> = sessions
        .iter()
        .filter(|s| s.stages.len() >= stages)
        .map(|s| s.stages[..stages].iter().map(|st| (st.holding() / bin).round() as u32).collect())
        .collect();
    if rows.is_empty() {
        return Ok(None);
    }
    let joint = EmpiricalDistribution::from_full_rows(&rows)?;
    let marginal_entropies = (0..stages).map(|i| joint.marginal(i).map(|m| stats::entropy(&m))).collect::<Result<Vec<_>>>()?;
    let joint_entropy = stats::entropy(&joint);
    Ok(Some(DependenceReport {
        stages,
        bin,
        sessions: rows.len() as u64,
        gap: marginal_entropies.iter().sum::<f64>() - joint_entropy,
        marginal_entropies,
        joint_entropy,
    }))
}

/// Full result of [`analyze`].
#[derive(Clone, Debug, PartialEq)]
pub struct TraceAnalysis {
    pub pre: Preprocessed,
    pub stage_counts: StageCounts,
    /// Parameters of every AP with stages, before exclusion.
    pub params: Vec<CellEstimate>,
    pub arrivals: BTreeMap<String, Vec<Vec<u32>>>,
    pub validity: Vec<ApValidity>,
    pub excluded: Excluded,
    /// Parameters of the kept dimensions, from the kept sessions.
    pub model_params: Vec<CellEstimate>,
    pub occupancy_days: Vec<NaiveDate>,
    pub occupancy: Vec<Vec<u32>>,
    pub dependence: Option<DependenceReport>,
}

impl TraceAnalysis {
    pub fn model_means(&self) -> Vec<f64> {
        self.model_params.iter().map(|p| p.poisson_mean).collect()
    }
}

/// Preprocessing followed by estimation, arrival tests, exclusion and
/// occupancy resampling.
pub fn analyze(records: &[PollRecord], cfg: &PreprocessConfig) -> Result<TraceAnalysis> {
    let pre = preprocess(records, cfg)?;
    if pre.sessions.is_empty() {
        return Err(Error::EmptyInput("no open-user sessions after preprocessing"));
    }
    let observed = pre.day_filter.observed_time(cfg.window.length());
    let aps = session_aps(&pre.sessions);
    let params = estimate_cell_params(&pre.sessions, &aps, &observed)?;
    let arrivals = arrival_series(&pre.sessions, &aps, &pre.day_filter.retained, cfg);
    let validity = ap_validity(&arrivals, cfg);
    let excluded = exclusion_modes(&pre.sessions, &validity, cfg.exclude_mode, cfg.exclude_one_stage);
    let model_params = estimate_cell_params(&excluded.sessions, &excluded.dims, &observed)?;
    let occupancy_days = common_days(&excluded.dims, &pre.day_filter.retained);
    let occupancy = occupancy_rows(&excluded.sessions, &excluded.dims, &occupancy_days, pre.cadence, cfg);
    let dependence = holding_time_dependence(&pre.sessions, cfg.dependence_stages, cfg.dependence_bin.unwrap_or(pre.cadence))?;
    Ok(TraceAnalysis {
        stage_counts: stage_counts(&pre.sessions),
        pre,
        params,
        arrivals,
        validity,
        excluded,
        model_params,
        occupancy_days,
        occupancy,
        dependence,
    })
}

pub fn write_sessions_csv<W: Write>(w: W, sessions: &[SessionRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["session", "user", "day", "stage", "ap", "entry", "exit", "censored_start", "censored_end"])?;
    for (i, s) in sessions.iter().enumerate() {
        for (j, st) in s.stages.iter().enumerate() {
            wtr.write_record([
                (i + 1).to_string(),
                s.user.clone(),
                s.day.to_string(),
                (j + 1).to_string(),
                st.ap.clone(),
                st.entry.to_string(),
                st.exit.to_string(),
                s.censored_start.to_string(),
                s.censored_end.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_stage_counts_csv<W: Write>(w: W, t: &StageCounts) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["stages", "sessions"])?;
    for (k, n) in t {
        wtr.write_record([k.to_string(), n.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_params_csv<W: Write>(w: W, params: &[CellEstimate]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "ap",
        "entries",
        "observed_time",
        "arrival_rate",
        "mean_holding",
        "poisson_mean",
        "arrival_rate_se",
        "mean_holding_se",
    ])?;
    for p in params {
        wtr.write_record([
            p.ap.clone(),
            p.entries.to_string(),
            p.observed_time.to_string(),
            p.arrival_rate.to_string(),
            p.mean_holding.to_string(),
            p.poisson_mean.to_string(),
            p.arrival_rate_se.to_string(),
            p.mean_holding_se.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_validity_csv<W: Write>(w: W, v: &[ApValidity]) -> Result<()> {
    let opt = |x: Option<f64>| x.map(|x| x.to_string()).unwrap_or_default();
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["ap", "intervals", "arrivals", "eta", "eta_outcome", "theta", "theta_outcome", "valid"])?;
    for a in v {
        let ind = a.independence.as_ref();
        let dis = a.distribution.as_ref();
        wtr.write_record([
            a.ap.clone(),
            dis.map_or(0, |t| t.intervals).to_string(),
            dis.map_or(0, |t| t.total_arrivals).to_string(),
            opt(ind.and_then(|t| t.statistic)),
            ind.map_or("degenerate".to_string(), |t| t.outcome.to_string()),
            opt(dis.and_then(|t| t.statistic)),
            dis.map_or("degenerate".to_string(), |t| t.outcome.to_string()),
            a.valid.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Stage;

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 1, 8).unwrap()
    }

    fn session(aps: &[(&str, f64)], start: f64) -> SessionRecord {
        let (lo, _) = PreprocessConfig::default().window.bounds(day());
        let mut t = lo + start;
        let stages = aps
            .iter()
            .map(|&(ap, h)| {
                let st = Stage { ap: ap.into(), entry: t, exit: t + h };
                t += h;
                st
            })
            .collect();
        SessionRecord { user: "u".into(), day: day(), stages, censored_start: start == 0.0, censored_end: false }
    }

    #[test]
    fn arithmetic_estimate() {
        let sessions: Vec<SessionRecord> = (0..100).map(|_| session(&[("a", 1800.0)], 60.0)).collect();
        let observed: BTreeMap<String, f64> = [("a".to_string(), 50.0 * 3600.0)].into();
        let est = estimate_cell_params(&sessions, &["a".into()], &observed).unwrap();
        assert!((est[0].arrival_rate * 3600.0 - 2.0).abs() < 1e-12);
        assert!((est[0].mean_holding - 1800.0).abs() < 1e-12);
        assert!((est[0].poisson_mean - 1.0).abs() < 1e-12);
        assert!(matches!(estimate_cell_params(&sessions, &["b".into()], &observed), Err(Error::ZeroObservedTime(_))));
        let observed: BTreeMap<String, f64> = [("b".to_string(), 1.0)].into();
        assert!(matches!(estimate_cell_params(&sessions, &["b".into()], &observed), Err(Error::NoEntries(_))));
    }

    #[test]
    fn censored_starts_are_not_new_arrivals() {
        let cfg = PreprocessConfig::default();
        let sessions = vec![session(&[("a", 600.0)], 0.0), session(&[("a", 600.0)], 4000.0), session(&[("b", 60.0), ("a", 60.0)], 100.0)];
        let retained: BTreeMap<String, BTreeSet<NaiveDate>> = [("a".to_string(), [day()].into()), ("b".to_string(), [day()].into())].into();
        let s = arrival_series(&sessions, &["a".into(), "b".into()], &retained, &cfg);
        assert_eq!(s["a"], vec![vec![0, 1, 0, 0, 0, 0, 0, 0]]);
        assert_eq!(s["b"], vec![vec![1, 0, 0, 0, 0, 0, 0, 0]]);
    }

    #[test]
    fn exclusion_mode_semantics() {
        let sessions = vec![session(&[("bad", 600.0), ("a", 600.0)], 60.0), session(&[("a", 600.0)], 60.0), session(&[("a", 60.0), ("bad", 60.0)], 60.0)];
        let validity = vec![
            ApValidity { ap: "a".into(), independence: None, distribution: None, valid: true },
            ApValidity { ap: "bad".into(), independence: None, distribution: None, valid: false },
        ];
        let m3 = exclusion_modes(&sessions, &validity, ExclusionMode::None, false);
        assert_eq!(m3.sessions, sessions);
        assert_eq!(m3.dims, vec!["a".to_string(), "bad".to_string()]);
        let m1 = exclusion_modes(&sessions, &validity, ExclusionMode::SessionsFromInvalid, false);
        assert_eq!(m1.sessions.len(), 2);
        assert_eq!(m1.removed_invalid_start, 1);
        let m2 = exclusion_modes(&sessions, &validity, ExclusionMode::InvalidAps, false);
        assert_eq!(m2.sessions.len(), 3);
        assert_eq!(m2.dims, vec!["a".to_string()]);
        let one = exclusion_modes(&sessions, &validity, ExclusionMode::None, true);
        assert_eq!(one.removed_one_stage, 1);
    }

    #[test]
    fn occupancy_counts_stages_at_poll_times() {
        let cfg = PreprocessConfig::default();
        let sessions = vec![session(&[("a", 600.0), ("b", 300.0)], 0.0), session(&[("a", 300.0)], 300.0)];
        let rows = occupancy_rows(&sessions, &["a".into(), "b".into()], &[day()], 300.0, &cfg);
        assert_eq!(rows.len(), 96);
        assert_eq!(&rows[..4], &[vec![1, 0], vec![2, 0], vec![0, 1], vec![0, 0]]);
    }

    #[test]
    fn dependence_of_coupled_holding_times() {
        let sessions: Vec<SessionRecord> =
            (0..40).map(|i| { let h = 300.0 * (1 + i % 4) as f64; session(&[("a", h), ("b", h)], 60.0) }).collect();
        let d = holding_time_dependence(&sessions, 2, 300.0).unwrap().unwrap();
        assert!((d.marginal_entropies[0] - 2.0).abs() < 1e-12);
        assert!((d.gap - 2.0).abs() < 1e-12);
        assert!(holding_time_dependence(&sessions, 3, 300.0).unwrap().is_none());
    }
}
