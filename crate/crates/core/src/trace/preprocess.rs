use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{PollRecord, PreprocessConfig, SessionRecord, Stage};
use crate::error::{Error, Result};

/// Tolerance for comparing reconstructed stage boundaries, seconds.
pub(crate) const TIME_EPS: f64 = 1e-6;

/// Polls inside the working window on working days. The window opening is
/// inclusive and the closing exclusive.
pub fn filter_window(records: &[PollRecord], cfg: &PreprocessConfig) -> Vec<PollRecord> {
    records.iter().filter(|r| cfg.window_day(r.timestamp).is_some()).cloned().collect()
}

/// Most common positive gap between successive polls of one user at one
/// AP, rounded to whole seconds; ties go to the shorter gap.
pub fn infer_cadence(records: &[PollRecord]) -> Result<f64> {
    let mut last: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    let mut gaps: BTreeMap<i64, u64> = BTreeMap::new();
    for r in records {
        if let Some(prev) = last.insert((&r.user, &r.ap), r.timestamp) {
            let g = (r.timestamp - prev).round() as i64;
            if g > 0 {
                *gaps.entry(g).or_insert(0) += 1;
            }
        }
    }
    gaps.iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(&g, _)| g as f64)
        .ok_or_else(|| Error::InvalidArgument("cannot infer the poll cadence; set it explicitly".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApDayReport {
    pub days_with_service: usize,
    /// Mean daily service time over days with nonzero service, seconds.
    pub average_service: f64,
    /// Removed days and their service time.
    pub removed: Vec<(NaiveDate, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DayFilter {
    pub per_ap: BTreeMap<String, ApDayReport>,
    /// Days kept for each AP.
    pub retained: BTreeMap<String, BTreeSet<NaiveDate>>,
    /// Every working day with at least one poll.
    pub days: BTreeSet<NaiveDate>,
}

impl DayFilter {
    pub fn removed_count(&self) -> usize {
        self.per_ap.values().map(|r| r.removed.len()).sum()
    }

    /// Observed time of each AP: retained days times the window length.
    pub fn observed_time(&self, window_length: f64) -> BTreeMap<String, f64> {
        self.retained.iter().map(|(ap, d)| (ap.clone(), d.len() as f64 * window_length)).collect()
    }
}

/// Removes, per AP, the days whose service time falls below
/// `valid_day_fraction` times that AP's average daily service.
///
/// Service time is the number of distinct (user, poll time) pairs times the
/// cadence, i.e. summed user attachment time. The average is computed once,
/// over days with nonzero service, before anything is removed.
pub fn filter_invalid_days(records: &[PollRecord], cfg: &PreprocessConfig, cadence: f64) -> (Vec<PollRecord>, DayFilter) {
    let mut polls: BTreeMap<(&str, NaiveDate), BTreeSet<(&str, u64)>> = BTreeMap::new();
    let mut days = BTreeSet::new();
    let day_of: Vec<Option<NaiveDate>> = records.iter().map(|r| cfg.window_day(r.timestamp)).collect();
    for (r, d) in records.iter().zip(&day_of) {
        let Some(d) = *d else { continue };
        days.insert(d);
        polls.entry((&r.ap, d)).or_default().insert((&r.user, r.timestamp.to_bits()));
    }
    let mut service: BTreeMap<&str, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    for ((ap, d), p) in &polls {
        service.entry(ap).or_default().push((*d, p.len() as f64 * cadence));
    }
    let mut filter = DayFilter { days, ..DayFilter::default() };
    for (ap, per_day) in &service {
        let average = per_day.iter().map(|x| x.1).sum::<f64>() / per_day.len() as f64;
        let cutoff = cfg.valid_day_fraction * average;
        let (kept, removed): (Vec<&(NaiveDate, f64)>, Vec<_>) = per_day.iter().partition(|x| x.1 >= cutoff);
        filter.retained.insert(ap.to_string(), kept.iter().map(|x| x.0).collect());
        filter.per_ap.insert(
            ap.to_string(),
            ApDayReport { days_with_service: per_day.len(), average_service: average, removed: removed.into_iter().copied().collect() },
        );
    }
    let kept = records
        .iter()
        .zip(&day_of)
        .filter(|(r, d)| d.is_some_and(|d| filter.retained.get(&r.ap).is_some_and(|s| s.contains(&d))))
        .map(|(r, _)| r.clone())
        .collect();
    (kept, filter)
}

/// A run of polls of one user at one AP, widened by half a cadence on
/// either side and clipped to the day's window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub ap: String,
    pub start: f64,
    pub end: f64,
    /// Poll times and packet counts.
    pub polls: Vec<(f64, u64)>,
}

pub type UserDay = (String, NaiveDate);

/// Groups polls into attachments per (user, day). Polls of one AP closer
/// than 1.5 cadences belong to the same attachment.
pub fn build_attachments(records: &[PollRecord], cfg: &PreprocessConfig, cadence: f64) -> BTreeMap<UserDay, Vec<Attachment>> {
    type Slots = BTreeMap<u64, (f64, u64)>;
    let mut grouped: BTreeMap<(String, NaiveDate, String), Slots> = BTreeMap::new();
    for r in records {
        let Some(d) = cfg.window_day(r.timestamp) else { continue };
        let slot = grouped.entry((r.user.clone(), d, r.ap.clone())).or_default();
        let e = slot.entry(r.timestamp.to_bits()).or_insert((r.timestamp, 0));
        e.1 += r.packets;
    }
    let half = cadence / 2.0;
    let mut out: BTreeMap<UserDay, Vec<Attachment>> = BTreeMap::new();
    for ((user, day, ap), polls) in grouped {
        let (lo, hi) = cfg.window.bounds(day);
        let mut polls: Vec<(f64, u64)> = polls.into_values().collect();
        polls.sort_by(|a, b| a.0.total_cmp(&b.0));
        let list = out.entry((user, day)).or_default();
        let mut run: Vec<(f64, u64)> = Vec::new();
        let mut flush = |run: &mut Vec<(f64, u64)>| {
            if let (Some(first), Some(last)) = (run.first(), run.last()) {
                list.push(Attachment {
                    ap: ap.clone(),
                    start: (first.0 - half).max(lo),
                    end: (last.0 + half).min(hi),
                    polls: std::mem::take(run),
                });
            }
        };
        for p in polls {
            if run.last().is_some_and(|l| p.0 - l.0 > 1.5 * cadence) {
                flush(&mut run);
            }
            run.push(p);
        }
        flush(&mut run);
    }
    for list in out.values_mut() {
        list.sort_by(|a, b| a.start.total_cmp(&b.start).then_with(|| a.ap.cmp(&b.ap)));
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResolveStats {
    /// Multiple-association periods resolved.
    pub periods: u64,
    /// Total length of those periods, seconds.
    pub period_time: f64,
    /// Returns to the same AP that were bridged.
    pub pingpong_bridged: u64,
}

impl ResolveStats {
    pub fn add(&mut self, o: &ResolveStats) {
        self.periods += o.periods;
        self.period_time += o.period_time;
        self.pingpong_bridged += o.pingpong_bridged;
    }
}

fn push_stage(out: &mut Vec<Stage>, ap: &str, entry: f64, exit: f64) {
    if exit - entry <= TIME_EPS {
        return;
    }
    if let Some(last) = out.last_mut() {
        if last.ap == ap && (entry - last.exit).abs() <= TIME_EPS {
            last.exit = exit;
            return;
        }
    }
    out.push(Stage { ap: ap.to_string(), entry, exit });
}

/// Collapses overlapping attachments of one user to a single AP at a time,
/// then bridges ping-pong returns.
///
/// A multiple-association period is a maximal span during which the user
/// is attached to two or more APs, extended only through attachments that
/// overlap each other (two overlaps that merely touch stay separate). The whole period goes to the AP with the
/// most packets polled inside it; ties go to the AP attached earliest, then
/// to the smaller AP id. The covered time is unchanged: overlap time is
/// reassigned, never added or removed.
///
/// Afterwards, when the user leaves an AP, stays attached elsewhere without
/// interruption, and returns to the first AP less than `pingpong_return`
/// after leaving, the excursion is absorbed into the first AP.
pub fn resolve_multi_association(attachments: &[Attachment], cfg: &PreprocessConfig) -> (Vec<Stage>, ResolveStats) {
    let mut stats = ResolveStats::default();
    let mut cuts: Vec<f64> = attachments.iter().flat_map(|a| [a.start, a.end]).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() <= TIME_EPS);

    // Elementary segments with the attachments covering them.
    let segments: Vec<(f64, f64, Vec<usize>)> = cuts
        .windows(2)
        .map(|w| {
            let active = attachments
                .iter()
                .enumerate()
                .filter(|(_, a)| a.start <= w[0] + TIME_EPS && a.end >= w[1] - TIME_EPS)
                .map(|(i, _)| i)
                .collect();
            (w[0], w[1], active)
        })
        .collect();
    let distinct = |idx: &[usize]| idx.iter().map(|&i| attachments[i].ap.as_str()).collect::<BTreeSet<_>>();

    let mut stages = Vec::new();
    let mut s = 0;
    while s < segments.len() {
        let (a, b, active) = &segments[s];
        if distinct(active).len() < 2 {
            if let Some(&i) = active.first() {
                push_stage(&mut stages, &attachments[i].ap, *a, *b);
            }
            s += 1;
            continue;
        }
        let mut e = s;
        let mut involved: BTreeSet<usize> = BTreeSet::new();
        while e < segments.len()
            && distinct(&segments[e].2).len() >= 2
            && (e == s || segments[e].2.iter().any(|i| segments[e - 1].2.contains(i)))
        {
            involved.extend(segments[e].2.iter().copied());
            e += 1;
        }
        let (ps, pe) = (segments[s].0, segments[e - 1].1);
        let mut score: BTreeMap<&str, (u64, f64)> = BTreeMap::new();
        for &i in &involved {
            let att = &attachments[i];
            let packets: u64 = att.polls.iter().filter(|p| p.0 >= ps && p.0 < pe).map(|p| p.1).sum();
            let entry = score.entry(&att.ap).or_insert((0, f64::INFINITY));
            entry.0 += packets;
            entry.1 = entry.1.min(att.start);
        }
        let winner = score
            .iter()
            .min_by(|x, y| y.1 .0.cmp(&x.1 .0).then(x.1 .1.total_cmp(&y.1 .1)).then(x.0.cmp(y.0)))
            .map(|(ap, _)| *ap)
            .unwrap_or_default();
        push_stage(&mut stages, winner, ps, pe);
        stats.periods += 1;
        stats.period_time += pe - ps;
        s = e;
    }
    let (stages, bridged) = bridge_pingpong(stages, cfg.pingpong_return);
    stats.pingpong_bridged = bridged;
    (stages, stats)
}

fn bridge_pingpong(stages: Vec<Stage>, threshold: f64) -> (Vec<Stage>, u64) {
    let n = stages.len();
    let mut out: Vec<Stage> = Vec::with_capacity(n);
    let mut bridged = 0;
    let mut i = 0;
    while i < n {
        let mut cur = stages[i].clone();
        loop {
            let mut found = None;
            let mut j = i + 1;
            while j < n
                && (stages[j].entry - stages[j - 1].exit).abs() <= TIME_EPS
                && stages[j].entry - cur.exit < threshold
            {
                if stages[j].ap == cur.ap {
                    found = Some(j);
                    break;
                }
                j += 1;
            }
            match found {
                Some(j) => {
                    cur.exit = stages[j].exit;
                    i = j;
                    bridged += 1;
                }
                None => break,
            }
        }
        out.push(cur);
        i += 1;
    }
    (out, bridged)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PadStats {
    pub padded_gaps: u64,
    pub padded_time: f64,
}

impl PadStats {
    pub fn add(&mut self, o: &PadStats) {
        self.padded_gaps += o.padded_gaps;
        self.padded_time += o.padded_time;
    }
}

/// Fills absences shorter than the departure threshold by extending the
/// stage at which the user reappears back to the previous exit.
pub fn pad_gaps(stages: &[Stage], cfg: &PreprocessConfig) -> (Vec<Stage>, PadStats) {
    let mut stats = PadStats::default();
    let mut out: Vec<Stage> = Vec::with_capacity(stages.len());
    for st in stages {
        let mut entry = st.entry;
        if let Some(prev) = out.last() {
            let gap = entry - prev.exit;
            if gap > TIME_EPS && gap < cfg.departure_threshold {
                stats.padded_gaps += 1;
                stats.padded_time += gap;
                entry = prev.exit;
            }
        }
        push_stage(&mut out, &st.ap, entry, st.exit);
    }
    (out, stats)
}

/// Per (user, day), the stage sequence after resolution and padding.
pub type Timelines = BTreeMap<UserDay, Vec<Stage>>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub open: BTreeSet<String>,
    pub closed: BTreeSet<String>,
}

impl Classification {
    pub fn users(&self) -> usize {
        self.open.len() + self.closed.len()
    }

    pub fn closed_fraction(&self) -> f64 {
        if self.users() == 0 { 0.0 } else { self.closed.len() as f64 / self.users() as f64 }
    }
}

/// A user attached for at least `closed_user_hours` on any day is closed.
pub fn classify_open_closed(timelines: &Timelines, cfg: &PreprocessConfig) -> Classification {
    let limit = cfg.closed_user_hours * 3600.0;
    let mut c = Classification::default();
    for ((user, _), stages) in timelines {
        let present: f64 = stages.iter().map(Stage::holding).sum();
        if present >= limit - TIME_EPS {
            c.closed.insert(user.clone());
        }
    }
    for (user, _) in timelines.keys() {
        if !c.closed.contains(user) {
            c.open.insert(user.clone());
        }
    }
    c
}

/// Number of sessions by stage count.
pub type StageCounts = BTreeMap<usize, u64>;

pub fn stage_counts(sessions: &[SessionRecord]) -> StageCounts {
    let mut t = StageCounts::new();
    for s in sessions {
        *t.entry(s.stages.len()).or_insert(0) += 1;
    }
    t
}

/// Counts for 1, 2, 3, 4 and at least 5 stages.
pub fn stage_count_buckets(t: &StageCounts) -> [u64; 5] {
    let mut b = [0u64; 5];
    for (&k, &n) in t {
        b[k.clamp(1, 5) - 1] += n;
    }
    b
}

/// Splits each open user's day into sessions at every absence.
pub fn extract_sessions(timelines: &Timelines, classification: &Classification, cfg: &PreprocessConfig) -> Vec<SessionRecord> {
    let mut sessions = Vec::new();
    for ((user, day), stages) in timelines {
        if !classification.open.contains(user) {
            continue;
        }
        let (lo, hi) = cfg.window.bounds(*day);
        let mut cur: Vec<Stage> = Vec::new();
        let mut close = |cur: &mut Vec<Stage>| {
            if cur.is_empty() {
                return;
            }
            let stages = std::mem::take(cur);
            sessions.push(SessionRecord {
                user: user.clone(),
                day: *day,
                censored_start: (stages[0].entry - lo).abs() <= TIME_EPS,
                censored_end: (stages[stages.len() - 1].exit - hi).abs() <= TIME_EPS,
                stages,
            });
        };
        for st in stages {
            if cur.last().is_some_and(|l| st.entry - l.exit > TIME_EPS) {
                close(&mut cur);
            }
            cur.push(st.clone());
        }
        close(&mut cur);
    }
    sessions
}

/// Everything produced by the preprocessing stages.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    pub cadence: f64,
    pub window_polls: usize,
    pub day_filter: DayFilter,
    pub resolve: ResolveStats,
    pub padding: PadStats,
    pub timelines: Timelines,
    pub classification: Classification,
    pub sessions: Vec<SessionRecord>,
}

/// Runs the preprocessing stages in their fixed order on sorted polls.
pub fn preprocess(records: &[PollRecord], cfg: &PreprocessConfig) -> Result<Preprocessed> {
    cfg.check()?;
    let windowed = filter_window(records, cfg);
    if windowed.is_empty() {
        return Err(Error::EmptyInput("no polls inside the working window"));
    }
    let cadence = match cfg.cadence {
        Some(c) => c,
        None => infer_cadence(&windowed)?,
    };
    let (kept, day_filter) = filter_invalid_days(&windowed, cfg, cadence);
    let attachments = build_attachments(&kept, cfg, cadence);
    let mut resolve = ResolveStats::default();
    let mut padding = PadStats::default();
    let mut timelines = Timelines::new();
    for (key, atts) in attachments {
        let (stages, rs) = resolve_multi_association(&atts, cfg);
        let (stages, ps) = pad_gaps(&stages, cfg);
        resolve.add(&rs);
        padding.add(&ps);
        timelines.insert(key, stages);
    }
    let classification = classify_open_closed(&timelines, cfg);
    let sessions = extract_sessions(&timelines, &classification, cfg);
    Ok(Preprocessed { cadence, window_polls: windowed.len(), day_filter, resolve, padding, timelines, classification, sessions })
}
