//! Discrete-event simulation of the multi-route infinite-server network.
//!
//! Every route receives new sessions as a Poisson process. On arrival a
//! session draws its whole holding-time vector, so all of its stage
//! transitions are scheduled at once; no per-session state is kept. Events
//! are ordered by `(time, sequence number)`, which makes simultaneous events
//! (common under deterministic laws) resolve in insertion order.
//!
//! Snapshots are taken at `warmup + i * snapshot_interval` for every such
//! time up to `horizon`. Events at exactly a snapshot time are applied before
//! the snapshot is recorded.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic;
use crate::error::{Error, Result};
use crate::model::{validate, CellId, DiscreteSessionLaw, NetworkSpec, SessionLaw, SessionMoments};
use crate::rng::{self, SimRng};

pub const DEFAULT_MAX_EVENTS: u64 = 2_000_000_000;

/// Pilot sample size for estimating timing defaults of laws without closed
/// form moments.
const PILOT_SESSIONS: usize = 20_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub warmup: f64,
    pub snapshot_interval: f64,
    pub seed: u64,
    pub replications: usize,
    pub track_stages: bool,
    pub max_events: u64,
}

impl SimConfig {
    /// Default timing for `spec`: snapshots every 5x the largest per-cell
    /// mean holding time after a warmup of 10x the longest mean session,
    /// with the horizon sized for `snapshots` snapshots.
    pub fn for_spec(spec: &NetworkSpec, snapshots: usize, seed: u64) -> Result<Self> {
        let timing = Timing::of(spec, seed)?;
        let snapshot_interval = 5.0 * timing.max_cell_holding;
        let warmup = 10.0 * timing.max_session_duration;
        Ok(Self {
            horizon: warmup + snapshot_interval * snapshots.saturating_sub(1) as f64,
            warmup,
            snapshot_interval,
            seed,
            replications: 1,
            track_stages: false,
            max_events: DEFAULT_MAX_EVENTS,
        })
    }

    pub fn snapshot_count(&self) -> usize {
        if self.horizon < self.warmup {
            return 0;
        }
        ((self.horizon - self.warmup) / self.snapshot_interval + 1e-9).floor() as usize + 1
    }

    fn check(&self) -> Result<()> {
        let ok = self.horizon.is_finite()
            && self.warmup >= 0.0
            && self.warmup < self.horizon
            && self.snapshot_interval.is_finite()
            && self.snapshot_interval > 0.0
            && self.replications >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "need 0 <= warmup < horizon, snapshot_interval > 0 and replications >= 1, got {self:?}"
            )))
        }
    }
}

/// Scale quantities that drive the default snapshot timing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Timing {
    pub max_cell_holding: f64,
    pub max_session_duration: f64,
}

impl Timing {
    pub fn of(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let moments: Vec<SessionMoments> = spec
            .routes
            .iter()
            .enumerate()
            .map(|(l, rs)| match &rs.law {
                SessionLaw::Generative(g) => Ok(g
                    .memoryless_moments()
                    .unwrap_or_else(|| g.estimate_moments(PILOT_SESSIONS, seed ^ (l as u64 + 1)))),
                SessionLaw::Discrete(_) => analytic::route_moments(rs, l),
            })
            .collect::<Result<_>>()?;
        let cells = analytic::cell_means_from_moments(spec, &moments)?;
        let max_cell_holding = cells.cells.iter().filter_map(|c| c.mean_holding).fold(0.0, f64::max);
        let max_session_duration = moments
            .iter()
            .map(|m| {
                m.mean_holding
                    .iter()
                    .enumerate()
                    .filter_map(|(j, h)| Some(h.as_ref()? * analytic::survival(&m.stage_probs, j + 1).ok()?))
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        Ok(Self { max_cell_holding, max_session_duration })
    }
}

/// Occupancy at one instant. `stages`, when tracked, follows
/// [`StageLayout`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancySnapshot {
    pub time: f64,
    pub cells: Vec<u32>,
    pub stages: Option<Vec<u32>>,
}

impl AsRef<[u32]> for OccupancySnapshot {
    fn as_ref(&self) -> &[u32] {
        &self.cells
    }
}

impl OccupancySnapshot {
    /// True when the stage counts, if present, add up to the cell counts.
    pub fn is_consistent(&self, layout: &StageLayout) -> bool {
        let Some(stages) = &self.stages else { return true };
        let mut sums = vec![0u32; self.cells.len()];
        for (x, cell) in stages.iter().zip(&layout.cells) {
            sums[cell.offset()] += x;
        }
        sums == self.cells
    }
}

/// Flattened `(route, stage)` ordering: route 1 stages 1..N_1, then route 2...
#[derive(Clone, Debug, PartialEq)]
pub struct StageLayout {
    pub offsets: Vec<usize>,
    pub cells: Vec<CellId>,
}

impl StageLayout {
    pub fn new(spec: &NetworkSpec) -> Self {
        let mut offsets = Vec::with_capacity(spec.routes.len());
        let mut cells = Vec::new();
        for rs in &spec.routes {
            offsets.push(cells.len());
            cells.extend_from_slice(&rs.route.cells);
        }
        Self { offsets, cells }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn index(&self, route: usize, stage: usize) -> usize {
        self.offsets[route] + stage
    }
}

/// Draws the holding-time vector of one session.
pub fn sample_session<R: Rng + ?Sized>(law: &SessionLaw, rng: &mut R) -> Vec<f64> {
    match law {
        SessionLaw::Discrete(d) => sample_discrete(d, rng),
        SessionLaw::Generative(g) => g.sample_holding(rng),
    }
}

fn pick<R: Rng + ?Sized>(weights: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = i;
        }
        acc += w;
        if u < acc {
            return i;
        }
    }
    last
}

fn sample_discrete<R: Rng + ?Sized>(law: &DiscreteSessionLaw, rng: &mut R) -> Vec<f64> {
    let k = pick(law.stage_probs.iter().copied(), rng);
    let reals = &law.realizations[k];
    let i = pick(reals.iter().map(|r| r.weight), rng);
    reals[i].holding.clone()
}

#[derive(Clone, Copy, Debug)]
enum EventKind {
    Arrival,
    /// Leaves `stage` (0-based); enters `stage + 1` unless `last`.
    Leave { stage: u32, last: bool },
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    seq: u64,
    route: u32,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.seq.cmp(&other.seq))
    }
}

struct Queue {
    heap: BinaryHeap<Reverse<Event>>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, time: f64, route: u32, kind: EventKind) {
        self.heap.push(Reverse(Event { time, seq: self.seq, route, kind }));
        self.seq += 1;
    }
}

/// One simulated session, as recorded in an [`EventLog`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionLogRecord {
    pub session_id: u64,
    /// 1-based route index.
    pub route: usize,
    pub arrival: f64,
    pub holding: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub records: Vec<SessionLogRecord>,
}

impl EventLog {
    /// CSV rows `session_id,route,arrival_time,k,t_1,...,t_k` (ragged).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().flexible(true).from_writer(w);
        wtr.write_record(["session_id", "route", "arrival_time", "k", "holding"])?;
        for r in &self.records {
            let mut row = vec![r.session_id.to_string(), r.route.to_string(), r.arrival.to_string(), r.holding.len().to_string()];
            row.extend(r.holding.iter().map(|t| t.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let field = |i: usize| row.get(i).ok_or_else(|| Error::Format(format!("short event-log row {row:?}")));
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("{s:?}: {e}")));
            let k: usize = field(3)?.parse().map_err(|e| Error::Format(format!("k: {e}")))?;
            let holding = (0..k).map(|i| field(4 + i).and_then(num)).collect::<Result<Vec<_>>>()?;
            records.push(SessionLogRecord {
                session_id: field(0)?.parse().map_err(|e| Error::Format(format!("session_id: {e}")))?,
                route: field(1)?.parse().map_err(|e| Error::Format(format!("route: {e}")))?,
                arrival: num(field(2)?)?,
                holding,
            });
        }
        Ok(Self { records })
    }
}

struct Output {
    snapshots: Vec<OccupancySnapshot>,
    log: Option<EventLog>,
}

fn simulate(spec: &NetworkSpec, cfg: &SimConfig, stream: u64, keep_log: bool) -> Result<Output> {
    cfg.check()?;
    let violations = validate(spec);
    if !violations.is_empty() {
        return Err(Error::InvalidSpec(violations));
    }
    let mut rng: SimRng = rng::stream(cfg.seed, stream);
    let layout = StageLayout::new(spec);
    let c = spec.cells();
    let mut stage_counts = vec![0u32; layout.len()];
    let mut cell_counts = vec![0u32; c];
    let arrivals: Vec<Exp<f64>> = spec
        .routes
        .iter()
        .map(|rs| Exp::new(rs.arrival_rate).map_err(|e| Error::InvalidArgument(format!("arrival rate: {e}"))))
        .collect::<Result<_>>()?;

    let mut queue = Queue { heap: BinaryHeap::new(), seq: 0 };
    for (l, exp) in arrivals.iter().enumerate() {
        queue.push(exp.sample(&mut rng), l as u32, EventKind::Arrival);
    }

    let total = cfg.snapshot_count();
    let mut snapshots = Vec::with_capacity(total);
    let mut log = keep_log.then(EventLog::default);
    let snap_time = |i: usize| cfg.warmup + i as f64 * cfg.snapshot_interval;
    let mut processed: u64 = 0;

    let record = |snapshots: &mut Vec<OccupancySnapshot>, cell_counts: &[u32], stage_counts: &[u32]| {
        let i = snapshots.len();
        snapshots.push(OccupancySnapshot {
            time: snap_time(i),
            cells: cell_counts.to_vec(),
            stages: cfg.track_stages.then(|| stage_counts.to_vec()),
        });
    };

    while let Some(Reverse(ev)) = queue.heap.peek().copied() {
        if ev.time > cfg.horizon {
            break;
        }
        while snapshots.len() < total && snap_time(snapshots.len()) < ev.time {
            record(&mut snapshots, &cell_counts, &stage_counts);
        }
        queue.heap.pop();
        processed += 1;
        if processed > cfg.max_events {
            return Err(Error::EventCapExceeded { cap: cfg.max_events });
        }
        let l = ev.route as usize;
        match ev.kind {
            EventKind::Arrival => {
                let rs = &spec.routes[l];
                let holding = sample_session(&rs.law, &mut rng);
                stage_counts[layout.index(l, 0)] += 1;
                cell_counts[rs.route.cells[0].offset()] += 1;
                let mut t = ev.time;
                let k = holding.len();
                for (j, h) in holding.iter().enumerate() {
                    t += h;
                    queue.push(t, ev.route, EventKind::Leave { stage: j as u32, last: j + 1 == k });
                }
                if let Some(log) = log.as_mut() {
                    let session_id = log.records.len() as u64 + 1;
                    log.records.push(SessionLogRecord { session_id, route: l + 1, arrival: ev.time, holding });
                }
                queue.push(ev.time + arrivals[l].sample(&mut rng), ev.route, EventKind::Arrival);
            }
            EventKind::Leave { stage, last } => {
                let cells = &spec.routes[l].route.cells;
                let j = stage as usize;
                stage_counts[layout.index(l, j)] -= 1;
                cell_counts[cells[j].offset()] -= 1;
                if !last {
                    stage_counts[layout.index(l, j + 1)] += 1;
                    cell_counts[cells[j + 1].offset()] += 1;
                }
            }
        }
    }
    while snapshots.len() < total {
        record(&mut snapshots, &cell_counts, &stage_counts);
    }
    Ok(Output { snapshots, log })
}

/// One replication on stream 0.
pub fn run(spec: &NetworkSpec, cfg: &SimConfig) -> Result<Vec<OccupancySnapshot>> {
    run_stream(spec, cfg, 0)
}

/// One replication on an explicit stream.
pub fn run_stream(spec: &NetworkSpec, cfg: &SimConfig, stream: u64) -> Result<Vec<OccupancySnapshot>> {
    Ok(simulate(spec, cfg, stream, false)?.snapshots)
}

/// Every session that arrives in `[0, horizon]`, on stream 0.
pub fn emit_event_log(spec: &NetworkSpec, cfg: &SimConfig) -> Result<EventLog> {
    emit_event_log_stream(spec, cfg, 0)
}

pub fn emit_event_log_stream(spec: &NetworkSpec, cfg: &SimConfig, stream: u64) -> Result<EventLog> {
    Ok(simulate(spec, cfg, stream, true)?.log.unwrap_or_default())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub replication: usize,
    pub stream: u64,
    pub snapshots: usize,
    pub cell_means: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Replications {
    /// Snapshots of replication 0, then 1, and so on.
    pub pooled: Vec<OccupancySnapshot>,
    pub per_replication: Vec<Vec<OccupancySnapshot>>,
    pub summaries: Vec<ReplicationSummary>,
}

/// Runs `cfg.replications` replications in parallel; replication `r` uses
/// stream `r` under `cfg.seed`.
pub fn run_replications(spec: &NetworkSpec, cfg: &SimConfig) -> Result<Replications> {
    cfg.check()?;
    let runs: Vec<Vec<OccupancySnapshot>> =
        (0..cfg.replications).into_par_iter().map(|r| run_stream(spec, cfg, r as u64)).collect::<Result<_>>()?;
    let summaries = runs
        .iter()
        .enumerate()
        .map(|(r, snaps)| ReplicationSummary {
            replication: r,
            stream: r as u64,
            snapshots: snaps.len(),
            cell_means: cell_sample_means(snaps, spec.cells()),
        })
        .collect();
    let pooled = runs.iter().flatten().cloned().collect();
    Ok(Replications { pooled, per_replication: runs, summaries })
}

pub fn cell_sample_means(snapshots: &[OccupancySnapshot], cells: usize) -> Vec<f64> {
    let mut sums = vec![0.0; cells];
    for s in snapshots {
        for (acc, &y) in sums.iter_mut().zip(&s.cells) {
            *acc += f64::from(y);
        }
    }
    let n = snapshots.len().max(1) as f64;
    sums.into_iter().map(|s| s / n).collect()
}

/// `time,y_1,...,y_C`.
pub fn write_snapshots_csv<W: Write>(w: W, snapshots: &[OccupancySnapshot], cells: usize) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["time".to_string()];
    header.extend((1..=cells).map(|n| format!("y_{n}")));
    wtr.write_record(&header)?;
    for s in snapshots {
        let mut row = vec![s.time.to_string()];
        row.extend(s.cells.iter().map(u32::to_string));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_snapshots_csv<R: Read>(r: R) -> Result<Vec<OccupancySnapshot>> {
    let mut rdr = csv::Reader::from_reader(r);
    let width = rdr.headers()?.len();
    if width < 2 {
        return Err(Error::Format("snapshot CSV needs a time column and at least one cell".into()));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |what: &str| Error::Format(format!("snapshot row {}: bad {what}", i + 2));
        let time: f64 = row[0].parse().map_err(|_| bad("time"))?;
        let cells = row.iter().skip(1).map(|v| v.parse::<u32>().map_err(|_| bad("count"))).collect::<Result<Vec<_>>>()?;
        out.push(OccupancySnapshot { time, cells, stages: None });
    }
    Ok(out)
}

const BINARY_MAGIC: &[u8; 8] = b"CNSNAP\0\0";
pub const BINARY_VERSION: u32 = 1;

/// Binary snapshot file, little endian:
///
/// ```text
/// magic   8 bytes  "CNSNAP\0\0"
/// version u32      1
/// cells   u32      C
/// count   u64      number of records
/// record  f64 time, then C x u32 cell counts
/// ```
pub fn write_snapshots_binary<W: Write>(mut w: W, snapshots: &[OccupancySnapshot], cells: usize) -> Result<()> {
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&BINARY_VERSION.to_le_bytes())?;
    w.write_all(&(cells as u32).to_le_bytes())?;
    w.write_all(&(snapshots.len() as u64).to_le_bytes())?;
    for s in snapshots {
        if s.cells.len() != cells {
            return Err(Error::DimensionMismatch { expected: cells, got: s.cells.len() });
        }
        w.write_all(&s.time.to_le_bytes())?;
        for y in &s.cells {
            w.write_all(&y.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshots_binary<R: Read>(mut r: R) -> Result<Vec<OccupancySnapshot>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::Format("not a snapshot file (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != BINARY_VERSION {
        return Err(Error::Format(format!("unsupported snapshot file version {version}")));
    }
    r.read_exact(&mut b4)?;
    let cells = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        r.read_exact(&mut b8)?;
        let time = f64::from_le_bytes(b8);
        let mut ys = Vec::with_capacity(cells);
        for _ in 0..cells {
            r.read_exact(&mut b4)?;
            ys.push(u32::from_le_bytes(b4));
        }
        out.push(OccupancySnapshot { time, cells: ys, stages: None });
    }
    Ok(out)
}
