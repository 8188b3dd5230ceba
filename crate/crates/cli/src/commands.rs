use std::io::Write;
use std::path::{Path, PathBuf};

use cellnet_core::analytic::{self, ProductForm};
use cellnet_core::model::{CellId, NetworkSpec, SessionLaw};
use cellnet_core::sim::{self, OccupancySnapshot};
use cellnet_core::stats::{self, EmpiricalDistribution, StudyOptions, StudySource, StudySummary};
use cellnet_core::trace::{self, fixture, reference, PollFormat, PreprocessConfig, TraceAnalysis};
use serde::Serialize;
use serde_json::json;

use crate::config::{CompareSection, Loaded};
use crate::manifest::{OutputIndex, RunDir};
use crate::{
    AnalyzeArgs, CliError, Command, CommonArgs, CompareArgs, FixtureArgs, SimFlags, SimulateArgs, StudyFlags,
    TestFlags, TraceArgs,
};

type Result<T> = std::result::Result<T, CliError>;

fn rt(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(rt)
}

pub fn dispatch(cmd: Command) -> Result<OutputIndex> {
    match cmd {
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Trace(a) => cmd_trace(&a),
        Command::Fixture(a) => cmd_fixture(&a),
    }
}

fn load(common: &CommonArgs) -> Result<Loaded> {
    let mut cfg = Loaded::read(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.raw.seed = Some(s);
    }
    Ok(cfg)
}

fn apply_sim(cfg: &mut Loaded, f: &SimFlags) {
    let s = &mut cfg.raw.sim;
    s.replications = f.replications.unwrap_or(s.replications);
    s.horizon = f.horizon.or(s.horizon);
    s.warmup = f.warmup.or(s.warmup);
    s.interval = f.interval.or(s.interval);
}

fn apply_study(cfg: &mut Loaded, f: &StudyFlags) {
    let c = &mut cfg.raw.compare;
    if !f.subset_size.is_empty() {
        c.subset_sizes = f.subset_size.clone();
    }
    c.repeats = f.repeats.unwrap_or(c.repeats);
    c.distance_max = f.distance_max.or(c.distance_max);
}

fn apply_tests(cfg: &mut Loaded, f: &TestFlags) {
    let t = &mut cfg.raw.preprocess;
    if let Some(m) = f.exclude_mode {
        t.insert("exclude_mode".into(), toml::Value::Integer(i64::from(m)));
    }
    if f.exclude_one_stage {
        t.insert("exclude_one_stage".into(), toml::Value::Boolean(true));
    }
    if let Some(v) = f.threshold_eta {
        t.insert("threshold_eta".into(), toml::Value::Float(v));
    }
    if let Some(v) = f.threshold_theta {
        t.insert("threshold_theta".into(), toml::Value::Float(v));
    }
}

fn cell_labels(spec: &NetworkSpec) -> Vec<String> {
    (1..=spec.cell_count).map(|n| spec.cell_label(CellId(n))).collect()
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::Writer::from_writer(w)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Cell means and stage tables for `spec`, writing `stage_means.csv`,
/// `cell_means.csv` and `poisson_pmf.csv`.
fn write_analytic(run: &mut RunDir, spec: &NetworkSpec, cfg: &Loaded, seed: u64) -> Result<(analytic::CellMeans, serde_json::Value)> {
    let moments = analytic::network_moments_or_estimate(spec, cfg.raw.sim.moment_samples, seed);
    let labels = cell_labels(spec);
    let mut identity_error: f64 = 0.0;
    let mut routes = Vec::new();
    run.write("stage_means.csv", |w| {
        let mut wtr = csv_writer(w);
        wtr.write_record(["route", "stage", "cell", "label", "invariant_measure", "service_rate", "mean_holding", "occupancy"])
            .map_err(rt)?;
        for (l, (rs, m)) in spec.routes.iter().zip(&moments).enumerate() {
            let means = analytic::stage_means_from_moments(&rs.route, rs.arrival_rate, m);
            let exact = match &rs.law {
                SessionLaw::Discrete(_) => true,
                SessionLaw::Generative(g) => g.memoryless_moments().is_some(),
            };
            if matches!(rs.law, SessionLaw::Discrete(_)) {
                let sums = analytic::decoupled_stage_sums(rs)?;
                for s in &means.stages {
                    identity_error = identity_error.max((sums[s.stage - 1] - s.occupancy).abs());
                }
            }
            routes.push(json!({ "route": l + 1, "exact_moments": exact, "stage_probs": m.stage_probs }));
            for s in &means.stages {
                wtr.write_record([
                    (l + 1).to_string(),
                    s.stage.to_string(),
                    s.cell.to_string(),
                    labels[s.cell.offset()].clone(),
                    s.invariant_measure.to_string(),
                    s.service_rate.to_string(),
                    s.mean_holding.to_string(),
                    s.occupancy.to_string(),
                ])
                .map_err(rt)?;
            }
        }
        wtr.flush().map_err(rt)
    })?;
    let cells = analytic::cell_means_from_moments(spec, &moments)?;
    run.write("cell_means.csv", |w| {
        let mut wtr = csv_writer(w);
        wtr.write_record(["cell", "label", "arrival_rate", "mean_holding", "poisson_mean"]).map_err(rt)?;
        for c in &cells.cells {
            wtr.write_record([
                c.cell.to_string(),
                labels[c.cell.offset()].clone(),
                c.arrival_rate.to_string(),
                opt(c.mean_holding),
                c.poisson_mean.to_string(),
            ])
            .map_err(rt)?;
        }
        wtr.flush().map_err(rt)
    })?;
    run.write("poisson_pmf.csv", |w| {
        let mut wtr = csv_writer(w);
        wtr.write_record(["cell", "y", "pmf", "cdf"]).map_err(rt)?;
        for c in &cells.cells {
            let top = analytic::poisson_truncation(c.poisson_mean, analytic::TRUNCATION_MASS);
            let mut cdf = 0.0;
            for y in 0..=top {
                let p = analytic::poisson_ln_pmf(c.poisson_mean, y).exp();
                cdf += p;
                wtr.write_record([c.cell.to_string(), y.to_string(), p.to_string(), cdf.to_string()]).map_err(rt)?;
            }
        }
        wtr.flush().map_err(rt)
    })?;
    let unreachable = analytic::unreachable_from_moments(&moments);
    let warnings: Vec<String> =
        unreachable.iter().map(|(l, j)| format!("route {l} stage {j} is unreachable (zero survival)")).collect();
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let summary = json!({
        "cells": spec.cells(),
        "routes": routes,
        "poisson_means": cells.poisson_means(),
        "decoupled_identity_max_error": identity_error,
        "unreachable_stages": unreachable,
        "warnings": warnings,
    });
    Ok((cells, summary))
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<OutputIndex> {
    let cfg = load(&a.common)?;
    let spec = cfg.network()?;
    let seed = cfg.seed();
    let effective = json!({ "seed": seed, "network": to_json(&spec)?, "moment_samples": cfg.raw.sim.moment_samples });
    let mut run = RunDir::create(&a.common.out, "analyze", cfg.path.as_deref(), seed, &config_inputs(&cfg), effective)?;
    let (_, summary) = write_analytic(&mut run, &spec, &cfg, seed)?;
    run.json("summary.json", &summary)?;
    run.finish()
}

fn config_inputs(cfg: &Loaded) -> Vec<PathBuf> {
    cfg.path.iter().chain(cfg.raw.network_file.iter()).cloned().collect()
}

fn write_snapshots(run: &mut RunDir, name: &str, snaps: &[OccupancySnapshot], cells: usize) -> Result<()> {
    run.write(name, |w| sim::write_snapshots_csv(w, snaps, cells).map_err(CliError::from))
}

/// Mean and batch-means standard error of column `n`.
fn mean_se(snaps: &[OccupancySnapshot], n: usize) -> (f64, f64) {
    let series: Vec<f64> = snaps.iter().map(|s| f64::from(s.cells[n])).collect();
    let len = series.len();
    if len < 2 {
        return (series.first().copied().unwrap_or(f64::NAN), f64::NAN);
    }
    let mean = series.iter().sum::<f64>() / len as f64;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (len - 1) as f64;
    let ess = stats::effective_sample_size(&series, (len / 30).max(1));
    (mean, (var / ess).sqrt())
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<OutputIndex> {
    let mut cfg = load(&a.common)?;
    apply_sim(&mut cfg, &a.sim);
    let spec = cfg.network()?;
    let seed = cfg.seed();
    let sc = cfg.sim(&spec, seed)?;
    let effective = json!({ "seed": seed, "network": to_json(&spec)?, "sim": to_json(&sc)?, "sim_section": to_json(&cfg.raw.sim)? });
    let mut run = RunDir::create(&a.common.out, "simulate", cfg.path.as_deref(), seed, &config_inputs(&cfg), effective)?;
    let cells = spec.cells();
    let reps = sim::run_replications(&spec, &sc)?;
    for (r, snaps) in reps.per_replication.iter().enumerate() {
        write_snapshots(&mut run, &format!("snapshots_r{r}.csv"), snaps, cells)?;
    }
    write_snapshots(&mut run, "snapshots_pooled.csv", &reps.pooled, cells)?;
    if cfg.raw.sim.binary {
        run.write("snapshots_pooled.bin", |w| sim::write_snapshots_binary(w, &reps.pooled, cells).map_err(CliError::from))?;
    }
    let analytic = analytic::cell_means_from_moments(
        &spec,
        &analytic::network_moments_or_estimate(&spec, cfg.raw.sim.moment_samples, seed),
    )?
    .poisson_means();
    let labels = cell_labels(&spec);
    let mut max_rel: f64 = 0.0;
    let mut rows = Vec::new();
    for (n, &a) in analytic.iter().enumerate().take(cells) {
        let (mean, se) = mean_se(&reps.pooled, n);
        let rel = (a > 0.0).then(|| (mean - a).abs() / a);
        if let Some(r) = rel {
            max_rel = max_rel.max(r);
        }
        rows.push((n, mean, se, rel));
    }
    run.write("summary.csv", |w| {
        let mut wtr = csv_writer(w);
        wtr.write_record(["cell", "label", "analytic_mean", "empirical_mean", "std_error", "relative_error"]).map_err(rt)?;
        for &(n, mean, se, rel) in &rows {
            wtr.write_record([
                (n + 1).to_string(),
                labels[n].clone(),
                analytic[n].to_string(),
                mean.to_string(),
                se.to_string(),
                opt(rel),
            ])
            .map_err(rt)?;
        }
        wtr.flush().map_err(rt)
    })?;
    run.write("replications.csv", |w| {
        let mut wtr = csv_writer(w);
        wtr.write_record(["replication", "stream", "snapshots", "cell", "mean"]).map_err(rt)?;
        for s in &reps.summaries {
            for (n, m) in s.cell_means.iter().enumerate() {
                wtr.write_record([
                    s.replication.to_string(),
                    s.stream.to_string(),
                    s.snapshots.to_string(),
                    (n + 1).to_string(),
                    m.to_string(),
                ])
                .map_err(rt)?;
            }
        }
        wtr.flush().map_err(rt)
    })?;
    let summary = json!({
        "replications": sc.replications,
        "snapshots_per_replication": sc.snapshot_count(),
        "snapshots_pooled": reps.pooled.len(),
        "max_relative_error": max_rel,
    });
    run.json("summary.json", &summary)?;
    run.finish()
}

/// Full-joint comparison plus the per-`n` random subset study.
fn write_comparison<R: AsRef<[u32]> + Sync>(
    run: &mut RunDir,
    rows: &[R],
    means: &[f64],
    labels: &[String],
    coordinates: Option<&[(f64, f64)]>,
    study: &CompareSection,
    seed: u64,
) -> Result<serde_json::Value> {
    if rows.is_empty() {
        return Err(CliError::Runtime("no occupancy observations to compare".into()));
    }
    let dims = means.len();
    if let Some(r) = rows.iter().find(|r| r.as_ref().len() != dims) {
        return Err(CliError::Validation(format!(
            "observations have {} columns but the model has {dims} cells",
            r.as_ref().len()
        )));
    }
    if study.distance_max.is_some() && coordinates.is_none() {
        return Err(CliError::Validation("distance_max needs cell coordinates (x, y in cell_meta)".into()));
    }
    if study.subset_sizes.contains(&0) || study.repeats == 0 {
        return Err(CliError::Validation("subset sizes and repeats must be positive".into()));
    }
    let all: Vec<usize> = (0..dims).collect();
    let joint = stats::compare_joint(
        &EmpiricalDistribution::from_rows(rows, &all)?,
        &ProductForm::new(means.to_vec())?,
        labels.to_vec(),
    )?;
    run.json("joint.json", &joint)?;
    let source = StudySource { rows, means, candidates: None, coordinates, labels: Some(labels) };
    let mut summaries: Vec<StudySummary> = Vec::new();
    for &n in &study.subset_sizes {
        if n > dims {
            eprintln!("warning: subset size {n} exceeds the {dims} available cells; skipped");
            continue;
        }
        let opts = StudyOptions { subset_size: n, repeats: study.repeats, max_distance: study.distance_max, seed };
        summaries.push(stats::random_subset_study(&source, &opts)?);
    }
    run.write("study.csv", |w| {
        let mut wtr = csv_writer(w);
        wtr.write_record(["n", "metric", "mean", "stddev"]).map_err(rt)?;
        for s in &summaries {
            let n = s.subset_size.to_string();
            wtr.write_record([&n, "h_kl", &s.h_kl.mean.to_string(), &s.h_kl.stddev.to_string()]).map_err(rt)?;
            match &s.h_gap {
                Some(g) => wtr.write_record([&n, "h_gap", &g.mean.to_string(), &g.stddev.to_string()]),
                None => wtr.write_record([n.as_str(), "h_gap", "NA", "NA"]),
            }
            .map_err(rt)?;
            wtr.write_record([&n, "h_real", &s.h_real.mean.to_string(), &s.h_real.stddev.to_string()]).map_err(rt)?;
        }
        wtr.flush().map_err(rt)
    })?;
    run.write("subsets.csv", |w| {
        let mut wtr = csv_writer(w);
        wtr.write_record(["n", "repeat", "cells", "h_kl", "h_gap", "h_real"]).map_err(rt)?;
        for s in &summaries {
            for r in &s.subsets {
                wtr.write_record([
                    s.subset_size.to_string(),
                    r.repeat.to_string(),
                    r.report.labels.join(";"),
                    r.report.h_kl.to_string(),
                    r.report.h_gap.map(|g| g.to_string()).unwrap_or_else(|| "NA".into()),
                    r.report.h_real.to_string(),
                ])
                .map_err(rt)?;
            }
        }
        wtr.flush().map_err(rt)
    })?;
    let study_json: Vec<_> = summaries
        .iter()
        .map(|s| json!({ "n": s.subset_size, "repeats": s.repeats, "h_kl": s.h_kl, "h_gap": s.h_gap, "h_real": s.h_real }))
        .collect();
    Ok(json!({ "samples": rows.len(), "dimensions": dims, "joint": joint, "study": study_json }))
}

fn read_trace(path: &Path) -> Result<trace::ParsedPolls> {
    let parsed = trace::read_polls(path).map_err(|e| CliError::from(e).context(path))?;
    if parsed.records.is_empty() {
        return Err(CliError::Runtime(format!("{}: no valid poll records", path.display())));
    }
    Ok(parsed)
}

impl CliError {
    fn context(self, path: &Path) -> Self {
        match self {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            CliError::Runtime(m) => CliError::Runtime(format!("{}: {m}", path.display())),
        }
    }
}

fn stage_err(stage: &str) -> impl Fn(cellnet_core::Error) -> CliError + '_ {
    move |e| match CliError::from(e) {
        CliError::Validation(m) => CliError::Validation(format!("{stage}: {m}")),
        CliError::Runtime(m) => CliError::Runtime(format!("{stage}: {m}")),
    }
}

pub fn cmd_compare(a: &CompareArgs) -> Result<OutputIndex> {
    let mut cfg = load(&a.common)?;
    apply_sim(&mut cfg, &a.sim);
    apply_study(&mut cfg, &a.study);
    apply_tests(&mut cfg, &a.tests);
    if let Some(p) = &a.snapshots {
        cfg.raw.compare.snapshots = Some(p.clone());
        cfg.raw.compare.polls = None;
    }
    if let Some(p) = &a.polls {
        cfg.raw.compare.polls = Some(p.clone());
        cfg.raw.compare.snapshots = None;
    }
    let seed = cfg.seed();
    let study = cfg.raw.compare.clone();
    let mut inputs = config_inputs(&cfg);
    if let Some(polls) = &study.polls {
        let pre = cfg.preprocess()?;
        inputs.push(polls.clone());
        let effective = json!({ "seed": seed, "compare": to_json(&study)?, "preprocess": to_json(&pre)? });
        let mut run = RunDir::create(&a.common.out, "compare", cfg.path.as_deref(), seed, &inputs, effective)?;
        let parsed = read_trace(polls)?;
        let an = trace::analyze(&parsed.records, &pre).map_err(stage_err("trace analysis"))?;
        let summary = write_comparison(&mut run, &an.occupancy, &an.model_means(), &an.excluded.dims, None, &study, seed)?;
        run.json("summary.json", &json!({ "source": "polls", "exclude_mode": pre.exclude_mode, "comparison": summary }))?;
        return run.finish();
    }
    let spec = cfg.network()?;
    let coords = spec.coordinates();
    let means = analytic::cell_means_from_moments(
        &spec,
        &analytic::network_moments_or_estimate(&spec, cfg.raw.sim.moment_samples, seed),
    )?
    .poisson_means();
    let labels = cell_labels(&spec);
    if let Some(path) = &study.snapshots {
        inputs.push(path.clone());
        let effective = json!({ "seed": seed, "network": to_json(&spec)?, "compare": to_json(&study)? });
        let mut run = RunDir::create(&a.common.out, "compare", cfg.path.as_deref(), seed, &inputs, effective)?;
        let file = std::fs::File::open(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let snaps = sim::read_snapshots_csv(std::io::BufReader::new(file)).map_err(|e| CliError::from(e).context(path))?;
        let rows: Vec<&[u32]> = snaps.iter().map(|s| s.cells.as_slice()).collect();
        let summary = write_comparison(&mut run, &rows, &means, &labels, coords.as_deref(), &study, seed)?;
        run.json("summary.json", &json!({ "source": "snapshots", "comparison": summary }))?;
        return run.finish();
    }
    let sc = cfg.sim(&spec, seed)?;
    let effective = json!({ "seed": seed, "network": to_json(&spec)?, "sim": to_json(&sc)?, "compare": to_json(&study)? });
    let mut run = RunDir::create(&a.common.out, "compare", cfg.path.as_deref(), seed, &inputs, effective)?;
    let reps = sim::run_replications(&spec, &sc)?;
    let rows: Vec<&[u32]> = reps.pooled.iter().map(|s| s.cells.as_slice()).collect();
    let summary = write_comparison(&mut run, &rows, &means, &labels, coords.as_deref(), &study, seed)?;
    run.json("summary.json", &json!({ "source": "simulation", "comparison": summary }))?;
    run.finish()
}

fn trace_summary(parsed: &trace::ParsedPolls, an: &TraceAnalysis, pre: &PreprocessConfig) -> serde_json::Value {
    let p = &an.pre;
    json!({
        "polls": parsed.records.len(),
        "rejected_lines": parsed.rejects.len(),
        "window_polls": p.window_polls,
        "cadence": p.cadence,
        "days": p.day_filter.days.len(),
        "removed_ap_days": p.day_filter.removed_count(),
        "multi_association": p.resolve,
        "padding": p.padding,
        "users": p.classification.users(),
        "closed_users": p.classification.closed.len(),
        "closed_fraction": p.classification.closed_fraction(),
        "sessions": p.sessions.len(),
        "stage_buckets": trace::stage_count_buckets(&an.stage_counts),
        "validity": trace::validity_summary(&an.validity),
        "exclude_mode": pre.exclude_mode,
        "exclude_one_stage": pre.exclude_one_stage,
        "kept_sessions": an.excluded.sessions.len(),
        "removed_invalid_start": an.excluded.removed_invalid_start,
        "removed_one_stage": an.excluded.removed_one_stage,
        "dimensions": an.excluded.dims,
        "occupancy_days": an.occupancy_days.len(),
        "occupancy_samples": an.occupancy.len(),
    })
}

pub fn cmd_trace(a: &TraceArgs) -> Result<OutputIndex> {
    let mut cfg = load(&a.common)?;
    apply_study(&mut cfg, &a.study);
    apply_tests(&mut cfg, &a.tests);
    if let Some(v) = a.interval {
        cfg.raw.preprocess.insert("test_interval".into(), toml::Value::Float(v));
    }
    let polls = a
        .polls
        .clone()
        .or_else(|| cfg.raw.trace.polls.clone())
        .ok_or_else(|| CliError::Validation("no poll trace given (--polls or [trace] polls)".into()))?;
    let pre = cfg.preprocess()?;
    let seed = cfg.seed();
    let study = cfg.raw.compare.clone();
    let mut inputs = config_inputs(&cfg);
    inputs.push(polls.clone());
    let effective = json!({ "seed": seed, "preset": cfg.preset_name(), "preprocess": to_json(&pre)?, "compare": to_json(&study)? });
    let mut run = RunDir::create(&a.common.out, "trace", cfg.path.as_deref(), seed, &inputs, effective)?;
    let parsed = read_trace(&polls)?;
    run.write("rejects.csv", |w| trace::write_rejects(w, &parsed.rejects).map_err(CliError::from))?;
    let an = trace::analyze(&parsed.records, &pre).map_err(stage_err("trace analysis"))?;
    run.write("sessions.csv", |w| trace::write_sessions_csv(w, &an.pre.sessions).map_err(CliError::from))?;
    run.write("stage_counts.csv", |w| trace::write_stage_counts_csv(w, &an.stage_counts).map_err(CliError::from))?;
    run.write("params.csv", |w| trace::write_params_csv(w, &an.params).map_err(CliError::from))?;
    run.write("model_params.csv", |w| trace::write_params_csv(w, &an.model_params).map_err(CliError::from))?;
    run.write("validity.csv", |w| trace::write_validity_csv(w, &an.validity).map_err(CliError::from))?;
    run.write("removed_days.csv", |w| {
        let mut wtr = csv_writer(w);
        wtr.write_record(["ap", "day", "service", "average_service"]).map_err(rt)?;
        for (ap, r) in &an.pre.day_filter.per_ap {
            for (day, service) in &r.removed {
                wtr.write_record([ap.clone(), day.to_string(), service.to_string(), r.average_service.to_string()])
                    .map_err(rt)?;
            }
        }
        wtr.flush().map_err(rt)
    })?;
    run.json("dependence.json", &json!({ "dependence": an.dependence }))?;
    let mut summary = trace_summary(&parsed, &an, &pre);
    if !an.occupancy.is_empty() && !an.excluded.dims.is_empty() {
        let cmp = write_comparison(&mut run, &an.occupancy, &an.model_means(), &an.excluded.dims, None, &study, seed)?;
        summary["comparison"] = cmp;
    } else {
        eprintln!("warning: no occupancy samples on days common to all kept APs; comparison skipped");
    }
    if cfg.preset_name() == "dartmouth" {
        let rep = reference::compare(&an);
        for c in &rep.checks {
            let status = if c.matches { "match" } else { "MISMATCH" };
            eprintln!("reference: {}: expected {} observed {} [{status}]", c.item, c.expected, opt(c.observed));
        }
        if !rep.all_match {
            eprintln!("reference: deviations may stem from these preprocessing choices:");
            for a in &rep.ambiguities {
                eprintln!("  - {a}");
            }
        }
        summary["reference_all_match"] = rep.all_match.into();
        run.json("reference.json", &rep)?;
    }
    run.json("summary.json", &summary)?;
    run.finish()
}

pub fn cmd_fixture(a: &FixtureArgs) -> Result<OutputIndex> {
    let cfg = load(&a.common)?;
    let format = PollFormat::from_descriptor(&a.format)?;
    let spec = cfg.network()?;
    let pre = cfg.preprocess()?;
    let mut fx = cfg.fixture();
    if let Some(s) = cfg.raw.seed {
        fx.seed = s;
    }
    let seed = fx.seed;
    let effective = json!({ "seed": seed, "network": to_json(&spec)?, "fixture": to_json(&fx)?, "preprocess": to_json(&pre)?, "format": a.format });
    let mut run = RunDir::create(&a.common.out, "fixture", cfg.path.as_deref(), seed, &config_inputs(&cfg), effective)?;
    let f = fixture::generate(&spec, &fx, &pre)?;
    let name = match format {
        PollFormat::Csv => "polls.csv",
        PollFormat::CsvGz => "polls.csv.gz",
    };
    trace::save_polls(&run.path(name), &f.polls)?;
    run.record(name);
    run.write("sessions_truth.csv", |w| trace::write_sessions_csv(w, &f.sessions).map_err(CliError::from))?;
    run.json("truth.json", &f.truth)?;
    run.finish()
}
