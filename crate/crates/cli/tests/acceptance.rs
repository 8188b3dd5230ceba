//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion; exits nonzero if any fails.
//!
//! Set `CELLNET_DARTMOUTH_POLLS` to a converted Dartmouth poll file to run
//! criterion 7 against the published figures. Without it criterion 7 is
//! reported as FAIL (not reproduced) but does not set the exit code; its
//! pipeline checks on a synthetic trace still do.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use cellnet_core::analytic::{self, ProductForm};
use cellnet_core::model::{
    CellMeta, Coupling, DiscreteSessionLaw, Family, GenerativeSessionLaw, NetworkSpec, Realization, Route, RouteSpec,
    SessionLaw,
};
use cellnet_core::rng;
use cellnet_core::sim::{self, OccupancySnapshot, SimConfig};
use cellnet_core::stats::{self, EmpiricalDistribution, StudyOptions, StudySource};
use rand::Rng;
use serde_json::Value;

type Outcome = Result<(bool, String), String>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    /// Environment variable naming an external dataset the criterion needs.
    data: Option<&'static str>,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "M/G/inf marginal matches Poisson(6)", limit: Duration::from_secs(30), data: None, run: mg_infinity },
        Criterion { id: 2, name: "insensitivity A/B on 4 cells, 3 routes", limit: Duration::from_secs(300), data: None, run: insensitivity },
        Criterion { id: 3, name: "decoupled-network identity, 1000 laws", limit: Duration::from_secs(5), data: None, run: decoupled_identity },
        Criterion { id: 4, name: "Poisson composition over a partition", limit: Duration::from_secs(1), data: None, run: composition },
        Criterion { id: 5, name: "arrival-test discrimination", limit: Duration::from_secs(30), data: None, run: arrival_tests },
        Criterion { id: 6, name: "fixture -> trace round trip", limit: Duration::from_secs(60), data: None, run: trace_round_trip },
        Criterion { id: 7, name: "Dartmouth reference figures", limit: Duration::from_secs(600), data: Some(DARTMOUTH_ENV), run: dartmouth },
        Criterion { id: 8, name: "distance-constraint neutrality, 12 cells", limit: Duration::from_secs(120), data: None, run: distance_neutrality },
    ];
    let (mut failed, mut unavailable) = (0, 0);
    for c in &criteria {
        let t = Instant::now();
        let result = (c.run)();
        let elapsed = t.elapsed();
        let missing = c.data.is_some_and(|v| std::env::var_os(v).is_none());
        let (ok, detail, excused) = match result {
            Ok((ok, d)) => (ok, d, missing),
            Err(e) => (false, format!("error: {e}"), false),
        };
        let in_time = elapsed <= c.limit;
        let pass = ok && in_time;
        if !pass {
            failed += 1;
            if excused && in_time {
                unavailable += 1;
            }
        }
        let timing = format!("{:.2}s of {}s", elapsed.as_secs_f64(), c.limit.as_secs());
        let timing = if in_time { timing } else { format!("{timing}, over the limit") };
        println!("{} [{}] {}: {} ({timing})", if pass { "PASS" } else { "FAIL" }, c.id, c.name, detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if unavailable > 0 {
        println!("acceptance: {unavailable} failed only because its dataset is not available");
    }
    if failed > unavailable {
        std::process::exit(1);
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn column(snaps: &[OccupancySnapshot], n: usize) -> Vec<f64> {
    snaps.iter().map(|s| f64::from(s.cells[n])).collect()
}

fn exp(mean: f64) -> Family {
    Family::Exponential { mean }
}

// 1 -------------------------------------------------------------------------

fn mg_infinity() -> Outcome {
    // Lognormal session length with mean 180 s, arrivals 2 per minute.
    let (sigma, mean_t) = (1.0f64, 180.0f64);
    let mu = mean_t.ln() - 0.5 * sigma * sigma;
    let rate = 2.0 / 60.0;
    let spec = NetworkSpec {
        cell_count: 1,
        routes: vec![RouteSpec {
            route: Route::new([1]),
            arrival_rate: rate,
            law: SessionLaw::Generative(GenerativeSessionLaw {
                duration: Family::Lognormal { mu, sigma },
                dwell: vec![Family::Deterministic { value: 1e15 }],
                coupling: Coupling::Independent,
            }),
        }],
        cell_meta: vec![],
    };
    let m = rate * (mu + 0.5 * sigma * sigma).exp();
    let cfg = SimConfig::for_spec(&spec, 80_000, 101).map_err(err)?;
    let snaps = sim::run(&spec, &cfg).map_err(err)?;
    let series = column(&snaps, 0);
    let ess = stats::effective_sample_size(&series, 100);
    let emp = EmpiricalDistribution::from_full_rows(&snaps).map_err(err)?;
    let kl = stats::kl_divergence(&emp, &ProductForm::new(vec![m]).map_err(err)?).map_err(err)?;
    let ok = (m - 6.0).abs() < 1e-9 && ess >= 5e4 && kl < 0.01;
    Ok((ok, format!("m = {m:.6}, effective snapshots = {ess:.0} (need >= 50000), KL = {kl:.5} bits (need < 0.01)")))
}

// 2 -------------------------------------------------------------------------

/// Four cells, three routes; every law independent exponential.
fn law_a_network() -> NetworkSpec {
    let route = |cells: Vec<u32>, rate: f64, duration: f64, dwell: Vec<f64>| RouteSpec {
        route: Route::new(cells),
        arrival_rate: rate,
        law: SessionLaw::Generative(GenerativeSessionLaw {
            duration: exp(duration),
            dwell: dwell.into_iter().map(exp).collect(),
            coupling: Coupling::Independent,
        }),
    };
    NetworkSpec {
        cell_count: 4,
        routes: vec![
            route(vec![1, 2, 3], 0.010, 300.0, vec![80.0, 120.0, 100.0]),
            route(vec![4, 2], 0.008, 250.0, vec![150.0, 90.0]),
            route(vec![3, 4, 1, 2], 0.006, 400.0, vec![100.0, 60.0, 120.0, 80.0]),
        ],
        cell_meta: vec![],
    }
}

/// Same routes, stage-count distributions and stage means, but every
/// session's holding times are deterministic up to one shared speed factor.
fn law_b_network(a: &NetworkSpec) -> Result<NetworkSpec, String> {
    let routes = a
        .routes
        .iter()
        .map(|rs| {
            let SessionLaw::Generative(g) = &rs.law else { return Err("law A must be generative".to_string()) };
            let m = g.memoryless_moments().ok_or("law A must be memoryless")?;
            let base: Vec<f64> = m.mean_holding.iter().map(|h| h.unwrap_or(1.0)).collect();
            let law = DiscreteSessionLaw::shared_speed(m.stage_probs.clone(), &base, &[(0.5, 0.4), (0.5, 1.6)]);
            Ok(RouteSpec { route: rs.route.clone(), arrival_rate: rs.arrival_rate, law: SessionLaw::Discrete(law) })
        })
        .collect::<Result<_, String>>()?;
    Ok(NetworkSpec { cell_count: a.cell_count, routes, cell_meta: vec![] })
}

fn insensitivity() -> Outcome {
    let a = law_a_network();
    let b = law_b_network(&a)?;
    let ma = analytic::cell_means(&a).map_err(err)?.poisson_means();
    let mb = analytic::cell_means(&b).map_err(err)?.poisson_means();
    if ma.iter().zip(&mb).any(|(x, y)| (x - y).abs() > 1e-9 * x.max(1.0)) {
        return Ok((false, format!("analytic means differ: {ma:?} vs {mb:?}")));
    }
    let model = ProductForm::new(ma.clone()).map_err(err)?;
    // Shared timing so both runs sample on the same grid.
    let cfg = SimConfig::for_spec(&a, 200_000, 202).map_err(err)?;
    let mut empiricals = Vec::new();
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, spec) in [("A", &a), ("B", &b)] {
        let snaps = sim::run(spec, &cfg).map_err(err)?;
        let emp = EmpiricalDistribution::from_full_rows(&snaps).map_err(err)?;
        let r = stats::compare_joint(&emp, &model, vec![]).map_err(err)?;
        ok &= snaps.len() >= 200_000 && r.h_kl < 0.05 && r.kl_ratio < 0.05;
        parts.push(format!("{name}: H_kl = {:.6}, H_kl/H_real = {:.6}", r.h_kl, r.kl_ratio));
        empiricals.push(emp);
    }
    let sym = stats::symmetric_kl(&empiricals[0], &empiricals[1]).map_err(err)?;
    ok &= sym.divergence < 0.05;
    parts.push(format!(
        "symmetric KL(A, B) = {:.4} (uncovered mass {:.1e}/{:.1e})",
        sym.divergence, sym.uncovered_p, sym.uncovered_q
    ));
    Ok((ok, format!("{} snapshots each; {}; all need < 0.05", cfg.snapshot_count(), parts.join("; "))))
}

// 3 -------------------------------------------------------------------------

fn random_law<R: Rng>(r: &mut R, n: usize, m: usize) -> DiscreteSessionLaw {
    let raw: Vec<f64> = (0..n).map(|_| r.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let realizations = (1..=n)
        .map(|k| {
            let w: Vec<f64> = (0..r.random_range(1..=m)).map(|_| r.random_range(0.01..1.0)).collect();
            let wt: f64 = w.iter().sum();
            w.iter()
                .map(|x| Realization { weight: x / wt, holding: (0..k).map(|_| r.random_range(0.1..100.0)).collect() })
                .collect()
        })
        .collect();
    DiscreteSessionLaw { stage_probs: raw.iter().map(|p| p / total).collect(), realizations }
}

fn decoupled_identity() -> Outcome {
    let mut r = rng::stream(303, 0);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for _ in 0..1000 {
        let n = r.random_range(1..=6);
        let law = random_law(&mut r, n, 8);
        let rate = r.random_range(0.01..5.0);
        let rs = RouteSpec { route: Route::new(1..=n as u32), arrival_rate: rate, law: SessionLaw::Discrete(law.clone()) };
        let sums = analytic::decoupled_stage_sums(&rs).map_err(err)?;
        let means = analytic::stage_means(&rs).map_err(err)?;
        for s in &means.stages {
            // w_j straight from the definitions: lambda_0 * sum_{k >= j, i} P_ki t_kij.
            let direct: f64 = (s.stage..=n)
                .flat_map(|k| law.realizations[k - 1].iter().map(move |q| (k, q)))
                .map(|(k, q)| rate * law.stage_probs[k - 1] * q.weight * q.holding[s.stage - 1])
                .sum();
            worst = worst.max((sums[s.stage - 1] - s.occupancy).abs()).max((direct - s.occupancy).abs());
            checked += 1;
        }
    }
    Ok((worst <= 1e-9, format!("{checked} stages, max |sum w_kij - w_j| = {worst:.2e} (need <= 1e-9)")))
}

// 4 -------------------------------------------------------------------------

fn poisson_pmf_table(mean: f64, top: usize) -> Vec<f64> {
    let mut p = vec![(-mean).exp()];
    for k in 1..=top {
        p.push(p[k - 1] * mean / k as f64);
    }
    p
}

fn composition() -> Outcome {
    let means = [0.5, 1.5, 2.0];
    let partition = vec![vec![0, 1], vec![2]];
    let composed = analytic::compose_poisson(&means, &partition).map_err(err)?;
    let caps = composed.truncation();
    let pa = poisson_pmf_table(means[0], caps[0] as usize);
    let pb = poisson_pmf_table(means[1], caps[0] as usize);
    let pc = poisson_pmf_table(means[2], caps[1] as usize);
    let conv: Vec<f64> = (0..=caps[0] as usize).map(|y| (0..=y).map(|i| pa[i] * pb[y - i]).sum()).collect();
    let mut tv = 0.0;
    let mut mass = 0.0;
    for y1 in 0..=caps[0] {
        for y2 in 0..=caps[1] {
            let brute = conv[y1 as usize] * pc[y2 as usize];
            let p = composed.pmf(&[y1, y2]).map_err(err)?;
            tv += (p - brute).abs();
            mass += p;
        }
    }
    tv *= 0.5;
    let ok = tv <= 1e-9 && mass >= 1.0 - 1e-8;
    Ok((ok, format!("support {caps:?}, mass {mass:.10}, TV = {tv:.2e} (need <= 1e-9)")))
}

// 5 -------------------------------------------------------------------------

const DAYS: usize = 60;
const HOURS: usize = 9;

/// Hourly counts of a Poisson process of `rate` per hour, arriving in
/// batches of `batch`, one block per day.
fn hourly_counts(seed: u64, rate: f64, batch: u32) -> Vec<Vec<u32>> {
    let mut r = rng::stream(seed, 0);
    let event_rate = rate / f64::from(batch);
    (0..DAYS)
        .map(|_| {
            let mut counts = vec![0u32; HOURS];
            let mut t = 0.0;
            loop {
                t += -(1.0 - r.random::<f64>()).ln() / event_rate;
                if t >= HOURS as f64 {
                    break;
                }
                counts[t as usize] += batch;
            }
            counts
        })
        .collect()
}

fn arrival_tests() -> Outcome {
    let runs = 50u64;
    let (mut poisson_pass, mut burst_fail) = (0, 0);
    for s in 0..runs {
        let blocks = hourly_counts(500 + s, 6.0, 1);
        let flat: Vec<u32> = blocks.iter().flatten().copied().collect();
        let eta = stats::independence_test(&blocks, 3600.0, 0.15).map_err(err)?;
        let theta = stats::poisson_dist_test(&flat, 3600.0, 0.15).map_err(err)?;
        if eta.passed() && theta.passed() {
            poisson_pass += 1;
        }
        let bursty = hourly_counts(900 + s, 6.0, 10);
        let flat: Vec<u32> = bursty.iter().flatten().copied().collect();
        if !stats::poisson_dist_test(&flat, 3600.0, 0.15).map_err(err)?.passed() {
            burst_fail += 1;
        }
    }
    let ok = poisson_pass * 10 >= runs * 9 && burst_fail * 10 >= runs * 9;
    Ok((
        ok,
        format!("Poisson passes both tests {poisson_pass}/{runs}, batch bursts fail theta {burst_fail}/{runs} (each needs >= 90%)"),
    ))
}

// 6 -------------------------------------------------------------------------

fn manifest_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let code = cellnet_cli::run(std::iter::once("cellnet").chain(args.iter().copied()));
    if code == 0 { Ok(()) } else { Err(format!("cellnet {} exited with {code}", args.join(" "))) }
}

fn read_json(path: &Path) -> Result<Value, String> {
    serde_json::from_str(&std::fs::read_to_string(path).map_err(err)?).map_err(err)
}

fn read_csv(path: &Path) -> Result<Vec<BTreeMap<String, String>>, String> {
    let mut rdr = csv::Reader::from_path(path).map_err(err)?;
    let headers = rdr.headers().map_err(err)?.clone();
    rdr.records()
        .map(|r| {
            let r = r.map_err(err)?;
            Ok(headers.iter().zip(r.iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        })
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> Result<f64, String> {
    row.get(key).ok_or(format!("missing column {key}"))?.parse().map_err(err)
}

fn trace_round_trip() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let dir = |name: &str| tmp.path().join(name).display().to_string();
    let config = manifest_dir().join("../../configs/fixture.toml").display().to_string();
    cli(&["fixture", "--config", &config, "--out", &dir("fixture"), "--format", "csv.gz"])?;
    let polls = tmp.path().join("fixture/polls.csv.gz").display().to_string();
    let truth = read_json(&tmp.path().join("fixture/truth.json"))?;
    let mut notes = Vec::new();
    let mut ok = true;

    cli(&["trace", "--config", &config, "--polls", &polls, "--out", &dir("mode3"), "--exclude-mode", "3"])?;
    let counts: BTreeMap<String, u64> = read_csv(&tmp.path().join("mode3/stage_counts.csv"))?
        .iter()
        .map(|r| Ok((r["stages"].clone(), num(r, "sessions")? as u64)))
        .collect::<Result<_, String>>()?;
    let expected: BTreeMap<String, u64> = truth["stage_counts"]
        .as_object()
        .ok_or("truth.stage_counts")?
        .iter()
        .map(|(k, v)| (k.clone(), v.as_u64().unwrap_or(0)))
        .collect();
    let counts_ok = counts == expected;
    ok &= counts_ok;
    notes.push(format!("stage counts {}", if counts_ok { "exact" } else { "MISMATCH" }));

    let truth_aps: BTreeMap<String, &Value> =
        truth["aps"].as_array().ok_or("truth.aps")?.iter().map(|a| (a["ap"].as_str().unwrap_or("").to_string(), a)).collect();
    let params = read_csv(&tmp.path().join("mode3/params.csv"))?;
    let mut worst: f64 = 0.0;
    let mut nominal: f64 = 0.0;
    for p in &params {
        let t = truth_aps.get(&p["ap"]).ok_or(format!("AP {} not in truth", p["ap"]))?;
        let z_rate = (num(p, "arrival_rate")? - t["arrival_rate"].as_f64().unwrap_or(f64::NAN)).abs() / num(p, "arrival_rate_se")?;
        let se_hold = num(p, "mean_holding_se")?.max(1e-9);
        let z_hold = (num(p, "mean_holding")? - t["mean_holding"].as_f64().unwrap_or(f64::NAN)).abs() / se_hold;
        worst = worst.max(z_rate).max(z_hold);
        if let Some(r) = t["nominal_arrival_rate"].as_f64() {
            nominal = nominal.max((num(p, "arrival_rate")? - r).abs() / num(p, "arrival_rate_se")?);
        }
    }
    let params_ok = worst <= 3.0 && params.len() == truth_aps.len();
    ok &= params_ok;
    notes.push(format!("{} APs, worst |estimate - truth| = {worst:.2} sigma (vs nominal model rates {nominal:.2} sigma)", params.len()));

    let s3 = read_json(&tmp.path().join("mode3/summary.json"))?;
    let closed_ok = s3["closed_users"] == truth["closed_users"] && s3["closed_fraction"] == truth["closed_fraction"];
    ok &= closed_ok;
    notes.push(format!("closed fraction {} (truth {})", s3["closed_fraction"], truth["closed_fraction"]));
    ok &= s3["kept_sessions"] == truth["sessions"];

    cli(&["trace", "--config", &config, "--polls", &polls, "--out", &dir("mode1"), "--exclude-mode", "1"])?;
    let s1 = read_json(&tmp.path().join("mode1/summary.json"))?;
    let kept = s1["kept_sessions"].as_u64().unwrap_or(0);
    let sessions = truth["sessions"].as_u64().unwrap_or(0);
    let invalid_start = truth["sessions_starting_invalid"].as_u64().unwrap_or(0);
    ok &= s1["removed_invalid_start"] == truth["sessions_starting_invalid"] && kept == sessions - invalid_start;

    cli(&["trace", "--config", &config, "--polls", &polls, "--out", &dir("mode2"), "--exclude-mode", "2"])?;
    let s2 = read_json(&tmp.path().join("mode2/summary.json"))?;
    let invalid: Vec<&Value> = truth["expected_invalid"].as_array().ok_or("truth.expected_invalid")?.iter().collect();
    let dims = s2["dimensions"].as_array().ok_or("summary.dimensions")?;
    ok &= s2["kept_sessions"] == truth["sessions"] && dims.iter().all(|d| !invalid.contains(&d));

    cli(&["trace", "--config", &config, "--polls", &polls, "--out", &dir("one"), "--exclude-mode", "3", "--exclude-one-stage"])?;
    let so = read_json(&tmp.path().join("one/summary.json"))?;
    ok &= so["removed_one_stage"] == truth["one_stage_sessions"];
    notes.push(format!(
        "mode 1 removed {} of {sessions} (truth {invalid_start}), mode 2 kept {} dims, one-stage removed {} (truth {})",
        s1["removed_invalid_start"],
        dims.len(),
        so["removed_one_stage"],
        truth["one_stage_sessions"]
    ));
    Ok((ok, notes.join("; ")))
}

// 7 -------------------------------------------------------------------------

const DARTMOUTH_ENV: &str = "CELLNET_DARTMOUTH_POLLS";

fn dartmouth() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let config = manifest_dir().join("../../configs/dartmouth.toml").display().to_string();
    let out = tmp.path().join("trace").display().to_string();
    if let Ok(polls) = std::env::var(DARTMOUTH_ENV) {
        cli(&["trace", "--config", &config, "--polls", &polls, "--out", &out])?;
        let rep = read_json(&tmp.path().join("trace/reference.json"))?;
        let bad: Vec<String> = rep["checks"]
            .as_array()
            .ok_or("reference.checks")?
            .iter()
            .filter(|c| c["matches"] != Value::Bool(true))
            .map(|c| format!("{} expected {} observed {}", c["item"], c["expected"], c["observed"]))
            .collect();
        let ok = rep["all_match"] == Value::Bool(true);
        return Ok((ok, if ok { "all published figures reproduced".into() } else { format!("mismatches: {}", bad.join("; ")) }));
    }
    // Without the dataset: drive the preset end to end on a synthetic trace
    // laid out in the same period and check the report the tool emits.
    let fx_config = tmp.path().join("fixture.toml");
    let fixture_toml = std::fs::read_to_string(manifest_dir().join("../../configs/fixture.toml")).map_err(err)?
        .replace("[fixture]\n", "[fixture]\nstart_date = \"2003-11-03\"\n")
        .replace("[preprocess]\ncadence = 300.0\n", "[preprocess]\npreset = \"dartmouth\"\n");
    std::fs::write(&fx_config, fixture_toml).map_err(err)?;
    let fxc = fx_config.display().to_string();
    let fx_out = tmp.path().join("fx").display().to_string();
    cli(&["fixture", "--config", &fxc, "--out", &fx_out])?;
    let polls = tmp.path().join("fx/polls.csv").display().to_string();
    cli(&["trace", "--config", &config, "--polls", &polls, "--out", &out])?;
    let rep = read_json(&tmp.path().join("trace/reference.json"))?;
    let checks = rep["checks"].as_array().ok_or("reference.checks")?.len();
    let ambiguities = rep["ambiguities"].as_array().ok_or("reference.ambiguities")?.len();
    let truth = read_json(&tmp.path().join("fx/truth.json"))?;
    let summary = read_json(&tmp.path().join("trace/summary.json"))?;
    let days_ok = summary["days"].as_u64() == truth["days"].as_array().map(|d| d.len() as u64);
    if !(checks == 15 && ambiguities == 7 && days_ok) {
        return Err(format!("preset pipeline on synthetic trace: {checks} checks, {ambiguities} ambiguities, days match {days_ok}"));
    }
    Ok((
        false,
        format!(
            "dataset not available (set {DARTMOUTH_ENV}); published figures not reproduced. \
             Dartmouth preset ran on a synthetic trace in the study period: {checks} reference checks and \
             {ambiguities} documented preprocessing ambiguities reported"
        ),
    ))
}

// 8 -------------------------------------------------------------------------

/// 4 x 3 grid, 200 m spacing; each cell starts a route to a neighbor.
fn grid_network() -> NetworkSpec {
    let (cols, rows) = (4u32, 3u32);
    let id = |c: u32, r: u32| r * cols + c + 1;
    let mut routes = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let next = if c + 1 < cols { id(c + 1, r) } else { id(c, (r + 1) % rows) };
            routes.push(RouteSpec {
                route: Route::new([id(c, r), next]),
                arrival_rate: 0.004 + 0.001 * f64::from((c + r) % 3),
                law: SessionLaw::Generative(GenerativeSessionLaw {
                    duration: exp(600.0),
                    dwell: vec![exp(300.0), exp(250.0)],
                    coupling: Coupling::Independent,
                }),
            });
        }
    }
    let cell_meta = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (c, r)))
        .map(|(c, r)| CellMeta { name: None, x: Some(200.0 * f64::from(c)), y: Some(200.0 * f64::from(r)) })
        .collect();
    NetworkSpec { cell_count: cols * rows, routes, cell_meta }
}

fn distance_neutrality() -> Outcome {
    let spec = grid_network();
    let means = analytic::cell_means(&spec).map_err(err)?.poisson_means();
    let cfg = SimConfig::for_spec(&spec, 400_000, 808).map_err(err)?;
    let snaps = sim::run(&spec, &cfg).map_err(err)?;
    let coords = spec.coordinates().ok_or("grid has coordinates")?;
    let source = StudySource { rows: &snaps, means: &means, candidates: None, coordinates: Some(&coords), labels: None };
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for n in 2..=6 {
        let run = |max_distance| {
            stats::random_subset_study(&source, &StudyOptions { subset_size: n, repeats: 100, max_distance, seed: 8 })
        };
        let free = run(None).map_err(err)?;
        let near = run(Some(500.0)).map_err(err)?;
        let d = (free.h_kl.mean - near.h_kl.mean).abs();
        worst = worst.max(d);
        parts.push(format!("n={n}: {:.4}/{:.4}", free.h_kl.mean, near.h_kl.mean));
    }
    Ok((worst < 0.02, format!("mean H_kl without/with 500 m: {}; max difference {worst:.4} bits (need < 0.02)", parts.join(", "))))
}
