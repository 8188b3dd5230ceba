use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

use cellnet_core::analytic::{self, ProductForm};
use cellnet_core::model::{Coupling, Family, GenerativeSessionLaw, NetworkSpec, Route, RouteSpec, SessionLaw};
use cellnet_core::sim::{self, SimConfig};
use cellnet_core::stats::{self, EmpiricalDistribution, StudyOptions, StudySource};
use cellnet_core::trace::{self, fixture, PreprocessConfig};

fn exp(mean: f64) -> Family {
    Family::Exponential { mean }
}

fn campus() -> NetworkSpec {
    let route = |cells: Vec<u32>, rate: f64, dwell: f64| RouteSpec {
        law: SessionLaw::Generative(GenerativeSessionLaw {
            duration: exp(2400.0),
            dwell: vec![exp(dwell); cells.len()],
            coupling: Coupling::Independent,
        }),
        route: Route::new(cells),
        arrival_rate: rate,
    };
    NetworkSpec {
        cell_count: 5,
        routes: vec![
            route(vec![1, 2, 5, 3], 1.0 / 600.0, 900.0),
            route(vec![2, 1], 1.0 / 900.0, 1200.0),
            route(vec![3, 5, 4], 1.0 / 700.0, 600.0),
            route(vec![4], 1.0 / 800.0, 1800.0),
        ],
        cell_meta: vec![],
    }
}

fn pre() -> PreprocessConfig {
    PreprocessConfig { cadence: Some(300.0), ..PreprocessConfig::default() }
}

fn bench_analytic(c: &mut Criterion) {
    let spec = campus();
    c.bench_function("analytic/cell_means", |b| b.iter(|| analytic::cell_means(black_box(&spec)).unwrap()));
    let means = analytic::cell_means(&spec).unwrap().poisson_means();
    let pf = ProductForm::new(means).unwrap();
    c.bench_function("analytic/pmf_tables", |b| {
        b.iter(|| {
            for &m in &pf.means {
                black_box(analytic::poisson_truncation(m, analytic::TRUNCATION_MASS));
            }
        })
    });
}

fn bench_sim(c: &mut Criterion) {
    let spec = campus();
    let cfg = SimConfig::for_spec(&spec, 5_000, 1).unwrap();
    let mut g = c.benchmark_group("sim");
    g.sample_size(10);
    g.bench_function("run_5k_snapshots", |b| b.iter(|| sim::run(black_box(&spec), &cfg).unwrap()));
    g.finish();
}

fn bench_stats(c: &mut Criterion) {
    let spec = campus();
    let cfg = SimConfig::for_spec(&spec, 20_000, 2).unwrap();
    let snaps = sim::run(&spec, &cfg).unwrap();
    let means = analytic::cell_means(&spec).unwrap().poisson_means();
    let mut g = c.benchmark_group("stats");
    g.bench_function("from_rows_20k", |b| b.iter(|| EmpiricalDistribution::from_full_rows(black_box(&snaps)).unwrap()));
    let emp = EmpiricalDistribution::from_full_rows(&snaps).unwrap();
    let pf = ProductForm::new(means.clone()).unwrap();
    g.bench_function("kl_divergence", |b| b.iter(|| stats::kl_divergence(black_box(&emp), &pf).unwrap()));
    g.sample_size(10);
    g.bench_function("subset_study_n3", |b| {
        let src = StudySource { rows: &snaps, means: &means, candidates: None, coordinates: None, labels: None };
        let opts = StudyOptions { subset_size: 3, repeats: 20, max_distance: None, seed: 5 };
        b.iter(|| stats::random_subset_study(&src, &opts).unwrap())
    });
    g.finish();
}

fn bench_trace(c: &mut Criterion) {
    let spec = campus();
    let fx = fixture::FixtureConfig { days: 20, seed: 11, ..fixture::FixtureConfig::default() };
    let f = fixture::generate(&spec, &fx, &pre()).unwrap();
    let mut g = c.benchmark_group("trace");
    g.sample_size(10);
    g.bench_function("analyze_20_days", |b| {
        b.iter_batched(|| f.polls.clone(), |polls| trace::analyze(&polls, &pre()).unwrap(), BatchSize::LargeInput)
    });
    g.finish();
}

criterion_group!(benches, bench_analytic, bench_sim, bench_stats, bench_trace);
criterion_main!(benches);
