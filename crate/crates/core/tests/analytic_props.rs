use cellnet_core::analytic::{self, ProductForm};
use cellnet_core::model::{DiscreteSessionLaw, NetworkSpec, Realization, Route, RouteSpec, SessionLaw};
use cellnet_core::rng;
use proptest::prelude::*;
use rand::Rng;

/// Random law with `n` stages and up to `m` realizations per stage count.
fn random_law<R: Rng>(rng: &mut R, n: usize, m: usize) -> DiscreteSessionLaw {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let stage_probs = raw.iter().map(|p| p / total).collect();
    let realizations = (1..=n)
        .map(|k| {
            let count = rng.random_range(1..=m);
            let w: Vec<f64> = (0..count).map(|_| rng.random_range(0.01..1.0)).collect();
            let wt: f64 = w.iter().sum();
            w.iter().map(|x| Realization { weight: x / wt, holding: (0..k).map(|_| rng.random_range(0.1..50.0)).collect() }).collect()
        })
        .collect();
    DiscreteSessionLaw { stage_probs, realizations }
}

fn route_spec(law: DiscreteSessionLaw, rate: f64) -> RouteSpec {
    let n = law.stage_probs.len() as u32;
    RouteSpec { route: Route::new(1..=n), arrival_rate: rate, law: SessionLaw::Discrete(law) }
}

/// `w_j = lambda_0 * S_j * tbar_j`, straight from the definitions.
fn oracle_stage_occupancy(law: &DiscreteSessionLaw, rate: f64, j: usize) -> f64 {
    let n = law.stage_probs.len();
    let survival: f64 = law.stage_probs[j - 1..].iter().sum();
    let mut num = 0.0;
    for k in j..=n {
        for r in &law.realizations[k - 1] {
            num += law.stage_probs[k - 1] * r.weight * r.holding[j - 1];
        }
    }
    rate * survival * (num / survival)
}

#[test]
fn decoupled_sums_equal_stage_means_for_random_laws() {
    let mut r = rng::stream(2024, 0);
    for _ in 0..1000 {
        let n = r.random_range(1..=6);
        let law = random_law(&mut r, n, 8);
        let rate = r.random_range(0.01..5.0);
        let rs = route_spec(law.clone(), rate);
        let sums = analytic::decoupled_stage_sums(&rs).unwrap();
        let means = analytic::stage_means(&rs).unwrap();
        for s in &means.stages {
            let oracle = oracle_stage_occupancy(&law, rate, s.stage);
            assert!((sums[s.stage - 1] - s.occupancy).abs() <= 1e-9 * s.occupancy.max(1.0));
            assert!((oracle - s.occupancy).abs() <= 1e-9 * s.occupancy.max(1.0));
        }
    }
}

#[test]
fn stage_form_composes_to_cell_form() {
    let mut r = rng::stream(7, 0);
    for _ in 0..200 {
        let cells = r.random_range(1..=4u32);
        let routes = (0..r.random_range(1..=3))
            .map(|_| {
                let n = r.random_range(1..=4);
                let law = random_law(&mut r, n, 3);
                RouteSpec {
                    route: Route::new((0..n).map(|_| r.random_range(1..=cells))),
                    arrival_rate: r.random_range(0.1..2.0),
                    law: SessionLaw::Discrete(law),
                }
            })
            .collect();
        let spec = NetworkSpec { cell_count: cells, routes, cell_meta: vec![] };
        let stage = analytic::stage_product_form(&spec).unwrap();
        let composed = analytic::compose_poisson(&stage.form.means, &stage.cell_partition(spec.cells())).unwrap();
        let cell = analytic::cell_means(&spec).unwrap().poisson_means();
        for (a, b) in composed.means.iter().zip(&cell) {
            assert!((a - b).abs() <= 1e-9 * b.max(1.0), "{a} vs {b}");
        }
    }
}

/// Two laws with the same stage-count distribution and stage means, one
/// with independent spread of holding times and one with perfectly
/// correlated (scaled) holding times, give identical cell means.
#[test]
fn cell_means_depend_only_on_first_moments() {
    let p = vec![0.2, 0.5, 0.3];
    let base = [3.0, 5.0, 8.0];
    let fixed = DiscreteSessionLaw::shared_speed(p.clone(), &base, &[(1.0, 1.0)]);
    let coupled = DiscreteSessionLaw::shared_speed(p.clone(), &base, &[(0.5, 0.4), (0.5, 1.6)]);
    let spec = |law| NetworkSpec {
        cell_count: 2,
        routes: vec![RouteSpec { route: Route::new([1, 2, 1]), arrival_rate: 0.7, law: SessionLaw::Discrete(law) }],
        cell_meta: vec![],
    };
    let a = analytic::cell_means(&spec(fixed)).unwrap().poisson_means();
    let b = analytic::cell_means(&spec(coupled)).unwrap().poisson_means();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
    // Hand oracle: S = [1, 0.8, 0.3], tbar = base; cell 1 hosts stages 1 and 3.
    let cell1 = 0.7 * (1.0 * 3.0 + 0.3 * 8.0);
    let cell2 = 0.7 * 0.8 * 5.0;
    assert!((a[0] - cell1).abs() < 1e-12 && (a[1] - cell2).abs() < 1e-12, "{a:?}");
}

proptest! {
    #[test]
    fn truncated_pmf_keeps_required_mass(means in prop::collection::vec(0.0f64..8.0, 1..=3)) {
        let pf = ProductForm::new(means.clone()).unwrap();
        let k = pf.truncation();
        let mut mass = 0.0;
        let mut x = vec![0u32; means.len()];
        loop {
            mass += pf.pmf(&x).unwrap();
            let mut i = 0;
            while i < x.len() {
                x[i] += 1;
                if x[i] <= k[i] { break; }
                x[i] = 0;
                i += 1;
            }
            if i == x.len() { break; }
        }
        prop_assert!(mass >= 1.0 - 1e-8 * means.len() as f64 - 1e-12, "mass {}", mass);
        prop_assert!(mass <= 1.0 + 1e-9);
    }

    #[test]
    fn survival_and_transitions_are_probabilities(raw in prop::collection::vec(0.01f64..1.0, 1..=6)) {
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
        prop_assert!((analytic::survival(&p, 1).unwrap() - 1.0).abs() < 1e-12);
        for k in 1..=p.len() {
            let (cont, term) = analytic::transition_prob(&p, k).unwrap();
            prop_assert!((cont + term - 1.0).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&cont));
        }
        prop_assert!(analytic::transition_prob(&p, p.len()).unwrap().0.abs() < 1e-12);
    }

    #[test]
    fn stage_occupancy_scales_with_rate(seed in 0u64..1000, scale in 0.1f64..10.0) {
        let mut r = rng::stream(seed, 0);
        let n = r.random_range(1..=5);
        let law = random_law(&mut r, n, 4);
        let a = analytic::stage_means(&route_spec(law.clone(), 1.0)).unwrap();
        let b = analytic::stage_means(&route_spec(law, scale)).unwrap();
        for (x, y) in a.stages.iter().zip(&b.stages) {
            prop_assert!((y.occupancy - scale * x.occupancy).abs() <= 1e-9 * y.occupancy.max(1.0));
            prop_assert!((x.mean_holding - y.mean_holding).abs() <= 1e-12 * x.mean_holding);
        }
    }
}
