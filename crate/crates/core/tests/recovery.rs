//! Simulated markets with known parameters, run back through estimation.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use salesrank_core::cost::{estimate_costs, revenue_shares, shares_for, window_averages};
use salesrank_core::dataset::validate_panel;
use salesrank_core::demand::{elasticity_matrix, estimate_demand, DemandSpec};
use salesrank_core::optimal::{classify, ProfitMember};
use salesrank_core::scenarios::{office_panel, suite_panel};
use salesrank_core::simulate::{generate_market, optimal_prices};
use salesrank_core::{Classification, Market, PanelDataset, ProductId, ProfitModel, ShareMethod, ValidationPolicy, Window};

fn panel(market: &Market) -> PanelDataset {
    validate_panel(market.observations.clone(), market.catalog.clone(), ValidationPolicy::default()).unwrap()
}

#[test]
fn noiseless_versions_group_is_recovered_exactly() {
    let market = generate_market(&office_panel(11, 0.0)).unwrap();
    let panel = panel(&market);
    let est = estimate_demand(&panel.groups()[0], &panel, &DemandSpec::default()).unwrap();
    assert_eq!(est.members.len(), 2);
    for m in &est.members {
        let t = market.truth.product(&m.product_id).unwrap();
        assert!((m.phi - t.phi).abs() < 1e-8);
        for (j, g) in &t.gammas {
            assert!((m.gammas[j] - g).abs() < 1e-8);
        }
        assert!((m.lambda.unwrap() - t.lambda).abs() < 1e-8);
    }
}

#[test]
fn noisy_versions_group_is_recovered_within_ten_percent() {
    let mut ok = 0;
    for seed in 0..10 {
        let market = generate_market(&office_panel(seed, 0.2)).unwrap();
        let panel = panel(&market);
        let est = estimate_demand(&panel.groups()[0], &panel, &DemandSpec::default()).unwrap();
        let within = |a: f64, b: f64| ((a - b) / b).abs() <= 0.10;
        let m = &est.members[0];
        let t = market.truth.product(&m.product_id).unwrap();
        let (j, g) = t.gammas.iter().next().unwrap();
        if within(m.phi, t.phi) && within(m.gammas[j], *g) && within(m.lambda.unwrap(), t.lambda) {
            ok += 1;
        }
    }
    assert!(ok >= 8, "{ok} of 10 seeds within 10%");
}

/// At an interior optimum, the true elasticities and shares give back the
/// true costs through the first-order conditions.
#[test]
fn true_inputs_reproduce_costs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut checked = 0;
    while checked < 200 {
        let n = rng.random_range(2..=3);
        let eta = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                rng.random_range(-5.0..-2.0)
            } else {
                rng.random_range(-0.1..0.4)
            }
        });
        let costs: Vec<f64> = (0..n).map(|_| rng.random_range(5.0..80.0)).collect();
        let anchors: Vec<f64> = costs.iter().map(|c| c * rng.random_range(1.2..1.8)).collect();
        let base: Vec<f64> = (0..n).map(|_| rng.random_range(5.0..80.0)).collect();
        let Ok(p) = optimal_prices(&costs, &eta, &anchors, &base) else {
            continue;
        };
        let model = anchor_model(&costs, &eta, &anchors, &base).moved_to(&p).unwrap();
        let q: Vec<f64> = model.members().iter().map(|m| m.quantity).collect();
        let shares = revenue_shares(&p, &q).unwrap();
        let ids: Vec<ProductId> = (0..n).map(|i| ProductId::new(format!("p{i}"))).collect();
        let est = estimate_costs("g", &ids, &p, &shares, &eta, ShareMethod::Direct).unwrap();
        for (m, c) in est.members.iter().zip(&costs) {
            assert!(((m.marginal_cost - c) / c).abs() <= 1e-10, "{} vs {c}", m.marginal_cost);
        }
        checked += 1;
    }
}

fn anchor_model(costs: &[f64], eta: &DMatrix<f64>, anchors: &[f64], base: &[f64]) -> ProfitModel {
    let members = (0..costs.len())
        .map(|i| ProfitMember {
            product_id: ProductId::new(format!("p{i}")),
            price: anchors[i],
            cost: costs[i],
            quantity: base[i],
        })
        .collect();
    ProfitModel::new(members, eta.clone(), 1.0).unwrap()
}

#[test]
fn estimated_elasticities_give_costs_within_fifteen_percent() {
    let mut ok = 0;
    let seeds = 10;
    for seed in 0..seeds {
        let market = generate_market(&suite_panel(seed, 0.2)).unwrap();
        let panel = panel(&market);
        let group = &panel.groups()[0];
        let est = estimate_demand(group, &panel, &DemandSpec::default()).unwrap();
        let cal = market.truth.calibration.calibration().unwrap();
        let n = elasticity_matrix(&group.group_id, &group.members, &est.members, cal.beta).unwrap();
        let avg = window_averages(&panel, &group.members, &Window::default(), &cal).unwrap();
        let shares = shares_for(ShareMethod::Direct, &avg, cal.beta).unwrap();
        let prices: Vec<f64> = avg.iter().map(|a| a.price).collect();
        let costs = estimate_costs("suite", &group.members, &prices, &shares, &n.to_matrix(), ShareMethod::Direct).unwrap();
        let all = costs.members.iter().all(|m| {
            let truth = market.truth.product(&m.product_id).unwrap().cost;
            ((m.marginal_cost - truth) / truth).abs() <= 0.15
        });
        ok += usize::from(all);
    }
    assert!(ok * 100 >= 85 * seeds as usize, "{ok} of {seeds}");
}

/// Well-conditioned instances: own elasticity at most -2, cross
/// elasticities in [0, 0.15] and no member below this revenue share at the
/// optimum. Small members or strong cross effects can keep a normalized
/// gradient inside the tolerance band after a 20% move.
const MIN_SHARE: f64 = 0.2;

#[test]
fn optimum_is_optimal_and_twenty_percent_moves_flip_the_verdict() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut checked = 0;
    while checked < 300 {
        let n = rng.random_range(1..=3);
        let eta = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                rng.random_range(-5.0..-2.0)
            } else {
                rng.random_range(0.0..0.15)
            }
        });
        let costs: Vec<f64> = (0..n).map(|_| rng.random_range(5.0..80.0)).collect();
        let anchors: Vec<f64> = costs.iter().map(|c| c * 1.5).collect();
        let base: Vec<f64> = (0..n).map(|_| rng.random_range(5.0..80.0)).collect();
        let Ok(p) = optimal_prices(&costs, &eta, &anchors, &base) else {
            continue;
        };
        let surface = anchor_model(&costs, &eta, &anchors, &base);
        let at = surface.moved_to(&p).unwrap();
        let q: Vec<f64> = at.members().iter().map(|m| m.quantity).collect();
        if revenue_shares(&p, &q).unwrap().iter().any(|s| *s < MIN_SHARE) {
            continue;
        }
        for v in classify(&at, 0.01).unwrap() {
            assert!(v.normalized_gradient.abs() <= 0.01);
            assert_eq!(v.classification, Classification::Optimal);
        }
        for i in 0..n {
            for (factor, expected) in [(1.2, Classification::Overpriced), (0.8, Classification::Underpriced)] {
                let mut moved = p.clone();
                moved[i] *= factor;
                let v = classify(&surface.moved_to(&moved).unwrap(), 0.01).unwrap();
                assert_eq!(v[i].classification, expected, "member {i} at {factor} x optimum: {v:?} eta {eta} p {p:?} c {costs:?}");
            }
        }
        checked += 1;
    }
}
