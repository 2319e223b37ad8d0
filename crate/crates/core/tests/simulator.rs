//! Properties of the synthetic market generator.

use std::collections::BTreeMap;

use salesrank_core::dataset::validate_panel;
use salesrank_core::rankmap::{detect_purchases, DetectionParams};
use salesrank_core::scenarios::{suite_panel, suite_versions};
use salesrank_core::simulate::{generate_market, DroppedField, SimConfig};
use salesrank_core::{ProductId, RankPolicy, RankSeries, ValidationPolicy};

#[test]
fn same_seed_same_market() {
    let a = generate_market(&suite_panel(3, 0.2)).unwrap();
    let b = generate_market(&suite_panel(3, 0.2)).unwrap();
    let c = generate_market(&suite_panel(4, 0.2)).unwrap();
    assert_eq!(a.observations, b.observations);
    assert_eq!(a.truth, b.truth);
    assert_eq!(a.truth.events, b.truth.events);
    assert_ne!(a.observations, c.observations);
}

#[test]
fn dropped_fields_are_filled_or_reported_as_gaps() {
    let cfg = SimConfig {
        drop_rate: 0.05,
        background_products: 5,
        ..suite_panel(5, 0.2)
    };
    let market = generate_market(&cfg).unwrap();
    let price_drops = market.truth.drops.iter().filter(|d| d.field == DroppedField::AmazonPrice).count();
    let rank_drops = market.truth.drops.len() - price_drops;
    assert!(price_drops > 0 && rank_drops > 0);
    let panel = validate_panel(market.observations, market.catalog, ValidationPolicy::default()).unwrap();
    let r = panel.report();
    assert_eq!(r.missing_slots, 0);
    assert_eq!(r.price_fills + r.price_gaps, price_drops);
    assert_eq!(r.rank_gaps, rank_drops);
}

#[test]
fn purchase_counts_match_poisson_expectations() {
    let cfg = SimConfig {
        background_products: 40,
        ..suite_panel(6, 0.2)
    };
    let market = generate_market(&cfg).unwrap();
    let mut counts: BTreeMap<&ProductId, f64> = BTreeMap::new();
    for e in &market.truth.events {
        *counts.entry(&e.product_id).or_default() += 1.0;
    }
    let (mut total, mut expected) = (0.0, 0.0);
    for p in &market.truth.products {
        let n = counts.get(&p.product_id).copied().unwrap_or(0.0);
        assert!((n - p.expected_events).abs() <= 4.0 * p.expected_events.sqrt().max(1.0), "{}", p.product_id);
        total += n;
        expected += p.expected_events;
    }
    assert!((total - expected).abs() <= 3.0 * expected.sqrt(), "{total} vs {expected}");
}

/// With slow sellers ranked by decayed purchase counts, a detected spike
/// should almost always coincide with a real purchase since the previous
/// observation, and most purchase slots should show a spike.
#[test]
fn spikes_on_sparse_decay_ranks_are_real_purchases() {
    let cfg = SimConfig {
        seed: 8,
        days: 14,
        slots_per_day: 24,
        background_products: 400,
        background_rank_range: (3000.0, 12000.0),
        rank_policy: RankPolicy::EventDecay,
        ..SimConfig::default()
    };
    let market = generate_market(&cfg).unwrap();
    let mut rows: BTreeMap<ProductId, Vec<_>> = BTreeMap::new();
    for o in market.observations {
        rows.entry(o.product_id.clone()).or_default().push(o);
    }
    let params = DetectionParams {
        theta: 0.3,
        min_abs_drop: 20.0,
    };
    let (mut detected, mut purchase_slots, mut found) = (0usize, 0usize, 0usize);
    for (id, obs) in &rows {
        let series = RankSeries::from_observations(id.clone(), obs);
        let events: Vec<_> = market.truth.events.iter().filter(|e| &e.product_id == id).collect();
        let spikes = detect_purchases(&series, &params).unwrap();
        let bought = |from, to| events.iter().any(|e| e.timestamp > from && e.timestamp <= to);
        for w in series.points.windows(2) {
            let hit = bought(w[0].0, w[1].0);
            let spiked = spikes.iter().any(|s| s.timestamp == w[1].0);
            purchase_slots += usize::from(hit);
            detected += usize::from(spiked);
            found += usize::from(spiked && hit);
        }
    }
    let precision = found as f64 / detected as f64;
    let recall = found as f64 / purchase_slots as f64;
    assert!(detected > 100);
    assert!(precision >= 0.95, "precision {precision}");
    assert!(recall >= 0.85, "recall {recall}");
}

#[test]
fn optimum_recorded_in_truth_satisfies_first_order_conditions() {
    let market = generate_market(&suite_panel(2, 0.2)).unwrap();
    let report = salesrank_core::simulate::ground_truth_report(&market.truth).unwrap();
    assert!(report.optimum_verified);
    let g = &report.groups[0];
    assert_eq!(g.members.len(), suite_versions().members.len());
    assert!(g.optimal_prices.as_ref().unwrap().iter().zip(&g.costs).all(|(p, c)| p > c));
}
