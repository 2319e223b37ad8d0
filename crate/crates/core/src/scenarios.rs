//! Preset simulation configurations used by tests, benchmarks and the
//! sample data.

use crate::dataset::{Category, Relation};
use crate::simulate::{GroupTemplate, MemberTemplate, PriceProcess, RankPolicy, SimConfig};

pub fn member(id: &str, cost: f64, anchor: f64, base: f64) -> MemberTemplate {
    MemberTemplate {
        product_id: id.into(),
        cost,
        anchor_price: anchor,
        base_quantity: base,
        start_price: None,
        price_factor: 1.0,
    }
}

/// Two versions sharing Office-style coefficients
/// (phi 1.91, gamma -2.54, lambda -0.36). Cross effects dominate own
/// effects, so there is no interior optimum and start prices are fixed.
pub fn office_versions() -> GroupTemplate {
    let mut hi = member("office-pro", 80.0, 300.0, 30.0);
    hi.start_price = Some(300.0);
    let mut lo = member("office-std", 50.0, 200.0, 50.0);
    lo.start_price = Some(200.0);
    GroupTemplate {
        group_id: "office".into(),
        relation: Relation::Versions,
        category: Category::BusinessProductivity,
        members: vec![hi, lo],
        phi: vec![1.91, 1.91],
        gamma: vec![vec![0.0, -2.54], vec![-2.54, 0.0]],
        lambda: vec![-0.36, -0.36],
        omega: Default::default(),
    }
}

/// Two versions with own-price elasticity near -4 and mild substitution,
/// which has an interior profit maximum close to the anchor prices.
pub fn suite_versions() -> GroupTemplate {
    GroupTemplate {
        group_id: "suite".into(),
        relation: Relation::Versions,
        category: Category::BusinessProductivity,
        members: vec![member("suite-pro", 60.0, 86.0, 40.0), member("suite-std", 30.0, 41.0, 60.0)],
        phi: vec![4.83, 4.83],
        gamma: vec![vec![0.0, -0.48], vec![-0.48, 0.0]],
        lambda: vec![-0.36, -0.36],
        omega: Default::default(),
    }
}

/// Mean-reverting prices with enough movement to separate own, cross and
/// marketplace effects over 300 slots.
pub fn identifying_prices() -> PriceProcess {
    PriceProcess {
        change_prob: 0.25,
        step_sigma: 0.15,
        reversion: 0.3,
        marketplace: true,
        marketplace_discount: 0.1,
        marketplace_sigma: 0.9,
    }
}

/// One group over 100 days at 3 slots a day, unrounded ranks.
pub fn group_panel(group: GroupTemplate, seed: u64, sigma: f64) -> SimConfig {
    SimConfig {
        seed,
        days: 100,
        slots_per_day: 3,
        groups: vec![group],
        price: identifying_prices(),
        noise_sigma: sigma,
        round_ranks: false,
        ..SimConfig::default()
    }
}

pub fn office_panel(seed: u64, sigma: f64) -> SimConfig {
    group_panel(office_versions(), seed, sigma)
}

pub fn suite_panel(seed: u64, sigma: f64) -> SimConfig {
    group_panel(suite_versions(), seed, sigma)
}

/// 300 unrelated products observed hourly for two weeks, for fitting the
/// rank-to-sales curve.
pub fn calibration_panel(seed: u64, sigma: f64) -> SimConfig {
    SimConfig {
        seed,
        days: 14,
        slots_per_day: 24,
        background_products: 300,
        noise_sigma: sigma,
        rank_policy: RankPolicy::DirectPareto,
        ..SimConfig::default()
    }
}
