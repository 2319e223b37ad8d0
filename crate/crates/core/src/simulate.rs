//! Synthetic marketplace with known demand, costs and optimal prices.
//!
//! Each simulated product has a latent log sales rank
//!
//! ```text
//! ln R_it = a_i + phi_i ln p_it + sum_j gamma_ij ln p_jt + lambda_i ln p^_it + omega' X_it + u_it
//! ```
//!
//! and weekly demand `Q_it = alpha R_it^beta - 1`, so `ln(Q + 1)` is linear
//! in log prices with elasticities `beta * phi` and `beta * gamma`. Noise
//! `u = eps / |beta|` corresponds to `eps ~ N(0, sigma^2)` on log demand.
//! Purchases arrive as Poisson events at rate `Q` per week; observed ranks
//! come from the latent rank directly or from a decayed purchase score.
//!
//! Every product draws from its own ChaCha stream keyed by
//! `(seed, product_id, purpose)`, so output does not depend on thread
//! scheduling.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    days_since_release, parse_timestamp, Catalog, Category, PanelObservation, Product, ProductId, ProductKind,
    Relation,
};
use crate::error::{Error, Result};
use crate::optimal::{classify, normalized_gradient, Classification, ProfitMember, ProfitModel, DEFAULT_TOLERANCE};
use crate::rankmap::{quantity_to_rank, ParetoCalibration, REFERENCE_BETA, REFERENCE_INTERCEPT};
use crate::statcore::solve_linear;

const HOURS_PER_WEEK: f64 = 168.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankPolicy {
    /// Rank is the inverse power-law image of current demand.
    #[default]
    DirectPareto,
    /// Rank orders products by exponentially decayed purchase counts,
    /// recomputed at every observation.
    EventDecay,
    /// As `EventDecay`, but positions refresh hourly, daily or monthly
    /// depending on the tier a product currently sits in.
    LegacyThreeTier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LegacyTiers {
    pub hourly_max_rank: f64,
    pub daily_max_rank: f64,
    pub slow_period_days: i64,
}

impl Default for LegacyTiers {
    fn default() -> Self {
        Self {
            hourly_max_rank: 10_000.0,
            daily_max_rank: 100_000.0,
            slow_period_days: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceProcess {
    /// Probability that a product's price moves in a given slot.
    pub change_prob: f64,
    /// Standard deviation of a log price step.
    pub step_sigma: f64,
    /// Fraction of the log distance to the starting price removed at each
    /// change; zero gives a pure random walk.
    pub reversion: f64,
    /// Emit marketplace (third-party new) prices.
    pub marketplace: bool,
    /// Typical marketplace discount below the retailer price.
    pub marketplace_discount: f64,
    /// Per-slot log noise of the marketplace price around its typical level.
    pub marketplace_sigma: f64,
}

impl Default for PriceProcess {
    fn default() -> Self {
        Self {
            change_prob: 0.02,
            step_sigma: 0.1,
            reversion: 0.0,
            marketplace: true,
            marketplace_discount: 0.1,
            marketplace_sigma: 0.25,
        }
    }
}

/// Coefficients of the control variables in the latent log rank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlCoefficients {
    pub days_release: f64,
    pub avg_rating: f64,
    pub n_reviews: f64,
}

impl Default for ControlCoefficients {
    fn default() -> Self {
        Self {
            days_release: 0.08,
            avg_rating: -0.1,
            n_reviews: -0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlProcess {
    pub min_age_days: u32,
    pub max_age_days: u32,
    /// Expected new reviews per observation slot.
    pub review_rate: f64,
}

impl Default for ControlProcess {
    fn default() -> Self {
        Self {
            min_age_days: 30,
            max_age_days: 720,
            review_rate: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberTemplate {
    pub product_id: String,
    pub cost: f64,
    /// Price at which weekly demand equals `base_quantity`.
    pub anchor_price: f64,
    pub base_quantity: f64,
    /// Starting price; defaults to `price_factor` times the optimal price.
    #[serde(default)]
    pub start_price: Option<f64>,
    #[serde(default = "one")]
    pub price_factor: f64,
}

fn one() -> f64 {
    1.0
}

/// One relation group. Coefficients are in log-rank space, indexed by
/// member position; `gamma[i][j]` is the effect of member `j`'s price on
/// member `i`'s rank (diagonal ignored). For bundle groups the first member
/// is the bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupTemplate {
    pub group_id: String,
    pub relation: Relation,
    #[serde(default = "default_category")]
    pub category: Category,
    pub members: Vec<MemberTemplate>,
    pub phi: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub omega: ControlCoefficients,
}

fn default_category() -> Category {
    Category::BusinessProductivity
}

impl GroupTemplate {
    fn check(&self) -> Result<()> {
        let n = self.members.len();
        let bad = |why: String| Err(Error::Dimension(format!("group `{}`: {why}", self.group_id)));
        if n < 2 {
            return bad(format!("{n} members, need at least 2"));
        }
        match self.relation {
            Relation::Versions if n > 3 => return bad("at most 3 versions".into()),
            Relation::Generations if n != 2 => return bad("generations need exactly 2 members".into()),
            _ => {}
        }
        if self.phi.len() != n || self.lambda.len() != n {
            return bad(format!("phi/lambda must have {n} entries"));
        }
        if self.gamma.len() != n || self.gamma.iter().any(|r| r.len() != n) {
            return bad(format!("gamma must be {n}x{n}"));
        }
        for m in &self.members {
            if !(m.cost > 0.0 && m.anchor_price > 0.0 && m.base_quantity > 0.0 && m.price_factor > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "member `{}`: cost, anchor_price, base_quantity and price_factor must be positive",
                    m.product_id
                )));
            }
            if m.start_price.is_some_and(|p| !(p > 0.0)) {
                return Err(Error::InvalidInput(format!("member `{}`: start_price must be positive", m.product_id)));
            }
        }
        Ok(())
    }

    fn kind(&self, position: usize) -> ProductKind {
        match self.relation {
            Relation::Versions => [ProductKind::VersionHigh, ProductKind::VersionMid, ProductKind::VersionLow][position],
            Relation::Generations => [ProductKind::GenerationCurrent, ProductKind::GenerationPrior][position],
            Relation::BundleWithComponents if position == 0 => ProductKind::Bundle,
            Relation::BundleWithComponents => ProductKind::Component,
        }
    }

    /// `beta * [phi on the diagonal, gamma off it]`.
    pub fn elasticities(&self, beta: f64) -> DMatrix<f64> {
        let n = self.members.len();
        DMatrix::from_fn(n, n, |i, j| beta * if i == j { self.phi[i] } else { self.gamma[i][j] })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationTruth {
    pub intercept: f64,
    pub beta: f64,
}

impl Default for CalibrationTruth {
    fn default() -> Self {
        Self {
            intercept: REFERENCE_INTERCEPT,
            beta: REFERENCE_BETA,
        }
    }
}

impl CalibrationTruth {
    pub fn calibration(&self) -> Result<ParetoCalibration> {
        ParetoCalibration::new(self.intercept, self.beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    /// First observation time, RFC 3339.
    pub start: String,
    pub days: u32,
    pub slots_per_day: u32,
    pub groups: Vec<GroupTemplate>,
    /// Unrelated standalone products with constant prices.
    pub background_products: usize,
    /// Background products draw their typical rank log-uniformly here.
    pub background_rank_range: (f64, f64),
    pub price: PriceProcess,
    pub controls: ControlProcess,
    /// Standard deviation of the log-demand noise.
    pub noise_sigma: f64,
    pub rank_policy: RankPolicy,
    pub half_life_hours: f64,
    pub legacy_tiers: LegacyTiers,
    /// Days of purchase history simulated before the first observation so
    /// decayed scores start near their steady state.
    pub burn_in_days: u32,
    pub calibration: CalibrationTruth,
    /// Per-observation probability that one field (price or rank) is lost.
    pub drop_rate: f64,
    pub round_ranks: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            start: "2024-01-01T00:00:00Z".into(),
            days: 100,
            slots_per_day: 3,
            groups: Vec::new(),
            background_products: 0,
            background_rank_range: (20.0, 3000.0),
            price: PriceProcess::default(),
            controls: ControlProcess::default(),
            noise_sigma: 0.0,
            rank_policy: RankPolicy::DirectPareto,
            half_life_hours: 24.0,
            legacy_tiers: LegacyTiers::default(),
            burn_in_days: 7,
            calibration: CalibrationTruth::default(),
            drop_rate: 0.0,
            round_ranks: true,
        }
    }
}

impl SimConfig {
    fn start_time(&self) -> Result<DateTime<Utc>> {
        parse_timestamp(&self.start).map_err(Error::InvalidInput)
    }

    pub fn slot_seconds(&self) -> i64 {
        86_400 / i64::from(self.slots_per_day)
    }

    pub fn n_slots(&self) -> usize {
        self.days as usize * self.slots_per_day as usize
    }

    fn check(&self) -> Result<()> {
        if self.days == 0 || self.slots_per_day == 0 || 86_400 % self.slots_per_day != 0 {
            return Err(Error::InvalidInput("days and slots_per_day must be positive; slots must divide a day".into()));
        }
        if self.groups.is_empty() && self.background_products == 0 {
            return Err(Error::InvalidInput("no products to simulate".into()));
        }
        if !(0.0..1.0).contains(&self.drop_rate) || !(self.noise_sigma >= 0.0) || !(self.half_life_hours > 0.0) {
            return Err(Error::InvalidInput("drop_rate in [0,1), noise_sigma >= 0, half_life_hours > 0".into()));
        }
        let (lo, hi) = self.background_rank_range;
        if !(lo >= 1.0 && hi >= lo) {
            return Err(Error::InvalidInput("background_rank_range must satisfy 1 <= low <= high".into()));
        }
        self.calibration.calibration()?;
        let mut seen = std::collections::BTreeSet::new();
        for g in &self.groups {
            g.check()?;
            for m in &g.members {
                if !seen.insert(m.product_id.clone()) {
                    return Err(Error::DuplicateProduct(m.product_id.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Stable 64-bit FNV-1a, used to derive per-product random streams.
fn fnv1a(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (k, p) in parts.iter().enumerate() {
        if k > 0 {
            h ^= 0x1f;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        for b in p.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Random stream for one `(product, purpose)` pair.
pub fn substream(seed: u64, product_id: &str, purpose: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(&[product_id, purpose]));
    rng
}

fn cents(p: f64) -> f64 {
    ((p * 100.0).round() / 100.0).max(0.01)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

/// Fixed point of the first-order conditions under constant-elasticity
/// demand `Q_a(p) = Q0_a prod_b (p_b / p0_b)^{eta_ab}`: iterate
/// `m = -(N')^{-1} s(p)`, `L = m / s`, `p <- c / (1 - L)` with damping.
pub fn optimal_prices(
    costs: &[f64],
    elasticities: &DMatrix<f64>,
    anchor_prices: &[f64],
    base_quantities: &[f64],
) -> Result<Vec<f64>> {
    let n = costs.len();
    if elasticities.nrows() != n || anchor_prices.len() != n || base_quantities.len() != n {
        return Err(Error::Dimension("costs, elasticities and anchors differ in size".into()));
    }
    let members: Vec<ProfitMember> = (0..n)
        .map(|i| ProfitMember {
            product_id: ProductId::new(format!("m{i}")),
            price: anchor_prices[i],
            cost: costs[i],
            quantity: base_quantities[i],
        })
        .collect();
    let anchor = ProfitModel::new(members, elasticities.clone(), 1.0)?;
    let nt = elasticities.transpose();
    let damping = 0.5;
    let mut p = anchor_prices.to_vec();
    for _ in 0..20_000 {
        let q = anchor.local_quantities(&p);
        let revenue: Vec<f64> = p.iter().zip(&q).map(|(p, q)| p * q).collect();
        let total: f64 = revenue.iter().sum();
        let s: Vec<f64> = revenue.iter().map(|r| r / total).collect();
        let rhs: Vec<f64> = s.iter().map(|v| -v).collect();
        let m = solve_linear(&nt, &rhs)?.x;
        let mut change = 0.0_f64;
        for i in 0..n {
            let lerner = m[i] / s[i];
            if !(lerner < 1.0) {
                return Err(Error::Infeasible(format!("Lerner index {lerner} >= 1 during the price search")));
            }
            let target = costs[i] / (1.0 - lerner);
            let next = (1.0 - damping) * p[i] + damping * target;
            if !(next > 0.0 && next.is_finite()) {
                return Err(Error::Infeasible("price search diverged".into()));
            }
            change = change.max(((next - p[i]) / p[i]).abs());
            p[i] = next;
        }
        if change < 1e-14 {
            break;
        }
    }
    if let Some(i) = (0..n).find(|&i| p[i] <= costs[i]) {
        return Err(Error::Infeasible(format!(
            "stationary point prices member {i} at or below cost; substitution outweighs own-price response"
        )));
    }
    let at = anchor.moved_to(&p)?;
    let worst = normalized_gradient(&at)?.into_iter().fold(0.0_f64, |a, g| a.max(g.abs()));
    if worst > 1e-9 {
        return Err(Error::Infeasible(format!(
            "price search stopped with normalized gradient {worst:e}"
        )));
    }
    Ok(p)
}

/// Ranking state carried across observation times.
#[derive(Debug, Clone)]
pub struct Ranker {
    pub policy: RankPolicy,
    pub tiers: LegacyTiers,
    pub calibration: ParetoCalibration,
    pub round: bool,
    ranks: Vec<f64>,
    last: Option<(i64, i64, i64)>,
}

impl Ranker {
    pub fn new(policy: RankPolicy, tiers: LegacyTiers, calibration: ParetoCalibration, round: bool) -> Self {
        Self {
            policy,
            tiers,
            calibration,
            round,
            ranks: Vec::new(),
            last: None,
        }
    }

    pub fn ranks(&self) -> &[f64] {
        &self.ranks
    }
}

fn order_positions(ids: &[ProductId], scores: &[f64], subset: &[usize]) -> Vec<usize> {
    let mut order = subset.to_vec();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| ids[a].cmp(&ids[b])));
    order
}

/// Ranks for every product at `time`. For the score policies `scores` are
/// decayed purchase counts; for `DirectPareto` they are current weekly
/// demand.
pub fn rank_policy_apply(ranker: &mut Ranker, ids: &[ProductId], scores: &[f64], time: DateTime<Utc>) -> Vec<f64> {
    let n = ids.len();
    match ranker.policy {
        RankPolicy::DirectPareto => {
            ranker.ranks = scores
                .iter()
                .map(|q| {
                    let r = quantity_to_rank(*q, &ranker.calibration);
                    if ranker.round {
                        r.round().max(1.0)
                    } else {
                        r
                    }
                })
                .collect();
        }
        RankPolicy::EventDecay => {
            let all: Vec<usize> = (0..n).collect();
            ranker.ranks = vec![0.0; n];
            for (pos, i) in order_positions(ids, scores, &all).into_iter().enumerate() {
                ranker.ranks[i] = (pos + 1) as f64;
            }
        }
        RankPolicy::LegacyThreeTier => {
            let secs = time.timestamp();
            let hour = secs.div_euclid(3600);
            let day = secs.div_euclid(86_400);
            let slow = day.div_euclid(ranker.tiers.slow_period_days.max(1));
            let due: Vec<usize> = match ranker.last {
                Some((lh, ld, ls)) if ranker.ranks.len() == n => (0..n)
                    .filter(|&i| {
                        let r = ranker.ranks[i];
                        if r <= ranker.tiers.hourly_max_rank {
                            hour != lh
                        } else if r <= ranker.tiers.daily_max_rank {
                            day != ld
                        } else {
                            slow != ls
                        }
                    })
                    .collect(),
                _ => {
                    ranker.ranks = (1..=n).map(|r| r as f64).collect();
                    (0..n).collect()
                }
            };
            let mut slots: Vec<f64> = due.iter().map(|&i| ranker.ranks[i]).collect();
            slots.sort_by(f64::total_cmp);
            for (i, r) in order_positions(ids, scores, &due).into_iter().zip(slots) {
                ranker.ranks[i] = r;
            }
            ranker.last = Some((hour, day, slow));
        }
    }
    ranker.ranks.clone()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub product_id: ProductId,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DroppedField {
    AmazonPrice,
    SalesRank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub product_id: ProductId,
    pub timestamp: DateTime<Utc>,
    pub field: DroppedField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductTruth {
    pub product_id: ProductId,
    pub group_id: Option<String>,
    pub phi: f64,
    pub gammas: BTreeMap<ProductId, f64>,
    pub lambda: f64,
    pub controls: BTreeMap<String, f64>,
    /// Fixed effect `a_i` of the latent log rank.
    pub intercept: f64,
    pub cost: f64,
    pub start_price: f64,
    pub optimal_price: Option<f64>,
    /// Point of the template demand surface; `None` for background products.
    pub anchor_price: Option<f64>,
    pub base_quantity: Option<f64>,
    /// Means over the horizon of the posted price and of true weekly demand.
    pub mean_price: f64,
    pub mean_quantity: f64,
    /// Expected purchases over the observed horizon.
    pub expected_events: f64,
    #[serde(skip)]
    pub quantities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTruth {
    pub group_id: String,
    pub relation: Relation,
    pub members: Vec<ProductId>,
    /// Demand elasticities, row `i` column `j` = `d ln Q_i / d ln p_j`.
    pub elasticities: Vec<Vec<f64>>,
    pub optimal_prices: Option<Vec<f64>>,
    /// Normalized gradients at the horizon-mean prices and quantities with
    /// true costs and elasticities.
    pub normalized_gradients: Vec<f64>,
    pub verdicts: Vec<Classification>,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub calibration: CalibrationTruth,
    pub rank_policy: RankPolicy,
    pub noise_sigma: f64,
    pub products: Vec<ProductTruth>,
    pub groups: Vec<GroupTruth>,
    pub drops: Vec<DropRecord>,
    #[serde(skip)]
    pub events: Vec<SimEvent>,
}

impl GroundTruth {
    pub fn product(&self, id: &ProductId) -> Option<&ProductTruth> {
        self.products.iter().find(|p| &p.product_id == id)
    }

    pub fn group(&self, group_id: &str) -> Option<&GroupTruth> {
        self.groups.iter().find(|g| g.group_id == group_id)
    }
}

/// Simulated panel before validation, plus its catalog and ground truth.
#[derive(Debug, Clone)]
pub struct Market {
    pub observations: Vec<PanelObservation>,
    pub catalog: Catalog,
    pub truth: GroundTruth,
}

/// Everything known about one product before ranks are assigned.
struct Plan {
    id: ProductId,
    group: Option<usize>,
    position: usize,
    release: NaiveDate,
    rating: f64,
    list_price: f64,
    prices: Vec<f64>,
    marketplace: Vec<Option<f64>>,
    reviews: Vec<u32>,
}

struct Spec {
    id: ProductId,
    group: Option<usize>,
    position: usize,
    start_price: f64,
    dynamic: bool,
}

fn plan_product(cfg: &SimConfig, spec: &Spec, start: DateTime<Utc>) -> Plan {
    let id = spec.id.as_str();
    let n = cfg.n_slots();

    let mut rng = substream(cfg.seed, id, "price");
    let p0 = cents(spec.start_price);
    let mut p = p0;
    let mut prices = Vec::with_capacity(n);
    for _ in 0..n {
        if spec.dynamic && rng.random::<f64>() < cfg.price.change_prob {
            let pull = -cfg.price.reversion * (p / p0).ln();
            p = cents(p * (pull + cfg.price.step_sigma * normal(&mut rng)).exp());
        }
        prices.push(p);
    }
    let max_price = prices.iter().copied().fold(0.0, f64::max);

    let mut rng = substream(cfg.seed, id, "marketplace");
    let marketplace = prices
        .iter()
        .map(|p| {
            cfg.price.marketplace.then(|| {
                cents(p * (1.0 - cfg.price.marketplace_discount) * (cfg.price.marketplace_sigma * normal(&mut rng)).exp())
            })
        })
        .collect();

    let mut rng = substream(cfg.seed, id, "controls");
    let age = rng.random_range(cfg.controls.min_age_days..=cfg.controls.max_age_days.max(cfg.controls.min_age_days));
    let release = (start - Duration::days(i64::from(age))).date_naive();
    let rating = (rng.random_range(30..=50) as f64) / 10.0;
    let mut count: u32 = rng.random_range(5..=500);
    let reviews = (0..n)
        .map(|_| {
            count += poisson(&mut rng, cfg.controls.review_rate) as u32;
            count
        })
        .collect();

    Plan {
        id: spec.id.clone(),
        group: spec.group,
        position: spec.position,
        release,
        rating,
        list_price: cents(max_price * 1.25),
        prices,
        marketplace,
        reviews,
    }
}

fn control_values(plan: &Plan, slot: usize, t: DateTime<Utc>) -> [f64; 3] {
    let days = f64::from(days_since_release(&t, plan.release).unwrap_or(0));
    [(days + 1.0).ln(), plan.rating, (f64::from(plan.reviews[slot]) + 1.0).ln()]
}

pub fn generate_market(cfg: &SimConfig) -> Result<Market> {
    cfg.check()?;
    let start = cfg.start_time()?;
    let cal = cfg.calibration.calibration()?;
    let beta = cfg.calibration.beta;
    let n_slots = cfg.n_slots();
    let slot = Duration::seconds(cfg.slot_seconds());
    let times: Vec<DateTime<Utc>> = (0..n_slots).map(|s| start + slot * s as i32).collect();

    // optimal and starting prices per group
    let mut group_optima = Vec::with_capacity(cfg.groups.len());
    let mut specs = Vec::new();
    for (g, tpl) in cfg.groups.iter().enumerate() {
        let costs: Vec<f64> = tpl.members.iter().map(|m| m.cost).collect();
        let anchors: Vec<f64> = tpl.members.iter().map(|m| m.anchor_price).collect();
        let base: Vec<f64> = tpl.members.iter().map(|m| m.base_quantity).collect();
        let optimum = optimal_prices(&costs, &tpl.elasticities(beta), &anchors, &base);
        for (i, m) in tpl.members.iter().enumerate() {
            let start_price = match (m.start_price, &optimum) {
                (Some(p), _) => p,
                (None, Ok(opt)) => opt[i] * m.price_factor,
                (None, Err(e)) => {
                    return Err(Error::Infeasible(format!(
                        "group `{}` has no start_price for `{}` and no optimum: {e}",
                        tpl.group_id, m.product_id
                    )))
                }
            };
            specs.push(Spec {
                id: ProductId::new(m.product_id.clone()),
                group: Some(g),
                position: i,
                start_price,
                dynamic: true,
            });
        }
        group_optima.push(optimum.ok());
    }
    let mut background_rank = Vec::with_capacity(cfg.background_products);
    for b in 0..cfg.background_products {
        let id = format!("bg-{:05}", b + 1);
        let mut rng = substream(cfg.seed, &id, "base");
        let (lo, hi) = cfg.background_rank_range;
        background_rank.push((lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp());
        let price = cents(rng.random_range(10.0..200.0));
        specs.push(Spec {
            id: ProductId::new(id),
            group: None,
            position: b,
            start_price: price,
            dynamic: false,
        });
    }

    let plans: Vec<Plan> = specs.par_iter().map(|s| plan_product(cfg, s, start)).collect();
    let index: BTreeMap<&ProductId, usize> = plans.iter().enumerate().map(|(i, p)| (&p.id, i)).collect();

    // latent log rank fixed effects, chosen so demand at anchor prices and
    // starting controls equals the base quantity
    let intercepts: Vec<f64> = plans
        .iter()
        .map(|plan| match plan.group {
            Some(g) => {
                let tpl = &cfg.groups[g];
                let i = plan.position;
                let m = &tpl.members[i];
                let log_rank = ((m.base_quantity + 1.0).ln() - cal.intercept) / beta;
                let mut price_part = tpl.phi[i] * m.anchor_price.ln();
                for (j, other) in tpl.members.iter().enumerate() {
                    if j != i {
                        price_part += tpl.gamma[i][j] * other.anchor_price.ln();
                    }
                }
                if cfg.price.marketplace {
                    price_part += tpl.lambda[i] * (m.anchor_price * (1.0 - cfg.price.marketplace_discount)).ln();
                }
                let x = control_values(plan, 0, start);
                let omega = [tpl.omega.days_release, tpl.omega.avg_rating, tpl.omega.n_reviews];
                log_rank - price_part - omega.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
            }
            None => background_rank[plan.position].ln(),
        })
        .collect();

    // latent log ranks and weekly demand per slot
    let sigma_rank = cfg.noise_sigma / beta.abs();
    let latent: Vec<(Vec<f64>, Vec<f64>)> = plans
        .par_iter()
        .enumerate()
        .map(|(k, plan)| {
            let mut rng = substream(cfg.seed, plan.id.as_str(), "demand");
            let mut log_ranks = Vec::with_capacity(n_slots);
            for (s, t) in times.iter().enumerate() {
                let mut v = intercepts[k];
                if let Some(g) = plan.group {
                    let tpl = &cfg.groups[g];
                    let i = plan.position;
                    v += tpl.phi[i] * plan.prices[s].ln();
                    for (j, other) in tpl.members.iter().enumerate() {
                        if j != i {
                            let o = &plans[index[&ProductId::new(other.product_id.clone())]];
                            v += tpl.gamma[i][j] * o.prices[s].ln();
                        }
                    }
                    if let Some(ph) = plan.marketplace[s] {
                        v += tpl.lambda[i] * ph.ln();
                    }
                    let x = control_values(plan, s, *t);
                    v += tpl.omega.days_release * x[0] + tpl.omega.avg_rating * x[1] + tpl.omega.n_reviews * x[2];
                }
                if sigma_rank > 0.0 {
                    v += sigma_rank * normal(&mut rng);
                }
                log_ranks.push(v);
            }
            let q = log_ranks
                .iter()
                .map(|lr| (cal.intercept + beta * lr).exp() - 1.0)
                .collect();
            (log_ranks, q)
        })
        .collect();

    // purchase events: Poisson at rate Q per week, placed inside the slot
    // that ends at each observation; the burn-in repeats the first slot
    let slot_hours = cfg.slot_seconds() as f64 / 3600.0;
    let burn_slots = cfg.burn_in_days as usize * cfg.slots_per_day as usize;
    let events_per_product: Vec<Vec<DateTime<Utc>>> = plans
        .par_iter()
        .enumerate()
        .map(|(k, plan)| {
            let mut rng = substream(cfg.seed, plan.id.as_str(), "events");
            let q = &latent[k].1;
            let mut out = Vec::new();
            for s in 0..burn_slots + n_slots {
                let (qs, end) = if s < burn_slots {
                    (q[0], start - slot * (burn_slots - s - 1) as i32 - slot)
                } else {
                    (q[s - burn_slots], times[s - burn_slots])
                };
                let count = poisson(&mut rng, qs.max(0.0) * slot_hours / HOURS_PER_WEEK);
                let mut offsets: Vec<i64> = (0..count)
                    .map(|_| rng.random_range(0..cfg.slot_seconds()))
                    .collect();
                offsets.sort_unstable();
                out.extend(offsets.into_iter().map(|o| end - Duration::seconds(o)));
            }
            out.sort();
            out
        })
        .collect();

    // observed ranks
    let ids: Vec<ProductId> = plans.iter().map(|p| p.id.clone()).collect();
    let mut ranker = Ranker::new(cfg.rank_policy, cfg.legacy_tiers, cal, cfg.round_ranks);
    let mut ranks = vec![vec![0.0; n_slots]; plans.len()];
    match cfg.rank_policy {
        RankPolicy::DirectPareto => {
            for (k, (lr, _)) in latent.iter().enumerate() {
                for s in 0..n_slots {
                    let r = lr[s].exp().max(1.0);
                    ranks[k][s] = if cfg.round_ranks { r.round().max(1.0) } else { r };
                }
            }
        }
        RankPolicy::EventDecay | RankPolicy::LegacyThreeTier => {
            let decay = std::f64::consts::LN_2 / (cfg.half_life_hours * 3600.0);
            let mut score = vec![0.0; plans.len()];
            let mut cursor = vec![0usize; plans.len()];
            let mut last = start - slot * (burn_slots as i32 + 1);
            for (s, t) in times.iter().enumerate() {
                let dt = (*t - last).num_seconds() as f64;
                for k in 0..plans.len() {
                    score[k] *= (-decay * dt).exp();
                    let ev = &events_per_product[k];
                    while cursor[k] < ev.len() && ev[cursor[k]] <= *t {
                        score[k] += (-decay * (*t - ev[cursor[k]]).num_seconds() as f64).exp();
                        cursor[k] += 1;
                    }
                }
                last = *t;
                let r = rank_policy_apply(&mut ranker, &ids, &score, *t);
                for k in 0..plans.len() {
                    ranks[k][s] = r[k];
                }
            }
        }
    }

    // observations with dropped fields
    let per_product: Vec<(Vec<PanelObservation>, Vec<DropRecord>)> = plans
        .par_iter()
        .enumerate()
        .map(|(k, plan)| {
            let mut rng = substream(cfg.seed, plan.id.as_str(), "drops");
            let mut obs = Vec::with_capacity(n_slots);
            let mut drops = Vec::new();
            for (s, t) in times.iter().enumerate() {
                let mut o = PanelObservation {
                    product_id: plan.id.clone(),
                    timestamp: *t,
                    sales_rank: Some(ranks[k][s]),
                    amazon_price: Some(plan.prices[s]),
                    list_price: plan.list_price,
                    marketplace_new_price: plan.marketplace[s],
                    avg_rating: Some(plan.rating),
                    n_reviews: plan.reviews[s],
                };
                if cfg.drop_rate > 0.0 && rng.random::<f64>() < cfg.drop_rate {
                    let field = if rng.random::<bool>() {
                        o.amazon_price = None;
                        DroppedField::AmazonPrice
                    } else {
                        o.sales_rank = None;
                        DroppedField::SalesRank
                    };
                    drops.push(DropRecord {
                        product_id: plan.id.clone(),
                        timestamp: *t,
                        field,
                    });
                }
                obs.push(o);
            }
            (obs, drops)
        })
        .collect();

    let mut observations = Vec::with_capacity(plans.len() * n_slots);
    let mut drops = Vec::new();
    let mut products = Vec::with_capacity(plans.len());
    let mut events = Vec::new();
    let horizon_start = start - slot;
    for (k, plan) in plans.iter().enumerate() {
        let (obs, d) = &per_product[k];
        observations.extend(obs.iter().cloned());
        drops.extend(d.iter().cloned());
        events.extend(
            events_per_product[k]
                .iter()
                .filter(|t| **t > horizon_start)
                .map(|t| SimEvent {
                    product_id: plan.id.clone(),
                    timestamp: *t,
                }),
        );
        let q: Vec<f64> = latent[k].1.iter().map(|q| q.max(0.0)).collect();
        let (phi, gammas, lambda, controls, cost, optimal) = match plan.group {
            Some(g) => {
                let tpl = &cfg.groups[g];
                let i = plan.position;
                let gammas = tpl
                    .members
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(j, m)| (ProductId::new(m.product_id.clone()), tpl.gamma[i][j]))
                    .collect();
                let controls = BTreeMap::from([
                    ("ln_days_release".to_string(), tpl.omega.days_release),
                    ("avg_rating".to_string(), tpl.omega.avg_rating),
                    ("ln_n_reviews".to_string(), tpl.omega.n_reviews),
                ]);
                let lambda = if cfg.price.marketplace { tpl.lambda[i] } else { 0.0 };
                let opt = group_optima[g].as_ref().map(|o| o[i]);
                (tpl.phi[i], gammas, lambda, controls, tpl.members[i].cost, opt)
            }
            None => (0.0, BTreeMap::new(), 0.0, BTreeMap::new(), 0.0, None),
        };
        products.push(ProductTruth {
            product_id: plan.id.clone(),
            group_id: plan.group.map(|g| cfg.groups[g].group_id.clone()),
            phi,
            gammas,
            lambda,
            controls,
            intercept: intercepts[k],
            cost,
            start_price: plan.prices.first().copied().unwrap_or(0.0),
            optimal_price: optimal,
            anchor_price: plan.group.map(|g| cfg.groups[g].members[plan.position].anchor_price),
            base_quantity: plan.group.map(|g| cfg.groups[g].members[plan.position].base_quantity),
            mean_price: plan.prices.iter().sum::<f64>() / n_slots as f64,
            mean_quantity: q.iter().sum::<f64>() / n_slots as f64,
            expected_events: q.iter().sum::<f64>() * slot_hours / HOURS_PER_WEEK,
            quantities: q,
        });
    }
    observations.sort_by(|a, b| (&a.product_id, a.timestamp).cmp(&(&b.product_id, b.timestamp)));
    drops.sort_by(|a, b| (&a.product_id, a.timestamp).cmp(&(&b.product_id, b.timestamp)));
    events.sort_by(|a, b| (&a.product_id, a.timestamp).cmp(&(&b.product_id, b.timestamp)));

    let mut groups = Vec::with_capacity(cfg.groups.len());
    for (g, tpl) in cfg.groups.iter().enumerate() {
        let members: Vec<ProductId> = tpl.members.iter().map(|m| ProductId::new(m.product_id.clone())).collect();
        let n_mat = tpl.elasticities(beta);
        let model = ProfitModel::new(
            members
                .iter()
                .map(|id| {
                    let t = &products[index[id]];
                    ProfitMember {
                        product_id: id.clone(),
                        price: t.mean_price,
                        cost: t.cost,
                        quantity: t.mean_quantity,
                    }
                })
                .collect(),
            n_mat.clone(),
            1.0,
        )?;
        let verdicts = classify(&model, DEFAULT_TOLERANCE)?;
        groups.push(GroupTruth {
            group_id: tpl.group_id.clone(),
            relation: tpl.relation,
            members,
            elasticities: (0..n_mat.nrows())
                .map(|i| (0..n_mat.ncols()).map(|j| n_mat[(i, j)]).collect())
                .collect(),
            optimal_prices: group_optima[g].clone(),
            normalized_gradients: verdicts.iter().map(|v| v.normalized_gradient).collect(),
            verdicts: verdicts.iter().map(|v| v.classification).collect(),
            tolerance: DEFAULT_TOLERANCE,
        });
    }

    let catalog = build_catalog(cfg, &plans)?;
    Ok(Market {
        observations,
        catalog,
        truth: GroundTruth {
            seed: cfg.seed,
            calibration: cfg.calibration,
            rank_policy: cfg.rank_policy,
            noise_sigma: cfg.noise_sigma,
            products,
            groups,
            drops,
            events,
        },
    })
}

fn build_catalog(cfg: &SimConfig, plans: &[Plan]) -> Result<Catalog> {
    let products = plans.iter().map(|plan| match plan.group {
        Some(g) => {
            let tpl = &cfg.groups[g];
            let kind = tpl.kind(plan.position);
            let components = if kind == ProductKind::Bundle {
                tpl.members[1..].iter().map(|m| ProductId::new(m.product_id.clone())).collect()
            } else {
                Vec::new()
            };
            Product {
                product_id: plan.id.clone(),
                title: format!("Simulated {}", plan.id),
                category: tpl.category,
                release_date: plan.release,
                kind,
                group_id: Some(tpl.group_id.clone()),
                bundle_components: components,
            }
        }
        None => Product {
            product_id: plan.id.clone(),
            title: format!("Simulated {}", plan.id),
            category: Category::ALL[plan.position % Category::ALL.len()],
            release_date: plan.release,
            kind: ProductKind::Standalone,
            group_id: None,
            bundle_components: Vec::new(),
        },
    });
    Catalog::from_products(products)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthGroupReport {
    pub group_id: String,
    pub members: Vec<ProductId>,
    pub costs: Vec<f64>,
    pub optimal_prices: Option<Vec<f64>>,
    /// Largest `|normalized gradient|` at the optimal prices.
    pub max_gradient_at_optimum: Option<f64>,
    pub verdicts: Vec<Classification>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthReport {
    pub calibration: CalibrationTruth,
    pub groups: Vec<TruthGroupReport>,
    /// True when every group with an optimum has gradients within 1e-9.
    pub optimum_verified: bool,
}

fn missing_anchor(id: &ProductId) -> Error {
    Error::InvalidInput(format!("ground truth lacks the demand anchor of `{id}`"))
}

/// True parameters and optimal prices, with the first-order conditions
/// re-checked at the optimum.
pub fn ground_truth_report(truth: &GroundTruth) -> Result<TruthReport> {
    let mut groups = Vec::with_capacity(truth.groups.len());
    let mut verified = true;
    for g in &truth.groups {
        let members: Vec<&ProductTruth> = g
            .members
            .iter()
            .map(|id| {
                truth
                    .product(id)
                    .ok_or_else(|| Error::InvalidInput(format!("ground truth lacks `{id}`")))
            })
            .collect::<Result<_>>()?;
        let n = members.len();
        let elasticities = DMatrix::from_fn(n, n, |i, j| g.elasticities[i][j]);
        let max_gradient = match &g.optimal_prices {
            Some(opt) => {
                let anchor = ProfitModel::new(
                    members
                        .iter()
                        .map(|t| {
                            Ok(ProfitMember {
                                product_id: t.product_id.clone(),
                                price: t.anchor_price.ok_or_else(|| missing_anchor(&t.product_id))?,
                                cost: t.cost,
                                quantity: t.base_quantity.ok_or_else(|| missing_anchor(&t.product_id))?,
                            })
                        })
                        .collect::<Result<_>>()?,
                    elasticities.clone(),
                    1.0,
                )?;
                let at = anchor.moved_to(opt)?;
                let worst = normalized_gradient(&at)?.into_iter().fold(0.0_f64, |a, v| a.max(v.abs()));
                verified &= worst <= 1e-9;
                Some(worst)
            }
            None => None,
        };
        groups.push(TruthGroupReport {
            group_id: g.group_id.clone(),
            members: g.members.clone(),
            costs: members.iter().map(|t| t.cost).collect(),
            optimal_prices: g.optimal_prices.clone(),
            max_gradient_at_optimum: max_gradient,
            verdicts: g.verdicts.clone(),
        });
    }
    Ok(TruthReport {
        calibration: truth.calibration,
        groups,
        optimum_verified: verified,
    })
}
