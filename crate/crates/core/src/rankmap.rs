//! Sales rank to demand: purchase-spike detection on hourly rank series,
//! weekly (demand, rank) pairs, and the power-law fit
//! `ln(Q + 1) = intercept + beta * ln(rank)`.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use std::io::{Read, Write};
use std::path::Path;

use crate::dataset::{format_timestamp, parse_timestamp, PanelObservation, ProductId};
use crate::error::{Error, Result};
use crate::statcore::{ols_fit, DesignMatrix};

/// Reference constants for software titles. The intercept is read as
/// `ln(alpha)`; see [`AlphaReading`].
pub const REFERENCE_INTERCEPT: f64 = 8.352;
pub const REFERENCE_BETA: f64 = -0.828;
pub const REFERENCE_SE_INTERCEPT: f64 = 0.042;
pub const REFERENCE_SE_BETA: f64 = 0.032;

/// Reference (average weekly rank, weekly units) checkpoints that accompany
/// the reference constants. They are not consistent with them: a
/// least-squares line through them in `(ln rank, ln(Q+1))` has slope
/// about -0.71.
pub const REFERENCE_CHECKPOINTS: [(f64, f64); 3] = [(3100.0, 2.0), (440.0, 10.0), (150.0, 25.0)];

pub const DEFAULT_PLAUSIBILITY_BOUND: f64 = 1000.0;

/// How the reference `alpha = 8.352` is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaReading {
    /// 8.352 is the fitted intercept `ln(alpha)`.
    #[default]
    LogIntercept,
    /// 8.352 is `alpha` itself, so the intercept is `ln(8.352)`.
    Level,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoCalibration {
    /// Natural-log intercept, `ln(alpha)`.
    pub intercept: f64,
    pub beta: f64,
    pub se_intercept: f64,
    pub se_beta: f64,
    pub n_pairs: usize,
}

impl ParetoCalibration {
    /// A calibration with known constants and no sampling error.
    pub fn new(intercept: f64, beta: f64) -> Result<Self> {
        if !(beta < 0.0) || !intercept.is_finite() {
            return Err(Error::NonNegativeSlope(beta));
        }
        Ok(Self {
            intercept,
            beta,
            se_intercept: 0.0,
            se_beta: 0.0,
            n_pairs: 0,
        })
    }

    pub fn reference(reading: AlphaReading) -> Self {
        let intercept = match reading {
            AlphaReading::LogIntercept => REFERENCE_INTERCEPT,
            AlphaReading::Level => REFERENCE_INTERCEPT.ln(),
        };
        Self {
            intercept,
            beta: REFERENCE_BETA,
            se_intercept: REFERENCE_SE_INTERCEPT,
            se_beta: REFERENCE_SE_BETA,
            n_pairs: 0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.intercept.exp()
    }
}

/// Ranks of one product in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankSeries {
    pub product_id: ProductId,
    pub points: Vec<(DateTime<Utc>, f64)>,
}

impl RankSeries {
    /// Rows without a rank are skipped.
    pub fn from_observations(product_id: ProductId, rows: &[PanelObservation]) -> Self {
        let points = rows
            .iter()
            .filter_map(|o| o.sales_rank.map(|r| (o.timestamp, r)))
            .collect();
        Self { product_id, points }
    }

    fn check_increasing(&self) -> Result<()> {
        if self.points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidInput(format!(
                "rank series for `{}` is not strictly increasing in time",
                self.product_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    /// Minimum relative improvement `(before - after) / before`.
    pub theta: f64,
    /// Minimum absolute improvement in rank positions.
    pub min_abs_drop: f64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self {
            theta: 0.30,
            min_abs_drop: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurchaseEvent {
    pub product_id: ProductId,
    pub timestamp: DateTime<Utc>,
    pub rank_before: f64,
    pub rank_after: f64,
    pub units: u32,
}

/// One event of one unit per qualifying spike.
pub fn detect_purchases(series: &RankSeries, params: &DetectionParams) -> Result<Vec<PurchaseEvent>> {
    detect_purchases_with(series, params, |_, _| 1)
}

/// Like [`detect_purchases`] with a caller-supplied units rule, called as
/// `units(rank_before, rank_after)`; zero-unit spikes are discarded.
pub fn detect_purchases_with<F>(
    series: &RankSeries,
    params: &DetectionParams,
    units: F,
) -> Result<Vec<PurchaseEvent>>
where
    F: Fn(f64, f64) -> u32,
{
    series.check_increasing()?;
    let mut events = Vec::new();
    for w in series.points.windows(2) {
        let (before, (t, after)) = (w[0].1, w[1]);
        let drop = before - after;
        if drop >= params.min_abs_drop && drop / before >= params.theta {
            let u = units(before, after);
            if u > 0 {
                events.push(PurchaseEvent {
                    product_id: series.product_id.clone(),
                    timestamp: t,
                    rank_before: before,
                    rank_after: after,
                    units: u,
                });
            }
        }
    }
    Ok(events)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandRankPair {
    pub product_id: ProductId,
    pub week: u32,
    /// Units in the week.
    pub demand: f64,
    pub avg_rank: f64,
    /// Demand outside `[0, plausibility bound]`.
    pub implausible: bool,
}

const WEEK: i64 = 7 * 86_400;

/// Mean rank for each complete seven-day window counted from the first
/// observation; a trailing partial week is dropped.
pub fn weekly_mean_ranks(series: &RankSeries) -> Vec<(u32, f64)> {
    let Some(&(start, _)) = series.points.first() else {
        return Vec::new();
    };
    let weeks = complete_weeks(series);
    let mut sums = vec![(0.0, 0usize); weeks as usize];
    for (t, r) in &series.points {
        let w = week_of(start, *t);
        if let Some(s) = sums.get_mut(w as usize) {
            s.0 += r;
            s.1 += 1;
        }
    }
    sums.into_iter()
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(w, (s, n))| (w as u32, s / n as f64))
        .collect()
}

fn week_of(start: DateTime<Utc>, t: DateTime<Utc>) -> i64 {
    (t - start).num_seconds().div_euclid(WEEK)
}

fn complete_weeks(series: &RankSeries) -> u32 {
    let pts = &series.points;
    if pts.len() < 2 {
        return 0;
    }
    let step = pts
        .windows(2)
        .map(|w| w[1].0 - w[0].0)
        .min()
        .unwrap_or_else(Duration::zero);
    let span = pts[pts.len() - 1].0 - pts[0].0 + step;
    (span.num_seconds() / WEEK).max(0) as u32
}

/// Per product-week: demand is the sum of event units, rank the mean of the
/// observed ranks. Weeks without events are kept with zero demand.
pub fn weekly_aggregate(events: &[PurchaseEvent], series: &[RankSeries]) -> Vec<DemandRankPair> {
    weekly_aggregate_bounded(events, series, DEFAULT_PLAUSIBILITY_BOUND)
}

pub fn weekly_aggregate_bounded(
    events: &[PurchaseEvent],
    series: &[RankSeries],
    bound: f64,
) -> Vec<DemandRankPair> {
    let logged: Vec<LoggedPurchase> = events
        .iter()
        .map(|e| LoggedPurchase {
            product_id: e.product_id.clone(),
            timestamp: e.timestamp,
            units: e.units,
        })
        .collect();
    weekly_aggregate_logged(&logged, series, bound)
}

/// A purchase known from a sales log rather than inferred from ranks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedPurchase {
    pub product_id: ProductId,
    pub timestamp: DateTime<Utc>,
    pub units: u32,
}

/// Weekly pairs from a purchase log, with the same week alignment as
/// [`weekly_aggregate`].
pub fn weekly_aggregate_logged(
    purchases: &[LoggedPurchase],
    series: &[RankSeries],
    bound: f64,
) -> Vec<DemandRankPair> {
    let mut by_product: BTreeMap<&ProductId, Vec<&LoggedPurchase>> = BTreeMap::new();
    for e in purchases {
        by_product.entry(&e.product_id).or_default().push(e);
    }
    let mut pairs = Vec::new();
    for s in series {
        let Some(&(start, _)) = s.points.first() else {
            continue;
        };
        let mut units: BTreeMap<i64, u32> = BTreeMap::new();
        for e in by_product.get(&s.product_id).into_iter().flatten() {
            *units.entry(week_of(start, e.timestamp)).or_default() += e.units;
        }
        for (week, avg_rank) in weekly_mean_ranks(s) {
            let demand = f64::from(units.get(&i64::from(week)).copied().unwrap_or(0));
            pairs.push(DemandRankPair {
                product_id: s.product_id.clone(),
                week,
                demand,
                avg_rank,
                implausible: !(0.0..=bound).contains(&demand),
            });
        }
    }
    pairs
}

/// Pairs weekly mean ranks with externally measured weekly demand (for
/// example a purchase log kept during a controlled experiment).
pub fn pairs_from_weekly_demand(
    series: &RankSeries,
    weekly_demand: &[f64],
    bound: f64,
) -> Vec<DemandRankPair> {
    weekly_mean_ranks(series)
        .into_iter()
        .filter_map(|(week, avg_rank)| {
            let demand = *weekly_demand.get(week as usize)?;
            Some(DemandRankPair {
                product_id: series.product_id.clone(),
                week,
                demand,
                avg_rank,
                implausible: !(0.0..=bound).contains(&demand),
            })
        })
        .collect()
}

pub const PURCHASE_LOG_HEADER: [&str; 3] = ["product_id", "timestamp", "units"];

pub fn load_purchase_log(path: &Path) -> Result<Vec<LoggedPurchase>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_purchase_log(file, path)
}

/// Strict reader: any malformed row is an error naming its row number.
pub fn read_purchase_log<R: Read>(reader: R, source: &Path) -> Result<Vec<LoggedPurchase>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(PURCHASE_LOG_HEADER) {
        return Err(Error::Header {
            path: source.to_path_buf(),
            expected: PURCHASE_LOG_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_err = |reason: String| Error::Row {
            path: source.to_path_buf(),
            row: i + 1,
            reason,
        };
        if rec.len() != 3 {
            return Err(row_err(format!("expected 3 fields, found {}", rec.len())));
        }
        let units: u32 = rec[2]
            .trim()
            .parse()
            .map_err(|_| row_err(format!("unparseable units `{}`", &rec[2])))?;
        if units == 0 {
            return Err(row_err("units must be at least 1".into()));
        }
        out.push(LoggedPurchase {
            product_id: ProductId::new(rec[0].trim()),
            timestamp: parse_timestamp(&rec[1]).map_err(row_err)?,
            units,
        });
    }
    Ok(out)
}

pub fn write_purchase_log<W: Write>(writer: W, purchases: &[LoggedPurchase]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PURCHASE_LOG_HEADER)?;
    for p in purchases {
        w.write_record([
            p.product_id.as_str().to_owned(),
            format_timestamp(&p.timestamp),
            p.units.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<purchase log>", e))?;
    Ok(())
}

/// OLS of `ln(Q + 1)` on `ln(rank)` with an intercept and HC0 errors.
pub fn fit_pareto(pairs: &[DemandRankPair]) -> Result<ParetoCalibration> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} demand/rank pairs; at least 3 required",
            pairs.len()
        )));
    }
    if pairs.iter().any(|p| p.avg_rank < 1.0 || p.demand < 0.0) {
        return Err(Error::InvalidInput("pair with rank < 1 or negative demand".into()));
    }
    let first = pairs[0].avg_rank;
    if pairs.iter().all(|p| p.avg_rank == first) {
        return Err(Error::Degenerate("all pairs share one rank".into()));
    }
    let rows: Vec<Vec<f64>> = pairs.iter().map(|p| vec![1.0, p.avg_rank.ln()]).collect();
    let y: Vec<f64> = pairs.iter().map(|p| (p.demand + 1.0).ln()).collect();
    let x = DesignMatrix::from_rows(&rows, vec!["intercept".into(), "ln_rank".into()])?;
    let fit = ols_fit(&x, &y)?;
    let beta = fit
        .coefficient("ln_rank")
        .ok_or_else(|| Error::Degenerate("rank column dropped".into()))?;
    if beta >= 0.0 {
        return Err(Error::NonNegativeSlope(beta));
    }
    Ok(ParetoCalibration {
        intercept: fit.coefficients[0],
        beta,
        se_intercept: fit.std_error("intercept").unwrap_or(0.0),
        se_beta: fit.std_error("ln_rank").unwrap_or(0.0),
        n_pairs: pairs.len(),
    })
}

/// `max(alpha * rank^beta - 1, 0)`.
pub fn rank_to_quantity(rank: f64, cal: &ParetoCalibration) -> Result<f64> {
    if !(rank >= 1.0) {
        return Err(Error::InvalidInput(format!("rank {rank} < 1")));
    }
    Ok(((cal.intercept + cal.beta * rank.ln()).exp() - 1.0).max(0.0))
}

/// Inverse of [`rank_to_quantity`], clamped to rank >= 1. Negative
/// quantities are treated as zero.
pub fn quantity_to_rank(quantity: f64, cal: &ParetoCalibration) -> f64 {
    let q = quantity.max(0.0);
    (((q + 1.0).ln() - cal.intercept) / cal.beta).exp().max(1.0)
}

/// Least-squares slope of `ln(Q + 1)` on `ln(rank)` through `(rank, Q)`
/// points.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| (p.1 + 1.0).ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
