//! Markups and marginal costs from the multi-product first-order conditions.
//!
//! With revenue shares `s` and elasticity matrix `N`, profit maximisation
//! over the group's prices gives `s + N' m = 0`, where `m_i` is product
//! `i`'s Lerner index times its share. Solving for `m` and dividing by `s`
//! yields Lerner indices, and `c_i = p_i (1 - L_i)`.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{PanelDataset, ProductId};
use crate::error::{Error, Result};
use crate::rankmap::{rank_to_quantity, ParetoCalibration};
use crate::statcore::solve_linear;

/// Relative tolerance on `||s + N'm||_inf` after solving.
pub const RESIDUAL_TOL: f64 = 1e-9;

/// How revenue shares are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShareMethod {
    /// `p Q` with `Q` from the calibrated rank mapping.
    #[default]
    Direct,
    /// Power-law rank ratios, `s_i ∝ p_i R_i^beta`.
    RankRatio,
    /// The two-product ratio formula with prices inverted,
    /// `1/s_i = 1 + (p_i/p_j)(R_j/R_i)^beta`, kept for replication.
    RankRatioLiteral,
    /// Same as `Direct`; the quantities come from the `-1` rank mapping.
    RankQuantity,
}

impl ShareMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ShareMethod::Direct => "direct",
            ShareMethod::RankRatio => "rank_ratio",
            ShareMethod::RankRatioLiteral => "rank_ratio_literal",
            ShareMethod::RankQuantity => "rank_quantity",
        }
    }
}

impl fmt::Display for ShareMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShareMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(ShareMethod::Direct),
            "rank_ratio" => Ok(ShareMethod::RankRatio),
            "rank_ratio_literal" => Ok(ShareMethod::RankRatioLiteral),
            "rank_quantity" => Ok(ShareMethod::RankQuantity),
            other => Err(Error::UnknownToken {
                field: "share_method",
                token: other.to_string(),
            }),
        }
    }
}

fn check_prices(prices: &[f64]) -> Result<()> {
    if prices.is_empty() {
        return Err(Error::InvalidInput("no prices".into()));
    }
    if let Some(p) = prices.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
        return Err(Error::InvalidInput(format!("price {p} is not positive")));
    }
    Ok(())
}

fn normalise(weights: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Degenerate("total revenue is zero".into()));
    }
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// `s_i = p_i Q_i / sum_k p_k Q_k`.
pub fn revenue_shares(prices: &[f64], quantities: &[f64]) -> Result<Vec<f64>> {
    check_prices(prices)?;
    if prices.len() != quantities.len() {
        return Err(Error::Dimension(format!(
            "{} prices but {} quantities",
            prices.len(),
            quantities.len()
        )));
    }
    if let Some(q) = quantities.iter().find(|q| !(**q >= 0.0)) {
        return Err(Error::InvalidInput(format!("quantity {q} is negative")));
    }
    normalise(prices.iter().zip(quantities).map(|(p, q)| p * q).collect())
}

fn check_ranks(prices: &[f64], ranks: &[f64], beta: f64) -> Result<()> {
    check_prices(prices)?;
    if prices.len() != ranks.len() {
        return Err(Error::Dimension(format!("{} prices but {} ranks", prices.len(), ranks.len())));
    }
    if beta >= 0.0 {
        return Err(Error::NonNegativeSlope(beta));
    }
    if let Some(r) = ranks.iter().find(|r| !(**r >= 1.0)) {
        return Err(Error::InvalidInput(format!("rank {r} < 1")));
    }
    Ok(())
}

/// Shares implied by `Q ∝ R^beta`: `s_i = p_i R_i^beta / sum_k p_k R_k^beta`.
/// For two products this is `1/s_i = 1 + (p_j/p_i)(R_j/R_i)^beta`.
pub fn shares_from_ranks(prices: &[f64], ranks: &[f64], beta: f64) -> Result<Vec<f64>> {
    check_ranks(prices, ranks, beta)?;
    // scale by the best rank so R^beta stays O(1)
    let r0 = ranks.iter().copied().fold(f64::INFINITY, f64::min);
    normalise(prices.iter().zip(ranks).map(|(p, r)| p * (r / r0).powf(beta)).collect())
}

/// The printed two-product formula `1/s_i = 1 + (p_i/p_j)(R_j/R_i)^beta`,
/// extended to `n` products as `s_i ∝ R_i^beta / p_i`.
pub fn shares_from_ranks_literal(prices: &[f64], ranks: &[f64], beta: f64) -> Result<Vec<f64>> {
    check_ranks(prices, ranks, beta)?;
    let r0 = ranks.iter().copied().fold(f64::INFINITY, f64::min);
    normalise(prices.iter().zip(ranks).map(|(p, r)| (r / r0).powf(beta) / p).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkupSolution {
    pub m: Vec<f64>,
    pub condition: f64,
}

/// Solves `s + N' m = 0`.
pub fn solve_markups(shares: &[f64], elasticities: &DMatrix<f64>) -> Result<MarkupSolution> {
    let n = shares.len();
    if elasticities.nrows() != n || elasticities.ncols() != n {
        return Err(Error::Dimension(format!(
            "{n} shares but a {}x{} elasticity matrix",
            elasticities.nrows(),
            elasticities.ncols()
        )));
    }
    let nt = elasticities.transpose();
    let rhs: Vec<f64> = shares.iter().map(|s| -s).collect();
    let sol = solve_linear(&nt, &rhs)?;
    let scale = shares.iter().fold(0.0_f64, |a, s| a.max(s.abs()));
    let residual = (0..n)
        .map(|i| (shares[i] + (0..n).map(|j| nt[(i, j)] * sol.x[j]).sum::<f64>()).abs())
        .fold(0.0_f64, f64::max);
    if residual > RESIDUAL_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::IllConditioned {
            condition: sol.condition,
        });
    }
    Ok(MarkupSolution {
        m: sol.x,
        condition: sol.condition,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostFlag {
    /// Lerner index above one, so the implied cost is negative.
    NegativeCost,
    LernerAboveOne,
    /// Lerner index below zero: cost above price.
    NegativeLerner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberCost {
    pub product_id: ProductId,
    pub price: f64,
    pub share: f64,
    pub m: f64,
    pub lerner: f64,
    pub marginal_cost: f64,
    pub flags: Vec<CostFlag>,
}

/// `L_i = m_i / s_i`, `c_i = p_i (1 - L_i)`. Implausible values are flagged,
/// never clamped.
pub fn marginal_costs(ids: &[ProductId], m: &[f64], shares: &[f64], prices: &[f64]) -> Result<Vec<MemberCost>> {
    let n = ids.len();
    if m.len() != n || shares.len() != n || prices.len() != n {
        return Err(Error::Dimension("ids, markups, shares and prices differ in length".into()));
    }
    if let Some(i) = shares.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::InvalidInput(format!("share of `{}` is not positive", ids[i])));
    }
    Ok((0..n)
        .map(|i| {
            let lerner = m[i] / shares[i];
            let mut flags = Vec::new();
            if lerner > 1.0 {
                flags.push(CostFlag::NegativeCost);
                flags.push(CostFlag::LernerAboveOne);
            }
            if lerner < 0.0 {
                flags.push(CostFlag::NegativeLerner);
            }
            MemberCost {
                product_id: ids[i].clone(),
                price: prices[i],
                share: shares[i],
                m: m[i],
                lerner,
                marginal_cost: prices[i] * (1.0 - lerner),
                flags,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub group_id: String,
    pub members: Vec<MemberCost>,
    pub condition_estimate: f64,
    pub share_method: ShareMethod,
}

/// Shares, markups and costs for one group in one call.
pub fn estimate_costs(
    group_id: &str,
    ids: &[ProductId],
    prices: &[f64],
    shares: &[f64],
    elasticities: &DMatrix<f64>,
    share_method: ShareMethod,
) -> Result<CostEstimate> {
    let sol = solve_markups(shares, elasticities)?;
    Ok(CostEstimate {
        group_id: group_id.to_string(),
        members: marginal_costs(ids, &sol.m, shares, prices)?,
        condition_estimate: sol.condition,
        share_method,
    })
}

/// Inclusive time window; open ends mean the whole sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: Option<DateTime<Utc>>,
    pub end: Option<DateTime<Utc>>,
}

impl Window {
    pub fn contains(&self, t: &DateTime<Utc>) -> bool {
        self.start.is_none_or(|s| *t >= s) && self.end.is_none_or(|e| *t <= e)
    }
}

/// Window means for one product. `quantity` is the mean of the per-slot
/// mapped quantities, not the quantity at the mean rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowAverages {
    pub product_id: ProductId,
    pub price: f64,
    pub rank: f64,
    pub quantity: f64,
}

pub fn window_averages(
    panel: &PanelDataset,
    ids: &[ProductId],
    window: &Window,
    cal: &ParetoCalibration,
) -> Result<Vec<WindowAverages>> {
    ids.iter()
        .map(|id| {
            let rows = panel
                .series(id)
                .ok_or_else(|| Error::InsufficientData(format!("no observations for `{id}`")))?;
            let (mut ps, mut np) = (0.0, 0usize);
            let (mut rs, mut qs, mut nr) = (0.0, 0.0, 0usize);
            for o in rows.iter().filter(|o| window.contains(&o.timestamp)) {
                if let Some(p) = o.amazon_price {
                    ps += p;
                    np += 1;
                }
                if let Some(r) = o.sales_rank {
                    rs += r;
                    qs += rank_to_quantity(r, cal)?;
                    nr += 1;
                }
            }
            if np == 0 || nr == 0 {
                return Err(Error::InsufficientData(format!("`{id}` has no priced and ranked rows in the window")));
            }
            Ok(WindowAverages {
                product_id: id.clone(),
                price: ps / np as f64,
                rank: rs / nr as f64,
                quantity: qs / nr as f64,
            })
        })
        .collect()
}

/// Shares for the chosen method from window averages.
pub fn shares_for(method: ShareMethod, averages: &[WindowAverages], beta: f64) -> Result<Vec<f64>> {
    let prices: Vec<f64> = averages.iter().map(|a| a.price).collect();
    match method {
        ShareMethod::Direct | ShareMethod::RankQuantity => {
            let q: Vec<f64> = averages.iter().map(|a| a.quantity).collect();
            revenue_shares(&prices, &q)
        }
        ShareMethod::RankRatio => {
            let r: Vec<f64> = averages.iter().map(|a| a.rank).collect();
            shares_from_ranks(&prices, &r, beta)
        }
        ShareMethod::RankRatioLiteral => {
            let r: Vec<f64> = averages.iter().map(|a| a.rank).collect();
            shares_from_ranks_literal(&prices, &r, beta)
        }
    }
}
