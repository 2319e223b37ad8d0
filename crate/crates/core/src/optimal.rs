//! Profit, its price gradient, and the sign test that labels each price as
//! optimal, overpriced or underpriced.
//!
//! Demand derivatives are reconstructed locally from elasticities:
//! `dQ_a/dp_b = eta_ab Q_a / p_b` at the observed point.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::ProductId;
use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfitMember {
    pub product_id: ProductId,
    pub price: f64,
    pub cost: f64,
    pub quantity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfitModel {
    members: Vec<ProfitMember>,
    elasticities: DMatrix<f64>,
    k: f64,
}

impl ProfitModel {
    pub fn new(members: Vec<ProfitMember>, elasticities: DMatrix<f64>, k: f64) -> Result<Self> {
        let n = members.len();
        if n == 0 {
            return Err(Error::InvalidInput("profit model has no members".into()));
        }
        if elasticities.nrows() != n || elasticities.ncols() != n {
            return Err(Error::Dimension(format!(
                "{n} members but a {}x{} elasticity matrix",
                elasticities.nrows(),
                elasticities.ncols()
            )));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidInput(format!("scale k = {k} must be positive")));
        }
        for m in &members {
            if !(m.price > 0.0) {
                return Err(Error::InvalidInput(format!("price of `{}` is not positive", m.product_id)));
            }
            if !(m.quantity >= 0.0) {
                return Err(Error::InvalidInput(format!("quantity of `{}` is negative", m.product_id)));
            }
        }
        Ok(Self { members, elasticities, k })
    }

    pub fn members(&self) -> &[ProfitMember] {
        &self.members
    }

    pub fn elasticities(&self) -> &DMatrix<f64> {
        &self.elasticities
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn prices(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.price).collect()
    }

    pub fn with_k(&self, k: f64) -> Result<Self> {
        Self::new(self.members.clone(), self.elasticities.clone(), k)
    }

    /// `k sum_i p_i Q_i`.
    pub fn revenue(&self) -> f64 {
        self.k * self.members.iter().map(|m| m.price * m.quantity).sum::<f64>()
    }

    /// Quantities under the constant-elasticity surface through the
    /// model's point: `Q_a(p) = Q_a prod_b (p_b / p_b0)^{eta_ab}`.
    pub fn local_quantities(&self, prices: &[f64]) -> Vec<f64> {
        let n = self.members.len();
        (0..n)
            .map(|a| {
                let log_ratio: f64 = (0..n)
                    .map(|b| self.elasticities[(a, b)] * (prices[b] / self.members[b].price).ln())
                    .sum();
                self.members[a].quantity * log_ratio.exp()
            })
            .collect()
    }

    /// Profit at other prices on the local constant-elasticity surface.
    pub fn local_profit(&self, prices: &[f64]) -> f64 {
        let q = self.local_quantities(prices);
        self.k
            * self
                .members
                .iter()
                .zip(prices)
                .zip(&q)
                .map(|((m, p), q)| (p - m.cost) * q)
                .sum::<f64>()
    }

    /// The same model moved along its own demand surface to `prices`.
    pub fn moved_to(&self, prices: &[f64]) -> Result<Self> {
        let q = self.local_quantities(prices);
        let members = self
            .members
            .iter()
            .zip(prices)
            .zip(q)
            .map(|((m, p), q)| ProfitMember {
                product_id: m.product_id.clone(),
                price: *p,
                cost: m.cost,
                quantity: q,
            })
            .collect();
        Self::new(members, self.elasticities.clone(), self.k)
    }
}

/// `k sum_i (p_i - c_i) Q_i`.
pub fn profit(model: &ProfitModel) -> f64 {
    model.k * model.members.iter().map(|m| (m.price - m.cost) * m.quantity).sum::<f64>()
}

/// `dpi/dp_i = k [Q_i + sum_a (p_a - c_a) eta_ai Q_a / p_i]`.
pub fn profit_gradient(model: &ProfitModel) -> Vec<f64> {
    let n = model.members.len();
    (0..n)
        .map(|i| {
            let mi = &model.members[i];
            let cross: f64 = model
                .members
                .iter()
                .enumerate()
                .map(|(a, ma)| (ma.price - ma.cost) * model.elasticities[(a, i)] * ma.quantity / mi.price)
                .sum();
            model.k * (mi.quantity + cross)
        })
        .collect()
}

/// `g_i p_i / (k sum_a p_a Q_a)`, free of the scale `k`.
pub fn normalized_gradient(model: &ProfitModel) -> Result<Vec<f64>> {
    let revenue = model.revenue();
    if !(revenue > 0.0) {
        return Err(Error::Degenerate("group revenue is zero".into()));
    }
    Ok(profit_gradient(model)
        .into_iter()
        .zip(&model.members)
        .map(|(g, m)| g * m.price / revenue)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Optimal,
    Overpriced,
    Underpriced,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Optimal => "optimal",
            Classification::Overpriced => "overpriced",
            Classification::Underpriced => "underpriced",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Negative slope beyond `tolerance` means lowering the price raises profit.
pub fn classify_value(normalized: f64, tolerance: f64) -> Classification {
    if normalized < -tolerance {
        Classification::Overpriced
    } else if normalized > tolerance {
        Classification::Underpriced
    } else {
        Classification::Optimal
    }
}

/// Classifies already normalized gradient values.
pub fn classify_values(normalized: &[f64], tolerance: f64) -> Result<Vec<Classification>> {
    check_tolerance(tolerance)?;
    Ok(normalized.iter().map(|g| classify_value(*g, tolerance)).collect())
}

fn check_tolerance(tolerance: f64) -> Result<()> {
    if !(tolerance > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance {tolerance} must be positive")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityVerdict {
    pub product_id: ProductId,
    pub gradient: f64,
    pub normalized_gradient: f64,
    pub classification: Classification,
    pub tolerance: f64,
}

pub fn classify(model: &ProfitModel, tolerance: f64) -> Result<Vec<OptimalityVerdict>> {
    check_tolerance(tolerance)?;
    let g = profit_gradient(model);
    let gn = normalized_gradient(model)?;
    Ok(model
        .members
        .iter()
        .zip(g.into_iter().zip(gn))
        .map(|(m, (g, gn))| OptimalityVerdict {
            product_id: m.product_id.clone(),
            gradient: g,
            normalized_gradient: gn,
            classification: classify_value(gn, tolerance),
            tolerance,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mono(price: f64, cost: f64, quantity: f64, eta: f64, k: f64) -> ProfitModel {
        ProfitModel::new(
            vec![ProfitMember {
                product_id: "a".into(),
                price,
                cost,
                quantity,
            }],
            DMatrix::from_element(1, 1, eta),
            k,
        )
        .unwrap()
    }

    #[test]
    fn profit_examples() {
        assert_eq!(profit(&mono(7.0, 7.0, 3.0, -2.0, 1.0)), 0.0);
        assert_eq!(profit(&mono(10.0, 5.0, 4.0, -2.0, 1.0)), 20.0);
        assert_eq!(profit(&mono(10.0, 5.0, 4.0, -2.0, 2.0)), 40.0);
    }

    #[test]
    fn monopoly_gradient_signs() {
        // Q = A p^-2 with c = 5 peaks at p = 10
        let at = |p: f64| mono(p, 5.0, 1000.0 * p.powi(-2), -2.0, 1.0);
        assert_relative_eq!(profit_gradient(&at(10.0))[0], 0.0, epsilon = 1e-12);
        assert!(profit_gradient(&at(12.0))[0] < 0.0);
        assert!(profit_gradient(&at(8.0))[0] > 0.0);
    }

    #[test]
    fn zero_margin_gradient_is_kq() {
        let m = ProfitModel::new(
            vec![
                ProfitMember {
                    product_id: "a".into(),
                    price: 4.0,
                    cost: 4.0,
                    quantity: 3.0,
                },
                ProfitMember {
                    product_id: "b".into(),
                    price: 9.0,
                    cost: 9.0,
                    quantity: 5.0,
                },
            ],
            DMatrix::from_row_slice(2, 2, &[-3.0, 0.7, 1.1, -2.2]),
            2.5,
        )
        .unwrap();
        assert_eq!(profit_gradient(&m), vec![7.5, 12.5]);
    }

    #[test]
    fn classification_examples() {
        let v = classify_values(&[-75.2, -334.9], DEFAULT_TOLERANCE).unwrap();
        assert_eq!(v, vec![Classification::Overpriced; 2]);
        assert_eq!(classify_value(0.0, 0.01), Classification::Optimal);
        assert_eq!(classify_value(0.2, 0.01), Classification::Underpriced);
        assert!(classify_values(&[0.0], 0.0).is_err());
    }

    #[test]
    fn verdicts_do_not_depend_on_k() {
        let m = mono(12.0, 5.0, 7.0, -2.0, 1.0);
        let a = classify(&m, 0.01).unwrap();
        let b = classify(&m.with_k(37.0).unwrap(), 0.01).unwrap();
        assert_eq!(a[0].classification, b[0].classification);
        assert_relative_eq!(a[0].normalized_gradient, b[0].normalized_gradient, epsilon = 1e-15);
        assert_relative_eq!(b[0].gradient, 37.0 * a[0].gradient, max_relative = 1e-14);
    }

    #[test]
    fn local_surface_passes_through_the_point() {
        let m = mono(12.0, 5.0, 7.0, -2.0, 1.0);
        assert_relative_eq!(m.local_quantities(&[12.0])[0], 7.0);
        assert_relative_eq!(m.local_profit(&[12.0]), profit(&m));
    }
}
