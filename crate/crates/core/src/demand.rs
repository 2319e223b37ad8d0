//! Fixed-effects log-rank demand regressions per relation group, and the
//! elasticities they imply once scaled by the rank-demand slope.
//!
//! For a focal product `i` with related products `S_i` the regression is
//!
//! ```text
//! ln rank_it = a_i + phi ln p_it + sum_j gamma_j ln p_jt + lambda ln p^_it + omega' X_it + e_it
//! ```
//!
//! estimated on within-transformed data, so `a_i` is absorbed as a product
//! fixed effect. Multiplying by `beta` (the power-law slope) turns rank
//! sensitivities into demand elasticities: `eta_ii = beta phi`,
//! `eta_ij = beta gamma_j`.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{days_since_release, PanelDataset, PanelObservation, ProductId, Relation, RelationGroup};
use crate::error::{Error, Result};
use crate::statcore::{ols_fit_with, within_transform, CovarianceKind, DesignMatrix, OlsOptions};

pub const MIN_ALIGNED_ROWS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlSet {
    pub days_release: bool,
    pub avg_rating: bool,
    pub n_reviews: bool,
}

impl Default for ControlSet {
    fn default() -> Self {
        Self {
            days_release: true,
            avg_rating: true,
            n_reviews: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    DaysRelease,
    AvgRating,
    NReviews,
}

impl Control {
    pub fn label(self) -> &'static str {
        match self {
            Control::DaysRelease => "ln_days_release",
            Control::AvgRating => "avg_rating",
            Control::NReviews => "ln_n_reviews",
        }
    }

    fn value(self, o: &PanelObservation, release: chrono::NaiveDate) -> Option<f64> {
        match self {
            Control::DaysRelease => {
                Some((f64::from(days_since_release(&o.timestamp, release).unwrap_or(0)) + 1.0).ln())
            }
            Control::AvgRating => o.avg_rating,
            Control::NReviews => Some((f64::from(o.n_reviews) + 1.0).ln()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandSpec {
    pub controls: ControlSet,
    /// One regression per group with shared own-price, marketplace and
    /// control coefficients and per-pair cross-price terms, instead of one
    /// regression per focal product.
    pub pooled: bool,
    pub min_rows: usize,
    pub covariance: CovarianceKind,
    pub adjust_absorbed_dof: bool,
}

impl Default for DemandSpec {
    fn default() -> Self {
        Self {
            controls: ControlSet::default(),
            pooled: false,
            min_rows: MIN_ALIGNED_ROWS,
            covariance: CovarianceKind::Hc0,
            adjust_absorbed_dof: true,
        }
    }
}

/// What a design column measures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Column {
    OwnPrice,
    RelatedPrice { focal: ProductId, related: ProductId },
    Marketplace,
    Control(Control),
}

#[derive(Debug, Clone)]
pub struct FocalDesign {
    /// `None` for a pooled group design.
    pub focal: Option<ProductId>,
    /// Within-transformed regressors.
    pub design: DesignMatrix,
    pub columns: Vec<Column>,
    /// Within-transformed `ln rank`.
    pub response: Vec<f64>,
    /// Untransformed regressors and response, for fixed-effect recovery.
    pub raw_design: DMatrix<f64>,
    pub raw_response: Vec<f64>,
    pub entities: Vec<ProductId>,
    pub timestamps: Vec<DateTime<Utc>>,
}

fn label_for(col: &Column, pooled: bool, focal: &ProductId) -> String {
    match col {
        Column::OwnPrice if pooled => "ln_p_own".into(),
        Column::OwnPrice => format!("ln_p[{focal}]"),
        Column::RelatedPrice { focal, related } if pooled => format!("ln_p[{related}]@{focal}"),
        Column::RelatedPrice { related, .. } => format!("ln_p[{related}]"),
        Column::Marketplace if pooled => "ln_p_hat_own".into(),
        Column::Marketplace => format!("ln_p_hat[{focal}]"),
        Column::Control(c) => c.label().into(),
    }
}

fn price_index(rows: &[PanelObservation]) -> BTreeMap<DateTime<Utc>, f64> {
    rows.iter()
        .filter_map(|o| o.amazon_price.map(|p| (o.timestamp, p)))
        .collect()
}

fn positive_ln(v: f64, what: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v.ln())
    } else {
        Err(Error::InvalidInput(format!("{what} {v} is not positive")))
    }
}

struct RawRow {
    entity: ProductId,
    t: DateTime<Utc>,
    y: f64,
    x: Vec<f64>,
}

/// `(time, ln rank, ln own price, ln related prices, ln marketplace price, controls)`.
type AlignedRow = (DateTime<Utc>, f64, f64, Vec<f64>, Option<f64>, Vec<f64>);

/// Per-member rows aligned on timestamps where the focal rank and every
/// required price are present.
struct MemberRows {
    focal: ProductId,
    rows: Vec<AlignedRow>,
}

fn member_rows(
    group: &RelationGroup,
    panel: &PanelDataset,
    focal: &ProductId,
    with_marketplace: bool,
    controls: &[Control],
) -> Result<MemberRows> {
    let series = panel
        .series(focal)
        .ok_or_else(|| Error::InsufficientData(format!("no observations for `{focal}`")))?;
    let release = panel
        .catalog()
        .get(focal)
        .map(|p| p.release_date)
        .ok_or_else(|| Error::UnknownProduct(focal.to_string()))?;
    let related: Vec<&ProductId> = group.members.iter().filter(|m| *m != focal).collect();
    let related_prices: Vec<BTreeMap<DateTime<Utc>, f64>> = related
        .iter()
        .map(|j| panel.series(j).map(price_index).unwrap_or_default())
        .collect();

    let mut rows = Vec::new();
    'obs: for o in series {
        let (Some(rank), Some(price)) = (o.sales_rank, o.amazon_price) else {
            continue;
        };
        let mut rel = Vec::with_capacity(related.len());
        for idx in &related_prices {
            match idx.get(&o.timestamp) {
                Some(p) => rel.push(positive_ln(*p, "related price")?),
                None => continue 'obs,
            }
        }
        let mkt = if with_marketplace {
            match o.marketplace_new_price {
                Some(p) => Some(positive_ln(p, "marketplace price")?),
                None => continue,
            }
        } else {
            None
        };
        let mut ctl = Vec::with_capacity(controls.len());
        for c in controls {
            match c.value(o, release) {
                Some(v) => ctl.push(v),
                None => continue 'obs,
            }
        }
        rows.push((o.timestamp, positive_ln(rank, "rank")?, positive_ln(price, "price")?, rel, mkt, ctl));
    }
    Ok(MemberRows {
        focal: focal.clone(),
        rows,
    })
}

fn active_controls(spec: &DemandSpec, panel: &PanelDataset, members: &[&ProductId]) -> Vec<Control> {
    let mut out = Vec::new();
    if spec.controls.days_release {
        out.push(Control::DaysRelease);
    }
    if spec.controls.avg_rating {
        // only when every member reports a rating on every row
        let present = members.iter().all(|m| {
            panel
                .series(m)
                .is_some_and(|s| s.iter().all(|o| o.avg_rating.is_some()))
        });
        if present {
            out.push(Control::AvgRating);
        }
    }
    if spec.controls.n_reviews {
        out.push(Control::NReviews);
    }
    out
}

fn has_marketplace(panel: &PanelDataset, id: &ProductId) -> bool {
    panel
        .series(id)
        .is_some_and(|s| s.iter().any(|o| o.marketplace_new_price.is_some()))
}

fn finish_design(
    focal: Option<ProductId>,
    columns: Vec<Column>,
    label_focal: &ProductId,
    pooled: bool,
    raw: Vec<RawRow>,
    min_rows: usize,
) -> Result<FocalDesign> {
    let n = raw.len();
    let k = columns.len();
    let what = focal.as_ref().map_or_else(|| "pooled group".to_string(), |f| format!("`{f}`"));
    if n < min_rows.max(k + 2) {
        return Err(Error::InsufficientData(format!(
            "{what}: {n} aligned observations, need at least {}",
            min_rows.max(k + 2)
        )));
    }
    let entities: Vec<ProductId> = raw.iter().map(|r| r.entity.clone()).collect();
    let raw_design = DMatrix::from_fn(n, k, |i, j| raw[i].x[j]);
    let raw_response: Vec<f64> = raw.iter().map(|r| r.y).collect();
    let response = within_transform(&raw_response, &entities)?;
    let mut within = DMatrix::zeros(n, k);
    for j in 0..k {
        let col: Vec<f64> = raw_design.column(j).iter().copied().collect();
        for (i, v) in within_transform(&col, &entities)?.into_iter().enumerate() {
            within[(i, j)] = v;
        }
    }
    let labels = columns.iter().map(|c| label_for(c, pooled, label_focal)).collect();
    Ok(FocalDesign {
        focal,
        design: DesignMatrix::new(within, labels)?,
        columns,
        response,
        raw_design,
        raw_response,
        entities,
        timestamps: raw.iter().map(|r| r.t).collect(),
    })
}

/// Aligned, within-transformed designs: one per member, or one for the
/// whole group when `spec.pooled` is set.
pub fn build_design(group: &RelationGroup, panel: &PanelDataset, spec: &DemandSpec) -> Result<Vec<FocalDesign>> {
    let members: Vec<&ProductId> = group.members.iter().collect();
    let controls = active_controls(spec, panel, &members);

    if !spec.pooled {
        return group
            .members
            .iter()
            .map(|focal| {
                let mkt = has_marketplace(panel, focal);
                let mr = member_rows(group, panel, focal, mkt, &controls)?;
                let mut columns = vec![Column::OwnPrice];
                columns.extend(group.members.iter().filter(|m| *m != focal).map(|j| Column::RelatedPrice {
                    focal: focal.clone(),
                    related: j.clone(),
                }));
                if mkt {
                    columns.push(Column::Marketplace);
                }
                columns.extend(controls.iter().map(|c| Column::Control(*c)));
                let raw = mr
                    .rows
                    .into_iter()
                    .map(|(t, y, own, rel, m, ctl)| {
                        let mut x = vec![own];
                        x.extend(rel);
                        x.extend(m);
                        x.extend(ctl);
                        RawRow { entity: focal.clone(), t, y, x }
                    })
                    .collect();
                finish_design(Some(focal.clone()), columns, focal, false, raw, spec.min_rows)
            })
            .collect();
    }

    let mkt = members.iter().all(|m| has_marketplace(panel, m));
    let mut columns = vec![Column::OwnPrice];
    let mut cross_index = BTreeMap::new();
    for i in &group.members {
        for j in group.members.iter().filter(|j| *j != i) {
            cross_index.insert((i.clone(), j.clone()), columns.len());
            columns.push(Column::RelatedPrice {
                focal: i.clone(),
                related: j.clone(),
            });
        }
    }
    let mkt_col = mkt.then(|| {
        columns.push(Column::Marketplace);
        columns.len() - 1
    });
    let ctl_start = columns.len();
    columns.extend(controls.iter().map(|c| Column::Control(*c)));
    let k = columns.len();

    let mut raw = Vec::new();
    for focal in &group.members {
        let mr = member_rows(group, panel, focal, mkt, &controls)?;
        if mr.rows.len() < spec.min_rows {
            return Err(Error::InsufficientData(format!(
                "`{}`: {} aligned observations, need at least {}",
                mr.focal,
                mr.rows.len(),
                spec.min_rows
            )));
        }
        let related: Vec<&ProductId> = group.members.iter().filter(|m| *m != focal).collect();
        for (t, y, own, rel, m, ctl) in mr.rows {
            let mut x = vec![0.0; k];
            x[0] = own;
            for (j, v) in related.iter().zip(rel) {
                x[cross_index[&(focal.clone(), (*j).clone())]] = v;
            }
            if let (Some(c), Some(v)) = (mkt_col, m) {
                x[c] = v;
            }
            x[ctl_start..].copy_from_slice(&ctl);
            raw.push(RawRow {
                entity: focal.clone(),
                t,
                y,
                x,
            });
        }
    }
    let first = group.members[0].clone();
    Ok(vec![finish_design(None, columns, &first, true, raw, spec.min_rows)?])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandEstimates {
    pub product_id: ProductId,
    /// Own log-price coefficient.
    pub phi: f64,
    /// Related-price coefficients; products whose column was dropped for
    /// collinearity are absent and listed in `dropped`.
    pub gammas: BTreeMap<ProductId, f64>,
    pub lambda: Option<f64>,
    pub controls: BTreeMap<String, f64>,
    /// Recovered product fixed effect.
    pub intercept: f64,
    /// HC0 standard errors keyed `phi`, `gamma:<id>`, `lambda`, control name.
    pub se: BTreeMap<String, f64>,
    pub r2: f64,
    pub n_obs: usize,
    pub dropped: Vec<String>,
    pub coefficient_labels: Vec<String>,
    pub covariance: Vec<Vec<f64>>,
}

impl DemandEstimates {
    pub fn gamma(&self, related: &ProductId) -> Option<f64> {
        self.gammas.get(related).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEstimates {
    pub group_id: String,
    pub relation: Relation,
    pub pooled: bool,
    pub members: Vec<DemandEstimates>,
}

impl GroupEstimates {
    pub fn member(&self, id: &ProductId) -> Option<&DemandEstimates> {
        self.members.iter().find(|m| &m.product_id == id)
    }
}

fn se_key(col: &Column) -> String {
    match col {
        Column::OwnPrice => "phi".into(),
        Column::RelatedPrice { related, .. } => format!("gamma:{related}"),
        Column::Marketplace => "lambda".into(),
        Column::Control(c) => c.label().into(),
    }
}

pub fn estimate_demand(group: &RelationGroup, panel: &PanelDataset, spec: &DemandSpec) -> Result<GroupEstimates> {
    let designs = build_design(group, panel, spec)?;
    let mut members = Vec::with_capacity(group.members.len());
    for d in &designs {
        let n_entities = {
            let mut e: Vec<&ProductId> = d.entities.iter().collect();
            e.sort();
            e.dedup();
            e.len()
        };
        let opts = OlsOptions {
            covariance: spec.covariance,
            absorbed: n_entities,
            adjust_absorbed_dof: spec.adjust_absorbed_dof,
            ..OlsOptions::default()
        };
        let fit = ols_fit_with(&d.design, &d.response, &opts)?;
        let retained: Vec<usize> = fit
            .labels
            .iter()
            .map(|l| d.design.labels().iter().position(|x| x == l).expect("retained label"))
            .collect();
        let coef_of = |col: usize| retained.iter().position(|&c| c == col).map(|i| fit.coefficients[i]);
        let se_of = |col: usize| {
            retained
                .iter()
                .position(|&c| c == col)
                .map(|i| fit.covariance[(i, i)].max(0.0).sqrt())
        };

        let focals: Vec<ProductId> = match &d.focal {
            Some(f) => vec![f.clone()],
            None => group.members.clone(),
        };
        for focal in focals {
            let mut est = DemandEstimates {
                product_id: focal.clone(),
                phi: coef_of(0).ok_or_else(|| {
                    Error::Degenerate(format!("own price of `{focal}` has no usable variation"))
                })?,
                gammas: BTreeMap::new(),
                lambda: None,
                controls: BTreeMap::new(),
                intercept: 0.0,
                se: BTreeMap::new(),
                r2: fit.r_squared,
                n_obs: d.entities.iter().filter(|e| **e == focal).count(),
                dropped: Vec::new(),
                coefficient_labels: Vec::new(),
                covariance: Vec::new(),
            };
            let mut cov_cols = Vec::new();
            for (j, col) in d.columns.iter().enumerate() {
                let relevant = match col {
                    Column::RelatedPrice { focal: f, .. } => *f == focal,
                    _ => true,
                };
                if !relevant {
                    continue;
                }
                let label = d.design.labels()[j].clone();
                let Some(b) = coef_of(j) else {
                    est.dropped.push(label);
                    continue;
                };
                match col {
                    Column::OwnPrice => {}
                    Column::RelatedPrice { related, .. } => {
                        est.gammas.insert(related.clone(), b);
                    }
                    Column::Marketplace => est.lambda = Some(b),
                    Column::Control(c) => {
                        est.controls.insert(c.label().to_string(), b);
                    }
                }
                est.se.insert(se_key(col), se_of(j).unwrap_or(0.0));
                cov_cols.push((j, label));
            }

            // fixed effect: mean(y) - mean(x)'b over this product's rows
            let rows: Vec<usize> = (0..d.entities.len()).filter(|&i| d.entities[i] == focal).collect();
            let n = rows.len() as f64;
            let ybar = rows.iter().map(|&i| d.raw_response[i]).sum::<f64>() / n;
            let xb: f64 = retained
                .iter()
                .zip(&fit.coefficients)
                .map(|(&c, b)| b * rows.iter().map(|&i| d.raw_design[(i, c)]).sum::<f64>() / n)
                .sum();
            est.intercept = ybar - xb;

            let pos: Vec<usize> = cov_cols
                .iter()
                .map(|(c, _)| retained.iter().position(|r| r == c).expect("retained"))
                .collect();
            est.covariance = pos
                .iter()
                .map(|&a| pos.iter().map(|&b| fit.covariance[(a, b)]).collect())
                .collect();
            est.coefficient_labels = cov_cols.into_iter().map(|(_, l)| l).collect();
            members.push(est);
        }
    }
    Ok(GroupEstimates {
        group_id: group.group_id.clone(),
        relation: group.relation,
        pooled: spec.pooled,
        members,
    })
}

/// `eta_ii = beta * phi`.
pub fn own_price_elasticity(phi: f64, beta: f64) -> f64 {
    beta * phi
}

/// `eta_ij = beta * gamma_j`.
pub fn cross_price_elasticity(gamma: f64, beta: f64) -> f64 {
    beta * gamma
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityMatrix {
    pub group_id: String,
    pub members: Vec<ProductId>,
    /// Row `i`, column `j`: elasticity of demand for `i` w.r.t. price `j`.
    pub values: Vec<Vec<f64>>,
    /// Off-diagonal entries set to zero because the cross-price column was
    /// not estimable.
    pub structural_zeros: Vec<(usize, usize)>,
}

impl ElasticityMatrix {
    pub fn from_values(group_id: impl Into<String>, members: Vec<ProductId>, values: Vec<Vec<f64>>) -> Result<Self> {
        let n = members.len();
        if values.len() != n || values.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension(format!("elasticity matrix must be {n}x{n}")));
        }
        Ok(Self {
            group_id: group_id.into(),
            members,
            values,
            structural_zeros: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| self.values[i][j])
    }
}

pub fn elasticity_matrix(
    group_id: &str,
    members: &[ProductId],
    estimates: &[DemandEstimates],
    beta: f64,
) -> Result<ElasticityMatrix> {
    let n = members.len();
    let mut values = vec![vec![0.0; n]; n];
    let mut structural_zeros = Vec::new();
    for (i, id) in members.iter().enumerate() {
        let est = estimates
            .iter()
            .find(|e| &e.product_id == id)
            .ok_or_else(|| Error::InsufficientData(format!("no demand estimates for `{id}`")))?;
        for (j, other) in members.iter().enumerate() {
            if i == j {
                values[i][j] = own_price_elasticity(est.phi, beta);
            } else {
                match est.gamma(other) {
                    Some(g) => values[i][j] = cross_price_elasticity(g, beta),
                    None => structural_zeros.push((i, j)),
                }
            }
        }
    }
    Ok(ElasticityMatrix {
        group_id: group_id.to_string(),
        members: members.to_vec(),
        values,
        structural_zeros,
    })
}

/// Two-sided p-value under the normal approximation.
pub fn p_value(estimate: f64, se: f64) -> f64 {
    if se <= 0.0 {
        return if estimate == 0.0 { 1.0 } else { 0.0 };
    }
    let z = (estimate / se).abs();
    let normal = Normal::standard();
    2.0 * (1.0 - normal.cdf(z))
}

/// `***`, `**`, `*` at the 0.01, 0.05 and 0.10 levels.
pub fn significance_stars(estimate: f64, se: f64) -> &'static str {
    let p = p_value(estimate, se);
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.10 {
        "*"
    } else {
        ""
    }
}
