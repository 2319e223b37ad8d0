//! Sales-rank based demand, cost and pricing analysis for online retail
//! panels.
//!
//! The pipeline runs in four steps: calibrate a power law between sales
//! rank and weekly units ([`rankmap`]), estimate log-rank demand systems
//! for groups of related products ([`demand`]), invert the multi-product
//! pricing first-order conditions for markups and marginal costs
//! ([`cost`]), and test whether current prices sit at a profit maximum
//! ([`optimal`]). [`simulate`] generates synthetic panels with known
//! answers for every step.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod dataset;
pub mod demand;
pub mod error;
pub mod optimal;
pub mod rankmap;
pub mod scenarios;
pub mod simulate;
pub mod statcore;

pub use cost::{CostEstimate, MemberCost, ShareMethod, Window};
pub use dataset::{
    Catalog, Category, PanelDataset, PanelObservation, Product, ProductId, ProductKind, Relation, RelationGroup,
    ValidationPolicy, ValidationReport,
};
pub use demand::{DemandEstimates, DemandSpec, ElasticityMatrix, GroupEstimates};
pub use error::{Error, Result};
pub use optimal::{Classification, OptimalityVerdict, ProfitModel};
pub use rankmap::{DemandRankPair, DetectionParams, ParetoCalibration, PurchaseEvent, RankSeries};
pub use simulate::{GroundTruth, Market, RankPolicy, SimConfig};
pub use statcore::{CovarianceKind, DesignMatrix, RegressionResult};
