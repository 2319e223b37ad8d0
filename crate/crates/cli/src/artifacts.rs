//! Stage artifacts: typed JSON files with sorted keys and floats rounded to
//! 12 significant digits, so identical inputs give identical bytes.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use salesrank_core::cost::CostFlag;
use salesrank_core::{
    Classification, DemandEstimates, ProductId, Relation, RelationGroup, ShareMethod, ValidationReport, Window,
};

use crate::error::{CliError, CliResult, Stage};

pub const VALIDATION: &str = "validation.json";
pub const CALIBRATION: &str = "calibration.json";
pub const DEMAND: &str = "demand_estimates.json";
pub const COSTS: &str = "costs.json";
pub const OPTIMALITY: &str = "optimality.json";
pub const SUMMARY_TEXT: &str = "summary.txt";
pub const SUMMARY_JSON: &str = "summary.json";
pub const PLOT_DIR: &str = "plots";

const SIGNIFICANT_DIGITS: usize = 12;

pub fn round_significant(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .unwrap_or(x)
}

fn canonicalize(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .and_then(|x| serde_json::Number::from_f64(round_significant(x)))
            .map_or(Value::Null, Value::Number),
        Value::Array(a) => Value::Array(a.into_iter().map(canonicalize).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, canonicalize(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with sorted keys, rounded floats and a trailing newline.
pub fn canonical_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let v = canonicalize(serde_json::to_value(value)?);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn write_artifact<T: Serialize>(stage: Stage, path: &Path, value: &T) -> CliResult<()> {
    let text = canonical_json(value).map_err(|e| CliError::Input(format!("{stage}: cannot serialize: {e}")))?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(CliError::io(stage, dir))?;
    }
    std::fs::write(path, text).map_err(CliError::io(stage, path))
}

pub fn read_artifact<T: DeserializeOwned>(stage: Stage, path: &Path) -> CliResult<T> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::MissingArtifact {
                stage,
                path: path.to_path_buf(),
            })
        }
        Err(e) => return Err(CliError::io(stage, path)(e)),
    };
    serde_json::from_str(&text).map_err(|e| CliError::CorruptArtifact {
        stage,
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Like [`read_artifact`] but a missing file is `None`.
pub fn read_optional<T: DeserializeOwned>(stage: Stage, path: &Path) -> CliResult<Option<T>> {
    match read_artifact(stage, path) {
        Ok(v) => Ok(Some(v)),
        Err(CliError::MissingArtifact { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationArtifact {
    #[serde(flatten)]
    pub report: ValidationReport,
    pub n_observations: usize,
    pub n_products: usize,
    pub groups: Vec<RelationGroup>,
    pub group_warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationParams {
    pub theta: f64,
    pub min_abs_drop: f64,
    pub plausibility_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationArtifact {
    pub intercept: f64,
    pub beta: f64,
    pub se_intercept: f64,
    pub se_beta: f64,
    pub n_pairs: usize,
    /// Pairs outside the plausibility bound, left out of the fit.
    pub n_implausible: usize,
    pub params: CalibrationParams,
    pub log_base: String,
    /// `fixed`, `purchase_log` or `detected_spikes`.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandGroupArtifact {
    pub group_id: String,
    pub relation: Relation,
    pub pooled: bool,
    pub beta_used: f64,
    pub intercept_used: f64,
    pub members: Vec<DemandEstimates>,
    /// Member order of the `elasticities` rows and columns.
    pub member_order: Vec<ProductId>,
    pub elasticities: Vec<Vec<f64>>,
    pub structural_zeros: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostMemberArtifact {
    pub product_id: ProductId,
    pub price: f64,
    pub share: f64,
    pub m: f64,
    pub lerner: f64,
    pub marginal_cost: f64,
    pub flags: Vec<CostFlag>,
    /// Window mean of weekly units implied by the ranks.
    pub quantity: f64,
    pub rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostGroupArtifact {
    pub group_id: String,
    pub members: Vec<CostMemberArtifact>,
    pub condition_estimate: f64,
    pub share_method: ShareMethod,
    pub window: Window,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimalityMemberArtifact {
    pub product_id: ProductId,
    pub gradient: f64,
    pub normalized_gradient: f64,
    pub classification: Classification,
    pub price: f64,
    pub cost: f64,
    pub quantity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimalityGroupArtifact {
    pub group_id: String,
    pub members: Vec<OptimalityMemberArtifact>,
    pub tolerance: f64,
    pub k: f64,
    /// `estimated` or `override`.
    pub cost_source: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn rounding_keeps_twelve_digits() {
        assert_eq!(round_significant(0.1 + 0.2), 0.3);
        assert_eq!(round_significant(1.0 / 3.0), 0.333333333333);
        assert_eq!(round_significant(-123456.7890123456), -123456.789012);
        assert_eq!(round_significant(0.0), 0.0);
    }

    #[test]
    fn canonical_json_sorts_keys_and_is_stable() {
        let mut m = BTreeMap::new();
        m.insert("zeta", 1.0 / 3.0);
        m.insert("alpha", 2.0);
        let a = canonical_json(&m).unwrap();
        assert!(a.find("alpha").unwrap() < a.find("zeta").unwrap());
        assert!(a.contains("0.333333333333"));
        let back: BTreeMap<String, f64> = serde_json::from_str(&a).unwrap();
        assert_eq!(canonical_json(&back).unwrap(), a);
    }
}
