//! Pipeline configuration, loadable from a TOML key-value file.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use salesrank_core::dataset::parse_timestamp;
use salesrank_core::demand::ControlSet;
use salesrank_core::rankmap::{DetectionParams, DEFAULT_PLAUSIBILITY_BOUND, REFERENCE_BETA, REFERENCE_INTERCEPT};
use salesrank_core::statcore::CovarianceKind;
use salesrank_core::{DemandSpec, ShareMethod, ValidationPolicy, Window};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub observations: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    /// Hourly rank panel used for calibration; defaults to `observations`.
    pub calibration_observations: Option<PathBuf>,
    /// Purchase log (`product_id,timestamp,units`). When present, weekly
    /// demand comes from the log instead of detected rank spikes.
    pub purchases: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            observations: None,
            catalog: None,
            calibration_observations: None,
            purchases: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSection {
    pub slots_per_day: u32,
    pub max_fill_gap: u32,
}

impl Default for ValidationSection {
    fn default() -> Self {
        let p = ValidationPolicy::default();
        Self {
            slots_per_day: p.slots_per_day,
            max_fill_gap: p.max_fill_gap,
        }
    }
}

impl ValidationSection {
    pub fn policy(&self) -> ValidationPolicy {
        ValidationPolicy {
            slots_per_day: self.slots_per_day,
            max_fill_gap: self.max_fill_gap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Fit the power law from weekly demand and rank pairs.
    #[default]
    Fit,
    /// Use `intercept` and `beta` as given.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub mode: CalibrationMode,
    pub intercept: f64,
    pub beta: f64,
    pub theta: f64,
    pub min_abs_drop: f64,
    pub plausibility_bound: f64,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        let d = DetectionParams::default();
        Self {
            mode: CalibrationMode::Fit,
            intercept: REFERENCE_INTERCEPT,
            beta: REFERENCE_BETA,
            theta: d.theta,
            min_abs_drop: d.min_abs_drop,
            plausibility_bound: DEFAULT_PLAUSIBILITY_BOUND,
        }
    }
}

impl CalibrationSection {
    pub fn detection(&self) -> DetectionParams {
        DetectionParams {
            theta: self.theta,
            min_abs_drop: self.min_abs_drop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandSection {
    /// Any of `days_release`, `avg_rating`, `n_reviews`.
    pub controls: Vec<String>,
    pub pooled: bool,
    pub min_rows: usize,
    pub covariance: CovarianceKind,
}

impl Default for DemandSection {
    fn default() -> Self {
        Self {
            controls: vec!["days_release".into(), "avg_rating".into(), "n_reviews".into()],
            pooled: false,
            min_rows: salesrank_core::demand::MIN_ALIGNED_ROWS,
            covariance: CovarianceKind::Hc0,
        }
    }
}

impl DemandSection {
    pub fn spec(&self) -> CliResult<DemandSpec> {
        let mut controls = ControlSet {
            days_release: false,
            avg_rating: false,
            n_reviews: false,
        };
        for c in &self.controls {
            match c.as_str() {
                "days_release" => controls.days_release = true,
                "avg_rating" => controls.avg_rating = true,
                "n_reviews" => controls.n_reviews = true,
                other => return Err(CliError::Input(format!("unknown control `{other}`"))),
            }
        }
        Ok(DemandSpec {
            controls,
            pooled: self.pooled,
            min_rows: self.min_rows,
            covariance: self.covariance,
            ..DemandSpec::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub share_method: ShareMethod,
    /// RFC 3339 bounds of the averaging window; absent means full sample.
    pub window_start: Option<String>,
    pub window_end: Option<String>,
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            share_method: ShareMethod::Direct,
            window_start: None,
            window_end: None,
        }
    }
}

fn parse_bound(s: &Option<String>) -> CliResult<Option<DateTime<Utc>>> {
    s.as_deref()
        .map(|v| parse_timestamp(v).map_err(CliError::Input))
        .transpose()
}

impl CostSection {
    pub fn window(&self) -> CliResult<Window> {
        Ok(Window {
            start: parse_bound(&self.window_start)?,
            end: parse_bound(&self.window_end)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimalitySection {
    pub tolerance: f64,
    pub k: f64,
    /// CSV `product_id,marginal_cost` replacing estimated costs, for
    /// checking prices against externally known costs.
    pub cost_override: Option<PathBuf>,
}

impl Default for OptimalitySection {
    fn default() -> Self {
        Self {
            tolerance: salesrank_core::optimal::DEFAULT_TOLERANCE,
            k: 1.0,
            cost_override: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Products to emit plot series for; empty means every grouped product.
    pub plot_products: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub validation: ValidationSection,
    pub calibration: CalibrationSection,
    pub demand: DemandSection,
    pub costs: CostSection,
    pub optimality: OptimalitySection,
    pub report: ReportSection,
    /// Halt on rejected rows and on any group-level failure.
    pub strict: bool,
}

impl PipelineConfig {
    /// Reads a TOML file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| CliError::Input(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.resolve_against(base);
        if let Some(p) = cfg.optimality.cost_override.as_mut() {
            *p = join(base, p);
        }
        Ok(cfg)
    }

    pub fn out_dir(&self) -> &Path {
        &self.paths.out_dir
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.paths.out_dir.join(name)
    }
}

fn join(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() || base.as_os_str().is_empty() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Paths {
    fn resolve_against(&mut self, base: &Path) {
        for p in [
            &mut self.observations,
            &mut self.catalog,
            &mut self.calibration_observations,
            &mut self.purchases,
        ]
        .into_iter()
        .flatten()
        {
            *p = join(base, p);
        }
        self.out_dir = join(base, &self.out_dir);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: PipelineConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.calibration.theta, 0.30);
        assert_eq!(cfg.optimality.tolerance, 0.01);
    }

    #[test]
    fn sections_parse() {
        let cfg: PipelineConfig = toml::from_str(
            r#"
            strict = true
            [paths]
            observations = "obs.csv"
            [costs]
            share_method = "rank_ratio"
            [demand]
            controls = ["days_release"]
            pooled = true
            "#,
        )
        .unwrap();
        assert!(cfg.strict);
        assert_eq!(cfg.costs.share_method, ShareMethod::RankRatio);
        let spec = cfg.demand.spec().unwrap();
        assert!(spec.pooled && spec.controls.days_release && !spec.controls.n_reviews);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<PipelineConfig>("[costs]\nshare = 1").is_err());
        let bad = DemandSection {
            controls: vec!["price".into()],
            ..DemandSection::default()
        };
        assert!(bad.spec().is_err());
    }
}
