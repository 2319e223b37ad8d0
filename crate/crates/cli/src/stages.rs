//! One function per pipeline stage. Every stage reads its inputs from the
//! configured files and earlier artifacts, so rerunning a stage alone gives
//! the same bytes as a full pipeline run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::DMatrix;
use rayon::prelude::*;

use salesrank_core::cost::{estimate_costs, shares_for, window_averages};
use salesrank_core::dataset::{load_catalog, load_observations, validate_panel, LoadOutcome};
use salesrank_core::demand::{elasticity_matrix, estimate_demand};
use salesrank_core::optimal::{classify, ProfitMember, ProfitModel};
use salesrank_core::rankmap::{
    detect_purchases, fit_pareto, load_purchase_log, weekly_aggregate_bounded, weekly_aggregate_logged,
};
use salesrank_core::{PanelDataset, ParetoCalibration, PanelObservation, ProductId, RankSeries};

use crate::artifacts::{
    self, read_artifact, write_artifact, CalibrationArtifact, CalibrationParams, CostGroupArtifact,
    CostMemberArtifact, DemandGroupArtifact, OptimalityGroupArtifact, OptimalityMemberArtifact, ValidationArtifact,
};
use crate::config::{CalibrationMode, PipelineConfig};
use crate::error::{CliError, CliResult, Stage};
use crate::report;

fn require<'a>(path: &'a Option<PathBuf>, what: &str, stage: Stage) -> CliResult<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CliError::Input(format!("{stage}: no {what} path configured")))
}

fn load_rows(cfg: &PipelineConfig, path: &Path, stage: Stage) -> CliResult<LoadOutcome> {
    let load = load_observations(path).map_err(CliError::core(stage))?;
    if cfg.strict {
        return load.into_strict(path).map_err(CliError::core(stage));
    }
    for r in &load.rejected {
        warn!("{}: row {} rejected: {}", path.display(), r.row, r.reason);
    }
    Ok(load)
}

pub fn load_panel(cfg: &PipelineConfig, stage: Stage) -> CliResult<PanelDataset> {
    let obs = require(&cfg.paths.observations, "observations", stage)?;
    let cat = require(&cfg.paths.catalog, "catalog", stage)?;
    let load = load_rows(cfg, obs, stage)?;
    let catalog = load_catalog(cat).map_err(CliError::core(stage))?;
    validate_panel(load, catalog, cfg.validation.policy()).map_err(CliError::core(stage))
}

/// Skips a failed group with a warning, or fails the stage when strict.
fn group_failure(cfg: &PipelineConfig, stage: Stage, group_id: &str, err: salesrank_core::Error) -> CliResult<()> {
    if cfg.strict {
        return Err(CliError::Core { stage, source: err });
    }
    warn!("{stage}: group `{group_id}` skipped: {err}");
    Ok(())
}

pub fn run_validate(cfg: &PipelineConfig) -> CliResult<ValidationArtifact> {
    let stage = Stage::Validate;
    let panel = load_panel(cfg, stage)?;
    for w in panel.report().warnings.iter().chain(panel.group_warnings()) {
        warn!("{stage}: {w}");
    }
    let artifact = ValidationArtifact {
        report: panel.report().clone(),
        n_observations: panel.len(),
        n_products: panel.products().count(),
        groups: panel.groups().to_vec(),
        group_warnings: panel.group_warnings().to_vec(),
    };
    write_artifact(stage, &cfg.artifact(artifacts::VALIDATION), &artifact)?;
    info!(
        "{stage}: {} observations, {} groups",
        artifact.n_observations,
        artifact.groups.len()
    );
    Ok(artifact)
}

fn rank_series(rows: Vec<PanelObservation>) -> Vec<RankSeries> {
    let mut by_product: BTreeMap<ProductId, Vec<PanelObservation>> = BTreeMap::new();
    for o in rows {
        by_product.entry(o.product_id.clone()).or_default().push(o);
    }
    by_product
        .into_iter()
        .map(|(id, mut rows)| {
            rows.sort_by_key(|o| o.timestamp);
            RankSeries::from_observations(id, &rows)
        })
        .collect()
}

pub fn run_calibrate(cfg: &PipelineConfig) -> CliResult<CalibrationArtifact> {
    let stage = Stage::Calibrate;
    let c = &cfg.calibration;
    let params = CalibrationParams {
        theta: c.theta,
        min_abs_drop: c.min_abs_drop,
        plausibility_bound: c.plausibility_bound,
    };
    let artifact = match c.mode {
        CalibrationMode::Fixed => {
            let cal = ParetoCalibration::new(c.intercept, c.beta).map_err(CliError::core(stage))?;
            CalibrationArtifact {
                intercept: cal.intercept,
                beta: cal.beta,
                se_intercept: 0.0,
                se_beta: 0.0,
                n_pairs: 0,
                n_implausible: 0,
                params,
                log_base: "e".into(),
                source: "fixed".into(),
            }
        }
        CalibrationMode::Fit => {
            let input = match &cfg.paths.calibration_observations {
                Some(p) => p.as_path(),
                None => require(&cfg.paths.observations, "observations", stage)?,
            };
            let series = rank_series(load_rows(cfg, input, stage)?.observations);
            let (pairs, source) = match &cfg.paths.purchases {
                Some(log) => {
                    let purchases = load_purchase_log(log).map_err(CliError::core(stage))?;
                    (
                        weekly_aggregate_logged(&purchases, &series, c.plausibility_bound),
                        "purchase_log",
                    )
                }
                None => {
                    let detection = c.detection();
                    let events = series
                        .par_iter()
                        .map(|s| detect_purchases(s, &detection))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(CliError::core(stage))?;
                    let events: Vec<_> = events.into_iter().flatten().collect();
                    (
                        weekly_aggregate_bounded(&events, &series, c.plausibility_bound),
                        "detected_spikes",
                    )
                }
            };
            let (plausible, implausible): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|p| !p.implausible);
            if !implausible.is_empty() {
                warn!("{stage}: {} implausible weekly pairs left out of the fit", implausible.len());
            }
            let cal = fit_pareto(&plausible).map_err(CliError::core(stage))?;
            CalibrationArtifact {
                intercept: cal.intercept,
                beta: cal.beta,
                se_intercept: cal.se_intercept,
                se_beta: cal.se_beta,
                n_pairs: cal.n_pairs,
                n_implausible: implausible.len(),
                params,
                log_base: "e".into(),
                source: source.into(),
            }
        }
    };
    write_artifact(stage, &cfg.artifact(artifacts::CALIBRATION), &artifact)?;
    info!("{stage}: intercept {:.4}, beta {:.4}", artifact.intercept, artifact.beta);
    Ok(artifact)
}

fn calibration_from(stage: Stage, a: &CalibrationArtifact) -> CliResult<ParetoCalibration> {
    ParetoCalibration::new(a.intercept, a.beta).map_err(CliError::core(stage))
}

pub fn run_demand(cfg: &PipelineConfig) -> CliResult<Vec<DemandGroupArtifact>> {
    let stage = Stage::Demand;
    let cal: CalibrationArtifact = read_artifact(stage, &cfg.artifact(artifacts::CALIBRATION))?;
    let cal = calibration_from(stage, &cal)?;
    let panel = load_panel(cfg, stage)?;
    let spec = cfg.demand.spec()?;
    let results: Vec<_> = panel
        .groups()
        .par_iter()
        .map(|g| {
            let est = estimate_demand(g, &panel, &spec)?;
            let n = elasticity_matrix(&g.group_id, &g.members, &est.members, cal.beta)?;
            Ok(DemandGroupArtifact {
                group_id: g.group_id.clone(),
                relation: g.relation,
                pooled: est.pooled,
                beta_used: cal.beta,
                intercept_used: cal.intercept,
                members: est.members,
                member_order: n.members,
                elasticities: n.values,
                structural_zeros: n.structural_zeros,
            })
        })
        .collect();
    let mut out = Vec::new();
    for (g, r) in panel.groups().iter().zip(results) {
        match r {
            Ok(a) => out.push(a),
            Err(e) => group_failure(cfg, stage, &g.group_id, e)?,
        }
    }
    write_artifact(stage, &cfg.artifact(artifacts::DEMAND), &out)?;
    info!("{stage}: {} of {} groups estimated", out.len(), panel.groups().len());
    Ok(out)
}

fn elasticities_of(a: &DemandGroupArtifact) -> DMatrix<f64> {
    let n = a.member_order.len();
    DMatrix::from_fn(n, n, |i, j| a.elasticities[i][j])
}

pub fn run_costs(cfg: &PipelineConfig) -> CliResult<Vec<CostGroupArtifact>> {
    let stage = Stage::Costs;
    let cal: CalibrationArtifact = read_artifact(stage, &cfg.artifact(artifacts::CALIBRATION))?;
    let cal = calibration_from(stage, &cal)?;
    let demand: Vec<DemandGroupArtifact> = read_artifact(stage, &cfg.artifact(artifacts::DEMAND))?;
    let panel = load_panel(cfg, stage)?;
    let window = cfg.costs.window()?;
    let method = cfg.costs.share_method;
    let results: Vec<_> = demand
        .par_iter()
        .map(|d| {
            let ids = &d.member_order;
            let averages = window_averages(&panel, ids, &window, &cal)?;
            let shares = shares_for(method, &averages, d.beta_used)?;
            let prices: Vec<f64> = averages.iter().map(|a| a.price).collect();
            let est = estimate_costs(&d.group_id, ids, &prices, &shares, &elasticities_of(d), method)?;
            Ok(CostGroupArtifact {
                group_id: est.group_id,
                members: est
                    .members
                    .into_iter()
                    .zip(&averages)
                    .map(|(m, a)| CostMemberArtifact {
                        product_id: m.product_id,
                        price: m.price,
                        share: m.share,
                        m: m.m,
                        lerner: m.lerner,
                        marginal_cost: m.marginal_cost,
                        flags: m.flags,
                        quantity: a.quantity,
                        rank: a.rank,
                    })
                    .collect(),
                condition_estimate: est.condition_estimate,
                share_method: method,
                window,
            })
        })
        .collect();
    let mut out = Vec::new();
    for (d, r) in demand.iter().zip(results) {
        match r {
            Ok(a) => {
                for m in a.members.iter().filter(|m| !m.flags.is_empty()) {
                    warn!("{stage}: `{}` flagged {:?} (Lerner {:.3})", m.product_id, m.flags, m.lerner);
                }
                out.push(a)
            }
            Err(e) => group_failure(cfg, stage, &d.group_id, e)?,
        }
    }
    write_artifact(stage, &cfg.artifact(artifacts::COSTS), &out)?;
    info!("{stage}: {} groups", out.len());
    Ok(out)
}

/// Reads `product_id,marginal_cost` rows.
pub fn load_cost_override(stage: Stage, path: &Path) -> CliResult<BTreeMap<ProductId, f64>> {
    let corrupt = |reason: String| CliError::Input(format!("{stage}: {}: {reason}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| corrupt(e.to_string()))?;
    let header = rdr.headers().map_err(|e| corrupt(e.to_string()))?.clone();
    if header.iter().ne(["product_id", "marginal_cost"]) {
        return Err(corrupt("expected header `product_id,marginal_cost`".into()));
    }
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| corrupt(e.to_string()))?;
        let cost: f64 = rec
            .get(1)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| corrupt(format!("row {}: unparseable marginal_cost", i + 1)))?;
        out.insert(ProductId::new(rec.get(0).unwrap_or_default().trim()), cost);
    }
    Ok(out)
}

pub fn run_optimality(cfg: &PipelineConfig) -> CliResult<Vec<OptimalityGroupArtifact>> {
    let stage = Stage::Optimality;
    let demand: Vec<DemandGroupArtifact> = read_artifact(stage, &cfg.artifact(artifacts::DEMAND))?;
    let costs: Vec<CostGroupArtifact> = read_artifact(stage, &cfg.artifact(artifacts::COSTS))?;
    let overrides = cfg
        .optimality
        .cost_override
        .as_deref()
        .map(|p| load_cost_override(stage, p))
        .transpose()?;
    let opt = &cfg.optimality;
    let mut out = Vec::new();
    for c in &costs {
        let result = (|| {
            let d = demand
                .iter()
                .find(|d| d.group_id == c.group_id)
                .ok_or_else(|| salesrank_core::Error::InvalidInput("no demand estimates for this group".into()))?;
            let members = c
                .members
                .iter()
                .map(|m| {
                    let cost = match &overrides {
                        Some(o) => *o.get(&m.product_id).ok_or_else(|| {
                            salesrank_core::Error::InvalidInput(format!("cost override lacks `{}`", m.product_id))
                        })?,
                        None => m.marginal_cost,
                    };
                    Ok(ProfitMember {
                        product_id: m.product_id.clone(),
                        price: m.price,
                        cost,
                        quantity: m.quantity,
                    })
                })
                .collect::<salesrank_core::Result<Vec<_>>>()?;
            if members.iter().map(|m| &m.product_id).ne(d.member_order.iter()) {
                return Err(salesrank_core::Error::Dimension(
                    "cost and demand artifacts list members in different orders".into(),
                ));
            }
            let model = ProfitModel::new(members, elasticities_of(d), opt.k)?;
            let verdicts = classify(&model, opt.tolerance)?;
            Ok(OptimalityGroupArtifact {
                group_id: c.group_id.clone(),
                members: verdicts
                    .into_iter()
                    .zip(model.members())
                    .map(|(v, m)| OptimalityMemberArtifact {
                        product_id: v.product_id,
                        gradient: v.gradient,
                        normalized_gradient: v.normalized_gradient,
                        classification: v.classification,
                        price: m.price,
                        cost: m.cost,
                        quantity: m.quantity,
                    })
                    .collect(),
                tolerance: opt.tolerance,
                k: opt.k,
                cost_source: if overrides.is_some() { "override" } else { "estimated" }.into(),
            })
        })();
        match result {
            Ok(a) => out.push(a),
            Err(e) => group_failure(cfg, stage, &c.group_id, e)?,
        }
    }
    write_artifact(stage, &cfg.artifact(artifacts::OPTIMALITY), &out)?;
    info!("{stage}: {} groups classified", out.len());
    Ok(out)
}

pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> CliResult<()> {
    match stage {
        Stage::Validate => run_validate(cfg).map(drop),
        Stage::Calibrate => run_calibrate(cfg).map(drop),
        Stage::Demand => run_demand(cfg).map(drop),
        Stage::Costs => run_costs(cfg).map(drop),
        Stage::Optimality => run_optimality(cfg).map(drop),
        Stage::Report => report::run_report(cfg).map(drop),
        Stage::Simulate => Err(CliError::Input("simulate is not a pipeline stage".into())),
    }
}

/// Runs the pipeline stages in order starting at `from`.
pub fn run_pipeline(cfg: &PipelineConfig, from: Stage) -> CliResult<()> {
    if !Stage::PIPELINE.contains(&from) {
        return Err(CliError::Input(format!("`{from}` is not a pipeline stage")));
    }
    for stage in Stage::PIPELINE.into_iter().skip_while(|s| *s != from) {
        info!("running {stage}");
        run_stage(cfg, stage)?;
    }
    Ok(())
}
