//! Human-readable and JSON summaries built from whatever artifacts exist,
//! plus plot-ready CSV series.

use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use serde::Serialize;
use serde_json::{json, Value};

use salesrank_core::dataset::format_timestamp;
use salesrank_core::demand::significance_stars;
use salesrank_core::rankmap::{log_log_slope, rank_to_quantity, REFERENCE_BETA, REFERENCE_CHECKPOINTS};
use salesrank_core::{DemandEstimates, ParetoCalibration, PanelDataset, ProductId};

use crate::artifacts::{
    self, read_optional, CalibrationArtifact, CostGroupArtifact, DemandGroupArtifact, OptimalityGroupArtifact,
    ValidationArtifact,
};
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult, Stage};
use crate::stages::load_panel;

#[derive(Debug, Clone, Default, Serialize)]
pub struct ReportInputs {
    pub validation: Option<ValidationArtifact>,
    pub calibration: Option<CalibrationArtifact>,
    pub demand: Option<Vec<DemandGroupArtifact>>,
    pub costs: Option<Vec<CostGroupArtifact>>,
    pub optimality: Option<Vec<OptimalityGroupArtifact>>,
}

impl ReportInputs {
    pub fn absent(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.validation.is_none() {
            out.push("validation");
        }
        if self.calibration.is_none() {
            out.push("calibration");
        }
        if self.demand.is_none() {
            out.push("demand");
        }
        if self.costs.is_none() {
            out.push("costs");
        }
        if self.optimality.is_none() {
            out.push("optimality");
        }
        out
    }
}

/// Two decimals, switching to scientific notation for small nonzero values
/// that would otherwise print as zero.
pub fn fmt_coef(x: f64) -> String {
    if x != 0.0 && x.abs() < 0.005 {
        format!("{x:.2e}")
    } else {
        format!("{x:.2}")
    }
}

/// Fixed decimals without a sign on values that round to zero.
pub fn fmt_fixed(x: f64, decimals: usize) -> String {
    let s = format!("{x:.decimals$}");
    match s.strip_prefix('-') {
        Some(rest) if rest.chars().all(|c| c == '0' || c == '.') => rest.to_string(),
        _ => s,
    }
}

pub fn fmt_estimate(estimate: f64, se: Option<f64>) -> String {
    match se {
        Some(se) => format!(
            "{}{} ({})",
            fmt_coef(estimate),
            significance_stars(estimate, se),
            fmt_coef(se)
        ),
        None => fmt_coef(estimate),
    }
}

fn control_name(label: &str) -> String {
    match label {
        "ln_days_release" => "ln(days since release)".into(),
        "avg_rating" => "average rating".into(),
        "ln_n_reviews" => "ln(number of reviews)".into(),
        other => other.into(),
    }
}

/// Rows of (variable, estimate, standard error) for one focal product.
pub fn coefficient_rows(est: &DemandEstimates) -> Vec<(String, f64, Option<f64>)> {
    let mut rows = vec![(format!("ln p({})", est.product_id), est.phi, est.se.get("phi").copied())];
    for (id, g) in &est.gammas {
        rows.push((format!("ln p({id})"), *g, est.se.get(&format!("gamma:{id}")).copied()));
    }
    if let Some(l) = est.lambda {
        rows.push(("ln p(marketplace)".into(), l, est.se.get("lambda").copied()));
    }
    for (label, c) in &est.controls {
        rows.push((control_name(label), *c, est.se.get(label).copied()));
    }
    rows
}

/// How far the rank/units checkpoints sit from the calibrated curve.
pub fn checkpoint_note(beta: f64, intercept: f64) -> (String, Value) {
    let slope = log_log_slope(&REFERENCE_CHECKPOINTS);
    let at_3100 = ParetoCalibration::new(intercept, beta)
        .and_then(|c| rank_to_quantity(REFERENCE_CHECKPOINTS[0].0, &c))
        .ok();
    let mut text = format!(
        "Rank/units checkpoints (3100 -> 2, 440 -> 10, 150 -> 25 units per week) imply a log-log slope of {slope:.2}, \
         against {beta:.3} in use (reference fit {REFERENCE_BETA:.3})."
    );
    if let Some(q) = at_3100 {
        let _ = write!(
            text,
            " The calibrated curve maps rank 3100 to {q:.2} units per week rather than 2. \
             The checkpoints are rough and are not used for fitting."
        );
    }
    let value = json!({
        "checkpoints": REFERENCE_CHECKPOINTS,
        "checkpoint_slope": slope,
        "beta_in_use": beta,
        "reference_beta": REFERENCE_BETA,
        "quantity_at_rank_3100": at_3100,
    });
    (text, value)
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let n = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::from("  ");
        for (i, (c, w)) in cells.iter().zip(&width).enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, "  {c:>w$}");
            }
        }
        s.trim_end().to_string()
    };
    let _ = writeln!(out, "{}", line(header.to_vec()));
    let _ = writeln!(out, "  {}", "-".repeat(width.iter().sum::<usize>() + 2 * (n - 1)));
    for r in rows {
        let _ = writeln!(out, "{}", line(r.iter().map(String::as_str).collect()));
    }
}

pub fn render_text(inputs: &ReportInputs) -> String {
    let mut out = String::from("Sales-rank pricing report\n=========================\n\n");

    if let Some(v) = &inputs.validation {
        let _ = writeln!(out, "Data");
        let _ = writeln!(
            out,
            "  {} observations over {} products, {} relation groups; {} rows rejected, {} prices filled, {} price gaps, {} rank gaps",
            v.n_observations,
            v.n_products,
            v.groups.len(),
            v.report.rows_rejected.len(),
            v.report.price_fills,
            v.report.price_gaps,
            v.report.rank_gaps
        );
        for w in v.report.warnings.iter().chain(&v.group_warnings) {
            let _ = writeln!(out, "  warning: {w}");
        }
        out.push('\n');
    }

    if let Some(c) = &inputs.calibration {
        let _ = writeln!(out, "Rank-to-sales calibration");
        let _ = writeln!(
            out,
            "  ln(Q + 1) = {:.3} ({:.3}) {} {:.3} ({:.3}) ln(rank)",
            c.intercept,
            c.se_intercept,
            if c.beta < 0.0 { "-" } else { "+" },
            c.beta.abs(),
            c.se_beta
        );
        let _ = writeln!(
            out,
            "  source: {}; {} weekly pairs fitted, {} implausible pairs excluded",
            c.source, c.n_pairs, c.n_implausible
        );
        out.push('\n');
    }
    let (beta, intercept) = inputs
        .calibration
        .as_ref()
        .map(|c| (c.beta, c.intercept))
        .unwrap_or((REFERENCE_BETA, salesrank_core::rankmap::REFERENCE_INTERCEPT));
    let _ = writeln!(out, "Note: {}\n", checkpoint_note(beta, intercept).0);

    if let Some(groups) = &inputs.demand {
        let _ = writeln!(out, "Demand estimates (dependent variable ln(sales rank); HC0 standard errors)");
        let _ = writeln!(out, "  *** p < 0.01, ** p < 0.05, * p < 0.10");
        for g in groups {
            let _ = writeln!(
                out,
                "\nGroup {} ({}{})",
                g.group_id,
                g.relation.as_str(),
                if g.pooled { ", pooled" } else { "" }
            );
            for est in &g.members {
                let rows: Vec<Vec<String>> = coefficient_rows(est)
                    .into_iter()
                    .map(|(name, b, se)| vec![name, fmt_estimate(b, se)])
                    .chain([
                        vec!["R-squared".into(), fmt_coef(est.r2)],
                        vec!["N".into(), est.n_obs.to_string()],
                    ])
                    .collect();
                let focal = format!("focal {}", est.product_id);
                table(&mut out, &[&focal, "estimate (s.e.)"], &rows);
                if !est.dropped.is_empty() {
                    let _ = writeln!(out, "  dropped as collinear: {}", est.dropped.join(", "));
                }
            }
            let _ = writeln!(out, "\n  Price elasticities (row: demand, column: price), beta = {:.3}", g.beta_used);
            let mut header = vec![""];
            header.extend(g.member_order.iter().map(ProductId::as_str));
            let rows: Vec<Vec<String>> = g
                .member_order
                .iter()
                .zip(&g.elasticities)
                .map(|(id, r)| std::iter::once(id.to_string()).chain(r.iter().map(|v| fmt_fixed(*v, 3))).collect())
                .collect();
            table(&mut out, &header, &rows);
            if !g.structural_zeros.is_empty() {
                let _ = writeln!(out, "  entries fixed at zero: {:?}", g.structural_zeros);
            }
        }
        out.push('\n');
    }

    if let Some(groups) = &inputs.costs {
        let _ = writeln!(out, "Implied marginal costs");
        for g in groups {
            let _ = writeln!(
                out,
                "\nGroup {} (shares: {}, condition estimate {:.3e})",
                g.group_id,
                g.share_method.as_str(),
                g.condition_estimate
            );
            let rows: Vec<Vec<String>> = g
                .members
                .iter()
                .map(|m| {
                    vec![
                        m.product_id.to_string(),
                        fmt_fixed(m.price, 2),
                        fmt_fixed(m.share, 4),
                        fmt_fixed(m.lerner, 3),
                        fmt_fixed(m.marginal_cost, 2),
                        m.flags.iter().map(|f| format!("{f:?}")).collect::<Vec<_>>().join(" "),
                    ]
                })
                .collect();
            table(&mut out, &["product", "price", "share", "Lerner", "cost", "flags"], &rows);
        }
        out.push('\n');
    }

    if let Some(groups) = &inputs.optimality {
        let _ = writeln!(out, "Pricing verdicts");
        let _ = writeln!(
            out,
            "  Gradients are profit per dollar of price at scale k; normalized values divide by group revenue and do not depend on k."
        );
        for g in groups {
            let _ = writeln!(
                out,
                "\nGroup {} (costs: {}, k = {}, tolerance {})",
                g.group_id, g.cost_source, g.k, g.tolerance
            );
            let rows: Vec<Vec<String>> = g
                .members
                .iter()
                .map(|m| {
                    vec![
                        m.product_id.to_string(),
                        fmt_fixed(m.price, 2),
                        fmt_fixed(m.cost, 2),
                        fmt_fixed(m.gradient, 3),
                        fmt_fixed(m.normalized_gradient, 4),
                        m.classification.to_string(),
                    ]
                })
                .collect();
            table(&mut out, &["product", "price", "cost", "gradient", "normalized", "verdict"], &rows);
        }
        out.push('\n');
    }

    let absent = inputs.absent();
    if !absent.is_empty() {
        let _ = writeln!(out, "Sections not available: {}", absent.join(", "));
    }
    out
}

pub fn render_json(inputs: &ReportInputs) -> Value {
    let (beta, intercept) = inputs
        .calibration
        .as_ref()
        .map(|c| (c.beta, c.intercept))
        .unwrap_or((REFERENCE_BETA, salesrank_core::rankmap::REFERENCE_INTERCEPT));
    let mut v = serde_json::to_value(inputs).unwrap_or(Value::Null);
    if let Value::Object(map) = &mut v {
        map.insert("checkpoint_note".into(), checkpoint_note(beta, intercept).1);
        map.insert("absent".into(), json!(inputs.absent()));
    }
    v
}

fn write_plot_series(panel: &PanelDataset, ids: &[ProductId], dir: &Path) -> CliResult<usize> {
    let stage = Stage::Report;
    std::fs::create_dir_all(dir).map_err(CliError::io(stage, dir))?;
    let csv_err = |path: &Path| {
        let path = path.to_path_buf();
        move |e: csv::Error| CliError::Input(format!("{stage}: cannot write {}: {e}", path.display()))
    };
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut written = 0;
    for id in ids {
        let Some(rows) = panel.series(id) else {
            warn!("{stage}: no observations for `{id}`, no plot series");
            continue;
        };
        let path = dir.join(format!("{id}_rank_time.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        w.write_record(["timestamp", "sales_rank"]).map_err(csv_err(&path))?;
        for o in rows {
            w.write_record([format_timestamp(&o.timestamp), opt(o.sales_rank)])
                .map_err(csv_err(&path))?;
        }
        w.flush().map_err(CliError::io(stage, &path))?;

        let path = dir.join(format!("{id}_price_rank.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        w.write_record(["amazon_price", "sales_rank"]).map_err(csv_err(&path))?;
        for o in rows {
            w.write_record([opt(o.amazon_price), opt(o.sales_rank)])
                .map_err(csv_err(&path))?;
        }
        w.flush().map_err(CliError::io(stage, &path))?;
        written += 1;
    }
    Ok(written)
}

pub fn load_inputs(cfg: &PipelineConfig) -> CliResult<ReportInputs> {
    let stage = Stage::Report;
    Ok(ReportInputs {
        validation: read_optional(stage, &cfg.artifact(artifacts::VALIDATION))?,
        calibration: read_optional(stage, &cfg.artifact(artifacts::CALIBRATION))?,
        demand: read_optional(stage, &cfg.artifact(artifacts::DEMAND))?,
        costs: read_optional(stage, &cfg.artifact(artifacts::COSTS))?,
        optimality: read_optional(stage, &cfg.artifact(artifacts::OPTIMALITY))?,
    })
}

pub fn run_report(cfg: &PipelineConfig) -> CliResult<ReportInputs> {
    let stage = Stage::Report;
    let inputs = load_inputs(cfg)?;
    let text_path = cfg.artifact(artifacts::SUMMARY_TEXT);
    std::fs::create_dir_all(cfg.out_dir()).map_err(CliError::io(stage, cfg.out_dir()))?;
    std::fs::write(&text_path, render_text(&inputs)).map_err(CliError::io(stage, &text_path))?;
    artifacts::write_artifact(stage, &cfg.artifact(artifacts::SUMMARY_JSON), &render_json(&inputs))?;

    if cfg.paths.observations.is_some() && cfg.paths.catalog.is_some() {
        match load_panel(cfg, stage) {
            Ok(panel) => {
                let ids: Vec<ProductId> = if cfg.report.plot_products.is_empty() {
                    panel.groups().iter().flat_map(|g| g.members.iter().cloned()).collect()
                } else {
                    cfg.report.plot_products.iter().map(ProductId::new).collect()
                };
                let n = write_plot_series(&panel, &ids, &cfg.artifact(artifacts::PLOT_DIR))?;
                info!("{stage}: plot series for {n} products");
            }
            Err(e) if !cfg.strict => warn!("{stage}: no plot series: {e}"),
            Err(e) => return Err(e),
        }
    }
    Ok(inputs)
}
