//! The `simulate` command: a synthetic market written as pipeline inputs
//! plus the ground truth needed to score the pipeline.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::info;

use salesrank_core::dataset::{write_catalog, write_observations};
use salesrank_core::rankmap::{write_purchase_log, LoggedPurchase};
use salesrank_core::simulate::{generate_market, ground_truth_report};
use salesrank_core::{Market, SimConfig};

use crate::artifacts::write_artifact;
use crate::error::{CliError, CliResult, Stage};

pub const OBSERVATIONS: &str = "observations.csv";
pub const PRODUCTS: &str = "products.csv";
pub const PURCHASES: &str = "purchases.csv";
pub const GROUND_TRUTH: &str = "ground_truth.json";
pub const TRUE_COSTS: &str = "true_costs.csv";

pub fn load_sim_config(path: &Path) -> CliResult<SimConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read simulation config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Input(format!("invalid simulation config {}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(CliError::io(Stage::Simulate, path))
}

/// Writes the market files into `out_dir` and returns their paths.
pub fn write_market(market: &Market, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let stage = Stage::Simulate;
    std::fs::create_dir_all(out_dir).map_err(CliError::io(stage, out_dir))?;
    let core = CliError::core(stage);
    let paths: Vec<PathBuf> = [OBSERVATIONS, PRODUCTS, PURCHASES, GROUND_TRUTH, TRUE_COSTS]
        .iter()
        .map(|n| out_dir.join(n))
        .collect();

    write_observations(create(&paths[0])?, &market.observations).map_err(CliError::core(stage))?;
    write_catalog(create(&paths[1])?, &market.catalog).map_err(CliError::core(stage))?;
    let purchases: Vec<LoggedPurchase> = market
        .truth
        .events
        .iter()
        .map(|e| LoggedPurchase {
            product_id: e.product_id.clone(),
            timestamp: e.timestamp,
            units: 1,
        })
        .collect();
    write_purchase_log(create(&paths[2])?, &purchases).map_err(CliError::core(stage))?;

    let report = ground_truth_report(&market.truth).map_err(core)?;
    let truth = serde_json::json!({ "truth": market.truth, "report": report });
    write_artifact(stage, &paths[3], &truth)?;

    let mut w = csv::Writer::from_writer(create(&paths[4])?);
    let csv_err = |e: csv::Error| CliError::Input(format!("{stage}: cannot write {TRUE_COSTS}: {e}"));
    w.write_record(["product_id", "marginal_cost"]).map_err(csv_err)?;
    for p in market.truth.products.iter().filter(|p| p.group_id.is_some()) {
        w.write_record([p.product_id.as_str(), &p.cost.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(CliError::io(stage, &paths[4]))?;
    Ok(paths)
}

pub fn run_simulate(config: &Path, seed: Option<u64>, out_dir: &Path) -> CliResult<Market> {
    let mut cfg = load_sim_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let market = generate_market(&cfg).map_err(CliError::core(Stage::Simulate))?;
    write_market(&market, out_dir)?;
    info!(
        "simulate: {} observations, {} products, {} purchases into {}",
        market.observations.len(),
        market.catalog.len(),
        market.truth.events.len(),
        out_dir.display()
    );
    Ok(market)
}
