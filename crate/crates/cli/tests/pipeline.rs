mod support;

use std::fs;

use salesrank_cli::artifacts::{OptimalityGroupArtifact, CALIBRATION, COSTS, OPTIMALITY};
use salesrank_cli::simulate::write_market;
use salesrank_core::scenarios::{group_panel, member, suite_versions};
use salesrank_core::simulate::{generate_market, GroupTemplate};
use salesrank_core::{Category, Relation};
use support::{copy_sample, salesrank, snapshot, stderr};
use tempfile::TempDir;

fn sample_run() -> TempDir {
    let dir = TempDir::new().unwrap();
    copy_sample(dir.path());
    let out = salesrank(dir.path(), &["pipeline", "--config", "pipeline.toml"]);
    assert!(out.status.success(), "{}", stderr(&out));
    dir
}

#[test]
fn sample_pipeline_writes_every_artifact() {
    let dir = sample_run();
    let out = dir.path().join("out");
    for f in [
        "validation.json",
        "calibration.json",
        "demand_estimates.json",
        "costs.json",
        "optimality.json",
        "summary.txt",
        "summary.json",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    for heading in ["Rank-to-sales calibration", "Demand estimates", "Implied marginal costs", "Pricing verdicts"] {
        assert!(summary.contains(heading), "{heading}");
    }
    assert!(summary.contains("log-log slope of -0.71"));
    assert!(!summary.contains("Sections not available"));

    let obs = fs::read_to_string(dir.path().join("observations.csv")).unwrap();
    let rows = obs.lines().filter(|l| l.starts_with("suite-pro,")).count();
    let plot = fs::read_to_string(out.join("plots/suite-pro_rank_time.csv")).unwrap();
    assert_eq!(plot.lines().count() - 1, rows);
    let plot = fs::read_to_string(out.join("plots/suite-pro_price_rank.csv")).unwrap();
    assert_eq!(plot.lines().count() - 1, rows);
}

#[test]
fn corrupt_calibration_is_named_in_the_error() {
    let dir = sample_run();
    fs::write(dir.path().join("out").join(CALIBRATION), "{\"intercept\": ").unwrap();
    let out = salesrank(dir.path(), &["demand", "--config", "pipeline.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains(CALIBRATION), "{}", stderr(&out));
}

#[test]
fn missing_artifact_exits_with_code_four() {
    let dir = TempDir::new().unwrap();
    copy_sample(dir.path());
    let out = salesrank(dir.path(), &["costs", "--config", "pipeline.toml"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains(CALIBRATION));
}

#[test]
fn unreadable_input_exits_with_code_two() {
    let dir = TempDir::new().unwrap();
    copy_sample(dir.path());
    fs::write(dir.path().join("observations.csv"), "product_id,when\nx,y\n").unwrap();
    let out = salesrank(dir.path(), &["validate", "--config", "pipeline.toml"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn resuming_from_a_stage_reproduces_the_full_run() {
    let dir = sample_run();
    let out = dir.path().join("out");
    let full = snapshot(&out);
    fs::remove_file(out.join(COSTS)).unwrap();
    fs::remove_file(out.join(OPTIMALITY)).unwrap();
    fs::remove_dir_all(out.join("plots")).unwrap();
    let run = salesrank(dir.path(), &["pipeline", "--config", "pipeline.toml", "--from", "costs"]);
    assert!(run.status.success(), "{}", stderr(&run));
    assert!(snapshot(&out) == full);
}

#[test]
fn report_lists_missing_sections() {
    let dir = TempDir::new().unwrap();
    copy_sample(dir.path());
    for stage in ["validate", "calibrate", "report"] {
        let out = salesrank(dir.path(), &[stage, "--config", "pipeline.toml"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let summary = fs::read_to_string(dir.path().join("out/summary.txt")).unwrap();
    assert!(summary.contains("Sections not available: demand, costs, optimality"));
}

#[test]
fn simulate_reproduces_the_committed_sample() {
    let dir = TempDir::new().unwrap();
    let sim = support::sample_dir().join("sim.toml");
    let out = salesrank(dir.path(), &["simulate", "--config", sim.to_str().unwrap(), "--out-dir", "."]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["observations.csv", "products.csv", "purchases.csv"] {
        assert!(
            fs::read(dir.path().join(f)).unwrap() == fs::read(support::sample_dir().join(f)).unwrap(),
            "{f} differs from the committed sample"
        );
    }
}

fn second_group() -> GroupTemplate {
    GroupTemplate {
        group_id: "tax".into(),
        relation: Relation::Generations,
        category: Category::BusinessProductivity,
        members: vec![member("tax-2024", 20.0, 32.0, 40.0), member("tax-2023", 14.0, 21.0, 35.0)],
        phi: vec![4.2, 4.0],
        gamma: vec![vec![0.0, -0.25], vec![-0.25, 0.0]],
        lambda: vec![-0.3, -0.3],
        omega: Default::default(),
    }
}

/// Noiseless market scored with its true costs: the pipeline's verdicts and
/// normalized gradients must match the simulator's.
#[test]
fn noiseless_market_verdicts_match_ground_truth() {
    let mut cfg = group_panel(suite_versions(), 21, 0.0);
    cfg.groups.push(second_group());
    for g in &mut cfg.groups {
        for m in &mut g.members {
            m.price_factor = 1.15;
        }
    }
    let market = generate_market(&cfg).unwrap();
    let dir = TempDir::new().unwrap();
    write_market(&market, dir.path()).unwrap();
    fs::write(
        dir.path().join("pipeline.toml"),
        format!(
            "[paths]\nobservations = \"observations.csv\"\ncatalog = \"products.csv\"\nout_dir = \"out\"\n\n\
             [calibration]\nmode = \"fixed\"\nintercept = {}\nbeta = {}\n\n\
             [optimality]\ncost_override = \"true_costs.csv\"\n",
            cfg.calibration.intercept, cfg.calibration.beta
        ),
    )
    .unwrap();
    let out = salesrank(dir.path(), &["pipeline", "--config", "pipeline.toml"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let verdicts: Vec<OptimalityGroupArtifact> =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out").join(OPTIMALITY)).unwrap()).unwrap();
    assert_eq!(verdicts.len(), 2);
    for g in &verdicts {
        assert_eq!(g.cost_source, "override");
        let truth = market.truth.group(&g.group_id).unwrap();
        for (i, m) in g.members.iter().enumerate() {
            assert_eq!(m.product_id, truth.members[i]);
            assert!(
                (m.normalized_gradient - truth.normalized_gradients[i]).abs() <= 1e-6,
                "{}: {} vs {}",
                m.product_id,
                m.normalized_gradient,
                truth.normalized_gradients[i]
            );
            assert_eq!(m.classification, truth.verdicts[i]);
        }
    }
}
