//! Run configuration and the pipeline stages behind each subcommand.
//!
//! A run is fully described by one JSON [`RunConfig`]. Every randomised stage
//! draws from a stream derived from the global seed and the stage name, and
//! every stage writes a manifest carrying the hash of the resolved config, so
//! two runs with the same config produce byte-identical artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flowdata::{read_flows, threshold_name, write_flows, FlowFormat, FlowGenConfig};
use crate::io::{read_json, write_json};
use crate::metrics::RocCurve;
use crate::mlcore::ForestParams;
use crate::mobility::{evaluate_mobility, MobilityConfig, MobilityExperiment, MobilityReport};
use crate::predictors::{
    train_coverage_predictor, train_traffic_predictor, CoveragePredictor, TrafficPredictor,
};
use crate::radioenv::{
    gen_radio_samples, gen_trajectories, read_radio_samples, read_trajectories,
    write_radio_samples, write_trajectories, EnvConfig, RadioEnvironment,
};
use crate::rng;
use crate::steering::{
    check_invariants, curves_to_csv, curves_to_svg, measurement_savings, run_steering, Predictors,
    SavingsTable, SteeringConfig, SteeringRun, Strategy,
};

pub const FLOWS_FILE: &str = "flows.jsonl";
pub const RADIO_FILE: &str = "radio.jsonl";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const TRAFFIC_MODEL_FILE: &str = "traffic_model.json";
pub const COVERAGE_MODEL_FILE: &str = "coverage_model.json";
pub const TRAJECTORY_MODEL_FILE: &str = "trajectory_model.json";

/// Record counts of the generated corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub flows: usize,
    pub radio_samples: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            flows: 10_000,
            radio_samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    /// `env.seed` is replaced by a stream derived from `seed`.
    pub env: EnvConfig,
    pub flows: FlowGenConfig,
    pub forest: ForestParams,
    pub trajectories: MobilityExperiment,
    /// `mobility.seed` is replaced by a stream derived from `seed`.
    pub mobility: MobilityConfig,
    pub steering: SteeringConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            env: EnvConfig::default(),
            flows: FlowGenConfig::default(),
            forest: ForestParams::default(),
            trajectories: MobilityExperiment::default(),
            mobility: MobilityConfig::default(),
            steering: SteeringConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }

    /// Copy with per-stage seeds derived from the global seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.env.seed = rng::derive_named(self.seed, "env");
        c.mobility.seed = rng::derive_named(self.seed, "mobility");
        c.forest.seed = rng::derive_named(self.seed, "forest");
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.flows.validate()?;
        self.forest.validate()?;
        self.mobility.validate()?;
        self.steering.validate()?;
        if self.trajectories.routes == 0 {
            return Err(Error::config(
                "trajectories.routes",
                "need at least one route",
            ));
        }
        if self.trajectories.samples_per_trajectory < 2 {
            return Err(Error::config(
                "trajectories.samples_per_trajectory",
                "need at least two samples",
            ));
        }
        Ok(())
    }

    /// SHA-256 of the resolved config's canonical JSON, hex encoded. The
    /// output directory is not part of the experiment and is left out.
    pub fn hash(&self) -> String {
        let mut c = self.resolved();
        c.out_dir = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Written next to every stage's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Record counts per output file (rows for CSV, lines for JSONL).
    pub outputs: BTreeMap<String, usize>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub metrics: BTreeMap<String, f64>,
}

impl Manifest {
    fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config.hash(),
            seed: config.seed,
            outputs: BTreeMap::new(),
            metrics: BTreeMap::new(),
        }
    }

    fn write(&self, out: &Path) -> Result<()> {
        write_json(self, out.join(format!("{}.manifest.json", self.command)))
    }
}

fn prepare(config: &RunConfig, out: &Path) -> Result<RunConfig> {
    config.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    Ok(config.resolved())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_roc(path: &Path, roc: &RocCurve) -> Result<usize> {
    roc.write_csv(path)?;
    Ok(roc.points.len())
}

pub fn cmd_gen_flows(config: &RunConfig, out: &Path) -> Result<Manifest> {
    let c = prepare(config, out)?;
    let flows = c
        .flows
        .generate(c.data.flows, rng::derive_named(c.seed, "flows"));
    write_flows(&flows, out.join(FLOWS_FILE), FlowFormat::Jsonl)?;
    let mut m = Manifest::new("gen-flows", config);
    m.outputs.insert(FLOWS_FILE.into(), flows.len());
    m.write(out)?;
    info!("wrote {} flows", flows.len());
    Ok(m)
}

pub fn cmd_gen_radio(config: &RunConfig, out: &Path) -> Result<Manifest> {
    let c = prepare(config, out)?;
    let set = gen_radio_samples(&c.env, c.data.radio_samples)?;
    write_radio_samples(&set.samples, out.join(RADIO_FILE))?;
    let mut m = Manifest::new("gen-radio", config);
    m.outputs.insert(RADIO_FILE.into(), set.samples.len());
    m.metrics
        .insert("coverage_threshold_dbm".into(), set.threshold_dbm);
    m.metrics
        .insert("covered_fraction".into(), set.covered_fraction());
    m.write(out)?;
    Ok(m)
}

pub fn cmd_gen_trajectories(config: &RunConfig, out: &Path) -> Result<Manifest> {
    let c = prepare(config, out)?;
    let t = &c.trajectories;
    let trajs = gen_trajectories(
        &c.env,
        t.routes,
        t.train_devices_per_route + t.heldout_devices_per_route,
        t.samples_per_trajectory,
    )?;
    write_trajectories(&trajs, out.join(TRAJECTORIES_FILE))?;
    let mut m = Manifest::new("gen-trajectories", config);
    m.outputs.insert(TRAJECTORIES_FILE.into(), trajs.len());
    m.write(out)?;
    Ok(m)
}

pub fn traffic_roc_file(threshold: u64) -> String {
    format!("roc_traffic_{}.csv", threshold_name(threshold))
}

/// Train the volume classifiers. Returns the held-out AUC per threshold;
/// class-starved thresholds are absent from the map.
pub fn cmd_train_traffic(
    config: &RunConfig,
    data: &Path,
    out: &Path,
) -> Result<(Manifest, BTreeMap<u64, f64>)> {
    let c = prepare(config, out)?;
    let flows = read_flows(data, FlowFormat::Jsonl)?;
    let training = train_traffic_predictor(
        &flows,
        &c.forest,
        rng::derive_named(c.seed, "train-traffic"),
    )?;
    training.predictor.save(out.join(TRAFFIC_MODEL_FILE))?;
    let mut m = Manifest::new("train-traffic", config);
    m.outputs.insert(
        TRAFFIC_MODEL_FILE.into(),
        training.predictor.thresholds().len(),
    );
    let mut aucs = BTreeMap::new();
    for o in &training.outcomes {
        match &o.roc {
            Some(roc) => {
                let file = traffic_roc_file(o.threshold);
                m.outputs
                    .insert(file.clone(), write_roc(&out.join(&file), roc)?);
                m.metrics
                    .insert(format!("auc_{}", threshold_name(o.threshold)), roc.auc);
                aucs.insert(o.threshold, roc.auc);
            }
            None => log::warn!(
                "{}: not trained ({})",
                threshold_name(o.threshold),
                o.error.as_deref().unwrap_or("unknown")
            ),
        }
    }
    m.write(out)?;
    Ok((m, aucs))
}

pub fn cmd_train_coverage(config: &RunConfig, data: &Path, out: &Path) -> Result<(Manifest, f64)> {
    let c = prepare(config, out)?;
    let set = read_radio_samples(data)?;
    let training =
        train_coverage_predictor(&set, &c.forest, rng::derive_named(c.seed, "train-coverage"))?;
    training.predictor.save(out.join(COVERAGE_MODEL_FILE))?;
    let mut m = Manifest::new("train-coverage", config);
    m.outputs.insert(COVERAGE_MODEL_FILE.into(), 1);
    m.outputs.insert(
        "roc_coverage.csv".into(),
        write_roc(&out.join("roc_coverage.csv"), &training.roc)?,
    );
    m.metrics.insert("auc".into(), training.roc.auc);
    m.write(out)?;
    Ok((m, training.roc.auc))
}

/// Run the steering experiment with previously trained models.
pub fn cmd_steer(
    config: &RunConfig,
    models: &Path,
    out: &Path,
) -> Result<(Manifest, SteeringRun, SavingsTable)> {
    let c = prepare(config, out)?;
    let traffic = TrafficPredictor::load(models.join(TRAFFIC_MODEL_FILE))?;
    let coverage = CoveragePredictor::load(models.join(COVERAGE_MODEL_FILE))?;
    coverage.check_cells(c.env.primary_cells.len())?;
    traffic.model(c.steering.traffic_threshold_bytes)?;
    let env = RadioEnvironment::new(c.env.clone())?;
    let predictors = Predictors {
        traffic: Some(&traffic),
        coverage: Some(&coverage),
    };
    let run = run_steering(
        &env,
        &c.flows,
        &predictors,
        &c.steering,
        rng::derive_named(c.seed, "steer"),
    )?;
    let savings = measurement_savings(&run.curves);
    let csv = curves_to_csv(&run.curves);
    write_text(&out.join("curves.csv"), &csv)?;
    write_text(&out.join("curves.svg"), &curves_to_svg(&run.curves))?;
    write_text(&out.join("savings.csv"), &savings.to_csv())?;
    let invariants = check_invariants(&run);
    write_json(&invariants, out.join("invariants.json"))?;
    let mut m = Manifest::new("steer", config);
    m.outputs
        .insert("curves.csv".into(), csv.lines().count() - 1);
    m.outputs.insert("curves.svg".into(), run.curves.len());
    m.outputs.insert("savings.csv".into(), savings.rows.len());
    m.outputs
        .insert("invariants.json".into(), invariants.violations.len());
    if let Some(row) = savings.row(Strategy::Random) {
        m.metrics.insert(
            "random_unnecessary_rate".into(),
            row.iter().sum::<f64>() / row.len() as f64,
        );
    }
    m.write(out)?;
    Ok((m, run, savings))
}

pub fn cmd_mobility(
    config: &RunConfig,
    data: &Path,
    out: &Path,
) -> Result<(Manifest, MobilityReport)> {
    let c = prepare(config, out)?;
    let trajs = read_trajectories(data)?;
    let (model, report) = evaluate_mobility(&trajs, &c.trajectories, &c.mobility)?;
    model.save(out.join(TRAJECTORY_MODEL_FILE))?;
    write_json(&report, out.join("mobility_report.json"))?;
    let mut m = Manifest::new("mobility", config);
    m.outputs
        .insert(TRAJECTORY_MODEL_FILE.into(), model.templates.len());
    m.outputs.insert("mobility_report.json".into(), 1);
    m.metrics
        .insert("adjusted_rand_index".into(), report.adjusted_rand_index);
    m.metrics
        .insert("top1_accuracy".into(), report.top1_accuracy);
    m.metrics
        .insert("handover_accuracy".into(), report.handover_accuracy);
    m.write(out)?;
    Ok((m, report))
}

/// Everything the `report` command gathers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    /// Held-out AUC keyed by volume threshold in bytes.
    pub traffic_auc: BTreeMap<u64, f64>,
    pub coverage_auc: f64,
    pub savings: SavingsTable,
    pub steering_invariants_hold: bool,
    pub mobility: MobilityReport,
}

impl Summary {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("# steersim run\n\n");
        s.push_str(&format!(
            "config hash `{}`\n\n## Classifier AUC (held out)\n\n",
            self.config_hash
        ));
        s.push_str("| model | auc |\n|---|---|\n");
        for (k, v) in &self.traffic_auc {
            s.push_str(&format!("| traffic > {} | {v:.3} |\n", threshold_name(*k)));
        }
        s.push_str(&format!(
            "| secondary coverage | {:.3} |\n\n",
            self.coverage_auc
        ));
        s.push_str("## Unnecessary measurement rate\n\n| strategy |");
        for f in &self.savings.fractions {
            s.push_str(&format!(" f={f} |"));
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(self.savings.fractions.len()));
        s.push('\n');
        for (strategy, row) in &self.savings.rows {
            s.push_str(&format!("| {} |", strategy.name()));
            for v in row {
                s.push_str(&format!(" {:.3} |", v));
            }
            s.push('\n');
        }
        s.push_str(&format!(
            "\nPer-replication steering invariants hold: {}\n\n## Mobility\n\n",
            self.steering_invariants_hold
        ));
        s.push_str(&format!(
            "- adjusted Rand index: {:.3}\n- top-1 route accuracy: {:.3}\n- handover step within tolerance: {:.3}\n",
            self.mobility.adjusted_rand_index, self.mobility.top1_accuracy, self.mobility.handover_accuracy
        ));
        s
    }
}

/// Run every stage into `out` and write `summary.json` and `report.md`.
pub fn cmd_report(config: &RunConfig, out: &Path) -> Result<Summary> {
    cmd_gen_flows(config, out)?;
    cmd_gen_radio(config, out)?;
    cmd_gen_trajectories(config, out)?;
    let (_, traffic) = cmd_train_traffic(config, &out.join(FLOWS_FILE), out)?;
    let (_, coverage_auc) = cmd_train_coverage(config, &out.join(RADIO_FILE), out)?;
    let (_, run, savings) = cmd_steer(config, out, out)?;
    let (_, mobility) = cmd_mobility(config, &out.join(TRAJECTORIES_FILE), out)?;
    let summary = Summary {
        config_hash: config.hash(),
        traffic_auc: traffic,
        coverage_auc,
        savings,
        steering_invariants_hold: check_invariants(&run).holds(),
        mobility,
    };
    write_json(&summary, out.join("summary.json"))?;
    write_text(&out.join("report.md"), &summary.to_markdown())?;
    Ok(summary)
}
