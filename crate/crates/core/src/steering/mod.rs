//! Device selection for secondary-carrier offload.
//!
//! Each replication draws a fresh cell of devices, each with one flow and a
//! ground-truth secondary coverage flag, ranks the devices with every
//! strategy and offloads the top fraction. Only covered devices contribute
//! volume; selected devices without coverage count as unnecessary
//! measurements.

mod report;

use log::info;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowdata::{FlowGenConfig, FlowRecord, THRESHOLD_10KB};
use crate::mlcore::ForestParams;
use crate::predictors::{
    predict_coverage_proba, predict_volume_proba, train_coverage_predictor,
    train_traffic_predictor, CoveragePredictor, CoverageTraining, TrafficPredictor,
    TrafficTraining,
};
use crate::radioenv::{RadioEnvironment, RadioSample};
use crate::rng;

pub use report::{curves_to_csv, curves_to_svg, measurement_savings, SavingsTable, CURVES_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Coverage,
    Traffic,
    CoverageTraffic,
    /// Ground-truth coverage times true volume; an upper bound, not a strategy.
    Oracle,
}

impl Strategy {
    pub const PREDICTIVE: [Strategy; 4] = [
        Strategy::Random,
        Strategy::Coverage,
        Strategy::Traffic,
        Strategy::CoverageTraffic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Coverage => "coverage",
            Strategy::Traffic => "traffic",
            Strategy::CoverageTraffic => "coverage_traffic",
            Strategy::Oracle => "oracle",
        }
    }
}

/// How the coverage and traffic probabilities are merged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum CombineRule {
    #[default]
    Product,
    Min,
    WeightedSum {
        coverage_weight: f64,
    },
}

impl CombineRule {
    pub fn combine(self, p_coverage: f64, p_traffic: f64) -> f64 {
        match self {
            CombineRule::Product => p_coverage * p_traffic,
            CombineRule::Min => p_coverage.min(p_traffic),
            CombineRule::WeightedSum { coverage_weight: w } => {
                w * p_coverage + (1.0 - w) * p_traffic
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteeringConfig {
    pub n_devices: usize,
    pub fractions: Vec<f64>,
    pub replications: usize,
    pub combine: CombineRule,
    /// Volume threshold of the traffic model used for ranking.
    pub traffic_threshold_bytes: u64,
    /// Size of the corpora the two predictors are trained on.
    pub training_flows: usize,
    pub training_radio_samples: usize,
    /// Also evaluate the ground-truth oracle.
    pub include_oracle: bool,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        Self {
            n_devices: 100,
            fractions: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0],
            replications: 50,
            combine: CombineRule::Product,
            traffic_threshold_bytes: THRESHOLD_10KB,
            training_flows: 10_000,
            training_radio_samples: 10_000,
            include_oracle: true,
        }
    }
}

impl SteeringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_devices == 0 {
            return Err(Error::config("steering.n_devices", "must be positive"));
        }
        if self.fractions.is_empty() {
            return Err(Error::config("steering.fractions", "grid is empty"));
        }
        if let Some(f) = self.fractions.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::config(
                "steering.fractions",
                format!("{f} is outside (0,1]"),
            ));
        }
        if self.fractions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "steering.fractions",
                "must be strictly increasing",
            ));
        }
        if self.replications == 0 {
            return Err(Error::config("steering.replications", "need at least one"));
        }
        if let CombineRule::WeightedSum { coverage_weight } = self.combine {
            if !(0.0..=1.0).contains(&coverage_weight) {
                return Err(Error::config(
                    "steering.combine.coverage_weight",
                    "must lie in [0,1]",
                ));
            }
        }
        Ok(())
    }

    pub fn strategies(&self) -> Vec<Strategy> {
        let mut s = Strategy::PREDICTIVE.to_vec();
        if self.include_oracle {
            s.push(Strategy::Oracle);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDevice {
    pub device_id: u64,
    pub sample: RadioSample,
    pub flow: FlowRecord,
}

/// One cell's worth of devices, each with one flow.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringScenario {
    pub devices: Vec<ScenarioDevice>,
}

impl SteeringScenario {
    /// Devices from placement stream `placement` and flows from `flow_seed`.
    pub fn draw(
        env: &RadioEnvironment,
        flows: &FlowGenConfig,
        n: usize,
        placement: u64,
        flow_seed: u64,
    ) -> Result<Self> {
        let radio = env.draw_samples(n, placement)?;
        let flows = flows.generate(n, flow_seed);
        Ok(Self {
            devices: radio
                .samples
                .into_iter()
                .zip(flows)
                .map(|(sample, flow)| ScenarioDevice {
                    device_id: sample.device_id,
                    sample,
                    flow,
                })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }
}

/// Trained models a strategy may need.
#[derive(Debug, Clone, Copy, Default)]
pub struct Predictors<'a> {
    pub traffic: Option<&'a TrafficPredictor>,
    pub coverage: Option<&'a CoveragePredictor>,
}

fn traffic_scores(s: &SteeringScenario, p: &Predictors, threshold: u64) -> Result<Vec<f64>> {
    let t = p.traffic.ok_or(Error::MissingPredictor("traffic"))?;
    s.devices
        .iter()
        .map(|d| predict_volume_proba(t, d.flow.key(), d.flow.first_packet(), threshold))
        .collect()
}

fn coverage_scores(s: &SteeringScenario, p: &Predictors) -> Result<Vec<f64>> {
    let c = p.coverage.ok_or(Error::MissingPredictor("coverage"))?;
    s.devices
        .iter()
        .map(|d| predict_coverage_proba(c, &d.sample))
        .collect()
}

/// Per-device ranking score; higher is offloaded first.
pub fn score_devices(
    scenario: &SteeringScenario,
    strategy: Strategy,
    predictors: &Predictors,
    config: &SteeringConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    match strategy {
        Strategy::Random => {
            let mut r = rng::rng_from(seed);
            Ok(scenario.devices.iter().map(|_| r.random::<f64>()).collect())
        }
        Strategy::Coverage => coverage_scores(scenario, predictors),
        Strategy::Traffic => traffic_scores(scenario, predictors, config.traffic_threshold_bytes),
        Strategy::CoverageTraffic => {
            let c = coverage_scores(scenario, predictors)?;
            let t = traffic_scores(scenario, predictors, config.traffic_threshold_bytes)?;
            Ok(c.iter()
                .zip(&t)
                .map(|(&c, &t)| config.combine.combine(c, t))
                .collect())
        }
        Strategy::Oracle => Ok(scenario
            .devices
            .iter()
            .map(|d| {
                if d.sample.covered {
                    d.flow.total_volume() as f64
                } else {
                    0.0
                }
            })
            .collect()),
    }
}

/// Number of devices selected at fraction `f`; zero means the point is skipped.
pub fn selection_size(f: f64, n: usize) -> usize {
    ((f * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Device indices by descending score, device id ascending on ties.
pub fn rank(scenario: &SteeringScenario, scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scenario.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].total_cmp(&scores[a]).then(
            scenario.devices[a]
                .device_id
                .cmp(&scenario.devices[b].device_id),
        )
    });
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub fraction: f64,
    pub selected: usize,
    pub offloaded_bytes: u64,
    pub unnecessary: usize,
}

impl SelectionOutcome {
    pub fn unnecessary_rate(&self) -> f64 {
        self.unnecessary as f64 / self.selected as f64
    }
}

/// Outcome of offloading the top of `order` at every grid fraction.
pub fn evaluate_selection(
    scenario: &SteeringScenario,
    order: &[usize],
    fractions: &[f64],
) -> Vec<SelectionOutcome> {
    let n = scenario.len();
    fractions
        .iter()
        .filter_map(|&f| {
            let k = selection_size(f, n);
            if k == 0 {
                return None;
            }
            let mut offloaded_bytes = 0;
            let mut unnecessary = 0;
            for &i in &order[..k] {
                let d = &scenario.devices[i];
                if d.sample.covered {
                    offloaded_bytes += d.flow.total_volume();
                } else {
                    unnecessary += 1;
                }
            }
            Some(SelectionOutcome {
                fraction: f,
                selected: k,
                offloaded_bytes,
                unnecessary,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub replication: usize,
    pub covered_devices: usize,
    pub outcomes: Vec<(Strategy, Vec<SelectionOutcome>)>,
}

impl ReplicationResult {
    pub fn outcome(&self, strategy: Strategy) -> Option<&[SelectionOutcome]> {
        self.outcomes
            .iter()
            .find(|(s, _)| *s == strategy)
            .map(|(_, o)| o.as_slice())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub offloaded_bytes_mean: f64,
    /// Sample standard deviation over replications (0 for one replication).
    pub offloaded_bytes_std: f64,
    pub unnecessary_rate_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringCurve {
    pub strategy: Strategy,
    pub replications: usize,
    pub points: Vec<CurvePoint>,
}

impl SteeringCurve {
    pub fn point(&self, fraction: f64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.fraction == fraction)
    }
}

#[derive(Debug, Clone)]
pub struct SteeringRun {
    pub curves: Vec<SteeringCurve>,
    pub replications: Vec<ReplicationResult>,
}

impl SteeringRun {
    pub fn curve(&self, strategy: Strategy) -> Option<&SteeringCurve> {
        self.curves.iter().find(|c| c.strategy == strategy)
    }
}

/// Stream seeds of one replication, derived from the run seed.
struct ReplicationSeeds {
    placement: u64,
    flows: u64,
    random: u64,
}

fn replication_seeds(seed: u64, rep: usize) -> ReplicationSeeds {
    let r = rep as u64;
    ReplicationSeeds {
        placement: rng::derive_indexed(rng::derive_named(seed, "scenario-placement"), r),
        flows: rng::derive_indexed(rng::derive_named(seed, "scenario-flows"), r),
        random: rng::derive_indexed(rng::derive_named(seed, "random-scores"), r),
    }
}

/// Run every strategy over `config.replications` fresh scenarios. Replications
/// run in parallel; results are gathered in replication order.
pub fn run_steering(
    env: &RadioEnvironment,
    flows: &FlowGenConfig,
    predictors: &Predictors,
    config: &SteeringConfig,
    seed: u64,
) -> Result<SteeringRun> {
    config.validate()?;
    flows.validate()?;
    let strategies = config.strategies();
    let replications: Vec<ReplicationResult> = (0..config.replications)
        .into_par_iter()
        .map(|rep| -> Result<ReplicationResult> {
            let seeds = replication_seeds(seed, rep);
            let scenario =
                SteeringScenario::draw(env, flows, config.n_devices, seeds.placement, seeds.flows)?;
            let mut outcomes = Vec::with_capacity(strategies.len());
            for &s in &strategies {
                let scores = score_devices(&scenario, s, predictors, config, seeds.random)?;
                let order = rank(&scenario, &scores);
                outcomes.push((s, evaluate_selection(&scenario, &order, &config.fractions)));
            }
            Ok(ReplicationResult {
                replication: rep,
                covered_devices: scenario.devices.iter().filter(|d| d.sample.covered).count(),
                outcomes,
            })
        })
        .collect::<Result<_>>()?;
    let curves = strategies
        .iter()
        .map(|&s| aggregate(s, &replications))
        .collect();
    info!(
        "steering: {} replications of {} devices",
        config.replications, config.n_devices
    );
    Ok(SteeringRun {
        curves,
        replications,
    })
}

fn aggregate(strategy: Strategy, reps: &[ReplicationResult]) -> SteeringCurve {
    let per_rep: Vec<&[SelectionOutcome]> =
        reps.iter().filter_map(|r| r.outcome(strategy)).collect();
    let n_points = per_rep.first().map_or(0, |o| o.len());
    let n = per_rep.len() as f64;
    let points = (0..n_points)
        .map(|j| {
            let vols: Vec<f64> = per_rep
                .iter()
                .map(|o| o[j].offloaded_bytes as f64)
                .collect();
            let mean = vols.iter().sum::<f64>() / n;
            let var = if per_rep.len() > 1 {
                vols.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            CurvePoint {
                fraction: per_rep[0][j].fraction,
                offloaded_bytes_mean: mean,
                offloaded_bytes_std: var.sqrt(),
                unnecessary_rate_mean: per_rep.iter().map(|o| o[j].unnecessary_rate()).sum::<f64>()
                    / n,
            }
        })
        .collect();
    SteeringCurve {
        strategy,
        replications: per_rep.len(),
        points,
    }
}

/// Invariants that must hold in every single replication.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub replications_checked: usize,
    pub violations: Vec<String>,
}

impl InvariantReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check per replication: volume nondecreasing in the fraction, rates in
/// [0,1], the oracle bounding every strategy, and all strategies equal when
/// every device is selected.
pub fn check_invariants(run: &SteeringRun) -> InvariantReport {
    let mut report = InvariantReport::default();
    for rep in &run.replications {
        report.replications_checked += 1;
        let r = rep.replication;
        for (s, outcomes) in &rep.outcomes {
            for w in outcomes.windows(2) {
                if w[1].offloaded_bytes < w[0].offloaded_bytes {
                    report.violations.push(format!(
                        "replication {r}: {} volume drops from f={} to f={}",
                        s.name(),
                        w[0].fraction,
                        w[1].fraction
                    ));
                }
            }
            for o in outcomes {
                if !(0.0..=1.0).contains(&o.unnecessary_rate()) {
                    report
                        .violations
                        .push(format!("replication {r}: {} rate out of range", s.name()));
                }
            }
        }
        if let Some(oracle) = rep.outcome(Strategy::Oracle) {
            for (s, outcomes) in &rep.outcomes {
                for (o, b) in outcomes.iter().zip(oracle) {
                    if o.offloaded_bytes > b.offloaded_bytes {
                        report.violations.push(format!(
                            "replication {r}: {} beats the oracle at f={}",
                            s.name(),
                            o.fraction
                        ));
                    }
                }
            }
        }
        let full: Vec<u64> = rep
            .outcomes
            .iter()
            .filter_map(|(_, o)| o.iter().find(|x| x.fraction == 1.0))
            .map(|o| o.offloaded_bytes)
            .collect();
        if full.windows(2).any(|w| w[0] != w[1]) {
            report.violations.push(format!(
                "replication {r}: strategies differ with every device selected"
            ));
        }
    }
    report
}

/// The two predictors trained on corpora drawn from streams no scenario uses.
pub struct TrainedPredictors {
    pub traffic: TrafficTraining,
    pub coverage: CoverageTraining,
}

impl TrainedPredictors {
    pub fn as_predictors(&self) -> Predictors<'_> {
        Predictors {
            traffic: Some(&self.traffic.predictor),
            coverage: Some(&self.coverage.predictor),
        }
    }
}

pub fn train_predictors(
    env: &RadioEnvironment,
    flows: &FlowGenConfig,
    forest: &ForestParams,
    config: &SteeringConfig,
    seed: u64,
) -> Result<TrainedPredictors> {
    let corpus = flows.generate(
        config.training_flows,
        rng::derive_named(seed, "traffic-corpus"),
    );
    let traffic =
        train_traffic_predictor(&corpus, forest, rng::derive_named(seed, "traffic-model"))?;
    let radio = env.draw_samples(
        config.training_radio_samples,
        rng::derive_named(seed, "coverage-corpus"),
    )?;
    let coverage =
        train_coverage_predictor(&radio, forest, rng::derive_named(seed, "coverage-model"))?;
    Ok(TrainedPredictors { traffic, coverage })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radioenv::EnvConfig;

    fn quick() -> (
        RadioEnvironment,
        FlowGenConfig,
        TrainedPredictors,
        SteeringConfig,
    ) {
        let env = RadioEnvironment::new(EnvConfig::default()).unwrap();
        let flows = FlowGenConfig::default();
        let cfg = SteeringConfig {
            replications: 6,
            training_flows: 2000,
            training_radio_samples: 2000,
            ..SteeringConfig::default()
        };
        let forest = ForestParams {
            n_trees: 20,
            ..ForestParams::default()
        };
        let trained = train_predictors(&env, &flows, &forest, &cfg, 5).unwrap();
        (env, flows, trained, cfg)
    }

    #[test]
    fn combine_rules() {
        assert_eq!(CombineRule::Product.combine(1.0, 0.3), 0.3);
        assert_eq!(CombineRule::Product.combine(0.0, 0.9), 0.0);
        assert_eq!(CombineRule::Product.combine(0.7, 0.0), 0.0);
        assert_eq!(CombineRule::Min.combine(0.2, 0.9), 0.2);
        let w = CombineRule::WeightedSum {
            coverage_weight: 0.25,
        };
        assert!((w.combine(1.0, 0.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn selection_size_rounds_up_without_float_noise() {
        assert_eq!(selection_size(0.07, 100), 7);
        assert_eq!(selection_size(0.01, 100), 1);
        assert_eq!(selection_size(0.015, 100), 2);
        assert_eq!(selection_size(0.001, 100), 1);
        assert_eq!(selection_size(1.0, 100), 100);
        assert_eq!(selection_size(0.01, 10), 1);
    }

    #[test]
    fn ties_break_by_device_id() {
        let env = RadioEnvironment::new(EnvConfig::default()).unwrap();
        let s = SteeringScenario::draw(&env, &FlowGenConfig::default(), 5, 1, 2).unwrap();
        assert_eq!(rank(&s, &[0.5, 0.9, 0.5, 0.9, 0.1]), vec![1, 3, 0, 2, 4]);
    }

    #[test]
    fn random_scores_reproducible_and_predictors_required() {
        let env = RadioEnvironment::new(EnvConfig::default()).unwrap();
        let s = SteeringScenario::draw(&env, &FlowGenConfig::default(), 50, 1, 2).unwrap();
        let cfg = SteeringConfig::default();
        let none = Predictors::default();
        let a = score_devices(&s, Strategy::Random, &none, &cfg, 9).unwrap();
        assert_eq!(
            a,
            score_devices(&s, Strategy::Random, &none, &cfg, 9).unwrap()
        );
        assert_ne!(
            a,
            score_devices(&s, Strategy::Random, &none, &cfg, 10).unwrap()
        );
        for strategy in [
            Strategy::Coverage,
            Strategy::Traffic,
            Strategy::CoverageTraffic,
        ] {
            assert!(matches!(
                score_devices(&s, strategy, &none, &cfg, 0),
                Err(Error::MissingPredictor(_))
            ));
        }
    }

    #[test]
    fn grid_validation() {
        for bad in [vec![], vec![0.0, 0.5], vec![0.5, 1.5], vec![0.5, 0.2]] {
            let cfg = SteeringConfig {
                fractions: bad,
                ..SteeringConfig::default()
            };
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn run_invariants_and_determinism() {
        let (env, flows, trained, cfg) = quick();
        let p = trained.as_predictors();
        let run = run_steering(&env, &flows, &p, &cfg, 3).unwrap();
        let inv = check_invariants(&run);
        assert_eq!(inv.replications_checked, 6);
        assert!(inv.holds(), "{:?}", inv.violations);
        for rep in &run.replications {
            assert_eq!(rep.covered_devices, 22);
        }
        let full: Vec<f64> = run
            .curves
            .iter()
            .map(|c| c.point(1.0).unwrap().offloaded_bytes_mean)
            .collect();
        assert!(full.windows(2).all(|w| w[0] == w[1]));
        let again = run_steering(&env, &flows, &p, &cfg, 3).unwrap();
        assert_eq!(curves_to_csv(&run.curves), curves_to_csv(&again.curves));
    }

    #[test]
    fn replication_results_do_not_depend_on_thread_count() {
        let (env, flows, trained, cfg) = quick();
        let p = trained.as_predictors();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let single = pool.install(|| run_steering(&env, &flows, &p, &cfg, 8).unwrap());
        let many = run_steering(&env, &flows, &p, &cfg, 8).unwrap();
        assert_eq!(single.replications, many.replications);
    }

    #[test]
    fn csv_svg_and_savings_layout() {
        let (env, flows, trained, mut cfg) = quick();
        cfg.replications = 2;
        let run = run_steering(&env, &flows, &trained.as_predictors(), &cfg, 1).unwrap();
        let csv = curves_to_csv(&run.curves);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CURVES_HEADER));
        assert_eq!(lines.count(), 5 * cfg.fractions.len());
        for s in Strategy::PREDICTIVE {
            assert!(csv.contains(&format!("\n{},", s.name())));
        }
        let svg = curves_to_svg(&run.curves);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 5);
        let table = measurement_savings(&run.curves);
        assert_eq!(table.fractions, cfg.fractions);
        for (_, row) in &table.rows {
            assert!(row.iter().all(|r| (0.0..=1.0).contains(r)));
        }
        assert!(table.to_csv().starts_with("strategy,0.01,0.02"));
    }

    #[test]
    fn oracle_bounds_hand_built_scenario() {
        let env = RadioEnvironment::new(EnvConfig::default()).unwrap();
        let s = SteeringScenario::draw(&env, &FlowGenConfig::default(), 100, 4, 4).unwrap();
        let cfg = SteeringConfig::default();
        let none = Predictors::default();
        let oracle = score_devices(&s, Strategy::Oracle, &none, &cfg, 0).unwrap();
        let best = evaluate_selection(&s, &rank(&s, &oracle), &cfg.fractions);
        for seed in 0..20 {
            let r = score_devices(&s, Strategy::Random, &none, &cfg, seed).unwrap();
            let got = evaluate_selection(&s, &rank(&s, &r), &cfg.fractions);
            for (g, b) in got.iter().zip(&best) {
                assert!(g.offloaded_bytes <= b.offloaded_bytes);
            }
        }
    }
}
