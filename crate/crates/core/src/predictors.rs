//! The first-packet traffic-volume classifiers and the secondary-carrier
//! coverage classifier.

use std::collections::BTreeMap;
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowdata::{
    threshold_name, FlowKey, FlowRecord, PacketMeta, VolumeLabel, VOLUME_THRESHOLDS,
};
use crate::io::{read_json, write_json};
use crate::metrics::{roc_curve, split_indices, RocCurve};
use crate::mlcore::{
    encode_radio_features, radio_schema_id, train_forest, Classifier, Dataset, FlowEncoder,
    ForestDocument, ForestModel, ForestParams, FLOW_SCHEMA_ID,
};
use crate::radioenv::{RadioSample, RadioSampleSet};
use crate::rng;

pub const TEST_FRACTION: f64 = 0.3;
pub const MIN_TRAFFIC_FLOWS: usize = 200;
pub const MIN_COVERAGE_SAMPLES: usize = 500;

const TRAFFIC_FORMAT: &str = "steersim-traffic-predictor";
const COVERAGE_FORMAT: &str = "steersim-coverage-predictor";
const PREDICTOR_VERSION: u32 = 1;

/// One forest per volume threshold over first-packet features.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficPredictor {
    encoder: FlowEncoder,
    models: BTreeMap<u64, ForestModel>,
}

impl TrafficPredictor {
    pub fn encoder(&self) -> &FlowEncoder {
        &self.encoder
    }

    pub fn thresholds(&self) -> Vec<u64> {
        self.models.keys().copied().collect()
    }

    /// True when all three threshold models were trained.
    pub fn is_complete(&self) -> bool {
        VOLUME_THRESHOLDS
            .iter()
            .all(|t| self.models.contains_key(t))
    }

    pub fn model(&self, threshold: u64) -> Result<&ForestModel> {
        if !VOLUME_THRESHOLDS.contains(&threshold) {
            return Err(Error::UnknownThreshold(threshold));
        }
        self.models.get(&threshold).ok_or_else(|| {
            Error::Insufficient(format!(
                "no model for {} (class-starved at training time)",
                threshold_name(threshold)
            ))
        })
    }
}

/// Outcome of training at one threshold; ROC is on the held-out split.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdOutcome {
    pub threshold: u64,
    pub roc: Option<RocCurve>,
    pub error: Option<String>,
    pub train_size: usize,
    pub test_size: usize,
}

#[derive(Debug, Clone)]
pub struct TrafficTraining {
    pub predictor: TrafficPredictor,
    pub outcomes: Vec<ThresholdOutcome>,
}

impl TrafficTraining {
    pub fn roc(&self, threshold: u64) -> Option<&RocCurve> {
        self.outcomes
            .iter()
            .find(|o| o.threshold == threshold)
            .and_then(|o| o.roc.as_ref())
    }
}

/// Train the three volume classifiers. The port-frequency encoder is fitted
/// on the whole corpus (it uses no labels); each threshold then gets its own
/// stratified 70/30 split and forest. A threshold whose classes are too small
/// to split is reported and skipped.
pub fn train_traffic_predictor(
    flows: &[FlowRecord],
    params: &ForestParams,
    seed: u64,
) -> Result<TrafficTraining> {
    if flows.len() < MIN_TRAFFIC_FLOWS {
        return Err(Error::Insufficient(format!(
            "{} flows, need at least {MIN_TRAFFIC_FLOWS}",
            flows.len()
        )));
    }
    let encoder = FlowEncoder::fit(flows.iter().map(|f| f.key()));
    let features: Vec<_> = flows
        .iter()
        .map(|f| encoder.encode(f.key(), f.first_packet()))
        .collect();
    let labels: Vec<VolumeLabel> = flows.iter().map(crate::flowdata::label_flow).collect();

    let mut models = BTreeMap::new();
    let mut outcomes = Vec::new();
    for &threshold in &VOLUME_THRESHOLDS {
        let name = threshold_name(threshold);
        let y: Vec<bool> = labels
            .iter()
            .map(|l| l.exceeds(threshold).expect("known threshold"))
            .collect();
        let split_seed = rng::derive_named(seed, &format!("traffic-split-{name}"));
        let (train_idx, test_idx) = match split_indices(&y, TEST_FRACTION, split_seed) {
            Ok(s) => s,
            Err(e) => {
                warn!("traffic {name}: {e}");
                outcomes.push(ThresholdOutcome {
                    threshold,
                    roc: None,
                    error: Some(e.to_string()),
                    train_size: 0,
                    test_size: 0,
                });
                continue;
            }
        };
        let data = Dataset::new(features.clone(), y.clone())?;
        let train = data.subset(&train_idx)?;
        let test = data.subset(&test_idx)?;
        let forest_params = ForestParams {
            seed: rng::derive_named(seed, &format!("traffic-forest-{name}")),
            ..*params
        };
        let model = train_forest(&train, &forest_params)?;
        let scores = model.predict_dataset(&test)?;
        let roc = roc_curve(&scores, test.labels())?;
        info!("traffic {name}: held-out auc {:.3}", roc.auc);
        outcomes.push(ThresholdOutcome {
            threshold,
            roc: Some(roc),
            error: None,
            train_size: train.len(),
            test_size: test.len(),
        });
        models.insert(threshold, model);
    }
    if models.is_empty() {
        return Err(Error::SingleClass(
            "every volume threshold is class-starved".into(),
        ));
    }
    Ok(TrafficTraining {
        predictor: TrafficPredictor { encoder, models },
        outcomes,
    })
}

pub fn predict_volume_proba(
    predictor: &TrafficPredictor,
    key: &FlowKey,
    first_packet: &PacketMeta,
    threshold: u64,
) -> Result<f64> {
    let model = predictor.model(threshold)?;
    model.predict_proba(&predictor.encoder.encode(key, first_packet))
}

/// Forest over primary-carrier features predicting secondary coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct CoveragePredictor {
    model: ForestModel,
    coverage_threshold_dbm: f64,
}

impl CoveragePredictor {
    pub fn model(&self) -> &ForestModel {
        &self.model
    }

    /// Secondary RSRP threshold the training labels were derived from.
    pub fn coverage_threshold_dbm(&self) -> f64 {
        self.coverage_threshold_dbm
    }

    pub fn n_cells(&self) -> usize {
        (self.model.schema_id() - crate::mlcore::RADIO_SCHEMA_BASE) as usize
    }
}

#[derive(Debug, Clone)]
pub struct CoverageTraining {
    pub predictor: CoveragePredictor,
    pub roc: RocCurve,
    pub train_size: usize,
    pub test_size: usize,
}

pub fn train_coverage_predictor(
    samples: &RadioSampleSet,
    params: &ForestParams,
    seed: u64,
) -> Result<CoverageTraining> {
    let n = samples.samples.len();
    if n < MIN_COVERAGE_SAMPLES {
        return Err(Error::Insufficient(format!(
            "{n} radio samples, need at least {MIN_COVERAGE_SAMPLES}"
        )));
    }
    let features: Vec<_> = samples.samples.iter().map(encode_radio_features).collect();
    let labels: Vec<bool> = samples.samples.iter().map(|s| s.covered).collect();
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::SingleClass("coverage labels have one class".into()));
    }
    let data = Dataset::new(features, labels)?;
    let (train_idx, test_idx) = split_indices(
        data.labels(),
        TEST_FRACTION,
        rng::derive_named(seed, "coverage-split"),
    )?;
    let train = data.subset(&train_idx)?;
    let test = data.subset(&test_idx)?;
    let model = train_forest(
        &train,
        &ForestParams {
            seed: rng::derive_named(seed, "coverage-forest"),
            ..*params
        },
    )?;
    let scores = model.predict_dataset(&test)?;
    let roc = roc_curve(&scores, test.labels())?;
    info!("coverage: held-out auc {:.3}", roc.auc);
    Ok(CoverageTraining {
        predictor: CoveragePredictor {
            model,
            coverage_threshold_dbm: samples.threshold_dbm,
        },
        roc,
        train_size: train.len(),
        test_size: test.len(),
    })
}

pub fn predict_coverage_proba(predictor: &CoveragePredictor, sample: &RadioSample) -> Result<f64> {
    predictor
        .model
        .predict_proba(&encode_radio_features(sample))
}

/// Coverage probability from a primary RSRP vector alone.
pub fn predict_coverage_from_rsrp(
    predictor: &CoveragePredictor,
    primary_rsrp: &[f64],
) -> Result<f64> {
    if primary_rsrp.iter().any(|v| !v.is_finite()) {
        return Err(Error::OutOfRange("primary RSRP must be finite".into()));
    }
    predictor
        .model
        .predict_proba(&crate::mlcore::features_from_rsrp(primary_rsrp))
}

#[derive(Serialize, Deserialize)]
struct ThresholdModelDoc {
    threshold_bytes: u64,
    model: ForestDocument,
}

#[derive(Serialize, Deserialize)]
struct TrafficDoc {
    format: String,
    version: u32,
    schema_id: u32,
    top_ports: Vec<u16>,
    models: Vec<ThresholdModelDoc>,
}

#[derive(Serialize, Deserialize)]
struct CoverageDoc {
    format: String,
    version: u32,
    schema_id: u32,
    coverage_threshold_dbm: f64,
    model: ForestDocument,
}

fn check_header(format: &str, expected: &str, version: u32) -> Result<()> {
    if format != expected {
        return Err(Error::ModelFormat(format!(
            "expected `{expected}`, got `{format}`"
        )));
    }
    if version != PREDICTOR_VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    Ok(())
}

impl TrafficPredictor {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let doc = TrafficDoc {
            format: TRAFFIC_FORMAT.into(),
            version: PREDICTOR_VERSION,
            schema_id: FLOW_SCHEMA_ID,
            top_ports: self.encoder.top_ports.clone(),
            models: self
                .models
                .iter()
                .map(|(&t, m)| ThresholdModelDoc {
                    threshold_bytes: t,
                    model: m.into(),
                })
                .collect(),
        };
        write_json(&doc, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let doc: TrafficDoc = read_json(path)?;
        check_header(&doc.format, TRAFFIC_FORMAT, doc.version)?;
        if doc.schema_id != FLOW_SCHEMA_ID {
            return Err(Error::SchemaMismatch {
                expected: format!("flow schema {FLOW_SCHEMA_ID}"),
                actual: format!("schema {}", doc.schema_id),
            });
        }
        let mut models = BTreeMap::new();
        for m in doc.models {
            if !VOLUME_THRESHOLDS.contains(&m.threshold_bytes) {
                return Err(Error::UnknownThreshold(m.threshold_bytes));
            }
            let model = ForestModel::try_from(m.model)?;
            if model.schema_id() != FLOW_SCHEMA_ID {
                return Err(Error::ModelFormat(
                    "threshold model has a non-flow schema".into(),
                ));
            }
            models.insert(m.threshold_bytes, model);
        }
        if models.is_empty() {
            return Err(Error::ModelFormat("traffic predictor has no models".into()));
        }
        Ok(Self {
            encoder: FlowEncoder {
                top_ports: doc.top_ports,
            },
            models,
        })
    }
}

impl CoveragePredictor {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let doc = CoverageDoc {
            format: COVERAGE_FORMAT.into(),
            version: PREDICTOR_VERSION,
            schema_id: self.model.schema_id(),
            coverage_threshold_dbm: self.coverage_threshold_dbm,
            model: (&self.model).into(),
        };
        write_json(&doc, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let doc: CoverageDoc = read_json(path)?;
        check_header(&doc.format, COVERAGE_FORMAT, doc.version)?;
        let model = ForestModel::try_from(doc.model)?;
        if model.schema_id() != doc.schema_id || doc.schema_id <= crate::mlcore::RADIO_SCHEMA_BASE {
            return Err(Error::SchemaMismatch {
                expected: "a radio feature schema".into(),
                actual: format!("schema {}", doc.schema_id),
            });
        }
        if model.n_features() != 2 * (doc.schema_id - crate::mlcore::RADIO_SCHEMA_BASE) as usize + 1
        {
            return Err(Error::ModelFormat(
                "radio model width disagrees with its schema".into(),
            ));
        }
        Ok(Self {
            model,
            coverage_threshold_dbm: doc.coverage_threshold_dbm,
        })
    }

    /// Error unless samples carry exactly the cell count the model was trained on.
    pub fn check_cells(&self, n_cells: usize) -> Result<()> {
        if radio_schema_id(n_cells) != self.model.schema_id() {
            return Err(Error::SchemaMismatch {
                expected: format!("{} primary cells", self.n_cells()),
                actual: format!("{n_cells} primary cells"),
            });
        }
        Ok(())
    }
}
