//! Supervised learning core: feature vectors, CART trees and bagged forests
//! producing positive-class probabilities.

mod features;
mod forest;
mod model_io;
mod tree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use features::{
    encode_flow_features, encode_primary_rsrp as features_from_rsrp, encode_radio_features,
    radio_schema_id, FlowEncoder, FLOW_FEATURES, FLOW_SCHEMA_ID, RADIO_SCHEMA_BASE,
};
pub use forest::{train_forest, ForestModel};
pub use model_io::{ForestDocument, MODEL_FORMAT, MODEL_VERSION};
pub use tree::{train_tree, Node, TreeModel};

/// Fixed-length feature row tied to the extractor that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema_id: u32,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, schema_id: u32) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invariant(
                format!("values[{i}]"),
                "feature values must be finite",
            ));
        }
        Ok(Self { values, schema_id })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Labelled rows sharing one schema, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema_id: u32,
    n_features: usize,
    values: Vec<f64>,
    labels: Vec<bool>,
}

impl Dataset {
    pub fn new(features: Vec<FeatureVector>, labels: Vec<bool>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyInput("dataset needs at least one row"));
        }
        if features.len() != labels.len() {
            return Err(Error::invariant(
                "labels",
                format!("{} labels for {} rows", labels.len(), features.len()),
            ));
        }
        let schema_id = features[0].schema_id;
        let n_features = features[0].len();
        let mut values = Vec::with_capacity(features.len() * n_features);
        for (i, f) in features.into_iter().enumerate() {
            if f.schema_id != schema_id || f.len() != n_features {
                return Err(Error::SchemaMismatch {
                    expected: format!("schema {schema_id} with {n_features} features"),
                    actual: format!("row {i}: schema {} with {} features", f.schema_id, f.len()),
                });
            }
            values.extend(f.values);
        }
        Ok(Self {
            schema_id,
            n_features,
            values,
            labels,
        })
    }

    /// Build from raw rows; rows must be finite and equally long.
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<bool>, schema_id: u32) -> Result<Self> {
        let features = rows
            .into_iter()
            .map(|r| FeatureVector::new(r, schema_id))
            .collect::<Result<Vec<_>>>()?;
        Self::new(features, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn schema_id(&self) -> u32 {
        self.schema_id
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn value(&self, i: usize, feature: usize) -> f64 {
        self.values[i * self.n_features + feature]
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn feature_vector(&self, i: usize) -> FeatureVector {
        FeatureVector {
            values: self.row(i).to_vec(),
            schema_id: self.schema_id,
        }
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyInput("subset needs at least one row"));
        }
        let mut values = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Ok(Self {
            schema_id: self.schema_id,
            n_features: self.n_features,
            values,
            labels,
        })
    }

    pub fn with_labels(&self, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::invariant("labels", "length mismatch"));
        }
        Ok(Self {
            labels,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Candidate features per node; `None` uses every feature.
    pub features_per_split: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 12,
            min_leaf: 5,
            features_per_split: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// `None` means ceil(sqrt(d)).
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 5,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::config("forest.n_trees", "must be at least 1"));
        }
        if self.max_depth == 0 {
            return Err(Error::config("forest.max_depth", "must be at least 1"));
        }
        if self.min_leaf == 0 {
            return Err(Error::config("forest.min_leaf", "must be at least 1"));
        }
        if self.features_per_split == Some(0) {
            return Err(Error::config(
                "forest.features_per_split",
                "must be at least 1",
            ));
        }
        Ok(())
    }

    pub fn resolved_features_per_split(&self, n_features: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features.max(1))
    }
}

/// 1 − p² − (1−p)² for the positive fraction p.
pub fn gini(labels: &[bool]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("gini of an empty label set"));
    }
    let n = labels.len() as f64;
    let p = labels.iter().filter(|&&l| l).count() as f64 / n;
    Ok(1.0 - p * p - (1.0 - p) * (1.0 - p))
}

/// Anything that maps a feature vector to P(positive).
pub trait Classifier {
    fn predict_proba(&self, x: &FeatureVector) -> Result<f64>;
}
