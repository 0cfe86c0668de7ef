use serde::{Deserialize, Serialize};

use super::tree::Node;
use super::{ForestModel, ForestParams, TreeModel};
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "steersim-forest";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDocument {
    pub nodes: Vec<Node>,
}

/// Versioned JSON form of a [`ForestModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestDocument {
    pub format: String,
    pub version: u32,
    pub schema_id: u32,
    pub n_features: usize,
    pub params: ForestParams,
    pub trees: Vec<TreeDocument>,
}

impl From<&ForestModel> for ForestDocument {
    fn from(m: &ForestModel) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            schema_id: m.schema_id,
            n_features: m.n_features,
            params: m.params,
            trees: m
                .trees
                .iter()
                .map(|t| TreeDocument {
                    nodes: t.nodes.clone(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ForestDocument> for ForestModel {
    type Error = Error;

    fn try_from(doc: ForestDocument) -> Result<Self> {
        if doc.format != MODEL_FORMAT {
            return Err(Error::ModelFormat(format!(
                "unknown format `{}`",
                doc.format
            )));
        }
        if doc.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported version {} (expected {MODEL_VERSION})",
                doc.version
            )));
        }
        let trees = doc
            .trees
            .into_iter()
            .map(|t| TreeModel::from_nodes(t.nodes, doc.schema_id, doc.n_features))
            .collect::<Result<Vec<_>>>()?;
        ForestModel::from_trees(trees, doc.params)
    }
}

impl ForestModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ForestDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ForestDocument = serde_json::from_str(text)?;
        doc.try_into()
    }
}
