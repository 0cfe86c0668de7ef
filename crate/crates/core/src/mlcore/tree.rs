use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Classifier, Dataset, FeatureVector, TreeParams};
use crate::error::{Error, Result};

/// Flat node array; index 0 is the root and children always follow their
/// parent, so the structure is acyclic by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        positive_fraction: f64,
        sample_count: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    pub(crate) nodes: Vec<Node>,
    pub(crate) schema_id: u32,
    pub(crate) n_features: usize,
}

impl TreeModel {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn schema_id(&self) -> u32 {
        self.schema_id
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub(crate) fn from_nodes(nodes: Vec<Node>, schema_id: u32, n_features: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::ModelFormat("tree has no nodes".into()));
        }
        for (i, node) in nodes.iter().enumerate() {
            match *node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= n_features || !threshold.is_finite() {
                        return Err(Error::ModelFormat(format!("node {i}: bad split")));
                    }
                    if left <= i || right <= i || left >= nodes.len() || right >= nodes.len() {
                        return Err(Error::ModelFormat(format!("node {i}: bad child index")));
                    }
                }
                Node::Leaf {
                    positive_fraction, ..
                } => {
                    if !(0.0..=1.0).contains(&positive_fraction) {
                        return Err(Error::ModelFormat(format!(
                            "node {i}: leaf fraction {positive_fraction} outside [0,1]"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            nodes,
            schema_id,
            n_features,
        })
    }

    pub(crate) fn check_schema(&self, x: &FeatureVector) -> Result<()> {
        if x.schema_id != self.schema_id || x.len() != self.n_features {
            return Err(Error::SchemaMismatch {
                expected: format!(
                    "schema {} with {} features",
                    self.schema_id, self.n_features
                ),
                actual: format!("schema {} with {} features", x.schema_id, x.len()),
            });
        }
        Ok(())
    }

    /// Prediction on a raw row; the caller has checked the schema.
    pub(crate) fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf {
                    positive_fraction, ..
                } => return positive_fraction,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

impl Classifier for TreeModel {
    fn predict_proba(&self, x: &FeatureVector) -> Result<f64> {
        self.check_schema(x)?;
        Ok(self.predict_row(&x.values))
    }
}

/// Greedy CART on every row of `data` with all features as split candidates
/// (unless `params.features_per_split` restricts them).
pub fn train_tree(data: &Dataset, params: &TreeParams) -> Result<TreeModel> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut rng = crate::rng::rng_from(0);
    grow(data, indices, params, &mut rng)
}

pub(crate) fn grow<R: Rng>(
    data: &Dataset,
    indices: Vec<usize>,
    params: &TreeParams,
    rng: &mut R,
) -> Result<TreeModel> {
    if params.max_depth == 0 {
        return Err(Error::config("max_depth", "must be at least 1"));
    }
    if params.min_leaf == 0 {
        return Err(Error::config("min_leaf", "must be at least 1"));
    }
    if indices.is_empty() {
        return Err(Error::EmptyInput("tree needs at least one row"));
    }
    let mut builder = Builder {
        data,
        params,
        candidates: params
            .features_per_split
            .unwrap_or(data.n_features())
            .clamp(1, data.n_features().max(1)),
        nodes: Vec::new(),
        scratch: Vec::with_capacity(indices.len()),
    };
    builder.build(indices, 0, rng);
    Ok(TreeModel {
        nodes: builder.nodes,
        schema_id: data.schema_id(),
        n_features: data.n_features(),
    })
}

struct Builder<'a> {
    data: &'a Dataset,
    params: &'a TreeParams,
    candidates: usize,
    nodes: Vec<Node>,
    scratch: Vec<(f64, bool)>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Builder<'_> {
    fn build<R: Rng>(&mut self, indices: Vec<usize>, depth: usize, rng: &mut R) -> usize {
        let n = indices.len();
        let labels = self.data.labels();
        let pos = indices.iter().filter(|&&i| labels[i]).count();
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            positive_fraction: pos as f64 / n as f64,
            sample_count: n,
        });
        let pure = pos == 0 || pos == n;
        if pure || depth >= self.params.max_depth || n < 2 * self.params.min_leaf {
            return id;
        }
        let Some(best) = self.best_split(&indices, rng) else {
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = indices
            .into_iter()
            .partition(|&i| self.data.value(i, best.feature) <= best.threshold);
        let left_id = self.build(left, depth + 1, rng);
        let right_id = self.build(right, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: left_id,
            right: right_id,
        };
        id
    }

    /// Feature visiting order: all features ascending when every feature is a
    /// candidate (no randomness consumed), otherwise a random permutation.
    fn feature_order<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        let d = self.data.n_features();
        if self.candidates >= d {
            (0..d).collect()
        } else {
            sample_indices(rng, d, d).into_vec()
        }
    }

    /// Lowest weighted Gini over the candidate features, scanning midpoint
    /// thresholds. Features are visited in random order until `candidates` of
    /// them have offered at least one admissible split; features that cannot
    /// be split in this node do not use up the budget. Equal scores go to the
    /// lower feature index, then the lower threshold. The score Σ pos·neg/size
    /// is proportional to the weighted Gini and symmetric in the two classes,
    /// so flipping labels reproduces the same splits.
    fn best_split<R: Rng>(&mut self, indices: &[usize], rng: &mut R) -> Option<BestSplit> {
        let min_leaf = self.params.min_leaf;
        let n = indices.len();
        let total_pos = indices.iter().filter(|&&i| self.data.labels()[i]).count();
        let mut best: Option<BestSplit> = None;
        let mut visited = 0;
        for feature in self.feature_order(rng) {
            if visited == self.candidates {
                break;
            }
            self.scratch.clear();
            self.scratch.extend(
                indices
                    .iter()
                    .map(|&i| (self.data.value(i, feature), self.data.labels()[i])),
            );
            self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut admissible = false;
            let mut left_pos = 0usize;
            for k in 0..n - 1 {
                if self.scratch[k].1 {
                    left_pos += 1;
                }
                let left_n = k + 1;
                let right_n = n - left_n;
                if left_n < min_leaf {
                    continue;
                }
                if right_n < min_leaf {
                    break;
                }
                let (lo, hi) = (self.scratch[k].0, self.scratch[k + 1].0);
                if lo >= hi {
                    continue;
                }
                admissible = true;
                let right_pos = total_pos - left_pos;
                let score = (left_pos * (left_n - left_pos)) as f64 / left_n as f64
                    + (right_pos * (right_n - right_pos)) as f64 / right_n as f64;
                let better = match &best {
                    None => true,
                    Some(b) => score < b.score || (score == b.score && feature < b.feature),
                };
                if better {
                    let mut threshold = 0.5 * (lo + hi);
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(BestSplit {
                        feature,
                        threshold,
                        score,
                    });
                }
            }
            if admissible {
                visited += 1;
            }
        }
        best
    }
}
