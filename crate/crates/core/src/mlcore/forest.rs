use rand::Rng;
use rayon::prelude::*;

use super::tree::grow;
use super::{Classifier, Dataset, FeatureVector, ForestParams, TreeModel, TreeParams};
use crate::error::{Error, Result};
use crate::rng;

/// Bagged CART ensemble; the probability is the mean of the trees' leaf fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub(crate) trees: Vec<TreeModel>,
    pub(crate) params: ForestParams,
    pub(crate) schema_id: u32,
    pub(crate) n_features: usize,
}

impl ForestModel {
    pub fn trees(&self) -> &[TreeModel] {
        &self.trees
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn schema_id(&self) -> u32 {
        self.schema_id
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Build from parts, e.g. hand-made trees in tests or a loaded document.
    pub fn from_trees(trees: Vec<TreeModel>, params: ForestParams) -> Result<Self> {
        let first = trees
            .first()
            .ok_or_else(|| Error::ModelFormat("forest has no trees".into()))?;
        let (schema_id, n_features) = (first.schema_id, first.n_features);
        if trees
            .iter()
            .any(|t| t.schema_id != schema_id || t.n_features != n_features)
        {
            return Err(Error::ModelFormat(
                "trees disagree on feature schema".into(),
            ));
        }
        Ok(Self {
            trees,
            params,
            schema_id,
            n_features,
        })
    }

    /// Probabilities for every row of `data`.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.schema_id() != self.schema_id || data.n_features() != self.n_features {
            return Err(Error::SchemaMismatch {
                expected: format!(
                    "schema {} with {} features",
                    self.schema_id, self.n_features
                ),
                actual: format!(
                    "schema {} with {} features",
                    data.schema_id(),
                    data.n_features()
                ),
            });
        }
        Ok((0..data.len())
            .map(|i| self.predict_row(data.row(i)))
            .collect())
    }

    pub(crate) fn predict_row(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(x)).sum();
        (sum / self.trees.len() as f64).clamp(0.0, 1.0)
    }
}

impl Classifier for ForestModel {
    fn predict_proba(&self, x: &FeatureVector) -> Result<f64> {
        self.trees[0].check_schema(x)?;
        Ok(self.predict_row(&x.values))
    }
}

/// Train `params.n_trees` trees, each on its own bootstrap resample with a
/// random candidate-feature subset per node. Tree `t` draws only from the
/// stream `(seed, t)`, so the result does not depend on the thread pool.
pub fn train_forest(data: &Dataset, params: &ForestParams) -> Result<ForestModel> {
    params.validate()?;
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        features_per_split: Some(params.resolved_features_per_split(data.n_features())),
    };
    let n = data.len();
    let trees = (0..params.n_trees as u64)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::rng_from(rng::derive_indexed(params.seed, t));
            let indices: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| r.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow(data, indices, &tree_params, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel {
        trees,
        params: *params,
        schema_id: data.schema_id(),
        n_features: data.n_features(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlcore::train_tree;
    use crate::mlcore::tree::Node;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn noisy_dataset(n: usize, seed: u64) -> Dataset {
        let mut r = rng::rng_from(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let x: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
            let p = if x[0] + 0.5 * x[1] > 0.0 { 0.85 } else { 0.2 };
            labels.push(r.random::<f64>() < p);
            rows.push(x);
        }
        Dataset::from_rows(rows, labels, 7).unwrap()
    }

    #[test]
    fn degenerate_forest_equals_tree() {
        let d = noisy_dataset(300, 1);
        let params = ForestParams {
            n_trees: 1,
            bootstrap: false,
            features_per_split: Some(d.n_features()),
            max_depth: 6,
            min_leaf: 3,
            seed: 99,
        };
        let forest = train_forest(&d, &params).unwrap();
        let tree = train_tree(
            &d,
            &TreeParams {
                max_depth: 6,
                min_leaf: 3,
                features_per_split: None,
            },
        )
        .unwrap();
        assert_eq!(forest.trees()[0].nodes(), tree.nodes());
        for i in 0..d.len() {
            let x = d.feature_vector(i);
            assert_eq!(
                forest.predict_proba(&x).unwrap(),
                tree.predict_proba(&x).unwrap()
            );
        }
    }

    #[test]
    fn same_seed_same_model() {
        let d = noisy_dataset(200, 2);
        let params = ForestParams {
            n_trees: 10,
            seed: 5,
            ..ForestParams::default()
        };
        assert_eq!(
            train_forest(&d, &params).unwrap(),
            train_forest(&d, &params).unwrap()
        );
        let other = ForestParams { seed: 6, ..params };
        assert_ne!(
            train_forest(&d, &params).unwrap(),
            train_forest(&d, &other).unwrap()
        );
    }

    #[test]
    fn thread_count_does_not_matter() {
        let d = noisy_dataset(200, 3);
        let params = ForestParams {
            n_trees: 16,
            seed: 11,
            ..ForestParams::default()
        };
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| train_forest(&d, &params).unwrap());
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| train_forest(&d, &params).unwrap());
        assert_eq!(single, many);
    }

    #[test]
    fn separable_forest_is_perfect_on_training_data() {
        // Classes sit on either side of a wide gap in feature 0, so any
        // bootstrap with both classes places its root threshold inside the gap.
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                vec![
                    if i < 20 { i as f64 } else { i as f64 + 60.0 },
                    ((i * 7) % 5) as f64,
                ]
            })
            .collect();
        let labels: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let d = Dataset::from_rows(rows, labels, 0).unwrap();
        let f = train_forest(
            &d,
            &ForestParams {
                n_trees: 25,
                min_leaf: 1,
                seed: 3,
                ..ForestParams::default()
            },
        )
        .unwrap();
        for i in 0..d.len() {
            let p = f.predict_proba(&d.feature_vector(i)).unwrap();
            assert_eq!(p >= 0.5, d.labels()[i], "row {i}: p={p}");
        }
    }

    #[test]
    fn forest_mean_of_two_trees() {
        let leaf = |p: f64| {
            TreeModel::from_nodes(
                vec![Node::Leaf {
                    positive_fraction: p,
                    sample_count: 1,
                }],
                0,
                1,
            )
            .unwrap()
        };
        let f =
            ForestModel::from_trees(vec![leaf(0.2), leaf(0.6)], ForestParams::default()).unwrap();
        let x = FeatureVector::new(vec![0.0], 0).unwrap();
        assert!((f.predict_proba(&x).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn label_flip_mirrors_probabilities() {
        let d = noisy_dataset(250, 4);
        let flipped = d
            .with_labels(d.labels().iter().map(|l| !l).collect())
            .unwrap();
        let params = ForestParams {
            n_trees: 12,
            min_leaf: 2,
            seed: 8,
            ..ForestParams::default()
        };
        let a = train_forest(&d, &params).unwrap();
        let b = train_forest(&flipped, &params).unwrap();
        for i in 0..d.len() {
            let x = d.feature_vector(i);
            let pa = a.predict_proba(&x).unwrap();
            let pb = b.predict_proba(&x).unwrap();
            assert!((pa + pb - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn probabilities_stay_in_unit_interval(seed in 0u64..1000, probe in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let d = noisy_dataset(80, seed);
            let f = train_forest(&d, &ForestParams { n_trees: 5, min_leaf: 1, seed, ..ForestParams::default() }).unwrap();
            let p = f.predict_proba(&FeatureVector::new(probe, 7).unwrap()).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
