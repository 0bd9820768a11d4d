//! Random forest classifier with Gini splits and soft-vote probabilities.
//!
//! Each tree is grown breadth-first on a bootstrap sample. A split considers
//! `mtry` features drawn without replacement and thresholds at midpoints of
//! consecutive distinct values; children smaller than `min_leaf` are
//! rejected and growth stops once another split would exceed `max_nodes`.
//! Gain ties resolve to the lowest feature index, then the lowest threshold.
//! The forest probability is the mean of the reached leaves' class-1
//! fractions.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, FEATURE_LEN, FEATURE_ORDER_TAG};
use crate::workers;

pub const MODEL_FORMAT: &str = "sar-damage-forest";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("training set is empty")]
    EmptyInput,
    #[error("training set needs at least 2 rows and both classes (class 0: {zeros}, class 1: {ones})")]
    SingleClass { zeros: usize, ones: usize },
    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("feature vector has {found} entries, model expects {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("model feature order '{found}' is incompatible with '{expected}'")]
    Incompatible { found: String, expected: String },
    #[error("model parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split { feature: u16, threshold: f64, left: u32, right: u32 },
    Leaf { p1: f64, n: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub min_leaf: usize,
    pub max_nodes: usize,
    pub seed: u64,
    /// Downsample the majority class to parity before growing trees.
    pub balance: bool,
    pub bootstrap: bool,
    /// Feature indices trees may split on.
    pub features: Vec<usize>,
    /// Candidates per split; `floor(sqrt(features.len()))` when unset.
    pub mtry: Option<usize>,
    #[serde(skip)]
    pub threads: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 50,
            min_leaf: 3,
            max_nodes: 10_000,
            seed: 0,
            balance: true,
            bootstrap: true,
            features: (0..FEATURE_LEN).collect(),
            mtry: None,
            threads: workers::default_threads(),
        }
    }
}

impl ForestConfig {
    pub fn effective_mtry(&self) -> usize {
        self.mtry
            .unwrap_or_else(|| (self.features.len() as f64).sqrt().floor() as usize)
            .clamp(1, self.features.len().max(1))
    }

    fn validate(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::Config("n_trees must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(ForestError::Config("min_leaf must be at least 1".into()));
        }
        if self.max_nodes == 0 {
            return Err(ForestError::Config("max_nodes must be at least 1".into()));
        }
        if self.features.is_empty() || self.features.iter().any(|&f| f >= FEATURE_LEN) {
            return Err(ForestError::Config(format!("feature indices must be non-empty and below {FEATURE_LEN}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format: String,
    pub schema_version: u32,
    pub feature_order_tag: String,
    pub n_features: usize,
    pub config: ForestConfig,
    pub trees: Vec<Vec<TreeNode>>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent PRNG stream `stream` derived from `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ splitmix64(stream))
}

const BALANCE_STREAM: u64 = u64::MAX;

/// Column-major copy of the training rows.
struct TrainingData<'a> {
    rows: &'a [(FeatureVector, u8)],
    selected: Vec<usize>,
}

pub fn train(rows: &[(FeatureVector, u8)], config: &ForestConfig) -> Result<ForestModel, ForestError> {
    config.validate()?;
    if rows.is_empty() {
        return Err(ForestError::EmptyInput);
    }
    for (i, (fv, y)) in rows.iter().enumerate() {
        if *y > 1 {
            return Err(ForestError::BadRow { row: i, message: format!("label {y} is not 0 or 1") });
        }
        if fv.0.iter().any(|v| !v.is_finite()) {
            return Err(ForestError::BadRow { row: i, message: "non-finite feature".into() });
        }
    }
    let ones = rows.iter().filter(|(_, y)| *y == 1).count();
    let zeros = rows.len() - ones;
    if rows.len() < 2 || ones == 0 || zeros == 0 {
        return Err(ForestError::SingleClass { zeros, ones });
    }

    let selected = if config.balance && ones != zeros {
        balanced_selection(rows, config.seed)
    } else {
        (0..rows.len()).collect()
    };
    let data = TrainingData { rows, selected };
    let mut allowed = config.features.clone();
    allowed.sort_unstable();
    allowed.dedup();

    let trees = workers::map_indexed(config.n_trees, config.threads, |t| {
        let mut rng = stream_rng(config.seed, t as u64);
        grow_tree(&data, &allowed, config, &mut rng)
    });
    Ok(ForestModel {
        format: MODEL_FORMAT.into(),
        schema_version: SCHEMA_VERSION,
        feature_order_tag: FEATURE_ORDER_TAG.into(),
        n_features: FEATURE_LEN,
        config: config.clone(),
        trees,
    })
}

/// Keeps every minority row and an equal-sized seeded sample of the majority.
fn balanced_selection(rows: &[(FeatureVector, u8)], seed: u64) -> Vec<usize> {
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..rows.len()).partition(|&i| rows[i].1 == 1);
    let (minority, mut majority) = if pos.len() < neg.len() { (pos, neg) } else { (neg, pos) };
    let mut rng = stream_rng(seed, BALANCE_STREAM);
    majority.shuffle(&mut rng);
    majority.truncate(minority.len());
    let mut out: Vec<usize> = minority.into_iter().chain(majority).collect();
    out.sort_unstable();
    out
}

fn gini(ones: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = ones as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn grow_tree(data: &TrainingData<'_>, allowed: &[usize], config: &ForestConfig, rng: &mut ChaCha8Rng) -> Vec<TreeNode> {
    let n = data.selected.len();
    let sample: Vec<usize> = if config.bootstrap {
        (0..n).map(|_| data.selected[rng.random_range(0..n)]).collect()
    } else {
        data.selected.clone()
    };
    let mtry = config.effective_mtry();

    let mut nodes = vec![TreeNode::Leaf { p1: 0.0, n: 0 }];
    let mut queue = VecDeque::from([(0usize, sample)]);
    while let Some((id, rows)) = queue.pop_front() {
        let ones = rows.iter().filter(|&&r| data.rows[r].1 == 1).count();
        let leaf = TreeNode::Leaf { p1: ones as f64 / rows.len() as f64, n: rows.len() as u32 };
        let pure = ones == 0 || ones == rows.len();
        if pure || rows.len() < 2 * config.min_leaf || nodes.len() + 2 > config.max_nodes {
            nodes[id] = leaf;
            continue;
        }
        let mut candidates: Vec<usize> =
            index::sample(rng, allowed.len(), mtry).into_iter().map(|i| allowed[i]).collect();
        candidates.sort_unstable();
        match best_split(data, &rows, ones, &candidates, config.min_leaf) {
            Some(split) => {
                let left_id = nodes.len();
                nodes.push(TreeNode::Leaf { p1: 0.0, n: 0 });
                nodes.push(TreeNode::Leaf { p1: 0.0, n: 0 });
                let (left, right): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&r| data.rows[r].0 .0[split.feature] <= split.threshold);
                nodes[id] = TreeNode::Split {
                    feature: split.feature as u16,
                    threshold: split.threshold,
                    left: left_id as u32,
                    right: left_id as u32 + 1,
                };
                queue.push_back((left_id, left));
                queue.push_back((left_id + 1, right));
            }
            None => nodes[id] = leaf,
        }
    }
    nodes
}

fn best_split(data: &TrainingData<'_>, rows: &[usize], ones: usize, candidates: &[usize], min_leaf: usize) -> Option<Split> {
    let n = rows.len();
    let parent = gini(ones, n);
    let mut best: Option<Split> = None;
    let mut pairs: Vec<(f64, u8)> = Vec::with_capacity(n);
    for &f in candidates {
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (data.rows[r].0 .0[f], data.rows[r].1)));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_ones = 0usize;
        for i in 0..n - 1 {
            left_ones += pairs[i].1 as usize;
            let nl = i + 1;
            let nr = n - nl;
            let (a, b) = (pairs[i].0, pairs[i + 1].0);
            if nl < min_leaf || nr < min_leaf || a >= b {
                continue;
            }
            let child = (nl as f64 * gini(left_ones, nl) + nr as f64 * gini(ones - left_ones, nr)) / n as f64;
            let gain = parent - child;
            if gain > 1e-12 && best.as_ref().is_none_or(|s| gain > s.gain) {
                best = Some(Split { feature: f, threshold: midpoint(a, b), gain });
            }
        }
    }
    best
}

/// Midpoint of `a < b` that still separates them.
fn midpoint(a: f64, b: f64) -> f64 {
    let mid = a + (b - a) * 0.5;
    if mid < b && mid.is_finite() {
        mid
    } else {
        a
    }
}

impl ForestModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    fn leaf_value(tree: &[TreeNode], x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match &tree[i] {
                TreeNode::Leaf { p1, .. } => return *p1,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[*feature as usize] <= *threshold { *left as usize } else { *right as usize };
                }
            }
        }
    }

    /// Probability of class 1: mean leaf fraction over trees.
    pub fn predict(&self, fv: &FeatureVector) -> f64 {
        self.predict_slice(&fv.0)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, ForestError> {
        if x.len() != self.n_features {
            return Err(ForestError::LengthMismatch { expected: self.n_features, found: x.len() });
        }
        Ok(self.predict_slice(x))
    }

    fn predict_slice(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| Self::leaf_value(t, x)).sum();
        sum / self.trees.len() as f64
    }

    /// Per-tree leaf fractions, in tree order.
    pub fn tree_votes(&self, fv: &FeatureVector) -> Vec<f64> {
        self.trees.iter().map(|t| Self::leaf_value(t, &fv.0)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialises") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, ForestError> {
        let model: ForestModel = serde_json::from_str(text).map_err(|e| ForestError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if model.format != MODEL_FORMAT {
            return Err(ForestError::Invalid(format!("unknown model format '{}'", model.format)));
        }
        if model.schema_version != SCHEMA_VERSION {
            return Err(ForestError::Invalid(format!("unsupported schema version {}", model.schema_version)));
        }
        if model.feature_order_tag != FEATURE_ORDER_TAG || model.n_features != FEATURE_LEN {
            return Err(ForestError::Incompatible {
                found: model.feature_order_tag,
                expected: FEATURE_ORDER_TAG.into(),
            });
        }
        model.validate_trees()?;
        Ok(model)
    }

    fn validate_trees(&self) -> Result<(), ForestError> {
        if self.trees.is_empty() {
            return Err(ForestError::Invalid("model has no trees".into()));
        }
        for (t, tree) in self.trees.iter().enumerate() {
            if tree.is_empty() {
                return Err(ForestError::Invalid(format!("tree {t} is empty")));
            }
            for (i, node) in tree.iter().enumerate() {
                let ok = match node {
                    TreeNode::Leaf { p1, .. } => (0.0..=1.0).contains(p1),
                    TreeNode::Split { feature, threshold, left, right } => {
                        (*feature as usize) < self.n_features
                            && threshold.is_finite()
                            && (*left as usize) > i
                            && (*right as usize) > i
                            && (*left as usize) < tree.len()
                            && (*right as usize) < tree.len()
                    }
                };
                if !ok {
                    return Err(ForestError::Invalid(format!("tree {t} node {i} is malformed")));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ForestError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|source| ForestError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ForestError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ForestError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(x: f64) -> FeatureVector {
        let mut v = [0.0; FEATURE_LEN];
        v[0] = x;
        FeatureVector(v)
    }

    fn separable() -> Vec<(FeatureVector, u8)> {
        (0..100)
            .map(|i| if i % 2 == 0 { (fv(-1.0 - i as f64 * 0.05), 0) } else { (fv(1.5 + i as f64 * 0.05), 1) })
            .collect()
    }

    fn one_feature(n_trees: usize) -> ForestConfig {
        ForestConfig { n_trees, features: vec![0], seed: 11, ..Default::default() }
    }

    #[test]
    fn separable_single_tree() {
        let rows = separable();
        let model = train(&rows, &one_feature(1)).unwrap();
        let acc = rows.iter().filter(|(x, y)| (model.predict(x) >= 0.5) as u8 == *y).count();
        assert_eq!(acc, rows.len());
        assert!(model.predict(&fv(10.0)) > 0.9);
    }

    #[test]
    fn stump_average() {
        let model = ForestModel {
            format: MODEL_FORMAT.into(),
            schema_version: SCHEMA_VERSION,
            feature_order_tag: FEATURE_ORDER_TAG.into(),
            n_features: FEATURE_LEN,
            config: ForestConfig::default(),
            trees: vec![vec![TreeNode::Leaf { p1: 0.0, n: 3 }], vec![TreeNode::Leaf { p1: 1.0, n: 3 }]],
        };
        assert_eq!(model.predict(&fv(0.0)), 0.5);
        assert!(matches!(model.predict_proba(&[0.0; 3]), Err(ForestError::LengthMismatch { .. })));
    }

    #[test]
    fn single_class_rejected() {
        let rows: Vec<_> = (0..10).map(|i| (fv(i as f64), 1)).collect();
        assert!(matches!(train(&rows, &ForestConfig::default()), Err(ForestError::SingleClass { .. })));
        assert!(matches!(train(&[], &ForestConfig::default()), Err(ForestError::EmptyInput)));
    }

    #[test]
    fn max_nodes_three_gives_stumps() {
        let cfg = ForestConfig { max_nodes: 3, n_trees: 5, ..one_feature(5) };
        let model = train(&separable(), &cfg).unwrap();
        assert!(model.trees.iter().all(|t| t.len() <= 3));
    }

    #[test]
    fn midpoint_separates_neighbours() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let m = midpoint(a, b);
        assert!(a <= m && m < b);
        assert_eq!(midpoint(0.0, 1.0), 0.5);
    }

    #[test]
    fn balancing_keeps_minority() {
        let mut rows = separable();
        rows.extend((0..50).map(|i| (fv(-5.0 - i as f64), 0)));
        let sel = balanced_selection(&rows, 3);
        let ones = sel.iter().filter(|&&i| rows[i].1 == 1).count();
        assert_eq!(ones, 50);
        assert_eq!(sel.len(), 100);
    }

    #[test]
    fn save_load_round_trip() {
        let model = train(&separable(), &one_feature(3)).unwrap();
        let text = model.to_json();
        let back = ForestModel::from_json(&text).unwrap();
        assert_eq!(back.to_json(), text);
        assert_eq!(back, ForestModel { config: ForestConfig { threads: back.config.threads, ..model.config.clone() }, ..model.clone() });
    }

    #[test]
    fn incompatible_and_truncated() {
        let model = train(&separable(), &one_feature(2)).unwrap();
        let text = model.to_json().replace(FEATURE_ORDER_TAG, "v0");
        assert!(matches!(ForestModel::from_json(&text), Err(ForestError::Incompatible { .. })));
        let good = model.to_json();
        let err = ForestModel::from_json(&good[..good.len() / 2]).unwrap_err();
        assert!(matches!(err, ForestError::Parse { line: 1, .. }), "{err}");
    }
}
