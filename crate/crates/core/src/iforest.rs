//! Isolation Forest anomaly scoring.
//!
//! Each tree is grown on its own subsample with an RNG stream derived from
//! `(seed, tree_index)`, so models are reproducible under any build order.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::matrix::FeatureMatrix;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IforestError {
    #[error("parameter error: {0}")]
    Parameter(String),
}

/// Harmonic number `H(m)`. Exact summation for small `m`, asymptotic beyond.
pub fn harmonic(m: usize) -> f64 {
    if m <= 256 {
        (1..=m).map(|k| 1.0 / k as f64).sum()
    } else {
        let x = m as f64;
        x.ln() + EULER_GAMMA + 0.5 / x - 1.0 / (12.0 * x * x) + 1.0 / (120.0 * x.powi(4))
    }
}

/// Average path length of an unsuccessful binary-search-tree lookup among `m` points.
pub fn average_path_length(m: usize) -> f64 {
    match m {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => 2.0 * harmonic(m - 1) - 2.0 * (m - 1) as f64 / m as f64,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Internal {
        feature: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

/// Arena-allocated isolation tree; node 0 is the root. Points with
/// `x[feature] < value` go left.
#[derive(Debug, Clone, PartialEq)]
pub struct IsolationTree {
    nodes: Vec<Node>,
}

impl IsolationTree {
    pub fn from_nodes(nodes: Vec<Node>) -> Self {
        assert!(!nodes.is_empty(), "tree needs a root");
        Self { nodes }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn go(t: &IsolationTree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Internal { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    /// Leaf depth plus the unbuilt-subtree adjustment `c(size)`.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        let mut depth = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { size } => return depth as f64 + average_path_length(size),
                Node::Internal {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    i = if x[feature] < value { left } else { right };
                    depth += 1;
                }
            }
        }
    }
}

struct Builder<'a> {
    data: &'a FeatureMatrix,
    max_depth: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn grow(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { size: rows.len() });
        if rows.len() <= 1 || depth >= self.max_depth {
            return id;
        }
        let d = self.data.d();
        let ranges: Vec<(usize, f64, f64)> = (0..d)
            .filter_map(|j| {
                let (lo, hi) =
                    rows.iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                            let v = self.data.get(r, j);
                            (lo.min(v), hi.max(v))
                        });
                (hi > lo).then_some((j, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[self.rng.gen_range(0..ranges.len())];
        let value = loop {
            let v = self.rng.gen_range(lo..hi);
            if v > lo {
                break v;
            }
        };
        let split = partition(rows, |&r| self.data.get(r, feature) < value);
        let (l, r) = rows.split_at_mut(split);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Internal {
            feature,
            value,
            left,
            right,
        };
        id
    }
}

fn partition<T>(v: &mut [T], pred: impl Fn(&T) -> bool) -> usize {
    let mut k = 0;
    for i in 0..v.len() {
        if pred(&v[i]) {
            v.swap(i, k);
            k += 1;
        }
    }
    k
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationForestModel {
    pub trees: Vec<IsolationTree>,
    pub subsample_size: usize,
    pub n_features: usize,
    pub seed: u64,
}

impl IsolationForestModel {
    /// Assembles a model from prebuilt trees (used for hand-checked cases).
    pub fn from_trees(trees: Vec<IsolationTree>, subsample_size: usize, n_features: usize) -> Self {
        Self {
            trees,
            subsample_size,
            n_features,
            seed: 0,
        }
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn max_depth(&self) -> usize {
        (self.subsample_size as f64).log2().ceil() as usize
    }
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// Grows `n_trees` isolation trees on subsamples of `features`.
///
/// Subsamples are drawn without replacement, or with replacement when
/// `subsample_size` exceeds the number of rows.
pub fn fit_iforest(
    features: &FeatureMatrix,
    n_trees: usize,
    subsample_size: usize,
    seed: u64,
) -> Result<IsolationForestModel, IforestError> {
    let n = features.n();
    if n_trees == 0 {
        return Err(IforestError::Parameter("n_trees must be at least 1".into()));
    }
    if n < 2 {
        return Err(IforestError::Parameter(format!(
            "need at least 2 samples, got {n}"
        )));
    }
    if subsample_size < 2 {
        return Err(IforestError::Parameter(format!(
            "subsample_size must be at least 2, got {subsample_size}"
        )));
    }
    let max_depth = (subsample_size as f64).log2().ceil() as usize;
    let trees = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(seed, t);
            let mut rows: Vec<usize> = if subsample_size <= n {
                sample(&mut rng, n, subsample_size).into_vec()
            } else {
                (0..subsample_size).map(|_| rng.gen_range(0..n)).collect()
            };
            let mut b = Builder {
                data: features,
                max_depth,
                rng,
                nodes: Vec::new(),
            };
            b.grow(&mut rows, 0);
            IsolationTree { nodes: b.nodes }
        })
        .collect();
    Ok(IsolationForestModel {
        trees,
        subsample_size,
        n_features: features.d(),
        seed,
    })
}

/// `s(x) = 2^(-E[h(x)] / c(ψ))` for every row.
pub fn anomaly_scores(
    model: &IsolationForestModel,
    features: &FeatureMatrix,
) -> Result<Vec<f64>, IforestError> {
    if features.d() != model.n_features {
        return Err(IforestError::Parameter(format!(
            "model trained on {} features, got {}",
            model.n_features,
            features.d()
        )));
    }
    let c = average_path_length(model.subsample_size);
    let t = model.trees.len() as f64;
    Ok((0..features.n())
        .into_par_iter()
        .map(|i| {
            let x = features.row(i);
            let mean = model.trees.iter().map(|tr| tr.path_length(x)).sum::<f64>() / t;
            2f64.powf(-mean / c)
        })
        .collect())
}

/// Number of samples flagged at a contamination level: `round_half_up(c · n)`.
pub fn flag_count(contamination: f64, n: usize) -> usize {
    let x = contamination * n as f64;
    // decimal contaminations such as 0.3 are inexact in binary
    (x + 0.5 + 1e-9 * x.max(1.0)).floor() as usize
}

/// Flags the `round_half_up(contamination · n)` highest scores. Equal scores
/// at the cut go to the lower index.
pub fn flag_outliers(scores: &[f64], contamination: f64) -> Result<Vec<bool>, IforestError> {
    if !(contamination > 0.0 && contamination < 1.0) {
        return Err(IforestError::Parameter(format!(
            "contamination {contamination} not in (0, 1)"
        )));
    }
    let m = flag_count(contamination, scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut flags = vec![false; scores.len()];
    for &i in &order[..m] {
        flags[i] = true;
    }
    Ok(flags)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_length_constants() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        // c(3) = 2 H(2) - 4/3 = 3 - 4/3
        assert!((average_path_length(3) - (3.0 - 4.0 / 3.0)).abs() < 1e-15);
        let exact: f64 = (1..=1000).map(|k| 1.0 / k as f64).sum();
        assert!((harmonic(1000) - exact).abs() < 1e-12);
    }

    #[test]
    fn identical_points_are_single_leaves() {
        let m = FeatureMatrix::new(2, 3, vec![1.0; 6]).unwrap();
        let model = fit_iforest(&m, 10, 2, 7).unwrap();
        for t in &model.trees {
            assert_eq!(t.nodes(), &[Node::Leaf { size: 2 }]);
        }
        let s = anomaly_scores(&model, &m).unwrap();
        assert_eq!(s[0], s[1]);
        assert_eq!(s[0], 0.5);
    }

    #[test]
    fn score_half_when_path_equals_normaliser() {
        // a single leaf of size ψ has path length exactly c(ψ)
        let tree = IsolationTree::from_nodes(vec![Node::Leaf { size: 16 }]);
        let model = IsolationForestModel::from_trees(vec![tree], 16, 1);
        let m = FeatureMatrix::new(1, 1, vec![0.0]).unwrap();
        assert_eq!(anomaly_scores(&model, &m).unwrap(), vec![0.5]);
        // deeper than c(ψ)
        let tree = IsolationTree::from_nodes(vec![Node::Leaf { size: 64 }]);
        let model = IsolationForestModel::from_trees(vec![tree], 16, 1);
        assert!(anomaly_scores(&model, &m).unwrap()[0] < 0.5);
    }

    #[test]
    fn hand_built_depth_two_tree() {
        // root splits x0 at 2.5; left splits x0 at 1.5; right is a leaf of 2
        let tree = IsolationTree::from_nodes(vec![
            Node::Internal {
                feature: 0,
                value: 2.5,
                left: 1,
                right: 4,
            },
            Node::Internal {
                feature: 0,
                value: 1.5,
                left: 2,
                right: 3,
            },
            Node::Leaf { size: 1 },
            Node::Leaf { size: 1 },
            Node::Leaf { size: 2 },
        ]);
        let m = FeatureMatrix::new(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let paths: Vec<f64> = m.rows().map(|r| tree.path_length(r)).collect();
        assert_eq!(paths, vec![2.0, 2.0, 2.0, 2.0]);
        let model = IsolationForestModel::from_trees(vec![tree], 4, 1);
        let c4 = 2.0 * (1.0 + 0.5 + 1.0 / 3.0) - 1.5;
        let s = anomaly_scores(&model, &m).unwrap();
        for v in s {
            assert!((v - 2f64.powf(-2.0 / c4)).abs() < 1e-15);
        }
    }

    #[test]
    fn structural_invariants() {
        let data: Vec<f64> = (0..300).map(|i| ((i * 37) % 101) as f64).collect();
        let m = FeatureMatrix::new(100, 3, data).unwrap();
        let model = fit_iforest(&m, 20, 64, 3).unwrap();
        assert_eq!(model.n_trees(), 20);
        for t in &model.trees {
            assert!(t.depth() <= 6);
        }
        let again = fit_iforest(&m, 20, 64, 3).unwrap();
        assert_eq!(model, again);
        // subsample larger than n draws with replacement
        let big = fit_iforest(&m, 2, 500, 3).unwrap();
        assert!(big.trees.iter().all(|t| t.depth() <= 9));
    }

    #[test]
    fn split_values_strictly_inside_range() {
        let data: Vec<f64> = (0..40).map(|i| (i % 7) as f64 * 0.5).collect();
        let m = FeatureMatrix::new(20, 2, data).unwrap();
        let model = fit_iforest(&m, 30, 20, 11).unwrap();
        for t in &model.trees {
            for node in t.nodes() {
                if let Node::Internal { feature, value, .. } = *node {
                    let col: Vec<f64> = m.column(feature).collect();
                    let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    assert!(value > lo && value < hi);
                }
            }
        }
    }

    #[test]
    fn parameter_errors() {
        let m = FeatureMatrix::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(fit_iforest(&m, 0, 2, 0).is_err());
        assert!(fit_iforest(&m, 1, 1, 0).is_err());
        let one = FeatureMatrix::new(1, 1, vec![1.0]).unwrap();
        assert!(fit_iforest(&one, 1, 2, 0).is_err());
        let model = fit_iforest(&m, 1, 2, 0).unwrap();
        let wide = FeatureMatrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(anomaly_scores(&model, &wide).is_err());
        assert!(flag_outliers(&[0.1], 0.0).is_err());
        assert!(flag_outliers(&[0.1], 1.0).is_err());
    }

    #[test]
    fn flag_counts() {
        assert_eq!(flag_count(0.30, 682), 205);
        assert_eq!(flag_count(0.3, 5), 2);
        assert_eq!(flag_count(0.001, 10), 0);
        let none = flag_outliers(&[0.9, 0.8, 0.7], 0.1).unwrap();
        assert_eq!(none, vec![false; 3]);
    }

    #[test]
    fn flag_top_three_of_ten() {
        let scores: Vec<f64> = (0..10).map(|i| 0.1 * i as f64).collect();
        let f = flag_outliers(&scores, 0.3).unwrap();
        let idx: Vec<usize> = (0..10).filter(|&i| f[i]).collect();
        assert_eq!(idx, vec![7, 8, 9]);
    }

    #[test]
    fn flag_ties_go_to_lower_index() {
        let f = flag_outliers(&[0.5, 0.9, 0.5, 0.5], 0.5).unwrap();
        assert_eq!(f, vec![true, true, false, false]);
    }
}
