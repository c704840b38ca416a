use ndarray::{Array2, ArrayView1};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowdata::WindowSet;
use crate::seeds::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `⌈√d⌉`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 5,
            max_features: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: Vec<f64>,
    },
}

/// A CART regression tree stored as an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict_row(&self, x: ArrayView1<f64>) -> &[f64] {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    k = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], k: usize) -> usize {
            match &nodes[k] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub config: ForestConfig,
    pub n_features: usize,
    pub n_outputs: usize,
    pub trees: Vec<RegressionTree>,
}

struct TreeBuilder<'a> {
    x: &'a Array2<f64>,
    y: &'a Array2<f64>,
    max_depth: usize,
    min_leaf: usize,
    max_features: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl TreeBuilder<'_> {
    fn leaf(&self, idx: &[usize]) -> Node {
        let mut value = vec![0.0; self.y.ncols()];
        for &i in idx {
            for (v, &t) in value.iter_mut().zip(self.y.row(i)) {
                *v += t;
            }
        }
        let n = idx.len() as f64;
        value.iter_mut().for_each(|v| *v /= n);
        Node::Leaf { value }
    }

    fn sse(&self, idx: &[usize]) -> f64 {
        let n = idx.len() as f64;
        (0..self.y.ncols())
            .map(|k| {
                let mean = idx.iter().map(|&i| self.y[[i, k]]).sum::<f64>() / n;
                idx.iter()
                    .map(|&i| (self.y[[i, k]] - mean).powi(2))
                    .sum::<f64>()
            })
            .sum()
    }

    fn best_split(&self, idx: &[usize], parent_sse: f64, rng: &mut impl Rng) -> Option<BestSplit> {
        let n = idx.len();
        let n_out = self.y.ncols();
        let total_sum: Vec<f64> = (0..n_out)
            .map(|k| idx.iter().map(|&i| self.y[[i, k]]).sum())
            .collect();
        let total_sq: f64 = idx
            .iter()
            .map(|&i| self.y.row(i).iter().map(|v| v * v).sum::<f64>())
            .sum();
        let mut order = idx.to_vec();
        let mut left_sum = vec![0.0; n_out];
        let mut best: Option<BestSplit> = None;

        for feature in sample(rng, self.x.ncols(), self.max_features).into_iter() {
            order.sort_by(|&a, &b| self.x[[a, feature]].total_cmp(&self.x[[b, feature]]));
            left_sum.iter_mut().for_each(|v| *v = 0.0);
            let mut left_sq = 0.0;
            for pos in 0..n - 1 {
                let i = order[pos];
                for (k, s) in left_sum.iter_mut().enumerate() {
                    let v = self.y[[i, k]];
                    *s += v;
                    left_sq += v * v;
                }
                let n_left = pos + 1;
                let n_right = n - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let lo = self.x[[i, feature]];
                let hi = self.x[[order[pos + 1], feature]];
                if !(lo < hi) {
                    continue;
                }
                let mut sse_left = left_sq;
                let mut sse_right = total_sq - left_sq;
                for k in 0..n_out {
                    let right = total_sum[k] - left_sum[k];
                    sse_left -= left_sum[k] * left_sum[k] / n_left as f64;
                    sse_right -= right * right / n_right as f64;
                }
                let gain = parent_sse - sse_left - sse_right;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(BestSplit {
                        gain,
                        feature,
                        threshold,
                    });
                }
            }
        }
        best.filter(|b| b.gain > 1e-12 * parent_sse.max(f64::MIN_POSITIVE))
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut impl Rng) -> usize {
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { value: Vec::new() });
        let parent_sse = self.sse(idx);
        let split = if depth >= self.max_depth || idx.len() < 2 * self.min_leaf || parent_sse <= 0.0
        {
            None
        } else {
            self.best_split(idx, parent_sse, rng)
        };
        let Some(split) = split else {
            self.nodes[slot] = self.leaf(idx);
            return slot;
        };
        let mut boundary = 0;
        for k in 0..idx.len() {
            if self.x[[idx[k], split.feature]] <= split.threshold {
                idx.swap(k, boundary);
                boundary += 1;
            }
        }
        let (left_idx, right_idx) = idx.split_at_mut(boundary);
        let left = self.grow(left_idx, depth + 1, rng);
        let right = self.grow(right_idx, depth + 1, rng);
        self.nodes[slot] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        slot
    }
}

/// Rows of flattened window inputs (`L·N` features, time-major).
pub fn window_features(windows: &WindowSet) -> Array2<f64> {
    let d = windows.samples.first().map_or(0, |w| w.inputs.len());
    let mut x = Array2::zeros((windows.len(), d));
    for (mut row, w) in x.outer_iter_mut().zip(&windows.samples) {
        row.assign(&ndarray::ArrayView1::from(
            w.inputs.as_slice().expect("standard layout"),
        ));
    }
    x
}

/// Fits a bagged forest of multi-output CART trees.
///
/// Splits maximize the drop in squared error summed over all outputs;
/// leaves hold the mean target vector of their bootstrap samples.
pub fn rf_fit_matrix(
    x: &Array2<f64>,
    y: &Array2<f64>,
    config: &ForestConfig,
) -> Result<ForestModel> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::data("random forest needs nonempty training inputs"));
    }
    if x.nrows() != y.nrows() {
        return Err(Error::contract(
            "features and targets differ in sample count",
        ));
    }
    if config.n_trees == 0 || config.min_leaf == 0 {
        return Err(Error::config(
            "forest needs at least one tree and min_leaf >= 1",
        ));
    }
    let d = x.ncols();
    let max_features = config
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d);
    let n = x.nrows();
    let trees = (0..config.n_trees)
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(config.seed, &["tree", &t.to_string()]));
            let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut builder = TreeBuilder {
                x,
                y,
                max_depth: config.max_depth,
                min_leaf: config.min_leaf,
                max_features,
                nodes: Vec::new(),
            };
            builder.grow(&mut idx, 0, &mut rng);
            RegressionTree {
                nodes: builder.nodes,
            }
        })
        .collect();
    Ok(ForestModel {
        config: config.clone(),
        n_features: d,
        n_outputs: y.ncols(),
        trees,
    })
}

pub fn rf_fit(windows: &WindowSet, config: &ForestConfig) -> Result<ForestModel> {
    if windows.is_empty() {
        return Err(Error::data("random forest needs training windows"));
    }
    rf_fit_matrix(&window_features(windows), &windows.targets(), config)
}

pub fn rf_predict_matrix(model: &ForestModel, x: &Array2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != model.n_features {
        return Err(Error::contract(format!(
            "forest expects {} features, got {}",
            model.n_features,
            x.ncols()
        )));
    }
    let mut out = Array2::zeros((x.nrows(), model.n_outputs));
    for (mut row, xr) in out.outer_iter_mut().zip(x.outer_iter()) {
        for tree in &model.trees {
            for (o, &v) in row.iter_mut().zip(tree.predict_row(xr)) {
                *o += v;
            }
        }
        row.mapv_inplace(|v| v / model.trees.len() as f64);
    }
    Ok(out)
}

pub fn rf_predict(model: &ForestModel, windows: &WindowSet) -> Result<Array2<f64>> {
    rf_predict_matrix(model, &window_features(windows))
}
