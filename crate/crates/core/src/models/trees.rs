//! Gradient-boosted regression trees on squared error.
//!
//! Trees are grown greedily on variance reduction with presorted feature
//! orders. Split ties resolve to the lowest feature index, then the lowest
//! threshold. Each round may draw a row subsample from its own seed.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::index;

use super::{Hyperparams, LearnerConfig, LearnerKind, PredictionModel, Provenance, TreeParams};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: ArrayView1<'_, f64>) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf(_) => None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BoostedTreesModel {
    base: f64,
    trees: Vec<Tree>,
    p: usize,
    provenance: Provenance,
}

impl BoostedTreesModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn base_score(&self) -> f64 {
        self.base
    }

    /// Contribution of tree `t` for a single row.
    pub fn tree_contribution(&self, t: usize, row: ArrayView1<'_, f64>) -> f64 {
        self.trees[t].predict(row)
    }

    /// Whether any tree splits on `feature`.
    pub fn uses_feature(&self, feature: usize) -> bool {
        self.trees.iter().any(|t| t.split_features().any(|f| f == feature))
    }

    fn predict_row(&self, row: ArrayView1<'_, f64>) -> f64 {
        self.trees.iter().fold(self.base, |acc, t| acc + t.predict(row))
    }
}

struct Grower<'a> {
    x: &'a Array2<f64>,
    resid: &'a [f64],
    params: &'a TreeParams,
    nodes: Vec<Node>,
    go_left: Vec<bool>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Grower<'_> {
    fn grow(&mut self, orders: Vec<Vec<u32>>, depth: usize) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf(0.0));
        let rows = &orders[0];
        let count = rows.len();
        let sum: f64 = rows.iter().map(|&r| self.resid[r as usize]).sum();
        let mean = sum / count as f64;
        let leaf = Node::Leaf(self.params.learning_rate * mean);

        let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
            let v = self.resid[r as usize];
            (lo.min(v), hi.max(v))
        });
        let flat = hi - lo <= 1e-12 * (1.0 + mean.abs());
        if depth >= self.params.max_depth || count < 2 * self.params.min_samples_leaf || flat {
            self.nodes[idx] = leaf;
            return idx;
        }
        let Some(best) = self.best_split(&orders, sum) else {
            self.nodes[idx] = leaf;
            return idx;
        };

        for &r in rows {
            self.go_left[r as usize] = self.x[(r as usize, best.feature)] <= best.threshold;
        }
        let mut left_orders = Vec::with_capacity(orders.len());
        let mut right_orders = Vec::with_capacity(orders.len());
        for order in orders {
            let (l, r): (Vec<u32>, Vec<u32>) = order.into_iter().partition(|&r| self.go_left[r as usize]);
            left_orders.push(l);
            right_orders.push(r);
        }
        let left = self.grow(left_orders, depth + 1);
        let right = self.grow(right_orders, depth + 1);
        self.nodes[idx] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        idx
    }

    fn best_split(&self, orders: &[Vec<u32>], total: f64) -> Option<BestSplit> {
        let count = orders[0].len();
        let min_leaf = self.params.min_samples_leaf;
        let parent = total * total / count as f64;
        let mut best: Option<BestSplit> = None;
        for (feature, order) in orders.iter().enumerate() {
            let mut left_sum = 0.0;
            for i in 0..count - 1 {
                let r = order[i] as usize;
                left_sum += self.resid[r];
                let n_left = i + 1;
                let n_right = count - n_left;
                if n_left < min_leaf {
                    continue;
                }
                if n_right < min_leaf {
                    break;
                }
                let here = self.x[(r, feature)];
                let next = self.x[(order[i + 1] as usize, feature)];
                if next <= here {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / n_left as f64 + right_sum * right_sum / n_right as f64 - parent;
                if gain > best.as_ref().map_or(0.0, |b| b.gain) {
                    best = Some(BestSplit {
                        gain,
                        feature,
                        threshold: 0.5 * (here + next),
                    });
                }
            }
        }
        best
    }
}

pub fn fit_boosted_trees(data: &Dataset, config: &LearnerConfig, seed: u64) -> Result<BoostedTreesModel> {
    let params = match (&config.learner, &config.params) {
        (LearnerKind::BoostedTrees, Hyperparams::Trees(t)) => t,
        _ => return Err(Error::Config("fit_boosted_trees needs a boosted-trees config".into())),
    };
    config.validate()?;
    let n = data.n();
    if n < 2 * params.min_samples_leaf {
        return Err(Error::Fit(format!(
            "{n} rows cannot fill two leaves of {} samples",
            params.min_samples_leaf
        )));
    }
    if data.has_nan() {
        return Err(Error::Data("NaN in training data".into()));
    }
    let x = data.features();
    let p = data.p();
    let y = data.target();
    let base = y.sum() / n as f64;
    let mut resid: Vec<f64> = y.iter().map(|v| v - base).collect();

    let sorted: Vec<Vec<u32>> = (0..p)
        .map(|j| {
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.sort_by(|&a, &b| x[(a as usize, j)].total_cmp(&x[(b as usize, j)]));
            order
        })
        .collect();

    let sample_size = ((params.subsample * n as f64).round() as usize).clamp(1, n);
    let mut in_sample = vec![true; n];
    let mut trees = Vec::with_capacity(params.rounds);
    for round in 0..params.rounds {
        let orders: Vec<Vec<u32>> = if sample_size < n {
            let mut rng = seed::rng(seed::derive_seed(seed, &[round as u64]));
            in_sample.fill(false);
            for i in index::sample(&mut rng, n, sample_size) {
                in_sample[i] = true;
            }
            sorted
                .iter()
                .map(|o| o.iter().copied().filter(|&r| in_sample[r as usize]).collect())
                .collect()
        } else {
            sorted.clone()
        };
        let mut grower = Grower {
            x,
            resid: &resid,
            params,
            nodes: Vec::new(),
            go_left: vec![false; n],
        };
        grower.grow(orders, 0);
        let tree = Tree { nodes: grower.nodes };
        for (i, row) in x.rows().into_iter().enumerate() {
            resid[i] -= tree.predict(row);
        }
        trees.push(tree);
    }

    Ok(BoostedTreesModel {
        base,
        trees,
        p,
        provenance: Provenance {
            learner: "boosted_trees".into(),
            config: config.id(),
            seed: Some(seed),
        },
    })
}

impl PredictionModel for BoostedTreesModel {
    fn n_features(&self) -> usize {
        self.p
    }

    fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    fn predict_unchecked(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        x.rows().into_iter().map(|r| self.predict_row(r)).collect()
    }

    /// Exploits piecewise constancy in `feature`: each tree is walked once per
    /// row, branching both ways at splits on `feature` while tracking the
    /// range of grid indices still consistent with the path. Leaf values are
    /// scattered into a difference array and prefix-summed.
    fn ice_unchecked(&self, x: ArrayView2<'_, f64>, feature: usize, grid: &[f64]) -> Array2<f64> {
        let g = grid.len();
        let cuts: Vec<Vec<usize>> = self
            .trees
            .iter()
            .map(|t| {
                t.nodes
                    .iter()
                    .map(|n| match *n {
                        Node::Split {
                            feature: f,
                            threshold,
                            ..
                        } if f == feature => grid.partition_point(|&z| z <= threshold),
                        _ => 0,
                    })
                    .collect()
            })
            .collect();
        let mut out = Array2::zeros((x.nrows(), g));
        let mut diff = vec![0.0; g + 1];
        let mut stack: Vec<(usize, usize, usize)> = Vec::new();
        for (i, row) in x.rows().into_iter().enumerate() {
            diff.fill(0.0);
            for (tree, cut) in self.trees.iter().zip(&cuts) {
                stack.push((0, 0, g));
                while let Some((node, lo, hi)) = stack.pop() {
                    match tree.nodes[node] {
                        Node::Leaf(v) => {
                            diff[lo] += v;
                            diff[hi] -= v;
                        }
                        Node::Split {
                            feature: f,
                            threshold,
                            left,
                            right,
                        } => {
                            if f == feature {
                                let c = cut[node];
                                if lo < c.min(hi) {
                                    stack.push((left, lo, c.min(hi)));
                                }
                                if c.max(lo) < hi {
                                    stack.push((right, c.max(lo), hi));
                                }
                            } else if row[f] <= threshold {
                                stack.push((left, lo, hi));
                            } else {
                                stack.push((right, lo, hi));
                            }
                        }
                    }
                }
            }
            let mut acc = self.base;
            let mut out_row = out.row_mut(i);
            for (k, d) in diff[..g].iter().enumerate() {
                acc += d;
                out_row[k] = acc;
            }
        }
        out
    }
}
