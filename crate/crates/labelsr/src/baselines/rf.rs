//! Random forest: bagged CART trees with Gini splits and per-node
//! feature subsampling.

use ndarray::Array2;
use rand::Rng;

use crate::error::Result;
use crate::seed::{self, tag};

use super::{validate_fit, validate_predict, ProbClassifier};

#[derive(Debug, Clone)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Minimum number of training samples each side of a split must keep.
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 100, min_leaf: 2, seed: 0 }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { p1: f64 },
    Split { feature: usize, threshold: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { p1 } => return *p1,
                Node::Split { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomForest {
    dims: usize,
    trees: Vec<Tree>,
}

impl RandomForest {
    /// Trains `n_trees` CART trees, each on a bootstrap resample, grown
    /// until leaves are pure or too small to split. Single-class input is
    /// allowed (every tree is a single leaf).
    pub fn fit(x: &Array2<f64>, y: &[u8], config: &ForestConfig) -> Result<Self> {
        let (n, d) = validate_fit(x, y, false)?;
        if config.n_trees == 0 || config.min_leaf == 0 {
            return Err(crate::Error::invalid("n_trees and min_leaf must be positive"));
        }
        let m_features = (d as f64).sqrt().ceil() as usize;
        let mut trees = Vec::with_capacity(config.n_trees);
        for t in 0..config.n_trees {
            let mut rng = seed::rng(config.seed, &[tag::FOREST_TREE, t as u64]);
            let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut builder = TreeBuilder {
                x,
                y,
                min_leaf: config.min_leaf,
                m_features,
                rng,
                nodes: Vec::new(),
            };
            builder.grow(sample);
            trees.push(Tree { nodes: builder.nodes });
        }
        Ok(RandomForest { dims: d, trees })
    }

    /// One probability per tree — the class-1 fraction of the leaf the
    /// row lands in.
    pub fn per_tree_probabilities(&self, row: &[f64]) -> Vec<f64> {
        self.trees.iter().map(|t| t.predict(row)).collect()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

impl ProbClassifier for RandomForest {
    fn name(&self) -> &'static str {
        "rf"
    }

    fn input_dims(&self) -> usize {
        self.dims
    }

    fn predict_proba(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        validate_predict(self.dims, x)?;
        Ok(x.rows()
            .into_iter()
            .map(|row| {
                let row = row.as_slice().unwrap();
                let sum: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
                sum / self.trees.len() as f64
            })
            .collect())
    }
}

struct TreeBuilder<'a> {
    x: &'a Array2<f64>,
    y: &'a [u8],
    min_leaf: usize,
    m_features: usize,
    rng: rand_chacha::ChaCha8Rng,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl<'a> TreeBuilder<'a> {
    fn grow(&mut self, indices: Vec<usize>) -> u32 {
        let n = indices.len();
        let n1 = indices.iter().filter(|&&i| self.y[i] == 1).count();
        let fraction = n1 as f64 / n as f64;

        let id = self.nodes.len() as u32;
        if n1 == 0 || n1 == n || n < 2 * self.min_leaf {
            self.nodes.push(Node::Leaf { p1: fraction });
            return id;
        }
        let best = match self.best_split(&indices) {
            Some(b) => b,
            None => {
                // Sampled features were all constant on this node.
                self.nodes.push(Node::Leaf { p1: fraction });
                return id;
            }
        };
        self.nodes.push(Node::Leaf { p1: fraction }); // placeholder
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
            .into_iter()
            .partition(|&i| self.x[[i, best.feature]] <= best.threshold);
        let left = self.grow(left_idx);
        let right = self.grow(right_idx);
        self.nodes[id as usize] =
            Node::Split { feature: best.feature, threshold: best.threshold, left, right };
        id
    }

    /// Draws ⌈√d⌉ distinct candidate features and returns the
    /// lowest-weighted-Gini midpoint split that leaves at least
    /// `min_leaf` samples on each side.
    fn best_split(&mut self, indices: &[usize]) -> Option<BestSplit> {
        let d = self.x.ncols();
        let mut features: Vec<usize> = (0..d).collect();
        for k in 0..self.m_features.min(d) {
            let pick = self.rng.gen_range(k..d);
            features.swap(k, pick);
        }
        features.truncate(self.m_features.min(d));

        let n = indices.len() as f64;
        let mut best: Option<BestSplit> = None;
        let mut pairs: Vec<(f64, u8)> = Vec::with_capacity(indices.len());
        for &feature in &features {
            pairs.clear();
            pairs.extend(
                indices.iter().map(|&i| (self.x[[i, feature]], self.y[i])),
            );
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

            let total1: usize = pairs.iter().filter(|p| p.1 == 1).count();
            let mut left1 = 0usize;
            for (pos, pair) in pairs.iter().enumerate() {
                left1 += pair.1 as usize;
                let n_left = pos + 1;
                let n_right = pairs.len() - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                if pairs[pos].0 == pairs[pos + 1].0 {
                    continue; // can't separate equal values
                }
                let gini = |ones: usize, count: usize| {
                    let p = ones as f64 / count as f64;
                    2.0 * p * (1.0 - p)
                };
                let weighted = (n_left as f64 * gini(left1, n_left)
                    + n_right as f64 * gini(total1 - left1, n_right))
                    / n;
                if best.as_ref().map_or(true, |b| weighted < b.impurity) {
                    best = Some(BestSplit {
                        feature,
                        threshold: 0.5 * (pairs[pos].0 + pairs[pos + 1].0),
                        impurity: weighted,
                    });
                }
            }
        }
        best
    }
}
