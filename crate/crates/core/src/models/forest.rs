//! Random-forest classifier over azimuth bins.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::N_FEATURES;
use crate::error::{Error, Result};
use crate::seeding::{rng_for, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Candidate features per split; `None` means `max(1, floor(√n_features))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub n_bins: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 12,
            min_samples_leaf: 2,
            features_per_split: None,
            bootstrap: true,
            n_bins: 12,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::config("n_trees", "must be >= 1"));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::config("min_samples_leaf", "must be >= 1"));
        }
        if self.n_bins < 2 {
            return Err(Error::config("n_bins", "must be >= 2"));
        }
        if let Some(m) = self.features_per_split {
            if m == 0 || m > N_FEATURES {
                return Err(Error::config("features_per_split", format!("must be in 1..={N_FEATURES}")));
            }
        }
        Ok(())
    }

    fn mtry(&self) -> usize {
        self.features_per_split
            .unwrap_or_else(|| ((N_FEATURES as f64).sqrt().floor() as usize).max(1))
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
        histogram: Vec<u32>,
    },
}

/// Index of the largest count, lowest index on ties.
pub fn argmax_lowest(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

struct Builder<'a, R> {
    x: &'a [[f64; N_FEATURES]],
    y: &'a [usize],
    n_classes: usize,
    max_depth: usize,
    min_leaf: usize,
    mtry: usize,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

fn gini_sum(counts: &[u32], n: u32) -> f64 {
    // n · gini = n - Σ c² / n
    if n == 0 {
        return 0.0;
    }
    let s: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
    n as f64 - s / n as f64
}

impl<R: Rng> Builder<'_, R> {
    fn histogram(&self, idx: &[usize]) -> Vec<u32> {
        let mut h = vec![0u32; self.n_classes];
        for &i in idx {
            h[self.y[i]] += 1;
        }
        h
    }

    /// Best (impurity, feature, threshold) over the candidate features.
    fn best_split(&mut self, idx: &mut [usize], parent: &[u32]) -> Option<(f64, usize, f64)> {
        let n = idx.len() as u32;
        let parent_impurity = gini_sum(parent, n);
        let mut order: Vec<usize> = (0..N_FEATURES).collect();
        order.shuffle(self.rng);
        let mut best: Option<(f64, usize, f64)> = None;
        for (tried, &f) in order.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            idx.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = vec![0u32; self.n_classes];
            let mut right = parent.to_vec();
            for k in 0..idx.len() - 1 {
                let c = self.y[idx[k]];
                left[c] += 1;
                right[c] -= 1;
                let nl = k as u32 + 1;
                let (v, next) = (self.x[idx[k]][f], self.x[idx[k + 1]][f]);
                if v == next || (nl as usize) < self.min_leaf || ((n - nl) as usize) < self.min_leaf {
                    continue;
                }
                let imp = gini_sum(&left, nl) + gini_sum(&right, n - nl);
                if imp < parent_impurity - 1e-12 && best.is_none_or(|b| imp < b.0) {
                    let mut t = v + (next - v) / 2.0;
                    if t >= next {
                        t = v;
                    }
                    best = Some((imp, f, t));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let hist = self.histogram(idx);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { histogram: hist.clone() });
        let pure = hist.iter().filter(|&&c| c > 0).count() <= 1;
        if depth >= self.max_depth || pure || idx.len() < 2 * self.min_leaf {
            return id;
        }
        let Some((_, feature, threshold)) = self.best_split(idx, &hist) else {
            return id;
        };
        idx.sort_by(|&a, &b| {
            (self.x[a][feature] > threshold)
                .cmp(&(self.x[b][feature] > threshold))
                .then(a.cmp(&b))
        });
        let cut = idx.partition_point(|&i| self.x[i][feature] <= threshold);
        let (l, r) = idx.split_at_mut(cut);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

impl DecisionTree {
    /// Grows a tree on the rows `sample` (indices into `x`, repeats allowed).
    #[allow(clippy::too_many_arguments)]
    pub fn fit<R: Rng>(
        x: &[[f64; N_FEATURES]],
        y: &[usize],
        sample: &[usize],
        n_classes: usize,
        max_depth: usize,
        min_samples_leaf: usize,
        features_per_split: usize,
        rng: &mut R,
    ) -> DecisionTree {
        let mut b = Builder {
            x,
            y,
            n_classes,
            max_depth,
            min_leaf: min_samples_leaf,
            mtry: features_per_split,
            rng,
            nodes: Vec::new(),
        };
        let mut idx = sample.to_vec();
        b.grow(&mut idx, 0);
        DecisionTree {
            nodes: b.nodes,
            max_depth,
            min_samples_leaf,
        }
    }

    pub fn leaf(&self, x: &[f64; N_FEATURES]) -> &[u32] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { histogram } => return histogram,
            }
        }
    }

    pub fn predict(&self, x: &[f64; N_FEATURES]) -> usize {
        argmax_lowest(self.leaf(x))
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub n_classes: usize,
    pub features_per_split: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl RandomForest {
    /// `x` is already standardised; `y` holds bin labels `< params.n_bins`.
    pub fn fit(x: &[[f64; N_FEATURES]], y: &[usize], params: &ForestParams) -> Result<RandomForest> {
        params.validate()?;
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::domain("forest needs equal, non-zero numbers of rows and labels"));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= params.n_bins) {
            return Err(Error::domain(format!("label {bad} outside {} bins", params.n_bins)));
        }
        let mtry = params.mtry();
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_for(params.seed, t as u64, Stream::Forest);
                let sample: Vec<usize> = if params.bootstrap {
                    (0..x.len()).map(|_| rng.random_range(0..x.len())).collect()
                } else {
                    (0..x.len()).collect()
                };
                DecisionTree::fit(
                    x,
                    y,
                    &sample,
                    params.n_bins,
                    params.max_depth,
                    params.min_samples_leaf,
                    mtry,
                    &mut rng,
                )
            })
            .collect();
        Ok(RandomForest {
            trees,
            n_classes: params.n_bins,
            features_per_split: mtry,
            bootstrap: params.bootstrap,
            seed: params.seed,
        })
    }

    pub fn votes(&self, x: &[f64; N_FEATURES]) -> Vec<u32> {
        let mut v = vec![0u32; self.n_classes];
        for t in &self.trees {
            v[t.predict(x)] += 1;
        }
        v
    }

    /// Majority vote, lowest bin on ties.
    pub fn predict_bin(&self, x: &[f64; N_FEATURES]) -> usize {
        argmax_lowest(&self.votes(x))
    }

    pub fn bin_center_deg(&self, bin: usize) -> f64 {
        bin as f64 * 360.0 / self.n_classes as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, seed: u64) -> (Vec<[f64; 3]>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<[f64; 3]> = (0..n)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let y = x.iter().map(|r| usize::from(r[0] > 0.0)).collect();
        (x, y)
    }

    fn params(n_trees: usize) -> ForestParams {
        ForestParams {
            n_trees,
            n_bins: 2,
            seed: 5,
            ..ForestParams::default()
        }
    }

    #[test]
    fn separable_training_accuracy() {
        let (x, y) = toy(400, 1);
        let f = RandomForest::fit(&x, &y, &params(25)).unwrap();
        let hits = x.iter().zip(&y).filter(|(r, &c)| f.predict_bin(r) == c).count();
        assert_eq!(hits, x.len());
    }

    #[test]
    fn deterministic_structure() {
        let (x, y) = toy(300, 2);
        let a = RandomForest::fit(&x, &y, &params(10)).unwrap();
        let b = RandomForest::fit(&x, &y, &params(10)).unwrap();
        assert_eq!(a, b);
        let c = RandomForest::fit(&x, &y, &ForestParams { seed: 6, ..params(10) }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn single_tree_no_bootstrap_equals_tree() {
        let (x, y) = toy(200, 3);
        let p = ForestParams {
            bootstrap: false,
            features_per_split: Some(3),
            ..params(1)
        };
        let f = RandomForest::fit(&x, &y, &p).unwrap();
        let all: Vec<usize> = (0..x.len()).collect();
        let mut rng = rng_for(p.seed, 0, Stream::Forest);
        let t = DecisionTree::fit(&x, &y, &all, 2, 12, 2, 3, &mut rng);
        assert_eq!(f.trees[0], t);
        assert!(t.depth() <= 12);
        // every leaf histogram sums to its training count: the root-level
        // total equals the number of rows
        let total: u32 = t
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { histogram } => Some(histogram.iter().sum::<u32>()),
                _ => None,
            })
            .sum();
        assert_eq!(total as usize, x.len());
    }

    #[test]
    fn vote_tie_breaks_low() {
        assert_eq!(argmax_lowest(&[0, 6, 6, 0]), 1);
        assert_eq!(argmax_lowest(&[0, 0, 0, 12]), 3);
        assert_eq!(argmax_lowest(&[0, 0]), 0);
        let leaf = |c: usize| DecisionTree {
            nodes: vec![Node::Leaf {
                histogram: (0..12).map(|i| u32::from(i == c)).collect(),
            }],
            max_depth: 0,
            min_samples_leaf: 1,
        };
        let mut trees: Vec<_> = (0..6).map(|_| leaf(2)).collect();
        trees.extend((0..6).map(|_| leaf(1)));
        let f = RandomForest {
            trees,
            n_classes: 12,
            features_per_split: 1,
            bootstrap: false,
            seed: 0,
        };
        assert_eq!(f.predict_bin(&[0.0; 3]), 1);
        let f3 = RandomForest {
            trees: (0..12).map(|_| leaf(3)).collect(),
            ..f
        };
        assert_eq!(f3.predict_bin(&[0.0; 3]), 3);
        assert_eq!(f3.bin_center_deg(3), 90.0);
    }

    #[test]
    fn monotone_transform_keeps_training_predictions() {
        let (x, _) = toy(300, 4);
        let y: Vec<usize> = x.iter().map(|r| ((r[0] + 1.0) * 2.0) as usize % 4).collect();
        let p = ForestParams {
            n_bins: 4,
            ..params(15)
        };
        let f = RandomForest::fit(&x, &y, &p).unwrap();
        let xt: Vec<[f64; 3]> = x.iter().map(|r| [r[0].powi(3) * 7.0 + 2.0, r[1], r[2]]).collect();
        let g = RandomForest::fit(&xt, &y, &p).unwrap();
        for (a, b) in x.iter().zip(&xt) {
            assert_eq!(f.predict_bin(a), g.predict_bin(b));
        }
    }

    #[test]
    fn rejects_bad_labels() {
        let (x, mut y) = toy(10, 5);
        y[0] = 7;
        assert!(RandomForest::fit(&x, &y, &params(1)).is_err());
        assert!(RandomForest::fit(&x, &y[..3], &params(1)).is_err());
    }
}
