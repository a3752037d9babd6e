use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{binary_targets, require_normalized};
use crate::envstats::FeatureVector;
use crate::error::{QusError, Result};
use crate::evaluation::{auc, ScoredSet};
use crate::rng;
use crate::specklesim::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure.
    pub max_depth: Option<usize>,
    pub features_per_split: usize,
    pub min_samples_split: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: None, features_per_split: 2, min_samples_split: 2, bootstrap: true, seed: 0 }
    }
}

/// One node of a tree stored in preorder: an internal node is followed by
/// its left subtree, then its right subtree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Split feature, or `None` for a leaf.
    pub feature: Option<usize>,
    /// Samples with `x[feature] <= threshold` go left.
    pub threshold: f64,
    /// FDS fraction of the training samples that reached this node.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64; 4]) -> f64 {
        let mut i = 0;
        loop {
            let node = self.nodes[i];
            match node.feature {
                None => return node.value,
                Some(f) => {
                    if x[f] <= node.threshold {
                        i += 1;
                    } else {
                        i = self.skip(i + 1);
                    }
                }
            }
        }
    }

    /// Index just past the subtree rooted at `i`.
    fn skip(&self, mut i: usize) -> usize {
        let mut pending = 1;
        while pending > 0 {
            if self.nodes[i].feature.is_some() {
                pending += 1;
            } else {
                pending -= 1;
            }
            i += 1;
        }
        i
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> (usize, usize) {
            match t.nodes[i].feature {
                None => (0, i + 1),
                Some(_) => {
                    let (dl, next) = walk(t, i + 1);
                    let (dr, end) = walk(t, next);
                    (1 + dl.max(dr), end)
                }
            }
        }
        walk(self, 0).0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub config: ForestConfig,
    pub trees: Vec<Tree>,
}

impl RandomForest {
    /// Mean of the per-tree leaf FDS frequencies.
    pub fn predict_proba(&self, fv: &FeatureVector) -> Result<f64> {
        require_normalized(fv)?;
        let x = fv.to_array();
        Ok(self.trees.iter().map(|t| t.predict(&x)).sum::<f64>() / self.trees.len() as f64)
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<Label> {
        Ok(if self.predict_proba(fv)? > 0.5 { Label::Fds } else { Label::Lds })
    }
}

fn gini(pos: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a [[f64; 4]],
    y: &'a [bool],
    cfg: &'a ForestConfig,
}

impl Builder<'_> {
    fn grow(&self, idx: &mut [usize], depth: usize, rng: &mut crate::rng::QusRng, out: &mut Vec<TreeNode>) {
        let n = idx.len() as f64;
        let pos = idx.iter().filter(|&&i| self.y[i]).count() as f64;
        let value = pos / n;
        let leaf = TreeNode { feature: None, threshold: 0.0, value };
        let depth_ok = self.cfg.max_depth.is_none_or(|d| depth < d);
        if pos == 0.0 || pos == n || !depth_ok || idx.len() < self.cfg.min_samples_split.max(2) {
            out.push(leaf);
            return;
        }
        let parent = gini(pos, n);
        let mtry = self.cfg.features_per_split.clamp(1, 4);
        let mut feats: Vec<usize> = sample(rng, 4, mtry).into_iter().collect();
        feats.sort_unstable();
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &feats {
            idx.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left_pos = 0.0;
            for k in 0..idx.len() - 1 {
                if self.y[idx[k]] {
                    left_pos += 1.0;
                }
                let lv = self.x[idx[k]][f];
                let rv = self.x[idx[k + 1]][f];
                if lv == rv {
                    continue;
                }
                let t = ((lv + rv) / 2.0) as f32 as f64;
                // thresholds are stored as f32; skip gaps narrower than that
                if !(lv <= t && t < rv) {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = n - nl;
                let imp = (nl * gini(left_pos, nl) + nr * gini(pos - left_pos, nr)) / n;
                if imp < parent && best.is_none_or(|(b, _, _)| imp < b) {
                    best = Some((imp, f, t));
                }
            }
        }
        let Some((_, f, t)) = best else {
            out.push(leaf);
            return;
        };
        out.push(TreeNode { feature: Some(f), threshold: t, value });
        idx.sort_by(|&a, &b| (self.x[a][f] > t).cmp(&(self.x[b][f] > t)).then(a.cmp(&b)));
        let split = idx.iter().take_while(|&&i| self.x[i][f] <= t).count();
        let (l, r) = idx.split_at_mut(split);
        self.grow(l, depth + 1, rng, out);
        self.grow(r, depth + 1, rng, out);
    }
}

/// CART trees with Gini impurity, each on its own bootstrap resample with a
/// random feature subset per split. Tree `k` draws from stream `k` of the
/// configured seed.
pub fn train_random_forest(features: &[FeatureVector], labels: &[Label], cfg: &ForestConfig) -> Result<RandomForest> {
    let y = binary_targets(features, labels)?;
    for fv in features {
        require_normalized(fv)?;
    }
    if cfg.n_trees == 0 || cfg.features_per_split == 0 {
        return Err(QusError::invalid("n_trees and features_per_split must be positive"));
    }
    let x: Vec<[f64; 4]> = features.iter().map(FeatureVector::to_array).collect();
    let n = x.len();
    let b = Builder { x: &x, y: &y, cfg };
    let trees = (0..cfg.n_trees)
        .map(|k| {
            let mut rng = rng::stream(cfg.seed, k as u64);
            let mut idx: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut nodes = Vec::new();
            b.grow(&mut idx, 0, &mut rng, &mut nodes);
            for node in &mut nodes {
                node.value = node.value as f32 as f64;
            }
            Tree { nodes }
        })
        .collect();
    Ok(RandomForest { config: *cfg, trees })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestGridResult {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub val_auc: f64,
}

/// Grid search over tree count and depth maximizing validation AUC.
pub fn forest_grid_search(
    train: (&[FeatureVector], &[Label]),
    val: (&[FeatureVector], &[Label]),
    trees: &[usize],
    depths: &[Option<usize>],
    base: &ForestConfig,
) -> Result<(RandomForest, Vec<ForestGridResult>)> {
    let val_labels: Vec<u8> = val.1.iter().map(|l| l.to_byte()).collect();
    let mut results = Vec::new();
    let mut best: Option<(f64, RandomForest)> = None;
    for &n_trees in trees {
        for &max_depth in depths {
            let f = train_random_forest(train.0, train.1, &ForestConfig { n_trees, max_depth, ..*base })?;
            let scores = val.0.iter().map(|v| f.predict_proba(v)).collect::<Result<Vec<_>>>()?;
            let a = auc(&ScoredSet::new(scores, val_labels.clone())?);
            results.push(ForestGridResult { n_trees, max_depth, val_auc: a });
            if best.as_ref().is_none_or(|(b, _)| a > *b) {
                best = Some((a, f));
            }
        }
    }
    let (_, f) = best.ok_or_else(|| QusError::invalid("empty hyperparameter grid"))?;
    Ok((f, results))
}
