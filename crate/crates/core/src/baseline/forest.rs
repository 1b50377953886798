//! Quantile regression forest with co-membership weights and out-of-bag
//! prediction.
//!
//! Trees are CART regressors grown on bootstrap samples with variance
//! reduction splits. A query's weight on training response `i` is the
//! average over trees of `(copies of i in the query's leaf)/(leaf size)`;
//! quantiles are read off the weighted empirical distribution.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ExqError, Result};

pub const MIN_SAMPLES: usize = 50;
const LEAF: u32 = u32::MAX;
const FORMAT: &str = "exq-forest-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub min_leaf: usize,
    /// Features tried per split; `⌈p/3⌉` when unset.
    pub mtry: Option<usize>,
    /// Grow on bootstrap resamples (otherwise on the full sample).
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 1000,
            min_leaf: 5,
            mtry: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Node {
    /// Split feature, or [`LEAF`].
    feature: u32,
    threshold: f64,
    /// Children for splits; `[left, right)` range into `leaf_samples` for leaves.
    left: u32,
    right: u32,
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
    leaf_samples: Vec<u32>,
    in_bag: Vec<u64>,
}

impl Tree {
    fn leaf(&self, row: &[f64]) -> &[u32] {
        let mut k = 0usize;
        loop {
            let node = self.nodes[k];
            if node.feature == LEAF {
                return &self.leaf_samples[node.left as usize..node.right as usize];
            }
            k = if row[node.feature as usize] <= node.threshold {
                node.left as usize
            } else {
                node.right as usize
            };
        }
    }

    fn in_bag(&self, i: usize) -> bool {
        self.in_bag[i / 64] >> (i % 64) & 1 == 1
    }
}

/// Which training sample, or which new point, a forest quantile is for.
#[derive(Debug, Clone, Copy)]
pub enum ForestQuery<'a> {
    /// Training index, using only trees that did not see it.
    Oob(usize),
    Standard(&'a [f64]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileForest {
    n_features: usize,
    min_leaf: usize,
    mtry: usize,
    seed: u64,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    /// Training indices sorted by response.
    order: Vec<u32>,
    trees: Vec<Tree>,
    constant_features: Vec<usize>,
}

/// Grows the forest; trees are built in parallel, each from its own RNG stream.
pub fn fit_quantile_forest(x: &[Vec<f64>], y: &[f64], cfg: &ForestConfig) -> Result<QuantileForest> {
    if x.len() != y.len() {
        return Err(ExqError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = y.len();
    if n < MIN_SAMPLES {
        return Err(ExqError::InsufficientData {
            needed: MIN_SAMPLES,
            got: n,
        });
    }
    if n >= LEAF as usize {
        return Err(ExqError::InvalidParameter(format!("too many samples ({n})")));
    }
    if cfg.n_trees == 0 || cfg.min_leaf == 0 {
        return Err(ExqError::InvalidParameter(
            "n_trees and min_leaf must be positive".into(),
        ));
    }
    let p = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != p) {
        return Err(ExqError::ShapeMismatch {
            expected: p,
            got: r.len(),
        });
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(ExqError::Domain("forest inputs must be finite".into()));
    }
    let mtry = cfg.mtry.unwrap_or(p.div_ceil(3)).clamp(1, p.max(1));
    let cols: Vec<Vec<f64>> = (0..p).map(|j| x.iter().map(|r| r[j]).collect()).collect();
    let constant_features: Vec<usize> = (0..p).filter(|&j| cols[j].iter().all(|&v| v == cols[j][0])).collect();
    let candidates: Vec<usize> = (0..p).filter(|j| !constant_features.contains(j)).collect();

    let grower = Grower {
        cols: &cols,
        y,
        min_leaf: cfg.min_leaf,
        mtry,
        candidates: &candidates,
    };
    let trees: Vec<Tree> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            grower.grow(&mut rng, cfg.bootstrap)
        })
        .collect();

    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| y[a as usize].total_cmp(&y[b as usize]).then(a.cmp(&b)));
    Ok(QuantileForest {
        n_features: p,
        min_leaf: cfg.min_leaf,
        mtry,
        seed: cfg.seed,
        x: x.to_vec(),
        y: y.to_vec(),
        order,
        trees,
        constant_features,
    })
}

struct Grower<'a> {
    cols: &'a [Vec<f64>],
    y: &'a [f64],
    min_leaf: usize,
    mtry: usize,
    candidates: &'a [usize],
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Grower<'_> {
    fn grow(&self, rng: &mut ChaCha8Rng, bootstrap: bool) -> Tree {
        let n = self.y.len();
        let mut samples: Vec<u32> = if bootstrap {
            (0..n).map(|_| rng.random_range(0..n as u32)).collect()
        } else {
            (0..n as u32).collect()
        };
        let mut in_bag = vec![0u64; n.div_ceil(64)];
        for &i in &samples {
            in_bag[i as usize / 64] |= 1 << (i % 64);
        }
        let mut nodes = vec![Node {
            feature: LEAF,
            threshold: 0.0,
            left: 0,
            right: 0,
        }];
        let mut leaf_samples = Vec::with_capacity(n);
        let mut features = self.candidates.to_vec();
        let mut stack = vec![(0usize, 0usize, n)];
        while let Some((k, lo, hi)) = stack.pop() {
            let split = if hi - lo >= 2 * self.min_leaf {
                features.shuffle(rng);
                let tried = &features[..self.mtry.min(features.len())];
                self.best_split(&samples[lo..hi], tried)
            } else {
                None
            };
            match split {
                Some(s) => {
                    let seg = &mut samples[lo..hi];
                    let col = &self.cols[s.feature];
                    let (mut left, mut right): (Vec<u32>, Vec<u32>) =
                        seg.iter().partition(|&&i| col[i as usize] <= s.threshold);
                    let mid = lo + left.len();
                    left.append(&mut right);
                    seg.copy_from_slice(&left);
                    let l = nodes.len();
                    nodes.push(Node {
                        feature: LEAF,
                        threshold: 0.0,
                        left: 0,
                        right: 0,
                    });
                    nodes.push(Node {
                        feature: LEAF,
                        threshold: 0.0,
                        left: 0,
                        right: 0,
                    });
                    nodes[k] = Node {
                        feature: s.feature as u32,
                        threshold: s.threshold,
                        left: l as u32,
                        right: l as u32 + 1,
                    };
                    // right first so the left subtree is laid out first
                    stack.push((l + 1, mid, hi));
                    stack.push((l, lo, mid));
                }
                None => {
                    let start = leaf_samples.len() as u32;
                    leaf_samples.extend_from_slice(&samples[lo..hi]);
                    nodes[k].left = start;
                    nodes[k].right = leaf_samples.len() as u32;
                }
            }
        }
        Tree {
            nodes,
            leaf_samples,
            in_bag,
        }
    }

    /// Largest `S_L²/n_L + S_R²/n_R` (equivalently least within-child SSE).
    fn best_split(&self, seg: &[u32], features: &[usize]) -> Option<Split> {
        let m = seg.len();
        let total: f64 = seg.iter().map(|&i| self.y[i as usize]).sum();
        let parent = total * total / m as f64;
        let mut best: Option<Split> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(m);
        for &f in features {
            let col = &self.cols[f];
            pairs.clear();
            pairs.extend(seg.iter().map(|&i| (col[i as usize], self.y[i as usize])));
            pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let mut left_sum = 0.0;
            for k in 0..m - 1 {
                left_sum += pairs[k].1;
                let nl = k + 1;
                let nr = m - nl;
                if nl < self.min_leaf {
                    continue;
                }
                if nr < self.min_leaf {
                    break;
                }
                let (a, b) = (pairs[k].0, pairs[k + 1].0);
                if a == b {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64;
                if best.as_ref().is_none_or(|s| score > s.score) {
                    let mid = a + 0.5 * (b - a);
                    let threshold = if mid < b { mid } else { a };
                    best = Some(Split {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best.filter(|s| s.score > parent * (1.0 + 1e-12) + 1e-12)
    }
}

impl QuantileForest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_train(&self) -> usize {
        self.y.len()
    }

    pub fn min_leaf(&self) -> usize {
        self.min_leaf
    }

    /// Features with a single value in the training data; they are never split on.
    pub fn constant_features(&self) -> &[usize] {
        &self.constant_features
    }

    /// Fraction of training points left out of at least one tree.
    pub fn oob_coverage(&self) -> f64 {
        let n = self.y.len();
        let covered = (0..n).filter(|&i| self.trees.iter().any(|t| !t.in_bag(i))).count();
        covered as f64 / n as f64
    }

    /// Smallest leaf size over all trees (counting bootstrap copies).
    pub fn smallest_leaf(&self) -> usize {
        self.trees
            .iter()
            .flat_map(|t| {
                t.nodes
                    .iter()
                    .filter(|n| n.feature == LEAF)
                    .map(|n| (n.right - n.left) as usize)
            })
            .min()
            .unwrap_or(0)
    }

    /// Co-membership weights, summed (not averaged) over the selected trees.
    fn weights(&self, query: ForestQuery<'_>) -> Result<(Vec<f64>, usize)> {
        let mut w = vec![0.0; self.y.len()];
        let (row, skip): (&[f64], Option<usize>) = match query {
            ForestQuery::Oob(i) => {
                if i >= self.y.len() {
                    return Err(ExqError::ShapeMismatch {
                        expected: self.y.len(),
                        got: i,
                    });
                }
                (&self.x[i], Some(i))
            }
            ForestQuery::Standard(r) => {
                if r.len() != self.n_features {
                    return Err(ExqError::ShapeMismatch {
                        expected: self.n_features,
                        got: r.len(),
                    });
                }
                (r, None)
            }
        };
        let mut used = 0;
        for tree in &self.trees {
            if skip.is_some_and(|i| tree.in_bag(i)) {
                continue;
            }
            used += 1;
            let leaf = tree.leaf(row);
            let share = 1.0 / leaf.len() as f64;
            for &s in leaf {
                w[s as usize] += share;
            }
        }
        if used == 0 {
            if let ForestQuery::Oob(i) = query {
                return Err(ExqError::OobUndefined(i));
            }
        }
        Ok((w, used))
    }

    /// `inf{y : F̂(y) >= τ}` over positively weighted responses.
    fn weighted_quantile(&self, w: &[f64], total: f64, tau: f64) -> f64 {
        let target = tau * total * (1.0 - 1e-12);
        let mut cum = 0.0;
        let mut last = f64::NAN;
        for &i in &self.order {
            let wi = w[i as usize];
            if wi <= 0.0 {
                continue;
            }
            cum += wi;
            last = self.y[i as usize];
            if cum >= target {
                return last;
            }
        }
        last
    }

    pub fn quantiles(&self, query: ForestQuery<'_>, taus: &[f64]) -> Result<Vec<f64>> {
        if let Some(&t) = taus.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(ExqError::Domain(format!("tau must lie in [0, 1] (got {t})")));
        }
        let (w, used) = self.weights(query)?;
        Ok(taus
            .iter()
            .map(|&t| self.weighted_quantile(&w, used as f64, t))
            .collect())
    }

    /// Out-of-bag τ-quantile for every training point.
    pub fn oob_quantiles(&self, tau: f64) -> Result<Vec<f64>> {
        (0..self.y.len())
            .into_par_iter()
            .map(|i| forest_quantile(self, ForestQuery::Oob(i), tau))
            .collect()
    }

    /// Standard-mode τ-quantile for each row.
    pub fn predict(&self, rows: &[Vec<f64>], tau: f64) -> Result<Vec<f64>> {
        rows.par_iter()
            .map(|r| forest_quantile(self, ForestQuery::Standard(r), tau))
            .collect()
    }
}

pub fn forest_quantile(forest: &QuantileForest, query: ForestQuery<'_>, tau: f64) -> Result<f64> {
    Ok(forest.quantiles(query, &[tau])?[0])
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    format: String,
    n_trees: usize,
    n_features: usize,
    n_train: usize,
    min_leaf: usize,
    mtry: usize,
    seed: u64,
    constant_features: Vec<usize>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ExqError::Format("forest block is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Writes the tree arrays as a little-endian block and the metadata as JSON.
///
/// Block layout: training rows (`n × p` f64), responses (`n` f64), then per
/// tree: node count (u32), nodes (feature u32, threshold f64, left u32,
/// right u32), leaf entry count (u32), leaf entries (u32), in-bag bitset
/// (`⌈n/64⌉` u64).
pub fn write_forest<W: Write, S: Write>(forest: &QuantileForest, mut block: W, sidecar: S) -> Result<()> {
    let meta = Sidecar {
        format: FORMAT.into(),
        n_trees: forest.trees.len(),
        n_features: forest.n_features,
        n_train: forest.y.len(),
        min_leaf: forest.min_leaf,
        mtry: forest.mtry,
        seed: forest.seed,
        constant_features: forest.constant_features.clone(),
    };
    serde_json::to_writer_pretty(sidecar, &meta)?;
    let mut out = Vec::new();
    for v in forest.x.iter().flatten().chain(&forest.y) {
        put_f64(&mut out, *v);
    }
    for t in &forest.trees {
        put_u32(&mut out, t.nodes.len() as u32);
        for n in &t.nodes {
            put_u32(&mut out, n.feature);
            put_f64(&mut out, n.threshold);
            put_u32(&mut out, n.left);
            put_u32(&mut out, n.right);
        }
        put_u32(&mut out, t.leaf_samples.len() as u32);
        for &s in &t.leaf_samples {
            put_u32(&mut out, s);
        }
        for &word in &t.in_bag {
            out.extend_from_slice(&word.to_le_bytes());
        }
    }
    block.write_all(&out)?;
    Ok(())
}

pub fn read_forest<R: Read, S: Read>(mut block: R, sidecar: S) -> Result<QuantileForest> {
    let meta: Sidecar = serde_json::from_reader(sidecar)?;
    if meta.format != FORMAT {
        return Err(ExqError::Format(format!("unsupported forest format {:?}", meta.format)));
    }
    let mut buf = Vec::new();
    block.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    let (n, p) = (meta.n_train, meta.n_features);
    let mut x = Vec::with_capacity(n);
    for _ in 0..n {
        x.push((0..p).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?);
    }
    let y = (0..n).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
    let mut trees = Vec::with_capacity(meta.n_trees);
    for _ in 0..meta.n_trees {
        let n_nodes = cur.u32()? as usize;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            nodes.push(Node {
                feature: cur.u32()?,
                threshold: cur.f64()?,
                left: cur.u32()?,
                right: cur.u32()?,
            });
        }
        let n_leaf = cur.u32()? as usize;
        let leaf_samples = (0..n_leaf).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
        let in_bag = (0..n.div_ceil(64)).map(|_| cur.u64()).collect::<Result<Vec<_>>>()?;
        let tree = Tree {
            nodes,
            leaf_samples,
            in_bag,
        };
        check_tree(&tree, n, p)?;
        trees.push(tree);
    }
    if cur.pos != buf.len() {
        return Err(ExqError::Format("trailing bytes after forest block".into()));
    }
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| y[a as usize].total_cmp(&y[b as usize]).then(a.cmp(&b)));
    Ok(QuantileForest {
        n_features: p,
        min_leaf: meta.min_leaf,
        mtry: meta.mtry,
        seed: meta.seed,
        x,
        y,
        order,
        trees,
        constant_features: meta.constant_features,
    })
}

fn check_tree(tree: &Tree, n: usize, p: usize) -> Result<()> {
    let bad = |what: &str| Err(ExqError::Format(format!("corrupt tree: {what}")));
    for (k, node) in tree.nodes.iter().enumerate() {
        if node.feature == LEAF {
            if node.left > node.right || node.right as usize > tree.leaf_samples.len() || node.left == node.right {
                return bad("leaf range");
            }
        } else if node.feature as usize >= p
            || node.left as usize <= k
            || node.right as usize <= k
            || node.left as usize >= tree.nodes.len()
            || node.right as usize >= tree.nodes.len()
        {
            return bad("split node");
        }
    }
    if tree.nodes.is_empty() || tree.leaf_samples.iter().any(|&s| s as usize >= n) {
        return bad("sample index");
    }
    Ok(())
}
