//! Softmax gradient-boosted trees.
//!
//! One regression tree per class and round, grown level by level with exact
//! greedy splits on second-order statistics. For class `c` and row `i` the
//! gradient and hessian of the softmax log loss are `p_ic - y_ic` and
//! `p_ic (1 - p_ic)`.

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, ModelFamily};
use crate::{par, rng, N_CLASSES};

const MIN_HESSIAN: f64 = 1e-16;
const PROB_CLIP: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub eta: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub num_round: usize,
    pub max_depth: usize,
    /// 0 disables the clip on leaf weights.
    pub max_delta_step: f64,
    pub min_child_weight: f64,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub colsample_bylevel: f64,
    pub colsample_bynode: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            eta: 0.3,
            lambda: 1.0,
            alpha: 0.0,
            gamma: 0.0,
            num_round: 10,
            max_depth: 6,
            max_delta_step: 0.0,
            min_child_weight: 1.0,
            subsample: 1.0,
            colsample_bytree: 1.0,
            colsample_bylevel: 1.0,
            colsample_bynode: 1.0,
        }
    }
}

pub const MAX_TREE_DEPTH: usize = 64;

impl GbtParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |name: &'static str, v: f64| ModelError::InvalidParameter {
            family: ModelFamily::Gbt,
            name,
            value: v.to_string(),
        };
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(bad("eta", self.eta));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("max_delta_step", self.max_delta_step),
            ("min_child_weight", self.min_child_weight),
        ] {
            if !nonneg(v) {
                return Err(bad(name, v));
            }
        }
        for (name, v) in [
            ("subsample", self.subsample),
            ("colsample_bytree", self.colsample_bytree),
            ("colsample_bylevel", self.colsample_bylevel),
            ("colsample_bynode", self.colsample_bynode),
        ] {
            if !unit(v) {
                return Err(bad(name, v));
            }
        }
        if self.max_depth == 0 || self.max_depth > MAX_TREE_DEPTH {
            return Err(bad("max_depth", self.max_depth as f64));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: f64,
    },
}

/// Binary regression tree; node 0 is the root. Rows with
/// `x[feature] < threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_value(&self, value: impl Fn(usize) -> f64) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { weight } => return weight,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if value(feature) < threshold { left } else { right },
            }
        }
    }

    /// Number of split levels on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    pub fn leaves(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { weight } => Some(*weight),
                _ => None,
            })
            .collect()
    }
}

/// Fitted ensemble. Raw score of class `c` is `ln(prior_c) + eta * sum of
/// its trees`; classes absent from training have no trees and probability 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub params: GbtParams,
    pub class_counts: Vec<usize>,
    /// `rounds[r][c]` is the tree for class `c` in round `r`.
    pub rounds: Vec<Vec<Option<Tree>>>,
    /// Training log loss before the first round and after each round.
    pub history: Vec<f64>,
}

fn soft_threshold(g: f64, alpha: f64) -> f64 {
    if g > alpha {
        g - alpha
    } else if g < -alpha {
        g + alpha
    } else {
        0.0
    }
}

impl GbtParams {
    /// Regularized Newton step for a node with gradient sum `g`, hessian sum `h`.
    pub fn leaf_weight(&self, g: f64, h: f64) -> f64 {
        let denom = h + self.lambda;
        if denom <= 0.0 {
            return 0.0;
        }
        let w = -soft_threshold(g, self.alpha) / denom;
        if self.max_delta_step > 0.0 {
            w.clamp(-self.max_delta_step, self.max_delta_step)
        } else {
            w
        }
    }

    /// Twice the objective reduction achieved by the node's optimal weight.
    pub fn node_score(&self, g: f64, h: f64) -> f64 {
        let denom = h + self.lambda;
        if denom <= 0.0 {
            return 0.0;
        }
        if self.max_delta_step > 0.0 {
            let w = self.leaf_weight(g, h);
            -(2.0 * g * w + denom * w * w + 2.0 * self.alpha * w.abs())
        } else {
            let t = soft_threshold(g, self.alpha);
            t * t / denom
        }
    }

    pub fn split_gain(&self, gl: f64, hl: f64, gr: f64, hr: f64) -> f64 {
        0.5 * (self.node_score(gl, hl) + self.node_score(gr, hr) - self.node_score(gl + gr, hl + hr)) - self.gamma
    }
}

/// Class probabilities from tree sums `s`: `count_c exp(s_c) / sum_j count_j exp(s_j)`.
fn probabilities(counts: &[usize], s: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let m = (0..N_CLASSES)
        .filter(|&c| counts[c] > 0)
        .map(|c| s[c])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; N_CLASSES];
    let mut total = 0.0;
    for c in 0..N_CLASSES {
        if counts[c] > 0 {
            p[c] = counts[c] as f64 * (s[c] - m).exp();
            total += p[c];
        }
    }
    p.map(|v| v / total)
}

fn log_loss_of(probs: &[[f64; N_CLASSES]], y: &[usize]) -> f64 {
    let s: f64 = probs
        .iter()
        .zip(y)
        .map(|(p, &c)| -p[c].clamp(PROB_CLIP, 1.0 - PROB_CLIP).ln())
        .sum();
    s / y.len() as f64
}

fn sample_features(from: &[usize], frac: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if frac >= 1.0 || from.len() <= 1 {
        return from.to_vec();
    }
    let k = ((frac * from.len() as f64).round() as usize).clamp(1, from.len());
    let mut out: Vec<usize> = from.choose_multiple(rng, k).copied().collect();
    out.sort_unstable();
    out
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = 0.5 * a + 0.5 * b;
    if m > a && m <= b {
        m
    } else {
        b
    }
}

/// Column-major copy of the training matrix with per-feature row orders
/// and the values in that order.
struct Columns {
    values: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
    sorted: Vec<Vec<f64>>,
}

impl Columns {
    fn new(x: &Array2<f64>) -> Self {
        let values: Vec<Vec<f64>> = (0..x.ncols()).map(|j| x.column(j).to_vec()).collect();
        let order = par::map_slice(&values, |col| {
            let mut idx: Vec<u32> = (0..col.len() as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            idx
        });
        let sorted = values
            .iter()
            .zip(&order)
            .map(|(col, idx)| idx.iter().map(|&i| col[i as usize]).collect())
            .collect();
        Columns { values, order, sorted }
    }

    fn rows(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    gl: f64,
    hl: f64,
}

struct Pending {
    g: f64,
    h: f64,
}

fn build_tree(params: &GbtParams, cols: &Columns, g: &[f64], h: &[f64], rng: &mut ChaCha8Rng) -> Tree {
    let n = cols.rows();
    let d = cols.values.len();
    let gh: Vec<[f64; 2]> = g.iter().zip(h).map(|(&a, &b)| [a, b]).collect();

    // Node id per row, -1 once the row is out of play.
    let mut pos: Vec<i32> = if params.subsample < 1.0 {
        (0..n)
            .map(|_| if rng.random::<f64>() < params.subsample { 0 } else { -1 })
            .collect()
    } else {
        vec![0; n]
    };
    let (mut g0, mut h0) = (0.0, 0.0);
    for i in (0..n).filter(|&i| pos[i] == 0) {
        g0 += g[i];
        h0 += h[i];
    }
    let mut nodes: Vec<Option<Node>> = vec![None];
    let mut pending = vec![Pending { g: g0, h: h0 }];
    let mut frontier = vec![0usize];
    let all: Vec<usize> = (0..d).collect();
    let tree_features = sample_features(&all, params.colsample_bytree, rng);

    for _depth in 0..params.max_depth {
        if frontier.is_empty() {
            break;
        }
        let level_features = sample_features(&tree_features, params.colsample_bylevel, rng);
        let mut allowed = vec![vec![false; d]; frontier.len()];
        for a in allowed.iter_mut() {
            for f in sample_features(&level_features, params.colsample_bynode, rng) {
                a[f] = true;
            }
        }
        let mut slot = vec![-1i32; nodes.len()];
        for (s, &id) in frontier.iter().enumerate() {
            slot[id] = s as i32;
        }
        let parent_g: Vec<f64> = frontier.iter().map(|&id| pending[id].g).collect();
        let parent_h: Vec<f64> = frontier.iter().map(|&id| pending[id].h).collect();
        // frontier slot per row, -1 when the row is not in play
        let row_slot: Vec<i32> = pos.iter().map(|&p| if p < 0 { -1 } else { slot[p as usize] }).collect();

        let per_feature = par::map_slice(&level_features, |&f| {
            let k = frontier.len();
            let mut gl = vec![0.0; k];
            let mut hl = vec![0.0; k];
            let mut last = vec![f64::NAN; k];
            let mut best: Vec<Option<Candidate>> = vec![None; k];
            for (&r, &v) in cols.order[f].iter().zip(&cols.sorted[f]) {
                let r = r as usize;
                let s = row_slot[r];
                if s < 0 || !allowed[s as usize][f] {
                    continue;
                }
                let s = s as usize;
                if v > last[s] {
                    let (gr, hr) = (parent_g[s] - gl[s], parent_h[s] - hl[s]);
                    if hl[s] >= params.min_child_weight && hr >= params.min_child_weight {
                        let gain = params.split_gain(gl[s], hl[s], gr, hr);
                        if best[s].is_none_or(|b| gain > b.gain) {
                            best[s] = Some(Candidate {
                                gain,
                                feature: f,
                                threshold: midpoint(last[s], v),
                                gl: gl[s],
                                hl: hl[s],
                            });
                        }
                    }
                }
                let [gr, hr] = gh[r];
                gl[s] += gr;
                hl[s] += hr;
                last[s] = v;
            }
            best
        });

        let mut next = Vec::new();
        let mut splits: Vec<Option<(usize, f64, usize, usize)>> = vec![None; frontier.len()];
        for (s, &id) in frontier.iter().enumerate() {
            let mut best: Option<Candidate> = None;
            for cand in per_feature.iter().filter_map(|b| b[s]) {
                if best.is_none_or(|b| cand.gain > b.gain) {
                    best = Some(cand);
                }
            }
            match best {
                Some(c) if c.gain > 0.0 => {
                    let left = nodes.len();
                    nodes.push(None);
                    nodes.push(None);
                    pending.push(Pending { g: c.gl, h: c.hl });
                    pending.push(Pending {
                        g: pending[id].g - c.gl,
                        h: pending[id].h - c.hl,
                    });
                    nodes[id] = Some(Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left,
                        right: left + 1,
                    });
                    splits[s] = Some((c.feature, c.threshold, left, left + 1));
                    next.push(left);
                    next.push(left + 1);
                }
                _ => {
                    nodes[id] = Some(Node::Leaf {
                        weight: params.leaf_weight(pending[id].g, pending[id].h),
                    });
                }
            }
        }
        for (r, p) in pos.iter_mut().enumerate() {
            if *p < 0 {
                continue;
            }
            let s = slot[*p as usize];
            if s < 0 {
                continue;
            }
            *p = match splits[s as usize] {
                Some((f, thr, l, rt)) => {
                    if cols.values[f][r] < thr {
                        l as i32
                    } else {
                        rt as i32
                    }
                }
                None => -1,
            };
        }
        frontier = next;
    }
    for id in frontier {
        nodes[id] = Some(Node::Leaf {
            weight: params.leaf_weight(pending[id].g, pending[id].h),
        });
    }
    Tree {
        nodes: nodes.into_iter().map(|n| n.expect("every node resolved")).collect(),
    }
}

impl GbtModel {
    pub fn fit(params: &GbtParams, x: &Array2<f64>, y: &[usize], seed: u64) -> Result<Self, ModelError> {
        params.validate()?;
        let n = x.nrows();
        let mut class_counts = vec![0usize; N_CLASSES];
        for &c in y {
            class_counts[c] += 1;
        }
        let cols = Columns::new(x);
        let mut scores = vec![[0.0f64; N_CLASSES]; n];
        let mut probs: Vec<[f64; N_CLASSES]> = scores.iter().map(|s| probabilities(&class_counts, s)).collect();
        let mut history = vec![log_loss_of(&probs, y)];
        let mut rounds = Vec::with_capacity(params.num_round);

        for round in 0..params.num_round {
            let trees = par::map_range(N_CLASSES, |c| {
                if class_counts[c] == 0 {
                    return Ok(None);
                }
                let mut g = Vec::with_capacity(n);
                let mut h = Vec::with_capacity(n);
                for (i, p) in probs.iter().enumerate() {
                    let target = if y[i] == c { 1.0 } else { 0.0 };
                    g.push(p[c] - target);
                    h.push((p[c] * (1.0 - p[c])).max(MIN_HESSIAN));
                }
                if g.iter().chain(&h).any(|v| !v.is_finite()) {
                    return Err(ModelError::Diverged {
                        stage: "round",
                        step: round,
                    });
                }
                let mut r = rng::derive_rng(seed, &[round as u64, c as u64]);
                Ok(Some(build_tree(params, &cols, &g, &h, &mut r)))
            })
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;

            par::for_each_chunk_mut(&mut scores, 1024, |chunk_idx, chunk| {
                for (k, s) in chunk.iter_mut().enumerate() {
                    let i = chunk_idx * 1024 + k;
                    for (c, t) in trees.iter().enumerate() {
                        if let Some(t) = t {
                            s[c] += params.eta * t.leaf_value(|f| cols.values[f][i]);
                        }
                    }
                }
            });
            probs = par::map_slice(&scores, |s| probabilities(&class_counts, s));
            let loss = log_loss_of(&probs, y);
            if !loss.is_finite() {
                return Err(ModelError::Diverged {
                    stage: "round",
                    step: round,
                });
            }
            history.push(loss);
            rounds.push(trees);
        }
        Ok(GbtModel {
            params: *params,
            class_counts,
            rounds,
            history,
        })
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Array2<f64> {
        let rows = par::map_range(x.nrows(), |i| {
            let row = x.row(i);
            let mut s = [0.0; N_CLASSES];
            for trees in &self.rounds {
                for (c, t) in trees.iter().enumerate() {
                    if let Some(t) = t {
                        s[c] += self.params.eta * t.leaf_value(|f| row[f]);
                    }
                }
            }
            probabilities(&self.class_counts, &s)
        });
        let mut out = Array2::zeros((x.nrows(), N_CLASSES));
        for (i, p) in rows.iter().enumerate() {
            for c in 0..N_CLASSES {
                out[[i, c]] = p[c];
            }
        }
        out
    }

    pub fn max_depth(&self) -> usize {
        self.rounds.iter().flatten().flatten().map(Tree::depth).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn hand_params() -> GbtParams {
        GbtParams {
            eta: 1.0,
            lambda: 0.0,
            alpha: 0.0,
            gamma: 0.0,
            num_round: 1,
            max_depth: 1,
            min_child_weight: 0.0,
            ..GbtParams::default()
        }
    }

    fn blobs(n: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let x = Array2::from_shape_fn((n, 5), |(i, j)| {
            let centre = if j < 2 { y[i] as f64 * (j as f64 + 1.0) } else { 0.0 };
            centre + r.random_range(-1.5..1.5)
        });
        (x, y)
    }

    #[test]
    fn zero_rounds_is_prior() {
        let (x, y) = blobs(103, 1);
        let p = GbtParams {
            num_round: 0,
            ..GbtParams::default()
        };
        let m = GbtModel::fit(&p, &x, &y, 0).unwrap();
        let probs = m.predict_proba(&x);
        let counts = [26.0, 26.0, 26.0, 25.0];
        for row in probs.outer_iter() {
            for c in 0..4 {
                assert_eq!(row[c], counts[c] / 103.0);
            }
            assert_eq!(row[5], 0.0);
        }
        // majority class wins the argmax
        assert_eq!(super::super::argmax(probs.row(0)), 0);
    }

    #[test]
    fn newton_leaves_match_hand_derivation() {
        // prior (0.75, 0.25); class 0: g = -0.25 x3, 0.75; h = 0.1875 each.
        // Best split x < 2.5: left G = -0.75, H = 0.5625 -> 4/3; right G = 0.75, H = 0.1875 -> -4.
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = [0, 0, 0, 1];
        let m = GbtModel::fit(&hand_params(), &x, &y, 0).unwrap();
        let t0 = m.rounds[0][0].as_ref().unwrap();
        match t0.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 2.5);
            }
            _ => panic!("root should split"),
        }
        let leaves = t0.leaves();
        assert!((leaves[0] - 4.0 / 3.0).abs() < 1e-9);
        assert!((leaves[1] + 4.0).abs() < 1e-9);
        // class 1 mirrors class 0
        let t1 = m.rounds[0][1].as_ref().unwrap();
        let l1 = t1.leaves();
        assert!((l1[0] + 4.0 / 3.0).abs() < 1e-9);
        assert!((l1[1] - 4.0).abs() < 1e-9);
        assert!(m.rounds[0][2].is_none());
    }

    #[test]
    fn one_perfect_split_separates_two_classes() {
        let x = array![[0.0, 9.0], [1.0, 3.0], [2.0, 7.0], [3.0, 1.0]];
        let y = [0, 0, 1, 1];
        let m = GbtModel::fit(&hand_params(), &x, &y, 0).unwrap();
        let t = m.rounds[0][0].as_ref().unwrap();
        assert_eq!(t.leaves(), vec![2.0, -2.0]);
        let pred = super::super::argmax_rows(&m.predict_proba(&x));
        assert_eq!(pred, y.to_vec());
    }

    #[test]
    fn gain_formula() {
        let p = GbtParams {
            lambda: 1.0,
            gamma: 0.5,
            ..GbtParams::default()
        };
        // 0.5 * (4/3 + 9/4 - 1/6) - 0.5
        let want = 0.5 * (4.0 / 3.0 + 9.0 / 4.0 - 1.0 / 6.0) - 0.5;
        assert!((p.split_gain(-2.0, 2.0, 3.0, 3.0) - want).abs() < 1e-12);
        let a = GbtParams { alpha: 1.0, ..p };
        assert_eq!(a.leaf_weight(0.5, 1.0), 0.0);
        assert_eq!(a.leaf_weight(3.0, 1.0), -1.0);
        let c = GbtParams {
            max_delta_step: 0.5,
            ..p
        };
        assert_eq!(c.leaf_weight(-10.0, 1.0), 0.5);
    }

    #[test]
    fn training_loss_monotone_without_sampling() {
        let (x, y) = blobs(400, 7);
        let p = GbtParams {
            num_round: 50,
            max_depth: 3,
            eta: 0.3,
            ..GbtParams::default()
        };
        let m = GbtModel::fit(&p, &x, &y, 3).unwrap();
        assert_eq!(m.history.len(), 51);
        for w in m.history.windows(2) {
            assert!(w[1] <= w[0], "{} -> {}", w[0], w[1]);
        }
        assert!(m.max_depth() <= 3);
    }

    #[test]
    fn sampling_is_seeded() {
        let (x, y) = blobs(200, 2);
        let p = GbtParams {
            num_round: 5,
            subsample: 0.5,
            colsample_bytree: 0.6,
            colsample_bylevel: 0.5,
            colsample_bynode: 0.5,
            ..GbtParams::default()
        };
        let a = GbtModel::fit(&p, &x, &y, 11).unwrap();
        let b = GbtModel::fit(&p, &x, &y, 11).unwrap();
        let c = GbtModel::fit(&p, &x, &y, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.rounds, c.rounds);
        assert!(a.rounds.iter().flatten().flatten().all(|t| t.leaves().iter().all(|w| w.is_finite())));
    }

    #[test]
    fn depth_bound_respected() {
        let (x, y) = blobs(300, 4);
        for depth in [1, 2, 5] {
            let p = GbtParams {
                num_round: 3,
                max_depth: depth,
                min_child_weight: 0.0,
                ..GbtParams::default()
            };
            assert!(GbtModel::fit(&p, &x, &y, 0).unwrap().max_depth() <= depth);
        }
    }

    #[test]
    fn rejects_illegal_params() {
        let bad = [
            GbtParams { eta: 0.0, ..GbtParams::default() },
            GbtParams { subsample: 0.0, ..GbtParams::default() },
            GbtParams { max_depth: 0, ..GbtParams::default() },
            GbtParams { lambda: -1.0, ..GbtParams::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err());
        }
    }
}
