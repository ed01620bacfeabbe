//! One-vs-rest gradient-boosted regression trees on sparse features.

use serde::{Deserialize, Serialize};

use super::tfidf::SparseVec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtConfig {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub min_child_weight: f64,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            n_rounds: 150,
            max_depth: 5,
            learning_rate: 0.1,
            lambda: 1.0,
            min_child_weight: 1.0,
            seed: 42,
        }
    }
}

/// Tree node; `feature < 0` marks a leaf. Rows with `x[feature] > threshold`
/// go right, absent (zero) features go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: i32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &SparseVec) -> f64 {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            if n.feature < 0 {
                return n.value;
            }
            i = if x.get(n.feature as u32) > n.threshold {
                n.right
            } else {
                n.left
            } as usize;
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            let n = &t.nodes[i];
            if n.feature < 0 {
                0
            } else {
                1 + go(t, n.left as usize).max(go(t, n.right as usize))
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Booster {
    pub base_score: f64,
    pub trees: Vec<Tree>,
}

impl Booster {
    pub fn margin(&self, x: &SparseVec) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub config: GbdtConfig,
    pub n_features: usize,
    /// One booster per class index; `None` for classes absent from training.
    pub boosters: Vec<Option<Booster>>,
    /// Summed one-vs-rest training log-loss before the first round and after
    /// every round.
    pub train_loss: Vec<f64>,
}

impl GbdtModel {
    pub fn scores(&self, x: &SparseVec) -> Vec<Option<f64>> {
        self.boosters
            .iter()
            .map(|b| b.as_ref().map(|b| b.margin(x)))
            .collect()
    }

    /// Class with the highest margin; ties go to the lower index.
    pub fn predict(&self, x: &SparseVec) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, s) in self.scores(x).into_iter().enumerate() {
            if let Some(s) = s {
                if s > best.1 {
                    best = (i, s);
                }
            }
        }
        best.0
    }
}

/// Column-major copy of the training rows, each column sorted by value
/// descending (ties by row).
struct Columns {
    start: Vec<usize>,
    rows: Vec<u32>,
    vals: Vec<f64>,
}

impl Columns {
    fn new(rows: &[SparseVec], n_features: usize) -> Columns {
        let mut cols: Vec<Vec<(f64, u32)>> = vec![Vec::new(); n_features];
        for (r, x) in rows.iter().enumerate() {
            for (&f, &v) in x.indices.iter().zip(&x.values) {
                if v != 0.0 {
                    cols[f as usize].push((v, r as u32));
                }
            }
        }
        let mut c = Columns {
            start: Vec::with_capacity(n_features + 1),
            rows: Vec::new(),
            vals: Vec::new(),
        };
        for mut col in cols {
            col.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            c.start.push(c.rows.len());
            for (v, r) in col {
                c.rows.push(r);
                c.vals.push(v);
            }
        }
        c.start.push(c.rows.len());
        c
    }

    fn col(&self, f: usize) -> (&[u32], &[f64]) {
        let r = self.start[f]..self.start[f + 1];
        (&self.rows[r.clone()], &self.vals[r])
    }
}

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Default)]
struct Stats {
    g: f64,
    h: f64,
    n: usize,
}

#[derive(Clone, Copy)]
struct Split {
    gain: f64,
    feature: usize,
    threshold: f64,
}

#[derive(Clone, Copy)]
struct Scan {
    right: Stats,
    last: f64,
}

fn score(s: Stats, lambda: f64) -> f64 {
    s.g * s.g / (s.h + lambda)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn log_loss(margin: f64, y: bool) -> f64 {
    // ln(1 + e^-m) for positives, ln(1 + e^m) for negatives, stably.
    let m = if y { -margin } else { margin };
    m.max(0.0) + (-m.abs()).exp().ln_1p()
}

struct Grower<'a> {
    cfg: &'a GbdtConfig,
    cols: &'a Columns,
    n_features: usize,
}

impl Grower<'_> {
    fn consider(
        &self,
        node: Stats,
        right: Stats,
        feature: usize,
        threshold: f64,
        best: &mut Option<Split>,
    ) {
        let left = Stats {
            g: node.g - right.g,
            h: node.h - right.h,
            n: node.n - right.n,
        };
        if left.n == 0 || right.n == 0 {
            return;
        }
        if left.h < self.cfg.min_child_weight || right.h < self.cfg.min_child_weight {
            return;
        }
        let lambda = self.cfg.lambda;
        let gain = score(left, lambda) + score(right, lambda) - score(node, lambda);
        if gain > 1e-12 && best.is_none_or(|b| gain > b.gain) {
            *best = Some(Split {
                gain,
                feature,
                threshold,
            });
        }
    }

    /// Grows one tree level by level and returns it together with each row's
    /// leaf node index.
    fn grow(&self, grad: &[f64], hess: &[f64]) -> (Tree, Vec<u32>) {
        let n_rows = grad.len();
        let mut tree = Tree::default();
        let leaf = |_: ()| Node {
            feature: -1,
            threshold: 0.0,
            left: 0,
            right: 0,
            value: 0.0,
        };
        tree.nodes.push(leaf(()));
        let root = Stats {
            g: grad.iter().sum(),
            h: hess.iter().sum(),
            n: n_rows,
        };
        // Frontier position of each row, or NONE once its node is final.
        let mut slot: Vec<u32> = vec![0; n_rows];
        let mut leaf_of: Vec<u32> = vec![0; n_rows];
        let mut frontier: Vec<(u32, Stats)> = vec![(0, root)];
        let mut scans: Vec<Scan> = vec![
            Scan {
                right: Stats::default(),
                last: 0.0
            };
            1
        ];
        let mut touched: Vec<u32> = Vec::new();

        for _depth in 0..self.cfg.max_depth {
            if frontier.is_empty() {
                break;
            }
            let mut best: Vec<Option<Split>> = vec![None; frontier.len()];
            scans.resize(
                frontier.len(),
                Scan {
                    right: Stats::default(),
                    last: 0.0,
                },
            );
            for f in 0..self.n_features {
                let (rows, vals) = self.cols.col(f);
                for (&r, &v) in rows.iter().zip(vals) {
                    let s = slot[r as usize];
                    if s == NONE {
                        continue;
                    }
                    let st = &mut scans[s as usize];
                    if st.right.n == 0 {
                        touched.push(s);
                    } else if v < st.last {
                        let (right, last) = (st.right, st.last);
                        self.consider(
                            frontier[s as usize].1,
                            right,
                            f,
                            0.5 * (last + v),
                            &mut best[s as usize],
                        );
                    }
                    let st = &mut scans[s as usize];
                    st.right.g += grad[r as usize];
                    st.right.h += hess[r as usize];
                    st.right.n += 1;
                    st.last = v;
                }
                for &s in &touched {
                    let st = scans[s as usize];
                    self.consider(
                        frontier[s as usize].1,
                        st.right,
                        f,
                        0.5 * st.last,
                        &mut best[s as usize],
                    );
                    scans[s as usize].right = Stats::default();
                }
                touched.clear();
            }

            // Split nodes: rows start in the left child, then the split
            // column moves rows above the threshold to the right child.
            let mut next: Vec<(u32, Stats)> = Vec::new();
            let mut child_slots: Vec<Option<(u32, u32)>> = vec![None; frontier.len()];
            for (s, (&(id, _), b)) in frontier.iter().zip(&best).enumerate() {
                let Some(b) = b else { continue };
                let l = tree.nodes.len() as u32;
                tree.nodes.push(leaf(()));
                tree.nodes.push(leaf(()));
                let n = &mut tree.nodes[id as usize];
                n.feature = b.feature as i32;
                n.threshold = b.threshold;
                n.left = l;
                n.right = l + 1;
                child_slots[s] = Some((next.len() as u32, next.len() as u32 + 1));
                next.push((l, Stats::default()));
                next.push((l + 1, Stats::default()));
            }
            let old_slot = slot.clone();
            for (r, s) in slot.iter_mut().enumerate() {
                if *s == NONE {
                    continue;
                }
                match child_slots[*s as usize] {
                    Some((left, _)) => {
                        *s = left;
                        leaf_of[r] = next[left as usize].0;
                    }
                    None => *s = NONE,
                }
            }
            for (s, b) in best.iter().enumerate() {
                let Some(b) = b else { continue };
                let (_, right) = child_slots[s].unwrap();
                let (rows, vals) = self.cols.col(b.feature);
                for (&r, &v) in rows.iter().zip(vals) {
                    if v <= b.threshold {
                        break;
                    }
                    if old_slot[r as usize] == s as u32 {
                        slot[r as usize] = right;
                        leaf_of[r as usize] = next[right as usize].0;
                    }
                }
            }
            for (r, &s) in slot.iter().enumerate() {
                if s != NONE {
                    let st = &mut next[s as usize].1;
                    st.g += grad[r];
                    st.h += hess[r];
                    st.n += 1;
                }
            }
            frontier = next;
        }
        (tree, leaf_of)
    }
}

/// Fits one booster per class present in `labels`. Feature values must be
/// nonnegative; absent entries count as zero.
pub fn train_gbdt(
    rows: &[SparseVec],
    n_features: usize,
    labels: &[usize],
    n_classes: usize,
    cfg: &GbdtConfig,
) -> Result<GbdtModel> {
    if rows.len() != labels.len() {
        return Err(Error::invalid("feature rows and labels differ in length"));
    }
    if labels.iter().any(|&l| l >= n_classes) {
        return Err(Error::invalid("label index outside the class list"));
    }
    if rows
        .iter()
        .flat_map(|r| &r.indices)
        .any(|&f| f as usize >= n_features)
    {
        return Err(Error::invalid("feature index outside the feature space"));
    }
    if rows
        .iter()
        .flat_map(|r| &r.values)
        .any(|&v| !(v >= 0.0 && v.is_finite()))
    {
        return Err(Error::invalid(
            "boosting features must be finite and nonnegative",
        ));
    }
    let mut present = vec![0usize; n_classes];
    for &l in labels {
        present[l] += 1;
    }
    if present.iter().filter(|&&n| n > 0).count() < 2 {
        return Err(Error::Training(
            "boosting needs at least two classes in the training set".into(),
        ));
    }
    let cols = Columns::new(rows, n_features);
    let grower = Grower {
        cfg,
        cols: &cols,
        n_features,
    };
    let n = rows.len();
    let mut boosters = Vec::with_capacity(n_classes);
    let mut train_loss = vec![0.0; cfg.n_rounds + 1];
    for (class, &count) in present.iter().enumerate() {
        if count == 0 {
            boosters.push(None);
            continue;
        }
        let y: Vec<bool> = labels.iter().map(|&l| l == class).collect();
        let p = count as f64 / n as f64;
        let base_score = if count == n {
            0.0
        } else {
            (p / (1.0 - p)).ln()
        };
        let mut margin = vec![base_score; n];
        let mut trees = Vec::with_capacity(cfg.n_rounds);
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        train_loss[0] += margin
            .iter()
            .zip(&y)
            .map(|(&m, &y)| log_loss(m, y))
            .sum::<f64>();
        for round in 0..cfg.n_rounds {
            for i in 0..n {
                let q = sigmoid(margin[i]);
                grad[i] = q - if y[i] { 1.0 } else { 0.0 };
                hess[i] = q * (1.0 - q);
            }
            let (mut tree, leaf_of) = grower.grow(&grad, &hess);
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); tree.nodes.len()];
            for (r, &l) in leaf_of.iter().enumerate() {
                members[l as usize].push(r);
            }
            for (node, rows) in tree.nodes.iter_mut().zip(&members) {
                if node.feature >= 0 || rows.is_empty() {
                    continue;
                }
                let g: f64 = rows.iter().map(|&r| grad[r]).sum();
                let h: f64 = rows.iter().map(|&r| hess[r]).sum();
                let loss = |w: f64| {
                    rows.iter()
                        .map(|&r| log_loss(margin[r] + w, y[r]))
                        .sum::<f64>()
                };
                let before = loss(0.0);
                let mut w = -cfg.learning_rate * g / (h + cfg.lambda);
                // Halve the Newton step until the leaf's loss does not rise.
                let mut tries = 0;
                while loss(w) > before {
                    w *= 0.5;
                    tries += 1;
                    if tries == 60 {
                        w = 0.0;
                        break;
                    }
                }
                node.value = w;
            }
            for (r, &l) in leaf_of.iter().enumerate() {
                margin[r] += tree.nodes[l as usize].value;
            }
            train_loss[round + 1] += margin
                .iter()
                .zip(&y)
                .map(|(&m, &y)| log_loss(m, y))
                .sum::<f64>();
            trees.push(tree);
        }
        boosters.push(Some(Booster { base_score, trees }));
    }
    Ok(GbdtModel {
        config: cfg.clone(),
        n_features,
        boosters,
        train_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(pairs: &[(u32, f64)]) -> SparseVec {
        SparseVec {
            indices: pairs.iter().map(|p| p.0).collect(),
            values: pairs.iter().map(|p| p.1).collect(),
        }
    }

    #[test]
    fn separable_line_is_learned_in_a_few_rounds() {
        // Feature 1 holds x + 3 so that every row has a positive value.
        let xs: Vec<f64> = (-10..10).map(|i| i as f64 / 4.0).collect();
        let rows: Vec<SparseVec> = xs.iter().map(|&x| row(&[(1, x + 3.0)])).collect();
        let labels: Vec<usize> = xs.iter().map(|&x| usize::from(x >= 0.0)).collect();
        let cfg = GbdtConfig {
            n_rounds: 10,
            ..GbdtConfig::default()
        };
        let m = train_gbdt(&rows, 2, &labels, 2, &cfg).unwrap();
        let acc = rows
            .iter()
            .zip(&labels)
            .filter(|(r, &l)| m.predict(r) == l)
            .count();
        assert_eq!(acc, rows.len());
        let t = &m.boosters[1].as_ref().unwrap().trees[0];
        assert_eq!(t.nodes[0].feature, 1);
        assert!((t.nodes[0].threshold - 2.875).abs() < 1e-12);
    }

    #[test]
    fn zeros_go_left() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            if i % 2 == 0 {
                rows.push(row(&[(0, 0.5)]));
                labels.push(1);
            } else {
                rows.push(row(&[]));
                labels.push(0);
            }
        }
        let m = train_gbdt(
            &rows,
            1,
            &labels,
            2,
            &GbdtConfig {
                n_rounds: 5,
                ..GbdtConfig::default()
            },
        )
        .unwrap();
        let t = &m.boosters[0].as_ref().unwrap().trees[0];
        assert!((t.nodes[0].threshold - 0.25).abs() < 1e-12);
        assert_eq!(m.predict(&row(&[])), 0);
        assert_eq!(m.predict(&row(&[(0, 0.7)])), 1);
    }

    fn noisy_problem() -> (Vec<SparseVec>, Vec<usize>) {
        let mut state = 12345u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..300 {
            let a = next();
            let b = next();
            let c = next();
            let label = if a + 0.3 * next() > 0.8 {
                2
            } else if b > 0.5 {
                1
            } else {
                0
            };
            let mut pairs = vec![(0, a), (2, b)];
            if c > 0.6 {
                pairs.push((5, c));
            }
            rows.push(row(&pairs));
            labels.push(label);
        }
        (rows, labels)
    }

    #[test]
    fn training_loss_never_increases_and_is_deterministic() {
        let (rows, labels) = noisy_problem();
        let cfg = GbdtConfig {
            n_rounds: 40,
            ..GbdtConfig::default()
        };
        let m = train_gbdt(&rows, 6, &labels, 4, &cfg).unwrap();
        assert_eq!(m.train_loss.len(), 41);
        for w in m.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{} > {}", w[1], w[0]);
        }
        assert!(m.train_loss[40] < 0.8 * m.train_loss[0]);
        assert!(m.boosters[3].is_none());
        for b in m.boosters.iter().flatten() {
            assert_eq!(b.trees.len(), 40);
            assert!(b.trees.iter().all(|t| t.depth() <= 5));
            assert!(b
                .trees
                .iter()
                .flat_map(|t| &t.nodes)
                .all(|n| n.value.is_finite()));
        }
        let again = train_gbdt(&rows, 6, &labels, 4, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&m).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn rejects_single_class() {
        let rows = vec![row(&[(0, 1.0)]), row(&[(0, 2.0)])];
        assert!(train_gbdt(&rows, 1, &[1, 1], 2, &GbdtConfig::default()).is_err());
        assert!(train_gbdt(&rows, 1, &[0, 2], 2, &GbdtConfig::default()).is_err());
        let neg = vec![row(&[(0, -1.0)]), row(&[(0, 2.0)])];
        assert!(train_gbdt(&neg, 1, &[0, 1], 2, &GbdtConfig::default()).is_err());
    }
}
