//! CART classification trees over three classes with Gini impurity.

use rand::seq::index::sample;
use rand::Rng;

use crate::dataset::Label3;
use crate::error::{Result, StvError};

/// Nodes with fewer samples than this become leaves.
pub const MIN_SPLIT: usize = 10;

/// A tree node. Nodes are stored in preorder: the left child of a split at
/// index `i` is at `i + 1`, the right child at `right`.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        counts: [u64; 3],
    },
    Split {
        feature: usize,
        threshold: f64,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    n_features: usize,
    nodes: Vec<Node>,
}

/// Class with the largest count; ties go to the lowest class index.
pub fn majority(counts: &[u64; 3]) -> Label3 {
    let mut best = 0;
    for c in 1..3 {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    Label3::ALL[best]
}

/// Gini impurity `1 - sum p_c^2` of a class histogram.
pub fn gini(counts: &[u64; 3]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn sum_sq(counts: &[u64; 3]) -> u128 {
    counts.iter().map(|&c| (c as u128) * (c as u128)).sum()
}

/// Split quality `sum_sq(L)/n_L + sum_sq(R)/n_R` as an exact fraction.
/// Larger is purer; the weighted Gini of the children is `n - quality`.
#[derive(Clone, Copy)]
struct Quality {
    num: u128,
    den: u128,
}

impl Quality {
    fn of(left: &[u64; 3], n_left: u64, right: &[u64; 3], n_right: u64) -> Self {
        let (nl, nr) = (n_left as u128, n_right as u128);
        Quality {
            num: sum_sq(left) * nr + sum_sq(right) * nl,
            den: nl * nr,
        }
    }

    fn beats(&self, other: &Quality) -> bool {
        self.num * other.den > other.num * self.den
    }
}

/// Feature subsampling per split.
pub(crate) struct Subsample<'a, R: Rng> {
    pub rng: &'a mut R,
    pub per_split: usize,
}

impl DecisionTree {
    /// Builds a single leaf (used for degenerate models and tests).
    pub fn leaf(n_features: usize, counts: [u64; 3]) -> Self {
        DecisionTree {
            n_features,
            nodes: vec![Node::Leaf { counts }],
        }
    }

    pub(crate) fn from_nodes(n_features: usize, nodes: Vec<Node>) -> Result<Self> {
        let tree = DecisionTree { n_features, nodes };
        tree.validate()?;
        Ok(tree)
    }

    fn validate(&self) -> Result<()> {
        let mut end = 0;
        let ok = walk(&self.nodes, 0, self.n_features, &mut end) && end == self.nodes.len();
        if ok {
            Ok(())
        } else {
            Err(StvError::Format("malformed tree node list".into()))
        }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> (usize, usize) {
            match nodes[i] {
                Node::Leaf { .. } => (1, i + 1),
                Node::Split { right, .. } => {
                    let (dl, _) = go(nodes, i + 1);
                    let (dr, end) = go(nodes, right);
                    (1 + dl.max(dr), end)
                }
            }
        }
        go(&self.nodes, 0).0
    }

    /// Class distribution of the leaf reached by `x` (`x[feature] <= threshold` goes left).
    pub fn leaf_counts(&self, x: &[f64]) -> &[u64; 3] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return counts,
                Node::Split { feature, threshold, right } => {
                    i = if x[*feature] <= *threshold { i + 1 } else { *right };
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Label3 {
        majority(self.leaf_counts(x))
    }
}

/// Checks preorder structure; `end` receives one past the subtree's last node.
fn walk(nodes: &[Node], i: usize, n_features: usize, end: &mut usize) -> bool {
    match nodes.get(i) {
        None => false,
        Some(Node::Leaf { .. }) => {
            *end = i + 1;
            true
        }
        Some(Node::Split { feature, threshold, right }) => {
            if *feature >= n_features || !threshold.is_finite() {
                return false;
            }
            if !walk(nodes, i + 1, n_features, end) || *end != *right {
                return false;
            }
            walk(nodes, *right, n_features, end)
        }
    }
}

/// Fits a CART tree: Gini impurity, midpoint thresholds, stop when a node is
/// pure, has fewer than [`MIN_SPLIT`] samples, or no split lowers impurity.
/// Ties between candidate splits go to the lowest feature, then the lowest
/// threshold.
pub fn fit_tree(rows: &[&[f64]], labels: &[Label3]) -> Result<DecisionTree> {
    let idx: Vec<usize> = (0..rows.len()).collect();
    fit_indices::<rand_chacha::ChaCha8Rng>(rows, labels, idx, None)
}

/// Fits on the multiset `idx` of rows, optionally subsampling features per split.
pub(crate) fn fit_indices<R: Rng>(
    rows: &[&[f64]],
    labels: &[Label3],
    mut idx: Vec<usize>,
    mut subsample: Option<Subsample<'_, R>>,
) -> Result<DecisionTree> {
    if rows.is_empty() || idx.is_empty() {
        return Err(StvError::Empty("decision tree needs at least one row".into()));
    }
    if rows.len() != labels.len() {
        return Err(StvError::dims(rows.len(), labels.len()));
    }
    let n_features = rows[0].len();
    if n_features == 0 {
        return Err(StvError::Empty("decision tree needs at least one feature".into()));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != n_features) {
        return Err(StvError::dims(n_features, bad.len()));
    }
    if rows.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(StvError::InvalidConfig("non-finite feature value".into()));
    }
    let mut builder = Builder {
        rows,
        labels,
        n_features,
        nodes: Vec::new(),
        order: Vec::with_capacity(idx.len()),
    };
    let len = idx.len();
    builder.grow(&mut idx[..], len, &mut subsample);
    Ok(DecisionTree {
        n_features,
        nodes: builder.nodes,
    })
}

struct Builder<'a> {
    rows: &'a [&'a [f64]],
    labels: &'a [Label3],
    n_features: usize,
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> [u64; 3] {
        let mut c = [0u64; 3];
        for &i in idx {
            c[self.labels[i].index()] += 1;
        }
        c
    }

    fn grow<R: Rng>(&mut self, idx: &mut [usize], n: usize, subsample: &mut Option<Subsample<'_, R>>) {
        let counts = self.counts(idx);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || n < MIN_SPLIT {
            self.nodes.push(Node::Leaf { counts });
            return;
        }
        let features: Vec<usize> = match subsample {
            Some(s) if s.per_split < self.n_features => {
                let mut f = sample(s.rng, self.n_features, s.per_split).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..self.n_features).collect(),
        };
        let Some((feature, threshold)) = self.best_split(idx, &counts, &features) else {
            self.nodes.push(Node::Leaf { counts });
            return;
        };
        // partition: left block keeps x <= threshold, order within blocks preserved
        let (mut left, mut right): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.rows[i][feature] <= threshold);
        let n_left = left.len();
        let at = self.nodes.len();
        self.nodes.push(Node::Split {
            feature,
            threshold,
            right: 0,
        });
        self.grow(&mut left, n_left, subsample);
        let right_at = self.nodes.len();
        if let Node::Split { right, .. } = &mut self.nodes[at] {
            *right = right_at;
        }
        let n_right = right.len();
        self.grow(&mut right, n_right, subsample);
    }

    fn best_split(&mut self, idx: &[usize], parent: &[u64; 3], features: &[usize]) -> Option<(usize, f64)> {
        let n = idx.len() as u64;
        let parent_quality = Quality {
            num: sum_sq(parent),
            den: n as u128,
        };
        let mut best: Option<(Quality, usize, f64)> = None;
        for &f in features {
            self.order.clear();
            self.order.extend_from_slice(idx);
            let rows = self.rows;
            self.order.sort_by(|&a, &b| rows[a][f].total_cmp(&rows[b][f]));
            let mut left = [0u64; 3];
            for k in 0..self.order.len() - 1 {
                let i = self.order[k];
                left[self.labels[i].index()] += 1;
                let (lo, hi) = (rows[i][f], rows[self.order[k + 1]][f]);
                if lo == hi {
                    continue;
                }
                let n_left = k as u64 + 1;
                let right = [parent[0] - left[0], parent[1] - left[1], parent[2] - left[2]];
                let q = Quality::of(&left, n_left, &right, n - n_left);
                let better = match &best {
                    None => q.beats(&parent_quality),
                    Some((bq, _, _)) => q.beats(bq),
                };
                if better {
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some((q, f, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}
