//! Market segmentation trees: binary trees over quote features whose splits
//! are chosen by how much they improve the likelihood of the choice models
//! fitted in the resulting leaves.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::choice::{fit_mle_refs, BucketScheme, ChoiceObservation, FitConfig, MnlFit, MnlParams};
use crate::dataset::TrainingSet;
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureValue, FeatureVector};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    /// Numeric `value <= threshold` goes left; missing values go left.
    AtMost(f64),
    /// Categorical `value == symbol` goes left.
    Equals(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", rename_all = "snake_case")]
pub enum Node<T> {
    Split {
        feature: String,
        predicate: Predicate,
        left: usize,
        right: usize,
        /// Symbols seen at this node during training (categorical splits).
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        known: Vec<String>,
        /// Side that received more training rows; unknown symbols go there.
        majority_left: bool,
    },
    Leaf {
        segment: usize,
        params: MnlParams<T>,
        rows: usize,
        nll: T,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeHyperparams {
    pub max_depth: usize,
    pub min_leaf_samples: usize,
    /// Minimum drop in training negative log-likelihood (nats) for a split.
    pub min_split_gain: f64,
    /// Cap on numeric thresholds tried per feature and node.
    pub max_thresholds: usize,
}

impl Default for TreeHyperparams {
    fn default() -> Self {
        Self {
            max_depth: 4,
            min_leaf_samples: 200,
            min_split_gain: 2.0,
            max_thresholds: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SegmentationTree<T> {
    nodes: Vec<Node<T>>,
    pub hyperparams: TreeHyperparams,
    /// Total training negative log-likelihood after each accepted split,
    /// starting with the single-leaf fit.
    pub nll_trace: Vec<T>,
}

/// Routing rule shared by training partitions and serving.
fn goes_left(
    x: &FeatureVector,
    feature: &str,
    predicate: &Predicate,
    known: &[String],
    majority_left: bool,
) -> bool {
    match (predicate, x.get(feature)) {
        (Predicate::AtMost(t), FeatureValue::Num(v)) => *v <= *t,
        (Predicate::AtMost(_), _) => true,
        (Predicate::Equals(s), FeatureValue::Cat(v)) => {
            if v == s {
                true
            } else if known.iter().any(|k| k == v) {
                false
            } else {
                majority_left
            }
        }
        (Predicate::Equals(_), _) => majority_left,
    }
}

impl<T: Scalar> SegmentationTree<T> {
    /// A tree with a single segment.
    pub fn single(params: MnlParams<T>) -> Self {
        Self {
            nodes: vec![Node::Leaf {
                segment: 0,
                params,
                rows: 0,
                nll: T::zero(),
            }],
            hyperparams: TreeHyperparams {
                max_depth: 0,
                ..TreeHyperparams::default()
            },
            nll_trace: Vec::new(),
        }
    }

    /// Two segments split on one feature.
    pub fn stump(
        feature: &str,
        predicate: Predicate,
        left: MnlParams<T>,
        right: MnlParams<T>,
    ) -> Self {
        let known = match &predicate {
            Predicate::Equals(s) => vec![s.clone()],
            Predicate::AtMost(_) => Vec::new(),
        };
        Self {
            nodes: vec![
                Node::Split {
                    feature: feature.to_string(),
                    predicate,
                    left: 1,
                    right: 2,
                    known,
                    majority_left: true,
                },
                Node::Leaf {
                    segment: 0,
                    params: left,
                    rows: 0,
                    nll: T::zero(),
                },
                Node::Leaf {
                    segment: 1,
                    params: right,
                    rows: 0,
                    nll: T::zero(),
                },
            ],
            hyperparams: TreeHyperparams {
                max_depth: 1,
                ..TreeHyperparams::default()
            },
            nll_trace: Vec::new(),
        }
    }

    /// Builds a tree from explicit nodes (root first), checking that it is a
    /// proper tree with segments numbered `0..leaves`.
    pub fn from_nodes(nodes: Vec<Node<T>>, hyperparams: TreeHyperparams) -> Result<Self> {
        let tree = Self {
            nodes,
            hyperparams,
            nll_trace: Vec::new(),
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Empty("tree nodes"));
        }
        let mut visited = vec![false; self.nodes.len()];
        let mut segments = BTreeSet::new();
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            if id >= self.nodes.len() || visited[id] {
                return Err(Error::invalid(format!(
                    "node {id} is out of range or shared"
                )));
            }
            visited[id] = true;
            match &self.nodes[id] {
                Node::Split { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
                Node::Leaf {
                    segment, params, ..
                } => {
                    if !segments.insert(*segment) {
                        return Err(Error::invalid(format!("duplicate segment {segment}")));
                    }
                    if params.beta.len() != params.buckets.num_buckets() {
                        return Err(Error::invalid("leaf parameters do not match their buckets"));
                    }
                }
            }
        }
        if visited.iter().any(|v| !v) {
            return Err(Error::invalid("tree has unreachable nodes"));
        }
        if segments.iter().copied().ne(0..segments.len()) {
            return Err(Error::invalid("segments must be numbered 0..leaves"));
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn num_segments(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn go<T>(nodes: &[Node<T>], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Leaf parameters indexed by segment id.
    pub fn segments(&self) -> Vec<&MnlParams<T>> {
        let mut leaves: Vec<(usize, &MnlParams<T>)> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf {
                    segment, params, ..
                } => Some((*segment, params)),
                _ => None,
            })
            .collect();
        leaves.sort_by_key(|(s, _)| *s);
        leaves.into_iter().map(|(_, p)| p).collect()
    }

    /// Leaf `(segment, training rows)` pairs.
    pub fn leaf_sizes(&self) -> Vec<(usize, usize)> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { segment, rows, .. } => Some((*segment, *rows)),
                _ => None,
            })
            .collect()
    }

    /// Sum of leaf training negative log-likelihoods.
    pub fn training_nll(&self) -> T {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { nll, .. } => Some(*nll),
                _ => None,
            })
            .fold(T::zero(), |a, b| a + b)
    }

    /// Root split feature, if any.
    pub fn root_feature(&self) -> Option<&str> {
        match &self.nodes[0] {
            Node::Split { feature, .. } => Some(feature),
            Node::Leaf { .. } => None,
        }
    }

    /// Segment id and choice model for a quote. Never fails: missing numeric
    /// values go left, unknown or missing symbols go to the majority side.
    pub fn route(&self, x: &FeatureVector) -> (usize, &MnlParams<T>) {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf {
                    segment, params, ..
                } => return (*segment, params),
                Node::Split {
                    feature,
                    predicate,
                    left,
                    right,
                    known,
                    majority_left,
                } => {
                    id = if goes_left(x, feature, predicate, known, *majority_left) {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Candidate {
    feature: String,
    predicate: Predicate,
    known: Vec<String>,
    majority_left: bool,
}

struct Scored<T> {
    gain: T,
    left: MnlFit<T>,
    right: MnlFit<T>,
}

struct Builder<'a, T> {
    data: &'a TrainingSet<T>,
    hyper: &'a TreeHyperparams,
    buckets: &'a BucketScheme,
    fit: &'a FitConfig<T>,
    screening: FitConfig<T>,
    nodes: Vec<Node<T>>,
    trace: Vec<T>,
    next_segment: usize,
}

/// Greedy top-down tree. A split is kept only when both children have at
/// least `min_leaf_samples` rows and the children's summed NLL is at least
/// `min_split_gain` below the parent's.
pub fn fit_tree<T: Scalar>(
    data: &TrainingSet<T>,
    hyper: &TreeHyperparams,
    buckets: &BucketScheme,
    fit: &FitConfig<T>,
) -> Result<SegmentationTree<T>> {
    if data.len() < hyper.min_leaf_samples.max(1) {
        return Err(Error::InsufficientRows {
            needed: hyper.min_leaf_samples.max(1),
            found: data.len(),
        });
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let root = fit_mle_refs(
        all.iter().map(|&i| &data.rows[i].choice),
        buckets,
        fit,
        None,
    )?;
    let mut builder = Builder {
        data,
        hyper,
        buckets,
        fit,
        screening: FitConfig {
            tolerance: T::lit(1e-4).max(fit.tolerance),
            max_iterations: 100.min(fit.max_iterations),
            ..*fit
        },
        nodes: Vec::new(),
        trace: vec![root.nll],
        next_segment: 0,
    };
    builder.build(all, 0, root)?;
    Ok(SegmentationTree {
        nodes: builder.nodes,
        hyperparams: hyper.clone(),
        nll_trace: builder.trace,
    })
}

impl<T: Scalar> Builder<'_, T> {
    fn obs(&self, rows: &[usize]) -> Vec<&ChoiceObservation<T>> {
        rows.iter().map(|&i| &self.data.rows[i].choice).collect()
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize, fitted: MnlFit<T>) -> Result<usize> {
        let id = self.nodes.len();
        // placeholder, replaced below
        self.nodes.push(Node::Leaf {
            segment: usize::MAX,
            params: fitted.params.clone(),
            rows: rows.len(),
            nll: fitted.nll,
        });

        if depth < self.hyper.max_depth && rows.len() >= 2 * self.hyper.min_leaf_samples.max(1) {
            if let Some((cand, scored)) = self.best_split(&rows, &fitted) {
                if scored.gain >= T::lit(self.hyper.min_split_gain) {
                    let (left_rows, right_rows) = self.partition(&rows, &cand);
                    let left = self.refit(&left_rows, &scored.left.params);
                    let right = self.refit(&right_rows, &scored.right.params);
                    let (left, right) = match (left, right) {
                        (Ok(l), Ok(r)) => (l, r),
                        (Err(Error::Unidentifiable { reason, .. }), _)
                        | (_, Err(Error::Unidentifiable { reason, .. })) => {
                            log::debug!("split on {} rejected: {reason}", cand.feature);
                            return Ok(self.close_leaf(id));
                        }
                        (Err(e), _) | (_, Err(e)) => return Err(e),
                    };
                    let last = *self.trace.last().expect("trace starts with root");
                    self.trace.push(last - fitted.nll + left.nll + right.nll);
                    log::debug!(
                        "split on {} ({:?}) gain {}",
                        cand.feature,
                        cand.predicate,
                        scored.gain
                    );
                    let left_id = self.build(left_rows, depth + 1, left)?;
                    let right_id = self.build(right_rows, depth + 1, right)?;
                    self.nodes[id] = Node::Split {
                        feature: cand.feature,
                        predicate: cand.predicate,
                        left: left_id,
                        right: right_id,
                        known: cand.known,
                        majority_left: cand.majority_left,
                    };
                    return Ok(id);
                }
            }
        }
        Ok(self.close_leaf(id))
    }

    fn refit(&self, rows: &[usize], start: &MnlParams<T>) -> Result<MnlFit<T>> {
        fit_mle_refs(self.obs(rows), self.buckets, self.fit, Some(start))
    }

    fn close_leaf(&mut self, id: usize) -> usize {
        if let Node::Leaf { segment, .. } = &mut self.nodes[id] {
            *segment = self.next_segment;
        }
        self.next_segment += 1;
        id
    }

    fn partition(&self, rows: &[usize], cand: &Candidate) -> (Vec<usize>, Vec<usize>) {
        rows.iter().partition(|&&i| {
            goes_left(
                &self.data.rows[i].features,
                &cand.feature,
                &cand.predicate,
                &cand.known,
                cand.majority_left,
            )
        })
    }

    fn candidates(&self, rows: &[usize]) -> Vec<Candidate> {
        let mut out = Vec::new();
        for (name, kind) in &self.data.schema.features {
            match kind {
                FeatureKind::Numeric => {
                    let mut values: Vec<f64> = rows
                        .iter()
                        .filter_map(|&i| self.data.rows[i].features.get(name).as_num())
                        .filter(|v| v.is_finite())
                        .collect();
                    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
                    values.dedup();
                    let mids: Vec<f64> = values.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
                    let cap = self.hyper.max_thresholds.max(1);
                    let mut chosen: Vec<f64> = if mids.len() > cap {
                        (0..cap)
                            .map(|q| mids[(q + 1) * mids.len() / (cap + 1)])
                            .collect()
                    } else {
                        mids
                    };
                    chosen.dedup();
                    out.extend(chosen.into_iter().map(|t| Candidate {
                        feature: name.clone(),
                        predicate: Predicate::AtMost(t),
                        known: Vec::new(),
                        majority_left: true,
                    }));
                }
                FeatureKind::Categorical => {
                    let symbols: BTreeSet<&str> = rows
                        .iter()
                        .filter_map(|&i| self.data.rows[i].features.get(name).as_cat())
                        .collect();
                    if symbols.len() < 2 {
                        continue;
                    }
                    let known: Vec<String> = symbols.iter().map(|s| s.to_string()).collect();
                    // with two symbols the second split mirrors the first
                    let take = if symbols.len() == 2 { 1 } else { symbols.len() };
                    for s in symbols.iter().take(take) {
                        let hits = rows
                            .iter()
                            .filter(|&&i| self.data.rows[i].features.get(name).as_cat() == Some(*s))
                            .count();
                        let present = rows
                            .iter()
                            .filter(|&&i| self.data.rows[i].features.get(name).as_cat().is_some())
                            .count();
                        out.push(Candidate {
                            feature: name.clone(),
                            predicate: Predicate::Equals(s.to_string()),
                            known: known.clone(),
                            majority_left: 2 * hits >= present,
                        });
                    }
                }
            }
        }
        out
    }

    fn score(&self, rows: &[usize], cand: &Candidate, parent: &MnlFit<T>) -> Option<Scored<T>> {
        let (l, r) = self.partition(rows, cand);
        let min = self.hyper.min_leaf_samples.max(1);
        if l.len() < min || r.len() < min {
            return None;
        }
        let left = fit_mle_refs(
            self.obs(&l),
            self.buckets,
            &self.screening,
            Some(&parent.params),
        )
        .ok()?;
        let right = fit_mle_refs(
            self.obs(&r),
            self.buckets,
            &self.screening,
            Some(&parent.params),
        )
        .ok()?;
        Some(Scored {
            gain: parent.nll - left.nll - right.nll,
            left,
            right,
        })
    }

    fn best_split(&self, rows: &[usize], parent: &MnlFit<T>) -> Option<(Candidate, Scored<T>)> {
        let candidates = self.candidates(rows);
        let scored: Vec<Option<Scored<T>>> = candidates
            .par_iter()
            .map(|c| self.score(rows, c, parent))
            .collect();
        let mut best: Option<(usize, Scored<T>)> = None;
        for (k, s) in scored.into_iter().enumerate() {
            if let Some(s) = s {
                if best.as_ref().is_none_or(|(_, b)| s.gain > b.gain) {
                    best = Some((k, s));
                }
            }
        }
        best.map(|(k, s)| (candidates[k].clone(), s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice::BucketMap;

    fn params(beta: f64) -> MnlParams<f64> {
        MnlParams::uniform(
            [0.0; 3],
            beta,
            0.0,
            BucketScheme::Fixed(BucketMap::single(3)),
        )
        .unwrap()
    }

    #[test]
    fn numeric_boundary_goes_left() {
        let tree = SegmentationTree::stump(
            "distance",
            Predicate::AtMost(10.0),
            params(0.1),
            params(0.2),
        );
        assert_eq!(
            tree.route(&FeatureVector::new().with("distance", 10.0)).0,
            0
        );
        assert_eq!(
            tree.route(&FeatureVector::new().with("distance", 10.5)).0,
            1
        );
        assert_eq!(tree.route(&FeatureVector::new()).0, 0);
        // wrong kind is treated as missing
        assert_eq!(
            tree.route(&FeatureVector::new().with("distance", "far")).0,
            0
        );
    }

    #[test]
    fn unknown_symbols_follow_the_majority() {
        let mut tree = SegmentationTree::stump(
            "region",
            Predicate::Equals("north".into()),
            params(0.1),
            params(0.2),
        );
        if let Node::Split {
            known,
            majority_left,
            ..
        } = &mut tree.nodes[0]
        {
            known.push("south".into());
            *majority_left = false;
        }
        assert_eq!(
            tree.route(&FeatureVector::new().with("region", "north")).0,
            0
        );
        assert_eq!(
            tree.route(&FeatureVector::new().with("region", "south")).0,
            1
        );
        assert_eq!(
            tree.route(&FeatureVector::new().with("region", "mars")).0,
            1
        );
        assert_eq!(tree.route(&FeatureVector::new()).0, 1);
    }

    #[test]
    fn single_leaf_routes_everything_to_root() {
        let tree = SegmentationTree::single(params(0.1));
        assert_eq!(tree.num_segments(), 1);
        assert_eq!(tree.depth(), 0);
        assert_eq!(tree.route(&FeatureVector::new().with("x", 3.0)).0, 0);
    }

    #[test]
    fn from_nodes_rejects_bad_trees() {
        let leaf = |s| Node::Leaf {
            segment: s,
            params: params(0.1),
            rows: 0,
            nll: 0.0,
        };
        let split = |l, r| Node::Split {
            feature: "f".into(),
            predicate: Predicate::AtMost(0.0),
            left: l,
            right: r,
            known: vec![],
            majority_left: true,
        };
        let hp = TreeHyperparams::default();
        assert!(
            SegmentationTree::from_nodes(vec![split(1, 2), leaf(0), leaf(1)], hp.clone()).is_ok()
        );
        assert!(SegmentationTree::from_nodes(vec![split(1, 1), leaf(0)], hp.clone()).is_err());
        assert!(
            SegmentationTree::from_nodes(vec![split(1, 2), leaf(0), leaf(0)], hp.clone()).is_err()
        );
        assert!(
            SegmentationTree::from_nodes(vec![split(1, 3), leaf(0), leaf(1)], hp.clone()).is_err()
        );
        assert!(SegmentationTree::from_nodes(vec![leaf(0), leaf(1)], hp).is_err());
    }
}
