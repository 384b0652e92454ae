//! Node scoring strategies, pooling, and duplicate removal.
//!
//! Every strategy produces one score per hierarchy node where lower is
//! better, so proposals from different hierarchies and strategies share one
//! sort order.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::boost::StumpEnsemble;
use crate::error::{arg_err, Error, Result};
use crate::eval::iou;
use crate::geom::BBox;
use crate::grouping::{Hierarchy, HierarchySource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Breadth-first index times a uniform draw.
    #[serde(rename = "PR")]
    PseudoRandom,
    /// Binomial-tail meaningfulness.
    #[serde(rename = "NFA")]
    Nfa,
    /// Meaningfulness times a uniform draw.
    #[serde(rename = "PR-NFA")]
    RandomizedNfa,
    /// Negated boosted-stump confidence.
    #[serde(rename = "CLS")]
    Classifier,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::PseudoRandom => "PR",
            Strategy::Nfa => "NFA",
            Strategy::RandomizedNfa => "PR-NFA",
            Strategy::Classifier => "CLS",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pr" => Ok(Strategy::PseudoRandom),
            "nfa" => Ok(Strategy::Nfa),
            "prnfa" | "pr-nfa" => Ok(Strategy::RandomizedNfa),
            "cls" => Ok(Strategy::Classifier),
            other => arg_err(format!("unknown ranking strategy {other:?}")),
        }
    }
}

/// Source of uniform draws in `(0, 1]`.
pub trait UniformSource {
    fn next_uniform(&mut self) -> f64;
}

impl<R: Rng> UniformSource for R {
    fn next_uniform(&mut self) -> f64 {
        1.0 - self.random::<f64>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: Option<HierarchySource>,
    pub node: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub bbox: BBox,
    pub score: f64,
    pub strategy: Strategy,
    pub provenance: Provenance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DedupPolicy {
    /// Identical boxes collapse to the best-scored one.
    pub exact_bbox: bool,
    /// Greedy suppression threshold, when applied.
    pub nms_iou: Option<f64>,
}

/// Best-first proposals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalList {
    pub proposals: Vec<Proposal>,
    pub dedup: DedupPolicy,
}

impl ProposalList {
    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }

    pub fn boxes(&self) -> Vec<BBox> {
        self.proposals.iter().map(|p| p.bbox).collect()
    }

    pub fn truncate(&mut self, n: usize) {
        self.proposals.truncate(n);
    }
}

/// Breadth-first position (root = 1) times a uniform draw per node.
pub fn rank_pseudorandom(h: &Hierarchy, rng: &mut impl UniformSource) -> Vec<f64> {
    let mut scores = vec![0.0; h.nodes.len()];
    for (pos, node) in h.breadth_first().into_iter().enumerate() {
        scores[node] = (pos + 1) as f64 * rng.next_uniform();
    }
    scores
}

fn check_tail_args(k: u64, n: u64, p: f64) -> Result<()> {
    if k > n {
        return arg_err(format!("binomial tail needs k <= n, got k={k}, n={n}"));
    }
    if !(0.0..=1.0).contains(&p) {
        return arg_err(format!("binomial tail needs p in [0, 1], got {p}"));
    }
    Ok(())
}

/// Natural log of `P[X >= k]` for `X ~ Binomial(n, p)`.
///
/// Terms are generated by the ratio recurrence in log space and summed with
/// a max-shifted exponential sum.
pub fn log_binomial_tail(k: u64, n: u64, p: f64) -> Result<f64> {
    check_tail_args(k, n, p)?;
    if k == 0 || p == 1.0 {
        return Ok(0.0);
    }
    if p == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let lp = p.ln();
    let lq = (-p).ln_1p();
    // ln C(n, k)
    let mut lc = 0.0;
    for j in 0..k {
        lc += ((n - j) as f64).ln() - ((j + 1) as f64).ln();
    }
    let mut terms = Vec::with_capacity((n - k + 1) as usize);
    let mut t = lc + k as f64 * lp + (n - k) as f64 * lq;
    terms.push(t);
    let odds = lp - lq;
    for i in k + 1..=n {
        t += ((n - i + 1) as f64).ln() - (i as f64).ln() + odds;
        terms.push(t);
    }
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = terms.iter().map(|&x| (x - m).exp()).sum();
    Ok((m + s.ln()).min(0.0))
}

/// `P[X >= k]` for `X ~ Binomial(n, p)`.
pub fn binomial_tail(k: u64, n: u64, p: f64) -> Result<f64> {
    log_binomial_tail(k, n, p).map(f64::exp)
}

/// Meaningfulness scores as natural logs of the binomial tail
/// `B(k, n, p)`, with `k` the node size, `n` the hierarchy leaf count, and
/// `p` the node's feature-volume ratio. With `randomize`, the log of a fresh
/// uniform draw is added (the product `B * u` in log form).
pub fn rank_nfa(h: &Hierarchy, randomize: bool, rng: &mut impl UniformSource) -> Vec<f64> {
    let n = h.leaf_count as u64;
    h.nodes
        .iter()
        .map(|node| {
            let lt = log_binomial_tail(node.size as u64, n, node.feature_volume_ratio)
                .expect("node size never exceeds leaf count and p is clamped");
            if randomize {
                lt + rng.next_uniform().ln()
            } else {
                lt
            }
        })
        .collect()
}

/// Negated ensemble confidence of each node's coefficient-of-variation vector.
pub fn rank_classifier(h: &Hierarchy, model: &StumpEnsemble) -> Result<Vec<f64>> {
    h.nodes
        .iter()
        .map(|node| model.confidence(&node.stats.feature_cv()).map(|c| -c))
        .collect()
}

/// Stable ascending sort by score, keeping the first occurrence of every
/// exact bounding box.
pub fn dedup_and_sort(mut pooled: Vec<Proposal>) -> ProposalList {
    pooled.sort_by(|a, b| a.score.total_cmp(&b.score));
    let mut seen = HashSet::with_capacity(pooled.len());
    pooled.retain(|p| seen.insert(p.bbox.key()));
    ProposalList {
        proposals: pooled,
        dedup: DedupPolicy {
            exact_bbox: true,
            nms_iou: None,
        },
    }
}

/// Greedy suppression: drops any proposal overlapping a better-ranked kept
/// one with IoU above `threshold`.
pub fn suppress_overlaps(list: &ProposalList, threshold: f64) -> ProposalList {
    let mut kept: Vec<Proposal> = Vec::new();
    for p in &list.proposals {
        if kept.iter().all(|k| iou(&k.bbox, &p.bbox) <= threshold) {
            kept.push(*p);
        }
    }
    ProposalList {
        proposals: kept,
        dedup: DedupPolicy {
            nms_iou: Some(threshold),
            ..list.dedup
        },
    }
}
