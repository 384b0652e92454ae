//! Real AdaBoost over decision stumps.
//!
//! Each stump splits one feature at a threshold and outputs a real-valued
//! confidence per side. The ensemble confidence is the sum of the stump
//! outputs; positive means text.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{arg_err, Error, Result};
use crate::eval::iou;
use crate::geom::BBox;
use crate::imageio::RgbImage;
use crate::pipeline::{build_hierarchies, DiversificationConfig};
use crate::regionfeat::FEATURE_COUNT;

const MODEL_MAGIC: &str = "textprop-stumps";
const MODEL_VERSION: &str = "v1";

/// IoU at or above which a harvested node counts as text.
pub const TEXT_IOU: f64 = 0.7;
/// IoU at or below which a harvested node counts as non-text.
pub const NON_TEXT_IOU: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stump {
    pub feature: usize,
    /// Values `<= threshold` take the left output.
    pub threshold: f64,
    pub c_left: f64,
    pub c_right: f64,
}

impl Stump {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        if x[self.feature] <= self.threshold {
            self.c_left
        } else {
            self.c_right
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StumpEnsemble {
    pub stumps: Vec<Stump>,
}

impl StumpEnsemble {
    pub fn rounds(&self) -> usize {
        self.stumps.len()
    }

    pub fn confidence(&self, features: &[f64]) -> Result<f64> {
        if features.len() != FEATURE_COUNT {
            return arg_err(format!(
                "model expects {FEATURE_COUNT} features, got {}",
                features.len()
            ));
        }
        if let Some(bad) = features.iter().find(|v| !v.is_finite()) {
            return arg_err(format!("non-finite feature value {bad}"));
        }
        Ok(self.stumps.iter().map(|s| s.eval(features)).sum())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MODEL_MAGIC} {MODEL_VERSION} {}\n", self.stumps.len());
        for s in &self.stumps {
            // `{}` on f64 prints the shortest representation that parses back exactly
            writeln!(out, "{} {} {} {}", s.feature, s.threshold, s.c_left, s.c_right).unwrap();
        }
        out
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<StumpEnsemble> {
        let perr = |line: usize, message: String| Error::Parse {
            file: origin.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| perr(1, "empty model file".into()))?;
        let head: Vec<&str> = header.split_whitespace().collect();
        if head.len() != 3 || head[0] != MODEL_MAGIC || head[1] != MODEL_VERSION {
            return Err(perr(1, format!("expected `{MODEL_MAGIC} {MODEL_VERSION} <rounds>` header")));
        }
        let rounds: usize = head[2]
            .parse()
            .map_err(|_| perr(1, format!("bad round count {:?}", head[2])))?;
        let mut stumps = Vec::with_capacity(rounds);
        for (i, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(perr(i + 1, "expected `feature threshold c_left c_right`".into()));
            }
            let feature: usize = f[0].parse().map_err(|_| perr(i + 1, format!("bad feature index {:?}", f[0])))?;
            if feature >= FEATURE_COUNT {
                return Err(perr(i + 1, format!("feature index {feature} out of range")));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| perr(i + 1, format!("bad number {s:?}")))
            };
            stumps.push(Stump {
                feature,
                threshold: num(f[1])?,
                c_left: num(f[2])?,
                c_right: num(f[3])?,
            });
        }
        if stumps.len() != rounds || rounds == 0 {
            return Err(perr(1, format!("header declares {rounds} stumps, found {}", stumps.len())));
        }
        Ok(StumpEnsemble { stumps })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<StumpEnsemble> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        StumpEnsemble::from_text(&text, path)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    NonText,
    Text,
}

impl Label {
    fn sign(self) -> f64 {
        match self {
            Label::Text => 1.0,
            Label::NonText => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingRow {
    pub features: [f64; FEATURE_COUNT],
    pub label: Label,
    pub weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingSet {
    pub rows: Vec<TrainingRow>,
}

impl TrainingSet {
    pub fn count(&self, label: Label) -> usize {
        self.rows.iter().filter(|r| r.label == label).count()
    }

    /// Rescales weights so each class carries half the total mass.
    pub fn balance(&mut self) {
        let (t, n) = (self.count(Label::Text), self.count(Label::NonText));
        for r in &mut self.rows {
            let c = if r.label == Label::Text { t } else { n };
            r.weight = 0.5 / c as f64;
        }
    }
}

/// Per-round diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundReport {
    /// Weight normalizer `Z_t`; the exponential loss is the running product.
    pub normalizer: f64,
    /// Weighted training error of the ensemble after this round.
    pub weighted_error: f64,
}

pub fn train(data: &TrainingSet, rounds: usize) -> Result<StumpEnsemble> {
    train_traced(data, rounds).map(|(m, _)| m)
}

/// Trains and reports per-round normalizers and training error.
pub fn train_traced(data: &TrainingSet, rounds: usize) -> Result<(StumpEnsemble, Vec<RoundReport>)> {
    if rounds == 0 {
        return arg_err("need at least one boosting round");
    }
    if data.rows.len() < 2 {
        return arg_err("need at least two training rows");
    }
    if data.count(Label::Text) == 0 || data.count(Label::NonText) == 0 {
        return arg_err("training data must contain both text and non-text rows");
    }
    for r in &data.rows {
        if !(r.weight.is_finite() && r.weight > 0.0) {
            return arg_err(format!("row weight must be positive and finite, got {}", r.weight));
        }
        if r.features.iter().any(|v| !v.is_finite()) {
            return arg_err("training features must be finite");
        }
    }

    // value-based canonical order makes the model independent of row order
    let mut rows = data.rows.clone();
    rows.sort_by(|a, b| {
        a.features
            .iter()
            .zip(&b.features)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.label.cmp(&b.label))
            .then(a.weight.total_cmp(&b.weight))
    });
    let n = rows.len();
    let eps = 1.0 / (4.0 * n as f64);
    let total: f64 = rows.iter().map(|r| r.weight).sum();
    let base: Vec<f64> = rows.iter().map(|r| r.weight / total).collect();
    let mut w = base.clone();
    let sorted: Vec<Vec<usize>> = (0..FEATURE_COUNT)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| rows[a].features[f].total_cmp(&rows[b].features[f]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut stumps = Vec::with_capacity(rounds);
    let mut margins = vec![0.0; n];
    let mut reports = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let (feature, threshold, sums) = best_split(&rows, &w, &sorted);
        let [lp, ln, rp, rn] = sums;
        let stump = Stump {
            feature,
            threshold,
            c_left: 0.5 * ((lp + eps) / (ln + eps)).ln(),
            c_right: 0.5 * ((rp + eps) / (rn + eps)).ln(),
        };
        let mut z = 0.0;
        for i in 0..n {
            let y = rows[i].label.sign();
            let h = stump.eval(&rows[i].features);
            margins[i] += h;
            w[i] *= (-y * h).exp();
            z += w[i];
        }
        for wi in &mut w {
            *wi /= z;
        }
        let weighted_error = (0..n)
            .filter(|&i| margins[i] * rows[i].label.sign() <= 0.0)
            .map(|i| base[i])
            .sum();
        stumps.push(stump);
        reports.push(RoundReport {
            normalizer: z,
            weighted_error,
        });
    }
    Ok((StumpEnsemble { stumps }, reports))
}

/// Stump minimizing `Z = 2 * sum over leaves of sqrt(W+ * W-)`. Returns the
/// feature, threshold, and `[left+, left-, right+, right-]` weight sums.
/// Earlier features and lower thresholds win ties.
fn best_split(rows: &[TrainingRow], w: &[f64], sorted: &[Vec<usize>]) -> (usize, f64, [f64; 4]) {
    let (mut tp, mut tn) = (0.0, 0.0);
    for (r, &wi) in rows.iter().zip(w) {
        match r.label {
            Label::Text => tp += wi,
            Label::NonText => tn += wi,
        }
    }
    let mut best: Option<(f64, usize, f64, [f64; 4])> = None;
    for (f, order) in sorted.iter().enumerate() {
        let (mut lp, mut ln) = (0.0, 0.0);
        for k in 0..order.len() {
            let i = order[k];
            match rows[i].label {
                Label::Text => lp += w[i],
                Label::NonText => ln += w[i],
            }
            let Some(&next) = order.get(k + 1) else { break };
            let (a, b) = (rows[i].features[f], rows[next].features[f]);
            if a == b {
                continue;
            }
            let (rp, rn) = ((tp - lp).max(0.0), (tn - ln).max(0.0));
            let z = 2.0 * ((lp * ln).sqrt() + (rp * rn).sqrt());
            if best.is_none_or(|(bz, ..)| z < bz) {
                let mut thr = a + (b - a) * 0.5;
                if thr >= b {
                    thr = a;
                }
                best = Some((z, f, thr, [lp, ln, rp, rn]));
            }
        }
    }
    match best {
        Some((_, f, thr, sums)) => (f, thr, sums),
        // every feature constant: one leaf holds everything
        None => {
            let top = rows.iter().map(|r| r.features[0]).fold(f64::NEG_INFINITY, f64::max);
            (0, top, [tp, tn, 0.0, 0.0])
        }
    }
}

/// Labels hierarchy nodes against ground-truth word boxes and returns their
/// coefficient-of-variation vectors as a class-balanced training set.
///
/// Nodes with best IoU at or above [`TEXT_IOU`] are text, at or below
/// [`NON_TEXT_IOU`] non-text; nodes in between are skipped.
pub fn harvest_training_data(samples: &[(RgbImage, Vec<BBox>)], config: &DiversificationConfig) -> Result<TrainingSet> {
    if samples.iter().all(|(_, gt)| gt.is_empty()) {
        return arg_err("no ground-truth boxes to harvest against");
    }
    let mut set = TrainingSet::default();
    for (image, gt) in samples {
        for h in build_hierarchies(image, config)? {
            for node in &h.nodes {
                let best = gt.iter().map(|g| iou(&node.bbox, g)).fold(0.0, f64::max);
                let Some(label) = label_for_iou(best) else {
                    continue;
                };
                set.rows.push(TrainingRow {
                    features: node.stats.feature_cv(),
                    label,
                    weight: 1.0,
                });
            }
        }
    }
    if set.count(Label::Text) > 0 && set.count(Label::NonText) > 0 {
        set.balance();
    }
    Ok(set)
}

/// Label rule used by harvesting, exposed for inspection.
pub fn label_for_iou(best_iou: f64) -> Option<Label> {
    if best_iou >= TEXT_IOU {
        Some(Label::Text)
    } else if best_iou <= NON_TEXT_IOU {
        Some(Label::NonText)
    } else {
        None
    }
}
