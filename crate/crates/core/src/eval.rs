//! Recall-versus-IoU evaluation of ranked proposals.
//!
//! A ground-truth box is recalled at `(n, t)` when any of the first `n`
//! proposals of its image overlaps it with IoU at least `t`. There is no
//! one-to-one assignment: one proposal may recall several boxes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{arg_err, Error, Result};
use crate::geom::BBox;

/// Intersection over union on continuous coordinates; 0 when the union is
/// empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let ih = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GtBox {
    pub bbox: BBox,
    pub transcription: Option<String>,
    pub ignore: bool,
}

impl GtBox {
    pub fn new(bbox: BBox) -> Self {
        GtBox {
            bbox,
            transcription: None,
            ignore: false,
        }
    }
}

/// Word boxes per image id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub images: BTreeMap<String, Vec<GtBox>>,
}

impl GroundTruth {
    /// Number of boxes that count toward recall.
    pub fn counted(&self) -> usize {
        self.images.values().flatten().filter(|g| !g.ignore).count()
    }
}

/// Ranked boxes per image id, best first.
pub type RankedBoxes = BTreeMap<String, Vec<BBox>>;

fn check_ids(gt: &GroundTruth, proposals: &RankedBoxes) -> Result<()> {
    let unknown: Vec<&str> = proposals
        .keys()
        .filter(|k| !gt.images.contains_key(*k))
        .map(String::as_str)
        .collect();
    if unknown.is_empty() {
        Ok(())
    } else {
        arg_err(format!("proposals reference images absent from ground truth: {}", unknown.join(", ")))
    }
}

/// For every counted ground-truth box, the 0-based rank of the first
/// proposal reaching IoU `t`, or `None`. Images without proposals contribute
/// `None` for each box.
pub fn first_match_ranks(gt: &GroundTruth, proposals: &RankedBoxes, t: f64) -> Result<Vec<Option<usize>>> {
    check_ids(gt, proposals)?;
    let mut out = Vec::with_capacity(gt.counted());
    for (id, boxes) in &gt.images {
        let props = proposals.get(id).map(Vec::as_slice).unwrap_or(&[]);
        for g in boxes.iter().filter(|g| !g.ignore) {
            out.push(props.iter().position(|p| iou(p, &g.bbox) >= t));
        }
    }
    Ok(out)
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        arg_err(format!("IoU threshold must lie in (0, 1], got {t}"))
    }
}

/// Fraction of counted ground-truth boxes recalled by the top `n`
/// proposals of their image at IoU `t`.
pub fn recall_at(gt: &GroundTruth, proposals: &RankedBoxes, n: usize, t: f64) -> Result<f64> {
    if n == 0 {
        return arg_err("top-N cutoff must be at least 1");
    }
    check_threshold(t)?;
    let ranks = first_match_ranks(gt, proposals, t)?;
    Ok(recall_from_ranks(&ranks, n))
}

fn recall_from_ranks(ranks: &[Option<usize>], n: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|r| r.is_some_and(|r| r < n)).count() as f64 / ranks.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveAxis {
    ProposalCount,
    IouThreshold,
}

/// Number of proposals kept per image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TopN {
    Count(usize),
    All,
}

impl TopN {
    fn limit(self) -> usize {
        match self {
            TopN::Count(n) => n,
            TopN::All => usize::MAX,
        }
    }

    pub fn label(self) -> String {
        match self {
            TopN::Count(n) => n.to_string(),
            TopN::All => "all".into(),
        }
    }
}

impl FromStr for TopN {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(TopN::All);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(TopN::Count(n)),
            _ => arg_err(format!("bad top-N value {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecallCurve {
    pub axis: CurveAxis,
    /// Fixed IoU threshold (count axis) or fixed proposal count (IoU axis).
    pub fixed: String,
    pub samples: Vec<(f64, f64)>,
    pub auc: f64,
}

pub const DEFAULT_IOU_GRID: [f64; 3] = [0.5, 0.7, 0.9];
pub const DEFAULT_TOPN_GRID: [TopN; 4] = [TopN::Count(100), TopN::Count(1000), TopN::Count(10000), TopN::All];

/// Recall against proposal count at a fixed IoU.
///
/// Samples sit on a 1-2-5 grid up to the longest proposal list. The AUC
/// integrates recall over `log10 N` from 1 to that length, normalized to
/// `[0, 1]`, using every integer `N` as a trapezoid node.
pub fn recall_vs_count(gt: &GroundTruth, proposals: &RankedBoxes, t: f64) -> Result<RecallCurve> {
    check_threshold(t)?;
    let ranks = first_match_ranks(gt, proposals, t)?;
    let n_max = proposals.values().map(Vec::len).max().unwrap_or(0);
    let total = ranks.len();

    // recalled[n] = boxes first matched within the top n
    let mut hits = vec![0usize; n_max + 1];
    for r in ranks.iter().flatten() {
        hits[r + 1] += 1;
    }
    for i in 1..hits.len() {
        hits[i] += hits[i - 1];
    }
    let recall = |n: usize| {
        if total == 0 {
            0.0
        } else {
            hits[n.min(n_max)] as f64 / total as f64
        }
    };

    let mut samples = Vec::new();
    if n_max == 0 {
        samples.push((1.0, 0.0));
    } else {
        let mut decade = 1usize;
        'outer: loop {
            for m in [1usize, 2, 5] {
                let n = decade * m;
                if n >= n_max {
                    break 'outer;
                }
                samples.push((n as f64, recall(n)));
            }
            decade *= 10;
        }
        samples.push((n_max as f64, recall(n_max)));
    }

    let auc = if n_max <= 1 {
        recall(1)
    } else {
        let span = (n_max as f64).log10();
        let mut area = 0.0;
        let mut prev = (0.0, recall(1));
        for n in 2..=n_max {
            let x = (n as f64).log10() / span;
            let y = recall(n);
            area += (x - prev.0) * (y + prev.1) * 0.5;
            prev = (x, y);
        }
        area
    };
    Ok(RecallCurve {
        axis: CurveAxis::ProposalCount,
        fixed: format!("{t}"),
        samples,
        auc,
    })
}

/// Recall against IoU threshold for the top `n` proposals, on thresholds
/// 0.50, 0.55, ..., 1.00; the AUC is the trapezoid area normalized to the
/// threshold span.
pub fn recall_vs_iou(gt: &GroundTruth, proposals: &RankedBoxes, n: TopN) -> Result<RecallCurve> {
    let limit = n.limit();
    if limit == 0 {
        return arg_err("top-N cutoff must be at least 1");
    }
    check_ids(gt, proposals)?;
    let grid: Vec<f64> = (0..=10).map(|i| 0.5 + 0.05 * i as f64).collect();

    // best IoU of each counted box within the cutoff
    let mut best = Vec::new();
    for (id, boxes) in &gt.images {
        let props = proposals.get(id).map(Vec::as_slice).unwrap_or(&[]);
        let props = &props[..props.len().min(limit)];
        for g in boxes.iter().filter(|g| !g.ignore) {
            best.push(props.iter().map(|p| iou(p, &g.bbox)).fold(0.0, f64::max));
        }
    }
    let samples: Vec<(f64, f64)> = grid
        .iter()
        .map(|&t| {
            let r = if best.is_empty() {
                0.0
            } else {
                best.iter().filter(|&&b| b >= t).count() as f64 / best.len() as f64
            };
            (t, r)
        })
        .collect();
    let span = grid[grid.len() - 1] - grid[0];
    let auc = samples
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5)
        .sum::<f64>()
        / span;
    Ok(RecallCurve {
        axis: CurveAxis::IouThreshold,
        fixed: n.label(),
        samples,
        auc,
    })
}

/// Recall-vs-count curves at each IoU in `iou_grid`, then recall-vs-IoU
/// curves at each cutoff in `n_grid`.
pub fn curves(gt: &GroundTruth, proposals: &RankedBoxes, iou_grid: &[f64], n_grid: &[TopN]) -> Result<Vec<RecallCurve>> {
    let mut out = Vec::with_capacity(iou_grid.len() + n_grid.len());
    for &t in iou_grid {
        out.push(recall_vs_count(gt, proposals, t)?);
    }
    for &n in n_grid {
        out.push(recall_vs_iou(gt, proposals, n)?);
    }
    Ok(out)
}

/// CSV with one row per sample, followed by an AUC block.
pub fn curves_to_csv(curves: &[RecallCurve]) -> String {
    let mut out = String::from("curve,fixed,x,recall\n");
    for c in curves {
        let name = match c.axis {
            CurveAxis::ProposalCount => "recall_vs_n",
            CurveAxis::IouThreshold => "recall_vs_iou",
        };
        for (x, r) in &c.samples {
            writeln!(out, "{name},{},{x},{r}", c.fixed).unwrap();
        }
    }
    out.push_str("\ncurve,fixed,auc\n");
    for c in curves {
        let name = match c.axis {
            CurveAxis::ProposalCount => "recall_vs_n",
            CurveAxis::IouThreshold => "recall_vs_iou",
        };
        writeln!(out, "{name},{},{}", c.fixed, c.auc).unwrap();
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GtFormat {
    Icdar2013,
    SvtXml,
    PlainBoxes,
}

impl FromStr for GtFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "icdar2013" | "icdar" => Ok(GtFormat::Icdar2013),
            "svt-xml" | "svt" => Ok(GtFormat::SvtXml),
            "plain-boxes" | "plain" | "csv" => Ok(GtFormat::PlainBoxes),
            other => arg_err(format!("unknown ground-truth format {other:?}")),
        }
    }
}

fn parse_err(file: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn checked_box(file: &Path, line: usize, v: [f64; 4]) -> Result<BBox> {
    let b = BBox::new(v[0], v[1], v[2], v[3]);
    if !b.is_finite() || b.xmin > b.xmax || b.ymin > b.ymax {
        return Err(parse_err(file, line, format!("invalid box {v:?}")));
    }
    Ok(b)
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)))
        .collect();
    files.sort();
    Ok(files)
}

/// Reads ground truth in one of the supported layouts.
///
/// * `icdar2013`: a directory of `gt_<id>.txt` files with lines
///   `x1,y1,x2,y2,"transcription"` (commas or whitespace); `###` marks an
///   ignored word.
/// * `svt-xml`: the SVT XML file (or a directory holding `test.xml`).
/// * `plain-boxes`: a CSV file (or directory of them) with rows
///   `image-id,xmin,ymin,xmax,ymax`.
pub fn ingest_ground_truth(path: impl AsRef<Path>, format: GtFormat) -> Result<GroundTruth> {
    let path = path.as_ref();
    match format {
        GtFormat::Icdar2013 => ingest_icdar(path),
        GtFormat::SvtXml => {
            let file = if path.is_dir() { path.join("test.xml") } else { path.to_path_buf() };
            ingest_svt(&file)
        }
        GtFormat::PlainBoxes => {
            let files = if path.is_dir() { sorted_files(path, "csv")? } else { vec![path.to_path_buf()] };
            let mut gt = GroundTruth::default();
            for f in files {
                for (id, b, _) in read_box_csv(&f)? {
                    gt.images.entry(id).or_default().push(GtBox::new(b));
                }
            }
            Ok(gt)
        }
    }
}

/// Parses one ICDAR 2013 ground-truth line.
pub fn parse_icdar_line(file: &Path, line_no: usize, line: &str) -> Result<Option<GtBox>> {
    let line = line.trim_start_matches('\u{feff}').trim();
    if line.is_empty() {
        return Ok(None);
    }
    let (coords, text) = match line.find('"') {
        Some(q) => (&line[..q], Some(line[q..].trim().trim_matches('"').to_string())),
        None => (line, None),
    };
    let nums: Vec<&str> = coords
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect();
    if nums.len() != 4 {
        return Err(parse_err(file, line_no, format!("expected 4 coordinates, found {}", nums.len())));
    }
    let mut v = [0.0; 4];
    for (slot, s) in v.iter_mut().zip(&nums) {
        *slot = s
            .parse()
            .map_err(|_| parse_err(file, line_no, format!("bad coordinate {s:?}")))?;
    }
    let ignore = text.as_deref() == Some("###");
    Ok(Some(GtBox {
        bbox: checked_box(file, line_no, v)?,
        transcription: text,
        ignore,
    }))
}

fn ingest_icdar(dir: &Path) -> Result<GroundTruth> {
    let mut gt = GroundTruth::default();
    for f in sorted_files(dir, "txt")? {
        let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let id = stem.strip_prefix("gt_").unwrap_or(stem).to_string();
        let text = std::fs::read_to_string(&f)?;
        let mut boxes = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(b) = parse_icdar_line(&f, i + 1, line)? {
                boxes.push(b);
            }
        }
        gt.images.insert(id, boxes);
    }
    Ok(gt)
}

fn ingest_svt(file: &Path) -> Result<GroundTruth> {
    let text = std::fs::read_to_string(file)?;
    parse_svt_xml(&text, file)
}

/// Parses the SVT annotation XML.
pub fn parse_svt_xml(text: &str, file: &Path) -> Result<GroundTruth> {
    let doc = roxmltree::Document::parse(text).map_err(|e| parse_err(file, e.pos().row as usize, e.to_string()))?;
    let line_of = |n: roxmltree::Node| doc.text_pos_at(n.range().start).row as usize;
    let mut gt = GroundTruth::default();
    for image in doc.descendants().filter(|n| n.has_tag_name("image")) {
        let name = image
            .children()
            .find(|n| n.has_tag_name("imageName"))
            .and_then(|n| n.text())
            .ok_or_else(|| parse_err(file, line_of(image), "image without imageName"))?;
        let id = Path::new(name.trim())
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(name)
            .to_string();
        let mut boxes = Vec::new();
        for rect in image.descendants().filter(|n| n.has_tag_name("taggedRectangle")) {
            let attr = |k: &str| -> Result<f64> {
                rect.attribute(k)
                    .ok_or_else(|| parse_err(file, line_of(rect), format!("missing attribute {k}")))?
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(file, line_of(rect), format!("bad attribute {k}")))
            };
            let (x, y, w, h) = (attr("x")?, attr("y")?, attr("width")?, attr("height")?);
            let tag = rect
                .children()
                .find(|n| n.has_tag_name("tag"))
                .and_then(|n| n.text())
                .map(|t| t.trim().to_string());
            boxes.push(GtBox {
                bbox: checked_box(file, line_of(rect), [x, y, x + w, y + h])?,
                transcription: tag,
                ignore: false,
            });
        }
        gt.images.entry(id).or_default().extend(boxes);
    }
    Ok(gt)
}

/// Rows `image-id,xmin,ymin,xmax,ymax[,score]`. A first line whose
/// coordinate fields are not numeric is treated as a header.
fn read_box_csv(file: &Path) -> Result<Vec<(String, BBox, Option<f64>)>> {
    let text = std::fs::read_to_string(file)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let numeric = |s: &str| s.parse::<f64>().is_ok();
        if i == 0 && f.len() >= 5 && !f[1..5].iter().all(|s| numeric(s)) {
            continue;
        }
        if f.len() != 5 && f.len() != 6 {
            return Err(parse_err(file, i + 1, format!("expected 5 or 6 fields, found {}", f.len())));
        }
        let mut v = [0.0; 4];
        for (slot, s) in v.iter_mut().zip(&f[1..5]) {
            *slot = s.parse().map_err(|_| parse_err(file, i + 1, format!("bad coordinate {s:?}")))?;
        }
        let score = match f.get(5) {
            Some(s) => Some(s.parse::<f64>().map_err(|_| parse_err(file, i + 1, format!("bad score {s:?}")))?),
            None => None,
        };
        rows.push((f[0].to_string(), checked_box(file, i + 1, v)?, score));
    }
    Ok(rows)
}

/// Reads proposals from another method: `image-id,xmin,ymin,xmax,ymax[,score]`.
/// When every row carries a score, each image's list is sorted by score,
/// highest first (stable); otherwise file order is the rank order.
pub fn ingest_external_proposals(path: impl AsRef<Path>) -> Result<RankedBoxes> {
    let rows = read_box_csv(path.as_ref())?;
    let scored = !rows.is_empty() && rows.iter().all(|r| r.2.is_some());
    let mut per: BTreeMap<String, Vec<(BBox, f64)>> = BTreeMap::new();
    for (id, b, s) in rows {
        per.entry(id).or_default().push((b, s.unwrap_or(0.0)));
    }
    Ok(per
        .into_iter()
        .map(|(id, mut v)| {
            if scored {
                v.sort_by(|a, b| b.1.total_cmp(&a.1));
            }
            (id, v.into_iter().map(|(b, _)| b).collect())
        })
        .collect())
}

/// Reads a directory of `<image-id>.csv` files written by the proposer
/// (`xmin,ymin,xmax,ymax,score,strategy`), keeping file order.
pub fn load_proposal_dir(dir: impl AsRef<Path>) -> Result<RankedBoxes> {
    let mut out = RankedBoxes::new();
    for f in sorted_files(dir.as_ref(), "csv")? {
        let id = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let text = std::fs::read_to_string(&f)?;
        let mut boxes = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("xmin")) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 4 {
                return Err(parse_err(&f, i + 1, "expected at least 4 fields"));
            }
            let mut v = [0.0; 4];
            for (slot, s) in v.iter_mut().zip(&fields[..4]) {
                *slot = s.trim().parse().map_err(|_| parse_err(&f, i + 1, format!("bad coordinate {s:?}")))?;
            }
            boxes.push(checked_box(&f, i + 1, v)?);
        }
        out.insert(id, boxes);
    }
    Ok(out)
}
