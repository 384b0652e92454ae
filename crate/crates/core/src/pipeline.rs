//! Diversified proposal generation: every (channel, level) segmentation
//! crossed with every cue yields one hierarchy; all nodes are scored,
//! pooled, and deduplicated.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::StumpEnsemble;
use crate::error::{arg_err, Error, Result};
use crate::grouping::{slc_cluster, Cue, CueId, CueSpace, Hierarchy, HierarchySource, RegionRecord};
use crate::imageio::{decompose, load_image, ChannelEntry, ChannelId, PyramidLevel, RgbImage};
use crate::mser::{extract_both, MserParams, Region};
use crate::ranking::{
    dedup_and_sort, rank_classifier, rank_nfa, rank_pseudorandom, suppress_overlaps, Proposal, ProposalList,
    Provenance, Strategy,
};
use crate::regionfeat::{compute_features_with, GradientField};

/// Named channel/level/cue combinations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// RGB + DF.
    Fast,
    /// P2 + RGBI + DFBGS.
    Full,
    /// I + D.
    ID,
    /// I + DF.
    IDF,
    /// I + DFBGS.
    IDFBGS,
    /// RGBI + DFBGS.
    RGBIDFBGS,
}

impl Preset {
    /// Ablation order, cheapest first.
    pub const LADDER: [Preset; 5] = [Preset::ID, Preset::IDF, Preset::IDFBGS, Preset::RGBIDFBGS, Preset::Full];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fast => "fast",
            Preset::Full => "full",
            Preset::ID => "i-d",
            Preset::IDF => "i-df",
            Preset::IDFBGS => "i-dfbgs",
            Preset::RGBIDFBGS => "rgbi-dfbgs",
        }
    }

    fn parts(self) -> (&'static str, &'static [u32], &'static str) {
        match self {
            Preset::Fast => ("RGB", &[1], "DF"),
            Preset::Full => ("RGBI", &[1, 2], "DFBGS"),
            Preset::ID => ("I", &[1], "D"),
            Preset::IDF => ("I", &[1], "DF"),
            Preset::IDFBGS => ("I", &[1], "DFBGS"),
            Preset::RGBIDFBGS => ("RGBI", &[1], "DFBGS"),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let all = [Preset::Fast, Preset::Full, Preset::ID, Preset::IDF, Preset::IDFBGS, Preset::RGBIDFBGS];
        all.into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Argument(format!("unknown preset {s:?}")))
    }
}

pub fn parse_channels(s: &str) -> Result<Vec<ChannelId>> {
    s.chars()
        .filter(|c| !matches!(c, ',' | ' '))
        .map(|c| ChannelId::from_char(c).ok_or_else(|| Error::Argument(format!("unknown channel {c:?}"))))
        .collect()
}

pub fn parse_cues(s: &str) -> Result<Vec<CueId>> {
    s.chars()
        .filter(|c| !matches!(c, ',' | ' '))
        .map(|c| CueId::from_char(c).ok_or_else(|| Error::Argument(format!("unknown cue {c:?}"))))
        .collect()
}

pub fn parse_levels(s: &str) -> Result<Vec<PyramidLevel>> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<u32>()
                .ok()
                .and_then(PyramidLevel::from_number)
                .ok_or_else(|| Error::Argument(format!("unknown pyramid level {t:?}")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiversificationConfig {
    pub channels: Vec<ChannelId>,
    pub levels: Vec<PyramidLevel>,
    pub cues: Vec<CueId>,
    pub strategy: Strategy,
    pub seed: u64,
    pub mser: MserParams,
    pub max_proposals: Option<usize>,
    /// Optional greedy overlap suppression after deduplication.
    pub nms_iou: Option<f64>,
}

impl DiversificationConfig {
    pub fn preset(p: Preset) -> Self {
        let (ch, lv, cu) = p.parts();
        DiversificationConfig {
            channels: parse_channels(ch).expect("preset channels"),
            levels: lv.iter().map(|&l| PyramidLevel::from_number(l).expect("preset level")).collect(),
            cues: parse_cues(cu).expect("preset cues"),
            strategy: Strategy::RandomizedNfa,
            seed: 0,
            mser: MserParams::default(),
            max_proposals: None,
            nms_iou: None,
        }
    }

    pub fn with_strategy(mut self, s: Strategy) -> Self {
        self.strategy = s;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.levels.is_empty() || self.cues.is_empty() {
            return arg_err("channels, levels, and cues must all be nonempty");
        }
        if let Some(t) = self.nms_iou {
            if !(t > 0.0 && t <= 1.0) {
                return arg_err(format!("suppression IoU must lie in (0, 1], got {t}"));
            }
        }
        self.mser.validate()
    }

    /// Table-style label such as `P2+RGBI+DFBGS`.
    pub fn label(&self) -> String {
        let mut s = String::new();
        if self.levels.contains(&PyramidLevel::L2) {
            s.push_str("P2+");
        }
        let mut ch = self.channels.clone();
        ch.sort();
        ch.dedup();
        s.extend(ch.iter().map(|c| c.as_char()));
        s.push('+');
        let mut cu = self.cues.clone();
        cu.sort();
        cu.dedup();
        s.extend(cu.iter().map(|c| c.as_char()));
        s
    }
}

/// Regions of one (channel, level) raster with their clustering records.
#[derive(Clone, Debug)]
pub struct Segmentation {
    pub channel: ChannelId,
    pub level: PyramidLevel,
    pub regions: Vec<Region>,
    pub records: Vec<RegionRecord>,
    /// Scale of the diameter and stroke features (raster diagonal).
    pub length_scale: f64,
    /// Scale of the gradient feature (99th-percentile magnitude).
    pub gradient_scale: f64,
}

impl Segmentation {
    pub fn cue(&self, id: CueId) -> Cue {
        let scale = match id {
            CueId::F | CueId::B => 255.0,
            CueId::D | CueId::S => self.length_scale,
            CueId::G => self.gradient_scale,
        };
        Cue::new(id, scale).expect("scales are positive by construction")
    }
}

/// Extracts both MSER polarities from one channel entry and computes region
/// features; centres and boxes are mapped to level-1 coordinates.
pub fn segment(entry: &ChannelEntry, base_width: usize, base_height: usize, params: &MserParams) -> Result<Segmentation> {
    let raster = &entry.raster;
    let regions = extract_both(raster, params, (entry.channel, entry.level))?;
    let grad = GradientField::new(raster);
    let records = regions
        .iter()
        .map(|r| {
            let f = compute_features_with(r, raster, &grad)?;
            Ok(RegionRecord {
                features: f.to_array(),
                center: (entry.scale.point_to_base(r.centroid.0), entry.scale.point_to_base(r.centroid.1)),
                bbox: entry.scale.box_to_base(r.bbox, base_width, base_height).to_bbox(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let p99 = grad.percentile_99();
    Ok(Segmentation {
        channel: entry.channel,
        level: entry.level,
        regions,
        records,
        length_scale: raster.diagonal(),
        gradient_scale: if p99 > 0.0 { p99 } else { 1.0 },
    })
}

/// Builds every segmentation the configuration asks for, in level-then-channel order.
pub fn segment_all(image: &RgbImage, config: &DiversificationConfig) -> Result<Vec<Segmentation>> {
    config.validate()?;
    let set = decompose(image, &config.channels, &config.levels)?;
    set.entries
        .par_iter()
        .map(|e| segment(e, set.base_width, set.base_height, &config.mser))
        .collect()
}

fn sorted_cues(config: &DiversificationConfig) -> Vec<CueId> {
    let mut cues = config.cues.clone();
    cues.sort();
    cues.dedup();
    cues
}

fn hierarchies_of(segs: &[Segmentation], cues: &[CueId], width: usize, height: usize) -> Result<Vec<Hierarchy>> {
    let tasks: Vec<(&Segmentation, CueId)> = segs
        .iter()
        .filter(|s| !s.records.is_empty())
        .flat_map(|s| cues.iter().map(move |&c| (s, c)))
        .collect();
    tasks
        .par_iter()
        .map(|&(seg, cue)| {
            let space = CueSpace::for_image(seg.cue(cue), width, height);
            let mut h = slc_cluster(&seg.records, &space)?;
            h.source = Some(HierarchySource {
                channel: seg.channel,
                level: seg.level,
                cue,
            });
            Ok(h)
        })
        .collect()
}

/// All hierarchies of an image under `config`, in (level, channel, cue) order.
pub fn build_hierarchies(image: &RgbImage, config: &DiversificationConfig) -> Result<Vec<Hierarchy>> {
    let segs = segment_all(image, config)?;
    hierarchies_of(&segs, &sorted_cues(config), image.width(), image.height())
}

/// Seed of the per-hierarchy random stream, so results do not depend on
/// scheduling order.
pub fn stream_seed(seed: u64, source: &HierarchySource) -> u64 {
    let tag = (source.channel as u64) << 16 | (source.level.number() as u64) << 8 | source.cue.feature_index() as u64;
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Scores every node of one hierarchy with the requested strategy.
pub fn score_hierarchy(h: &Hierarchy, strategy: Strategy, seed: u64, model: Option<&StumpEnsemble>) -> Result<Vec<f64>> {
    let src = h.source.unwrap_or(HierarchySource {
        channel: ChannelId::I,
        level: PyramidLevel::L1,
        cue: CueId::D,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &src));
    match strategy {
        Strategy::PseudoRandom => Ok(rank_pseudorandom(h, &mut rng)),
        Strategy::Nfa => Ok(rank_nfa(h, false, &mut rng)),
        Strategy::RandomizedNfa => Ok(rank_nfa(h, true, &mut rng)),
        Strategy::Classifier => match model {
            Some(m) => rank_classifier(h, m),
            None => arg_err("classifier ranking requires a model"),
        },
    }
}

/// Scores, pools, deduplicates, and truncates the nodes of `hierarchies`.
pub fn rank_hierarchies(
    hierarchies: &[Hierarchy],
    config: &DiversificationConfig,
    model: Option<&StumpEnsemble>,
) -> Result<ProposalList> {
    let scored: Vec<Vec<f64>> = hierarchies
        .par_iter()
        .map(|h| score_hierarchy(h, config.strategy, config.seed, model))
        .collect::<Result<_>>()?;
    let mut pooled = Vec::with_capacity(scored.iter().map(Vec::len).sum());
    for (h, scores) in hierarchies.iter().zip(scored) {
        for (i, (node, score)) in h.nodes.iter().zip(scores).enumerate() {
            pooled.push(Proposal {
                bbox: node.bbox,
                score,
                strategy: config.strategy,
                provenance: Provenance { source: h.source, node: i },
            });
        }
    }
    let mut list = dedup_and_sort(pooled);
    if let Some(t) = config.nms_iou {
        list = suppress_overlaps(&list, t);
    }
    if let Some(n) = config.max_proposals {
        list.truncate(n);
    }
    Ok(list)
}

/// Ranked proposals for an in-memory image.
pub fn propose_image(image: &RgbImage, config: &DiversificationConfig, model: Option<&StumpEnsemble>) -> Result<ProposalList> {
    if config.strategy == Strategy::Classifier && model.is_none() {
        return arg_err("classifier ranking requires a model");
    }
    let hierarchies = build_hierarchies(image, config)?;
    rank_hierarchies(&hierarchies, config, model)
}

/// Ranked proposals for an image file.
pub fn propose(path: impl AsRef<Path>, config: &DiversificationConfig, model: Option<&StumpEnsemble>) -> Result<ProposalList> {
    let image = load_image(path)?;
    propose_image(&image, config, model)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => arg_err(format!("unknown output format {other:?}")),
        }
    }
}

pub const CSV_HEADER: &str = "xmin,ymin,xmax,ymax,score,strategy";

pub fn proposals_to_csv(list: &ProposalList) -> String {
    let mut out = String::with_capacity(32 * (list.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for p in &list.proposals {
        let b = p.bbox;
        writeln!(out, "{},{},{},{},{},{}", b.xmin, b.ymin, b.xmax, b.ymax, p.score, p.strategy).unwrap();
    }
    out
}

#[derive(Serialize, Deserialize)]
struct JsonProposal {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
    score: f64,
    strategy: Strategy,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct JsonList {
    dedup: crate::ranking::DedupPolicy,
    proposals: Vec<JsonProposal>,
}

pub fn proposals_to_json(list: &ProposalList) -> String {
    let doc = JsonList {
        dedup: list.dedup,
        proposals: list
            .proposals
            .iter()
            .map(|p| JsonProposal {
                xmin: p.bbox.xmin,
                ymin: p.bbox.ymin,
                xmax: p.bbox.xmax,
                ymax: p.bbox.ymax,
                score: p.score,
                strategy: p.strategy,
                provenance: p.provenance,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("proposal lists serialize")
}

pub fn proposals_from_json(text: &str) -> Result<ProposalList> {
    let doc: JsonList = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    Ok(ProposalList {
        dedup: doc.dedup,
        proposals: doc
            .proposals
            .into_iter()
            .map(|p| Proposal {
                bbox: crate::geom::BBox::new(p.xmin, p.ymin, p.xmax, p.ymax),
                score: p.score,
                strategy: p.strategy,
                provenance: p.provenance,
            })
            .collect(),
    })
}

/// Writes proposals in rank order.
pub fn write_proposals(list: &ProposalList, path: impl AsRef<Path>, format: OutputFormat) -> Result<()> {
    let text = match format {
        OutputFormat::Csv => proposals_to_csv(list),
        OutputFormat::Json => proposals_to_json(list),
    };
    fs::write(path, text)?;
    Ok(())
}

pub fn read_proposals_json(path: impl AsRef<Path>) -> Result<ProposalList> {
    proposals_from_json(&fs::read_to_string(path)?)
}
