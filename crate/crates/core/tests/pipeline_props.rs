use std::collections::HashSet;

use proptest::prelude::*;
use textprop_core::geom::BBox;
use textprop_core::grouping::{CueId, HierarchySource};
use textprop_core::imageio::{decompose, ChannelId, PyramidLevel, RgbImage};
use textprop_core::pipeline::{
    proposals_from_json, proposals_to_csv, proposals_to_json, propose_image, read_proposals_json, write_proposals,
};
use textprop_core::ranking::{dedup_and_sort, Proposal, Provenance};
use textprop_core::synth::synthetic_image;
use textprop_core::{DiversificationConfig, OutputFormat, Preset};

fn proposal() -> impl Strategy<Value = Proposal> {
    (0u8..5, 0u8..5, 1u8..4, 1u8..4, -5i32..5).prop_map(|(x, y, w, h, s)| Proposal {
        bbox: BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64),
        score: s as f64,
        strategy: textprop_core::Strategy::Nfa,
        provenance: Provenance { source: None, node: 0 },
    })
}

fn keys(ps: &[Proposal]) -> Vec<(u64, u64, u64, u64)> {
    ps.iter()
        .map(|p| (p.bbox.xmin.to_bits(), p.bbox.ymin.to_bits(), p.bbox.xmax.to_bits(), p.bbox.ymax.to_bits()))
        .collect()
}

proptest! {
    #[test]
    fn dedup_idempotent_and_unique(ps in prop::collection::vec(proposal(), 0..60)) {
        let once = dedup_and_sort(ps);
        let twice = dedup_and_sort(once.proposals.clone());
        prop_assert_eq!(&once, &twice);
        let k = keys(&once.proposals);
        prop_assert_eq!(k.iter().collect::<HashSet<_>>().len(), k.len());
        prop_assert!(once.proposals.windows(2).all(|w| w[0].score <= w[1].score));
    }

    #[test]
    fn dedup_keeps_best_score_per_box(ps in prop::collection::vec(proposal(), 1..60), rot in 0usize..60) {
        let mut shuffled = ps.clone();
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        let a = dedup_and_sort(ps);
        let b = dedup_and_sort(shuffled);
        let set = |l: &[Proposal]| l.iter().map(|p| (keys(std::slice::from_ref(p))[0], p.score.to_bits())).collect::<HashSet<_>>();
        prop_assert_eq!(set(&a.proposals), set(&b.proposals));
    }

    #[test]
    fn decompose_deterministic_and_boxes_reproject(seed in 0u64..1000) {
        let s = synthetic_image(seed, 97, 71).unwrap();
        let a = decompose(&s.image, &ChannelId::ALL, &[PyramidLevel::L1, PyramidLevel::L2]).unwrap();
        let b = decompose(&s.image, &ChannelId::ALL, &[PyramidLevel::L1, PyramidLevel::L2]).unwrap();
        prop_assert_eq!(a.entries.len(), 8);
        for (x, y) in a.entries.iter().zip(&b.entries) {
            prop_assert_eq!(&x.raster, &y.raster);
        }
        let l2 = a.entries.iter().find(|e| e.level == PyramidLevel::L2).unwrap();
        prop_assert_eq!(l2.raster.width(), 49);
        let full = textprop_core::geom::PixelBox { xmin: 0, ymin: 0, xmax: 48, ymax: 35 };
        let back = l2.scale.box_to_base(full, 97, 71);
        prop_assert!(back.xmax <= 96 && back.ymax <= 70);
    }
}

#[test]
fn blank_image_gives_no_proposals() {
    let img = RgbImage::from_interleaved(64, 48, &vec![90; 64 * 48 * 3]).unwrap();
    for p in Preset::LADDER {
        assert!(propose_image(&img, &DiversificationConfig::preset(p), None).unwrap().is_empty());
    }
}

#[test]
fn full_covers_fast() {
    let s = synthetic_image(5, 320, 240).unwrap();
    let fast = propose_image(&s.image, &DiversificationConfig::preset(Preset::Fast), None).unwrap();
    let full = propose_image(&s.image, &DiversificationConfig::preset(Preset::Full), None).unwrap();
    let full_keys: HashSet<_> = keys(&full.proposals).into_iter().collect();
    assert!(!fast.is_empty());
    assert!(keys(&fast.proposals).iter().all(|k| full_keys.contains(k)));
}

#[test]
fn seeded_runs_repeat_and_seeds_matter() {
    let s = synthetic_image(6, 320, 240).unwrap();
    let cfg = DiversificationConfig::preset(Preset::Fast).with_seed(7);
    let a = propose_image(&s.image, &cfg, None).unwrap();
    let b = propose_image(&s.image, &cfg, None).unwrap();
    assert_eq!(a, b);
    let c = propose_image(&s.image, &cfg.clone().with_seed(8), None).unwrap();
    assert_ne!(a, c);
}

#[test]
fn nms_and_truncation_apply() {
    let s = synthetic_image(8, 320, 240).unwrap();
    let mut cfg = DiversificationConfig::preset(Preset::Fast);
    cfg.max_proposals = Some(5);
    cfg.nms_iou = Some(0.5);
    let l = propose_image(&s.image, &cfg, None).unwrap();
    assert!(l.len() <= 5);
    assert_eq!(l.dedup.nms_iou, Some(0.5));
    for (i, a) in l.proposals.iter().enumerate() {
        for b in &l.proposals[i + 1..] {
            assert!(textprop_core::eval::iou(&a.bbox, &b.bbox) <= 0.5);
        }
    }
}

#[test]
fn provenance_names_a_real_hierarchy() {
    let s = synthetic_image(9, 200, 160).unwrap();
    let l = propose_image(&s.image, &DiversificationConfig::preset(Preset::Fast), None).unwrap();
    for p in &l.proposals {
        let HierarchySource { channel, level, cue } = p.provenance.source.unwrap();
        assert_ne!(channel, ChannelId::I);
        assert_eq!(level, PyramidLevel::L1);
        assert!(matches!(cue, CueId::D | CueId::F));
    }
}

#[test]
fn writers_round_trip() {
    let s = synthetic_image(10, 200, 160).unwrap();
    let l = propose_image(&s.image, &DiversificationConfig::preset(Preset::Fast), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("p.json");
    write_proposals(&l, &json, OutputFormat::Json).unwrap();
    assert_eq!(read_proposals_json(&json).unwrap(), l);
    assert_eq!(proposals_from_json(&proposals_to_json(&l)).unwrap(), l);
    let csv = dir.path().join("p.csv");
    write_proposals(&l, &csv, OutputFormat::Csv).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text, proposals_to_csv(&l));
    assert_eq!(text.lines().count(), l.len() + 1);
    let boxes = textprop_core::eval::load_proposal_dir(dir.path()).unwrap();
    assert_eq!(boxes["p"], l.boxes());
}

#[test]
fn boxes_stay_inside_the_image() {
    for seed in 0..3 {
        let s = synthetic_image(seed, 151, 113).unwrap();
        let l = propose_image(&s.image, &DiversificationConfig::preset(Preset::Full), None).unwrap();
        assert!(!l.is_empty());
        for p in &l.proposals {
            let b = p.bbox;
            assert!(b.xmin >= 0.0 && b.ymin >= 0.0 && b.xmax <= 150.0 && b.ymax <= 112.0, "{b:?}");
            assert!(b.xmin <= b.xmax && b.ymin <= b.ymax);
        }
    }
}

#[test]
fn more_cues_and_channels_never_shrink_the_pool() {
    let s = synthetic_image(12, 240, 180).unwrap();
    let count = |p: Preset| propose_image(&s.image, &DiversificationConfig::preset(p), None).unwrap().len();
    let counts: Vec<usize> = Preset::LADDER.iter().map(|&p| count(p)).collect();
    assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
}
