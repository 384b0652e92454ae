use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use textprop_core::boost::{harvest_training_data, train_traced, StumpEnsemble};
use textprop_core::eval::{
    curves, curves_to_csv, ingest_external_proposals, ingest_ground_truth, load_proposal_dir, recall_at, GroundTruth,
    RankedBoxes, TopN,
};
use textprop_core::imageio::{decompose, load_image};
use textprop_core::mser::{extract_both, label_raster, MserParams};
use textprop_core::pipeline::{parse_channels, parse_cues, parse_levels, propose_image, write_proposals};
use textprop_core::synth::{corpus_id, synthetic_dataset, write_corpus};
use textprop_core::{BBox, DiversificationConfig, GtFormat, OutputFormat, Preset, RgbImage, Strategy};

/// Model trained on the synthetic corpus, used by `--rank cls` when no
/// `--model` is given.
const SHIPPED_MODEL: &str = include_str!("../../../models/stumps-v1.txt");

#[derive(Parser)]
#[command(name = "textprop", version, about = "Text-specific object proposals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate ranked proposals for one image.
    Propose(ProposeArgs),
    /// Score proposal files against ground truth.
    Evaluate(EvaluateArgs),
    /// Propose and evaluate over a dataset, printing a summary table.
    Bench(BenchArgs),
    /// Train a stump ensemble on harvested hierarchy nodes.
    Train(TrainArgs),
    /// Write a synthetic text corpus (PNGs plus gt.csv).
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Named channel/level/cue combination.
    #[arg(long, default_value = "fast")]
    preset: String,
    /// Override channels, e.g. RGBI.
    #[arg(long)]
    channels: Option<String>,
    /// Override pyramid levels, e.g. 1,2.
    #[arg(long)]
    levels: Option<String>,
    /// Override cues, e.g. DFBGS.
    #[arg(long)]
    cues: Option<String>,
    /// Ranking strategy: pr, nfa, prnfa, cls.
    #[arg(long, default_value = "prnfa")]
    rank: String,
    /// Stump model for cls ranking (defaults to the shipped model).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_proposals: Option<usize>,
    /// Greedy overlap suppression threshold.
    #[arg(long)]
    nms: Option<f64>,
    #[arg(long, default_value_t = 2)]
    mser_delta: u8,
    #[arg(long, default_value_t = 0.00007)]
    mser_min_area: f64,
    #[arg(long, default_value_t = 0.5)]
    mser_max_area: f64,
    #[arg(long, default_value_t = 0.3)]
    mser_max_variation: f64,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

impl ConfigArgs {
    fn config(&self) -> Result<DiversificationConfig> {
        let preset: Preset = self.preset.parse()?;
        let mut cfg = DiversificationConfig::preset(preset);
        if let Some(c) = &self.channels {
            cfg.channels = parse_channels(c)?;
        }
        if let Some(l) = &self.levels {
            cfg.levels = parse_levels(l)?;
        }
        if let Some(c) = &self.cues {
            cfg.cues = parse_cues(c)?;
        }
        cfg.strategy = self.rank.parse()?;
        cfg.seed = self.seed;
        cfg.max_proposals = self.max_proposals;
        cfg.nms_iou = self.nms;
        cfg.mser = MserParams {
            delta: self.mser_delta,
            min_area: self.mser_min_area,
            max_area: self.mser_max_area,
            max_variation: self.mser_max_variation,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn model(&self, strategy: Strategy) -> Result<Option<StumpEnsemble>> {
        if strategy != Strategy::Classifier {
            return Ok(None);
        }
        Ok(Some(match &self.model {
            Some(p) => StumpEnsemble::load(p)?,
            None => StumpEnsemble::from_text(SHIPPED_MODEL, Path::new("<shipped model>"))?,
        }))
    }
}

#[derive(Args)]
struct ProposeArgs {
    image: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json; inferred from the --out extension when absent.
    #[arg(long)]
    format: Option<String>,
    /// Write each segmentation as a PGM label raster into this directory.
    #[arg(long)]
    dump_regions: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Ground-truth directory or file.
    #[arg(long)]
    gt: PathBuf,
    /// icdar2013, svt-xml, or plain-boxes.
    #[arg(long, default_value = "icdar2013")]
    gt_format: String,
    /// Scored CSV (image,xmin,ymin,xmax,ymax[,score]) or a directory of
    /// per-image proposer CSVs.
    #[arg(long)]
    proposals: PathBuf,
    #[arg(long, default_value = "0.5,0.7,0.9")]
    iou: String,
    #[arg(long, default_value = "10,100,1000,10000")]
    topn: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Image directory; images are matched to ground-truth ids by file stem.
    #[arg(long, requires = "gt")]
    images: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long, default_value = "icdar2013")]
    gt_format: String,
    /// Use this many in-memory synthetic images instead of a dataset.
    #[arg(long, conflicts_with = "images")]
    synthetic: Option<usize>,
    /// Seed of the synthetic images.
    #[arg(long, default_value_t = 1000)]
    synth_seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Also write the full curve CSV here.
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 100)]
    rounds: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 1000)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Propose(a) => {
            let threads = a.config.threads;
            in_pool(threads, || propose(a))
        }
        Command::Evaluate(a) => evaluate(a),
        Command::Bench(a) => {
            let threads = a.config.threads;
            in_pool(threads, || bench(a))
        }
        Command::Train(a) => {
            let threads = a.config.threads;
            in_pool(threads, || train(a))
        }
        Command::Synth(a) => {
            let images = synthetic_dataset(a.seed, a.count)?;
            write_corpus(&images, &a.out)?;
            eprintln!("wrote {} images to {}", images.len(), a.out.display());
            Ok(())
        }
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building thread pool")?;
    pool.install(f)
}

fn propose(a: ProposeArgs) -> Result<()> {
    let cfg = a.config.config()?;
    let model = a.config.model(cfg.strategy)?;
    let image = load_image(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    if let Some(dir) = &a.dump_regions {
        dump_regions(&image, &cfg, dir)?;
    }
    let list = propose_image(&image, &cfg, model.as_ref())?;
    let format = match (&a.format, &a.out) {
        (Some(f), _) => f.parse()?,
        (None, Some(p)) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) => OutputFormat::Json,
        _ => OutputFormat::Csv,
    };
    match &a.out {
        Some(p) => write_proposals(&list, p, format).with_context(|| format!("writing {}", p.display()))?,
        None => {
            let text = match format {
                OutputFormat::Csv => textprop_core::pipeline::proposals_to_csv(&list),
                OutputFormat::Json => textprop_core::pipeline::proposals_to_json(&list),
            };
            std::io::stdout().lock().write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn dump_regions(image: &RgbImage, cfg: &DiversificationConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let set = decompose(image, &cfg.channels, &cfg.levels)?;
    for e in &set.entries {
        let regions = extract_both(&e.raster, &cfg.mser, (e.channel, e.level))?;
        let labels = label_raster(e.raster.width(), e.raster.height(), &regions);
        let mut pgm = format!("P5\n{} {}\n255\n", labels.width(), labels.height()).into_bytes();
        pgm.extend_from_slice(labels.data());
        let path = dir.join(format!("regions_{}{}.pgm", e.channel, e.level.number()));
        fs::write(&path, pgm).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|_| anyhow::anyhow!("bad {what} value {t:?}")))
        .collect()
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let format: GtFormat = a.gt_format.parse()?;
    let gt = ingest_ground_truth(&a.gt, format).with_context(|| format!("reading {}", a.gt.display()))?;
    let props = if a.proposals.is_dir() {
        load_proposal_dir(&a.proposals)?
    } else {
        ingest_external_proposals(&a.proposals)?
    };
    let ious: Vec<f64> = parse_list(&a.iou, "IoU")?;
    let tops: Vec<TopN> = parse_list(&a.topn, "top-N")?;
    let c = curves(&gt, &props, &ious, &tops)?;
    fs::write(&a.out, curves_to_csv(&c)).with_context(|| format!("writing {}", a.out.display()))?;
    for curve in &c {
        eprintln!("{:?} at {}: AUC {:.4}", curve.axis, curve.fixed, curve.auc);
    }
    Ok(())
}

/// Images paired with their ground truth.
struct Dataset {
    ids: Vec<String>,
    images: Vec<RgbImage>,
    gt: GroundTruth,
}

fn find_image(dir: &Path, id: &str) -> Option<PathBuf> {
    let direct = dir.join(id);
    if direct.is_file() {
        return Some(direct);
    }
    ["jpg", "jpeg", "png", "JPG", "PNG", "ppm", "pgm"]
        .iter()
        .map(|e| dir.join(format!("{id}.{e}")))
        .find(|p| p.is_file())
}

fn load_dataset(d: &DataArgs) -> Result<Dataset> {
    if let Some(n) = d.synthetic {
        let synth = synthetic_dataset(d.synth_seed, n)?;
        let mut gt = GroundTruth::default();
        let mut ids = Vec::new();
        let mut images = Vec::new();
        for (i, s) in synth.into_iter().enumerate() {
            let id = corpus_id(i);
            gt.images.insert(id.clone(), s.words.iter().map(|&b| textprop_core::eval::GtBox::new(b)).collect());
            ids.push(id);
            images.push(s.image);
        }
        return Ok(Dataset { ids, images, gt });
    }
    let (Some(dir), Some(gt_path)) = (&d.images, &d.gt) else {
        bail!("give either --synthetic N or --images DIR with --gt PATH");
    };
    let gt = ingest_ground_truth(gt_path, d.gt_format.parse()?)?;
    let mut ids = Vec::new();
    let mut images = Vec::new();
    for id in gt.images.keys() {
        let path = find_image(dir, id).with_context(|| format!("no image for ground-truth id {id:?} in {}", dir.display()))?;
        images.push(load_image(&path).with_context(|| format!("reading {}", path.display()))?);
        ids.push(id.clone());
    }
    Ok(Dataset { ids, images, gt })
}

fn bench(a: BenchArgs) -> Result<()> {
    let cfg = a.config.config()?;
    let model = a.config.model(cfg.strategy)?;
    let data = load_dataset(&a.data)?;
    let mut props = RankedBoxes::new();
    let mut total = 0usize;
    let start = Instant::now();
    for (id, image) in data.ids.iter().zip(&data.images) {
        let list = propose_image(image, &cfg, model.as_ref())?;
        total += list.len();
        props.insert(id.clone(), list.boxes());
    }
    let secs = start.elapsed().as_secs_f64() / data.images.len().max(1) as f64;
    let n = data.images.len().max(1) as f64;
    println!("method,avg_proposals,recall_0.5,recall_0.7,recall_0.9,seconds_per_image");
    println!(
        "{}/{},{:.0},{:.3},{:.3},{:.3},{:.3}",
        cfg.label(),
        cfg.strategy,
        total as f64 / n,
        recall_at(&data.gt, &props, usize::MAX, 0.5)?,
        recall_at(&data.gt, &props, usize::MAX, 0.7)?,
        recall_at(&data.gt, &props, usize::MAX, 0.9)?,
        secs
    );
    if let Some(path) = &a.curves {
        let tops = [TopN::Count(10), TopN::Count(100), TopN::Count(1000), TopN::Count(10000)];
        let c = curves(&data.gt, &props, &[0.5, 0.7, 0.9], &tops)?;
        fs::write(path, curves_to_csv(&c)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.config()?;
    let data = load_dataset(&a.data)?;
    let samples: Vec<(RgbImage, Vec<BBox>)> = data
        .ids
        .iter()
        .zip(data.images)
        .map(|(id, img)| {
            let boxes = data.gt.images[id].iter().filter(|g| !g.ignore).map(|g| g.bbox).collect();
            (img, boxes)
        })
        .collect();
    let set = harvest_training_data(&samples, &cfg)?;
    eprintln!(
        "harvested {} text and {} non-text nodes",
        set.count(textprop_core::boost::Label::Text),
        set.count(textprop_core::boost::Label::NonText)
    );
    let (model, reports) = train_traced(&set, a.rounds)?;
    if let Some(last) = reports.last() {
        eprintln!("final weighted training error {:.4}", last.weighted_error);
    }
    model.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}
