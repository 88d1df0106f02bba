//! Command-line front end. Every subcommand loads inputs, calls the library,
//! and writes outputs atomically; the effective config is echoed as
//! `config.toml` into each output directory.
//!
//! Dataset layout: `points/<frame>.bin`, `labels/<frame>.txt`, and
//! `dets/teacher_<k>/<frame>.json` for teacher detections.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::augment::{build_bank, inject_frames, partition_pies, pieaug_frames, FrameInput, Injection, PieAugSummary, SemiDb};
use crate::classes::Category;
use crate::ema::{cema_update, Checkpoint};
use crate::error::{Error, Result};
use crate::fusion::{calibrate_dynamic_thresholds, evaluate, fuse_batch, merge_candidates};
use crate::geometry::Detection;
use crate::harness::{fusion_trials, run_mutual_loop};
use crate::io::{
    create_dir, crop_to_range, file_stem, list_files, read_cloud, read_labels, write_atomic, write_cloud, write_labels,
    load_teacher_dets, pseudo_label_set, DetectionSet, PipelineConfig,
};

#[derive(Debug, Parser)]
#[command(name = "pieforge", version, about = "Pie-based augmentation and multi-teacher pseudo-label fusion for LiDAR detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Pipeline config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pie sector width override, in degrees.
    #[arg(long, global = true)]
    deg: Option<f64>,
    /// Worker thread override; 0 picks automatically.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
struct DataArgs {
    /// Dataset directory with `points/` and optionally `labels/`.
    #[arg(long)]
    data: PathBuf,
    /// Detection sets (`<frame>.json`) used as labels for frames without a
    /// label file.
    #[arg(long)]
    pseudo: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compensate, bank and inject: the whole pie augmentation.
    Pieaug {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse per-category teacher detections into pseudo-labels.
    Fuse {
        #[command(flatten)]
        common: Common,
        /// Directory of `teacher_<k>/` detection-set folders.
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute dynamic thresholds from teacher detections.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Blend a student checkpoint into a category teacher.
    EmaBlend {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        student: PathBuf,
        /// vehicle, pedestrian or cyclist.
        #[arg(long)]
        category: Category,
        /// Momentum override.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a semi-DB from labeled or pseudo-labeled frames.
    DbBuild {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paste semi-DB samples into frames.
    DbInject {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the synthetic harness.
    Sim {
        #[command(flatten)]
        common: Common,
        /// Epoch count override for the mutual-learning loop.
        #[arg(long)]
        epochs: Option<usize>,
        /// Also run the fusion-advantage trials.
        #[arg(long)]
        trials: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score detection sets against ground-truth labels.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory of `<frame>.json` detection sets.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of `<frame>.txt` labels.
        #[arg(long)]
        gt: PathBuf,
        /// Count ambiguous pseudo-labels as predictions.
        #[arg(long)]
        include_ambiguous: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-pie density histograms and per-class counts of a dataset.
    Stats {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Pieaug { common, .. }
            | Command::Fuse { common, .. }
            | Command::Calibrate { common, .. }
            | Command::EmaBlend { common, .. }
            | Command::DbBuild { common, .. }
            | Command::DbInject { common, .. }
            | Command::Sim { common, .. }
            | Command::Eval { common, .. }
            | Command::Stats { common, .. } => common,
        }
    }
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code: 0 on success, 1 for usage and validation errors, 2 for
/// I/O errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Config from file (or defaults) with command-line overrides applied.
pub fn resolve_config(path: Option<&Path>, seed: Option<u64>, deg: Option<f64>, threads: Option<usize>) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = deg {
        cfg.deg = d;
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(command: Command) -> Result<()> {
    let c = command.common();
    let cfg = resolve_config(c.config.as_deref(), c.seed, c.deg, c.threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| dispatch(command, &cfg))
}

fn dispatch(command: Command, cfg: &PipelineConfig) -> Result<()> {
    match command {
        Command::Pieaug { data, out, .. } => {
            let frames = load_frames(&data.data, data.pseudo.as_deref(), cfg)?;
            let aug = pieaug_frames(&frames, cfg.deg, &cfg.quota_ids()?, cfg.inject_labeled, cfg.seed)?;
            prepare_out(&out, cfg)?;
            aug.db.write(&out.join("semidb.sdb"))?;
            write_frames(&aug.frames, cfg, &out)?;
            let report = PieAugReport {
                summary: aug.summary(),
                frames: frame_ids(&frames),
                compensation: aug.compensation,
                injection: aug.frames.iter().map(|f| f.stats.clone()).collect(),
            };
            write_json(&out.join("pieaug_stats.json"), &report)?;
            info!("pieaug: {} frames, {} semi-DB entries", frames.len(), aug.db.len());
            Ok(())
        }
        Command::DbBuild { data, out, .. } => {
            let frames = load_frames(&data.data, data.pseudo.as_deref(), cfg)?;
            prepare_out(&out, cfg)?;
            let (db, comp) = build_bank(&frames, cfg.deg)?;
            db.write(&out.join("semidb.sdb"))?;
            write_json(&out.join("compensation.json"), &comp)
        }
        Command::DbInject { data, db, out, .. } => {
            let frames = load_frames(&data.data, data.pseudo.as_deref(), cfg)?;
            let db = SemiDb::read(&db)?;
            let injected = inject_frames(&frames, &db, &cfg.quota_ids()?, cfg.inject_labeled, cfg.seed);
            prepare_out(&out, cfg)?;
            write_frames(&injected, cfg, &out)?;
            let stats: Vec<_> = injected.iter().map(|f| f.stats.clone()).collect();
            write_json(&out.join("inject_stats.json"), &stats)
        }
        Command::Fuse { dets, out, .. } => {
            let (ids, frames) = load_teacher_dets(&dets)?;
            let policy = cfg.threshold_policy()?;
            let (labels, used) = fuse_batch(&frames, &policy, cfg.thresholds.min_samples, &cfg.nms, &cfg.classes)?;
            prepare_out(&out, cfg)?;
            for (id, l) in ids.iter().zip(&labels) {
                pseudo_label_set(id, l).write(&out.join(format!("{id}.json")))?;
            }
            write_json(&out.join("thresholds.json"), &used)
        }
        Command::Calibrate { dets, out, .. } => {
            let (_, frames) = load_teacher_dets(&dets)?;
            let merged: Vec<Detection> = frames
                .iter()
                .map(|f| merge_candidates(f, &cfg.nms, &cfg.classes))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect();
            let policy = calibrate_dynamic_thresholds(&merged, &cfg.threshold_policy()?, cfg.thresholds.min_samples);
            prepare_out(&out, cfg)?;
            write_json(&out.join("thresholds.json"), &policy)
        }
        Command::EmaBlend { teacher, student, category, alpha, out, .. } => {
            let alpha = alpha.unwrap_or(cfg.ema.alpha);
            let t = Checkpoint::read(&teacher)?;
            let s = Checkpoint::read(&student)?;
            let blended = cema_update(&t, &s, alpha, &cfg.layout()?, category, &cfg.ema.anchor_patterns)?;
            prepare_out(&out, cfg)?;
            blended.write(&out.join("teacher.ckp"))
        }
        Command::Sim { epochs, trials, out, .. } => {
            let report = run_mutual_loop(cfg, epochs.unwrap_or(cfg.harness.epochs))?;
            prepare_out(&out, cfg)?;
            write_json(&out.join("metrics.json"), &report)?;
            if trials {
                let t = fusion_trials(cfg)?;
                println!("fusion trials: fused better in {}/{}", t.wins, t.trials.len());
                write_json(&out.join("trials.json"), &t)?;
            }
            Ok(())
        }
        Command::Eval { pred, gt, include_ambiguous, out, .. } => {
            let (preds, gts) = load_eval(&pred, &gt, include_ambiguous, cfg)?;
            let metrics = evaluate(&preds, &gts, &cfg.eval_thresholds()?)?;
            let names = cfg.classes.names_by_id();
            let named: BTreeMap<&str, _> = metrics.iter().map(|(id, m)| (names[id].as_str(), m)).collect();
            for (name, m) in &named {
                println!("{name:<12} AP40 {:.4}  precision {:.4}  recall {:.4}  ({} gt, {} pred)", m.ap, m.precision, m.recall, m.num_gt, m.num_pred);
            }
            prepare_out(&out, cfg)?;
            write_json(&out.join("metrics.json"), &named)
        }
        Command::Stats { data, .. } => {
            let frames = load_frames(&data.data, data.pseudo.as_deref(), cfg)?;
            print!("{}", dataset_stats(&frames, cfg)?);
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct PieAugReport {
    summary: PieAugSummary,
    frames: Vec<String>,
    compensation: Vec<crate::augment::CompensationStats>,
    injection: Vec<crate::augment::InjectStats>,
}

fn frame_ids(frames: &[FrameInput]) -> Vec<String> {
    frames.iter().map(|f| f.cloud.frame_id.clone()).collect()
}

fn prepare_out(out: &Path, cfg: &PipelineConfig) -> Result<()> {
    create_dir(out)?;
    write_atomic(&out.join("config.toml"), cfg.to_toml().as_bytes())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

/// Frames under `data/points`, cropped to the configured range. Labels come
/// from `data/labels/<frame>.txt` (ground truth, labeled) or else from the
/// confident records of `pseudo/<frame>.json`.
pub fn load_frames(data: &Path, pseudo: Option<&Path>, cfg: &PipelineConfig) -> Result<Vec<FrameInput>> {
    let clouds = list_files(&data.join("points"), "bin")?;
    clouds
        .par_iter()
        .map(|path| {
            let (cloud, _) = read_cloud(path)?;
            let id = file_stem(path);
            let label_path = data.join("labels").join(format!("{id}.txt"));
            let (labels, labeled) = if label_path.is_file() {
                (read_labels(&label_path, &cfg.classes, &cfg.labels)?.0, true)
            } else if let Some(dir) = pseudo.map(|p| p.join(format!("{id}.json"))).filter(|p| p.is_file()) {
                let set = DetectionSet::read(&dir)?;
                let dets = set
                    .detections
                    .iter()
                    .filter(|r| !r.ambiguous)
                    .map(|r| r.to_detection())
                    .collect::<Result<Vec<_>>>()?;
                (dets, false)
            } else {
                (Vec::new(), false)
            };
            let (cloud, labels) = crop_to_range(&cloud, &labels, &cfg.range);
            Ok(FrameInput { cloud, labels, labeled })
        })
        .collect()
}

fn write_frames(frames: &[Injection], cfg: &PipelineConfig, out: &Path) -> Result<()> {
    create_dir(&out.join("points"))?;
    create_dir(&out.join("labels"))?;
    frames.par_iter().try_for_each(|inj| {
        let id = &inj.cloud.frame_id;
        write_cloud(&out.join("points").join(format!("{id}.bin")), &inj.cloud)?;
        write_labels(&out.join("labels").join(format!("{id}.txt")), &inj.labels, &cfg.classes, &cfg.labels)
    })
}

/// Detections per frame.
type Batch = Vec<Vec<Detection>>;

fn load_eval(pred: &Path, gt: &Path, include_ambiguous: bool, cfg: &PipelineConfig) -> Result<(Batch, Batch)> {
    let gt_files = list_files(gt, "txt")?;
    let mut preds = Vec::with_capacity(gt_files.len());
    let mut gts = Vec::with_capacity(gt_files.len());
    for path in gt_files {
        let id = file_stem(&path);
        gts.push(read_labels(&path, &cfg.classes, &cfg.labels)?.0);
        let p = pred.join(format!("{id}.json"));
        let dets = if p.is_file() {
            let set = DetectionSet::read(&p)?;
            set.detections
                .iter()
                .filter(|r| include_ambiguous || !r.ambiguous)
                .map(|r| r.to_detection())
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        preds.push(dets);
    }
    Ok((preds, gts))
}

/// Text report: per-class object counts, then per pie the number of objects,
/// their points, and a bar of mean points per object.
pub fn dataset_stats(frames: &[FrameInput], cfg: &PipelineConfig) -> Result<String> {
    let names = cfg.classes.names_by_id();
    let mut class_counts: BTreeMap<u32, usize> = BTreeMap::new();
    let mut pies: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut points = 0;
    for f in frames {
        points += f.cloud.len();
        for d in &f.labels {
            *class_counts.entry(d.class_id).or_default() += 1;
        }
        for pie in partition_pies(&f.labels, &f.cloud, cfg.deg)? {
            let e = pies.entry(pie.pie_id).or_default();
            e.0 += pie.objects.len();
            e.1 += pie.point_total();
        }
    }
    let mut s = String::new();
    let _ = writeln!(s, "frames {}  points {}", frames.len(), points);
    let _ = writeln!(s, "class counts:");
    for (id, n) in &class_counts {
        let name = names.get(id).map_or("?", String::as_str);
        let _ = writeln!(s, "  {name:<12} {n}");
    }
    let _ = writeln!(s, "pie density (deg {}):", cfg.deg);
    let max = pies.values().map(|&(o, p)| p as f64 / o as f64).fold(0.0, f64::max);
    for (id, &(objects, pts)) in &pies {
        let mean = pts as f64 / objects as f64;
        let bar = if max > 0.0 { (40.0 * mean / max).round() as usize } else { 0 };
        let _ = writeln!(s, "  pie {id:>3}  objects {objects:>6}  points {pts:>8}  mean {mean:>9.1}  {}", "#".repeat(bar));
    }
    Ok(s)
}
