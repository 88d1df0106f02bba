//! Desk-scale verification rig. Generated scenes and noisy synthetic
//! teachers stand in for a dataset and trained detectors, so the fusion and
//! augmentation logic can be checked statistically. Nothing here measures
//! real detector accuracy.

mod scene;
mod teacher;

pub use scene::{expected_points, gen_labels, gen_points, gen_scene, ClassPrior, ScenePrior};
pub use teacher::{gen_teacher_output, CategoryNoise, TeacherNoiseModel};

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{pieaug_frames, FrameInput, PieAugSummary};
use crate::classes::{Category, ClassTable};
use crate::ema::{cema_update, Checkpoint, Tensor};
use crate::error::{Error, Result};
use crate::fusion::{confident, evaluate, fuse_batch, pooled_curve, precision_at_recall, ClassThresholds, TeacherOutput};
use crate::geometry::Detection;
use crate::io::{PipelineConfig, PointRange};
use crate::rng;

pub const SYNTHETIC_NOTE: &str = "Synthetic harness run: generated scenes and simulated noisy teachers. \
The numbers check pipeline logic and do not measure any trained detector.";

const TRIAL_STREAM: u64 = 0x5452_4941;
const LOOP_STREAM: u64 = 0x4c4f_4f50;

pub(crate) fn normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, std).expect("std validated").sample(rng)
}

pub(crate) fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive rate").sample(rng) as usize
}

/// What the generators need to know about the world.
#[derive(Debug, Clone, Copy)]
pub struct SimContext<'a> {
    pub prior: &'a ScenePrior,
    pub range: &'a PointRange,
    pub table: &'a ClassTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessSettings {
    pub prior: ScenePrior,
    /// Noise of a teacher on its own category.
    pub specialist: CategoryNoise,
    /// Noise of a teacher outside its category, and of the generalist.
    pub generalist: CategoryNoise,
    pub trials: usize,
    pub frames_per_trial: usize,
    pub epochs: usize,
    pub frames_per_epoch: usize,
    /// EMA momentum of the teacher-skill blend in the mutual loop.
    pub skill_alpha: f64,
}

impl Default for HarnessSettings {
    fn default() -> Self {
        HarnessSettings {
            prior: ScenePrior::default(),
            specialist: CategoryNoise::specialist(),
            generalist: CategoryNoise::generalist(),
            trials: 100,
            frames_per_trial: 200,
            epochs: 10,
            frames_per_epoch: 20,
            skill_alpha: 0.8,
        }
    }
}

impl HarnessSettings {
    pub fn validate(&self, table: &ClassTable, range: &PointRange) -> Result<()> {
        self.prior.validate()?;
        self.prior.validate_range(range)?;
        for c in &self.prior.classes {
            if table.by_id(c.class_id).is_none() {
                return Err(Error::Config(format!("scene prior names class id {} missing from the class table", c.class_id)));
            }
        }
        self.specialist.validate()?;
        self.generalist.validate()?;
        if !(0.0..=1.0).contains(&self.skill_alpha) {
            return Err(Error::Config(format!("harness.skill_alpha {} outside [0, 1]", self.skill_alpha)));
        }
        Ok(())
    }
}

/// One synthetic teacher's outputs for a frame, one per category it covers.
fn teacher_frame(
    labels: &[Detection],
    ctx: &SimContext,
    model: &TeacherNoiseModel,
    categories: &[Category],
    teacher_id: u32,
    seed: u64,
) -> Vec<TeacherOutput> {
    categories
        .iter()
        .map(|&c| gen_teacher_output(labels, ctx, model, c, teacher_id, seed))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleComparison {
    pub teacher: String,
    pub matched_recall: f64,
    pub fused_precision: f64,
    pub single_precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub comparisons: Vec<SingleComparison>,
    /// Fused precision is strictly higher against every single teacher.
    pub fused_wins: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionReport {
    pub note: &'static str,
    pub seed: u64,
    pub frames_per_trial: usize,
    pub wins: usize,
    pub trials: Vec<TrialOutcome>,
}

/// Compares fused specialists against every single teacher on one batch of
/// frames. The single teachers are each specialist run on all categories,
/// plus a generalist. All sets go through the same NMS and thresholds;
/// comparison is at the lower of the two maximum recalls.
pub fn fusion_trial(cfg: &PipelineConfig, trial: usize) -> Result<TrialOutcome> {
    let h = &cfg.harness;
    let ctx = SimContext { prior: &h.prior, range: &cfg.range, table: &cfg.classes };
    let seed = rng::derive_seed(cfg.seed, &[TRIAL_STREAM, trial as u64]);
    let policy = cfg.threshold_policy()?;
    let thresholds = cfg.eval_thresholds()?;

    let specialists: Vec<TeacherNoiseModel> =
        Category::ALL.iter().map(|&c| TeacherNoiseModel::specialist(c, h.specialist, h.generalist)).collect();
    let generalist = TeacherNoiseModel::uniform(h.generalist);

    // Per frame: ground truth, fused-teacher outputs, and single-teacher outputs.
    type Frame = (Vec<Detection>, Vec<TeacherOutput>, Vec<Vec<TeacherOutput>>);
    let frames: Vec<Frame> = (0..h.frames_per_trial)
        .into_par_iter()
        .map(|f| {
            let fs = rng::derive_seed(seed, &[f as u64]);
            let labels = gen_labels(&h.prior, &cfg.range, fs);
            let fused: Vec<TeacherOutput> = Category::ALL
                .iter()
                .enumerate()
                .flat_map(|(k, &c)| teacher_frame(&labels, &ctx, &specialists[k], &[c], k as u32, fs))
                .collect();
            let mut singles: Vec<Vec<TeacherOutput>> = specialists
                .iter()
                .enumerate()
                .map(|(k, m)| teacher_frame(&labels, &ctx, m, &Category::ALL, k as u32, fs))
                .collect();
            singles.push(teacher_frame(&labels, &ctx, &generalist, &Category::ALL, 3, fs));
            (labels, fused, singles)
        })
        .collect();

    let gts: Vec<Vec<Detection>> = frames.iter().map(|f| f.0.clone()).collect();
    let curve_of = |outputs: Vec<Vec<TeacherOutput>>| -> Result<Vec<(f64, f64)>> {
        let (labels, _) = fuse_batch(&outputs, &policy, cfg.thresholds.min_samples, &cfg.nms, &cfg.classes)?;
        let preds: Vec<Vec<Detection>> = labels.iter().map(|l| confident(l)).collect();
        pooled_curve(&preds, &gts, &thresholds)
    };
    let fused_curve = curve_of(frames.iter().map(|f| f.1.clone()).collect())?;
    let max_recall = |c: &[(f64, f64)]| c.last().map_or(0.0, |p| p.1);

    let mut comparisons = Vec::new();
    let names = ["vehicle-specialist", "pedestrian-specialist", "cyclist-specialist", "generalist"];
    for (k, name) in names.iter().enumerate() {
        let single_curve = curve_of(frames.iter().map(|f| f.2[k].clone()).collect())?;
        let r = max_recall(&fused_curve).min(max_recall(&single_curve));
        comparisons.push(SingleComparison {
            teacher: (*name).to_owned(),
            matched_recall: r,
            fused_precision: precision_at_recall(&fused_curve, r).unwrap_or(0.0),
            single_precision: precision_at_recall(&single_curve, r).unwrap_or(0.0),
        });
    }
    let fused_wins = comparisons.iter().all(|c| c.matched_recall > 0.0 && c.fused_precision > c.single_precision);
    Ok(TrialOutcome { trial, comparisons, fused_wins })
}

pub fn fusion_trials(cfg: &PipelineConfig) -> Result<FusionReport> {
    let trials = (0..cfg.harness.trials).map(|t| fusion_trial(cfg, t)).collect::<Result<Vec<_>>>()?;
    Ok(FusionReport {
        note: SYNTHETIC_NOTE,
        seed: cfg.seed,
        frames_per_trial: cfg.harness.frames_per_trial,
        wins: trials.iter().filter(|t| t.fused_wins).count(),
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    pub num_gt: usize,
    pub num_pred: usize,
    pub precision: f64,
    pub recall: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub student_skill: f64,
    pub teacher_skill: BTreeMap<Category, f64>,
    pub per_class: BTreeMap<String, ClassSummary>,
    pub pseudo_labels: usize,
    pub ambiguous: usize,
    pub thresholds: BTreeMap<String, ClassThresholds>,
    pub semidb_refreshed: bool,
    pub pieaug: Option<PieAugSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopReport {
    pub note: &'static str,
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
}

/// Student skill after `epoch` epochs: rises from 0.5 toward 1.
fn student_skill(epoch: usize) -> f64 {
    1.0 - 0.5 * 0.7f64.powi(epoch as i32 + 1)
}

fn skill_checkpoint(skill: f64, anchor: Option<(&str, usize)>) -> Checkpoint {
    let mut c = Checkpoint::new();
    c.insert("skill".into(), Tensor::scalar(skill as f32)).expect("fresh checkpoint");
    if let Some((name, rows)) = anchor {
        c.insert(name.into(), Tensor::new(vec![rows as u32], vec![skill as f32; rows]).expect("consistent shape"))
            .expect("fresh checkpoint");
    }
    c
}

/// The mutual-learning loop on synthetic data. Per epoch: generate scenes,
/// run the category teachers (noise shrinking as their skill grows), fuse,
/// evaluate against ground truth, refresh the semi-DB from the pseudo-labels
/// every `semidb_refresh_epochs` epochs, then blend each teacher's skill
/// checkpoint toward the student's.
pub fn run_mutual_loop(cfg: &PipelineConfig, epochs: usize) -> Result<LoopReport> {
    let h = &cfg.harness;
    let ctx = SimContext { prior: &h.prior, range: &cfg.range, table: &cfg.classes };
    let policy = cfg.threshold_policy()?;
    let thresholds = cfg.eval_thresholds()?;
    let quotas = cfg.quota_ids()?;
    let layout = cfg.layout()?;
    let names = cfg.classes.names_by_id();
    let anchor_name = cfg.ema.anchor_patterns.first().map(|p| format!("{p}.weight"));
    let beta = 2;

    let mut teachers: Vec<Checkpoint> = Category::ALL
        .iter()
        .map(|&c| {
            let (lo, hi) = layout.class_range(c);
            let rows = (hi + 1 - lo) as usize * beta;
            skill_checkpoint(0.5, anchor_name.as_deref().map(|n| (n, rows)))
        })
        .collect();

    let mut out = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let eseed = rng::derive_seed(cfg.seed, &[LOOP_STREAM, epoch as u64]);
        let skills: Vec<f64> = teachers.iter().map(|t| t.get("skill").expect("skill tensor").data[0] as f64).collect();
        let models: Vec<TeacherNoiseModel> = Category::ALL
            .iter()
            .enumerate()
            .map(|(k, &c)| TeacherNoiseModel::specialist(c, h.specialist.scaled(2.0 - skills[k]), h.generalist))
            .collect();

        let frames: Vec<(crate::io::FrameBundle, Vec<TeacherOutput>)> = (0..h.frames_per_epoch)
            .into_par_iter()
            .map(|f| {
                let fs = rng::derive_seed(eseed, &[f as u64]);
                let scene = gen_scene(&h.prior, &cfg.range, &format!("{epoch:03}_{f:04}"), fs);
                let labels = scene.labels.as_deref().unwrap_or_default();
                let outputs = Category::ALL
                    .iter()
                    .enumerate()
                    .flat_map(|(k, &c)| teacher_frame(labels, &ctx, &models[k], &[c], k as u32, fs))
                    .collect();
                (scene, outputs)
            })
            .collect();

        let outputs: Vec<Vec<TeacherOutput>> = frames.iter().map(|f| f.1.clone()).collect();
        let (labels, used) = fuse_batch(&outputs, &policy, cfg.thresholds.min_samples, &cfg.nms, &cfg.classes)?;
        let preds: Vec<Vec<Detection>> = labels.iter().map(|l| confident(l)).collect();
        let gts: Vec<Vec<Detection>> = frames.iter().map(|f| f.0.labels.clone().unwrap_or_default()).collect();
        let metrics = evaluate(&preds, &gts, &thresholds)?;

        let refresh = epoch % cfg.semidb_refresh_epochs == 0;
        let pieaug = if refresh {
            let inputs: Vec<FrameInput> = frames
                .iter()
                .zip(&preds)
                .map(|(f, p)| FrameInput { cloud: f.0.cloud.clone(), labels: p.clone(), labeled: false })
                .collect();
            let aug = pieaug_frames(&inputs, cfg.deg, &quotas, cfg.inject_labeled, rng::derive_seed(eseed, &[u64::MAX]))?;
            Some(aug.summary())
        } else {
            None
        };

        let student_skill = student_skill(epoch);
        let student = skill_checkpoint(student_skill, anchor_name.as_deref().map(|n| (n, layout.num_classes() as usize * beta)));
        teachers = Category::ALL
            .iter()
            .zip(&teachers)
            .map(|(&c, t)| cema_update(t, &student, h.skill_alpha, &layout, c, &cfg.ema.anchor_patterns))
            .collect::<Result<_>>()?;

        out.push(EpochMetrics {
            epoch,
            student_skill,
            teacher_skill: Category::ALL.iter().zip(&skills).map(|(&c, &s)| (c, s)).collect(),
            per_class: metrics
                .iter()
                .map(|(id, m)| {
                    let s = ClassSummary { num_gt: m.num_gt, num_pred: m.num_pred, precision: m.precision, recall: m.recall, ap: m.ap };
                    (names.get(id).cloned().unwrap_or_else(|| id.to_string()), s)
                })
                .collect(),
            pseudo_labels: preds.iter().map(Vec::len).sum(),
            ambiguous: labels.iter().flatten().filter(|l| l.ambiguous).count(),
            thresholds: cfg
                .classes
                .entries()
                .iter()
                .map(|e| (e.name.clone(), *used.for_class(e.id)))
                .collect(),
            semidb_refreshed: refresh,
            pieaug,
        });
    }
    Ok(LoopReport { note: SYNTHETIC_NOTE, seed: cfg.seed, epochs: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.harness.frames_per_epoch = 4;
        cfg.harness.frames_per_trial = 20;
        cfg
    }

    #[test]
    fn zero_epochs_is_empty() {
        assert!(run_mutual_loop(&small(), 0).unwrap().epochs.is_empty());
    }

    #[test]
    fn loop_is_reproducible_and_refreshes_on_cadence() {
        let cfg = small();
        let a = run_mutual_loop(&cfg, 6).unwrap();
        assert_eq!(a, run_mutual_loop(&cfg, 6).unwrap());
        let refreshed: Vec<usize> = a.epochs.iter().filter(|e| e.semidb_refreshed).map(|e| e.epoch).collect();
        assert_eq!(refreshed, vec![0, 5]);
        assert!(a.epochs.iter().all(|e| e.pieaug.is_some() == e.semidb_refreshed));
    }

    #[test]
    fn teacher_skill_follows_the_ema_recurrence() {
        let cfg = small();
        let r = run_mutual_loop(&cfg, 4).unwrap();
        let a = cfg.harness.skill_alpha;
        for w in r.epochs.windows(2) {
            for c in Category::ALL {
                let want = a * w[0].teacher_skill[&c] + (1.0 - a) * w[0].student_skill;
                assert!((w[1].teacher_skill[&c] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ground_truth_scores_perfectly_on_generated_scenes() {
        let cfg = PipelineConfig::default();
        let thresholds = cfg.eval_thresholds().unwrap();
        for seed in 0..30 {
            let labels = gen_labels(&cfg.harness.prior, &cfg.range, seed);
            let g = vec![labels];
            for (id, m) in evaluate(&g, &g, &thresholds).unwrap() {
                if m.num_gt > 0 {
                    assert_eq!(m.ap, 1.0, "class {id} seed {seed}");
                }
            }
        }
    }

    #[test]
    fn trial_is_deterministic() {
        let cfg = small();
        assert_eq!(fusion_trial(&cfg, 3).unwrap(), fusion_trial(&cfg, 3).unwrap());
    }
}
