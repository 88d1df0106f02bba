//! The pipeline config: one TOML file holding every module default.
//! Unknown keys are rejected so typos surface as errors.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LabelFrame, PointRange};
use crate::augment::{sector_count, WeakAugConfig, DEFAULT_DEG};
use crate::classes::{Category, ClassTable};
use crate::ema::CategoryLayout;
use crate::error::{Error, Location, Result};
use crate::fusion::{ClassThresholds, ThresholdMode, ThresholdPolicy};
use crate::geometry::NmsConfig;
use crate::harness::HarnessSettings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdSettings {
    pub mode: ThresholdMode,
    /// Used for classes without an entry in `classes`, and as the
    /// calibration fallback.
    pub default: ClassThresholds,
    /// Overrides keyed by class name.
    pub classes: BTreeMap<String, ClassThresholds>,
    /// Minimum pooled detections per class before dynamic calibration
    /// replaces the fixed values.
    pub min_samples: usize,
}

impl Default for ThresholdSettings {
    fn default() -> Self {
        ThresholdSettings {
            mode: ThresholdMode::Fixed,
            default: ClassThresholds::default(),
            classes: BTreeMap::new(),
            min_samples: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmaSettings {
    pub alpha: f64,
    /// Tensor names containing any of these substrings are anchor-head
    /// tensors and get sliced per category before blending.
    pub anchor_patterns: Vec<String>,
}

impl Default for EmaSettings {
    fn default() -> Self {
        EmaSettings {
            alpha: 0.999,
            anchor_patterns: vec!["dense_head.conv_cls".into(), "dense_head.conv_box".into(), "dense_head.conv_dir_cls".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Match thresholds keyed by class name; missing classes use 0.7 for
    /// vehicles and 0.5 otherwise.
    pub iou_thresholds: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; 0 lets the pool pick.
    pub threads: usize,
    /// Pie sector width in degrees.
    pub deg: f64,
    pub classes: ClassTable,
    pub range: PointRange,
    pub nms: NmsConfig,
    pub thresholds: ThresholdSettings,
    /// Semi-DB samples injected per frame for classes not in `quotas`.
    pub default_quota: usize,
    /// Per-class overrides keyed by class name.
    pub quotas: BTreeMap<String, usize>,
    pub inject_labeled: bool,
    pub semidb_refresh_epochs: usize,
    pub weak_aug: WeakAugConfig,
    pub ema: EmaSettings,
    pub eval: EvalSettings,
    pub labels: LabelFrame,
    pub harness: HarnessSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            threads: 0,
            deg: DEFAULT_DEG,
            classes: ClassTable::kitti(),
            range: PointRange::default(),
            nms: NmsConfig::default(),
            thresholds: ThresholdSettings::default(),
            default_quota: 10,
            quotas: BTreeMap::new(),
            inject_labeled: false,
            semidb_refresh_epochs: 5,
            weak_aug: WeakAugConfig::default(),
            ema: EmaSettings::default(),
            eval: EvalSettings::default(),
            labels: LabelFrame::default(),
            harness: HarnessSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| {
            let location = match e.span() {
                Some(span) => Location::Line(text[..span.start].matches('\n').count() + 1),
                None => Location::Whole,
            };
            Error::format(path, location, e.message().to_owned())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::from_toml_str(&text, path)
    }

    /// The effective config as TOML, as echoed into output directories.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        sector_count(self.deg)?;
        self.weak_aug.validate()?;
        if !(0.0..=1.0).contains(&self.nms.threshold) {
            return Err(Error::Config(format!("nms.threshold {} outside [0, 1]", self.nms.threshold)));
        }
        if !(0.0..=1.0).contains(&self.ema.alpha) {
            return Err(Error::Config(format!("ema.alpha {} outside [0, 1]", self.ema.alpha)));
        }
        if self.semidb_refresh_epochs == 0 {
            return Err(Error::Config("semidb_refresh_epochs must be at least 1".into()));
        }
        self.threshold_policy()?;
        self.quota_ids()?;
        self.eval_thresholds()?;
        self.harness.validate(&self.classes, &self.range)?;
        Ok(())
    }

    fn class_id(&self, name: &str, section: &str) -> Result<u32> {
        self.classes
            .by_name(name)
            .map(|c| c.id)
            .ok_or_else(|| Error::Config(format!("{section}: unknown class `{name}`")))
    }

    pub fn quota_ids(&self) -> Result<BTreeMap<u32, usize>> {
        let mut out: BTreeMap<u32, usize> = self.classes.ids().into_iter().map(|id| (id, self.default_quota)).collect();
        for (name, &q) in &self.quotas {
            out.insert(self.class_id(name, "quotas")?, q);
        }
        Ok(out)
    }

    /// The fixed policy from the config; dynamic mode starts from it.
    pub fn threshold_policy(&self) -> Result<ThresholdPolicy> {
        let mut per_class = BTreeMap::new();
        for (name, t) in &self.thresholds.classes {
            per_class.insert(self.class_id(name, "thresholds")?, *t);
        }
        ThresholdPolicy::new(self.thresholds.mode, self.thresholds.default, per_class)
    }

    /// Evaluation IoU threshold for every class in the table.
    pub fn eval_thresholds(&self) -> Result<BTreeMap<u32, f64>> {
        for (name, &t) in &self.eval.iou_thresholds {
            self.class_id(name, "eval.iou_thresholds")?;
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("eval.iou_thresholds.{name} = {t} outside [0, 1]")));
            }
        }
        Ok(self
            .classes
            .entries()
            .iter()
            .map(|c| {
                let fallback = if c.category == Category::Vehicle { 0.7 } else { 0.5 };
                (c.id, self.eval.iou_thresholds.get(&c.name).copied().unwrap_or(fallback))
            })
            .collect())
    }

    pub fn layout(&self) -> Result<CategoryLayout> {
        CategoryLayout::from_table(&self.classes)
    }
}
