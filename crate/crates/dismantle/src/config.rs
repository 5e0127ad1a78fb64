//! Run configuration. Every field has a default, so `{}` is a complete config.
//! Seeds inside sections are offsets added to the run seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dismantle_core::calib::{WorkVolume, MAX_MISSING_FRACTION};
use dismantle_core::detect::DetectParams;
use dismantle_core::fcn::TrainingConfig;
use dismantle_core::synth::{
    training_ranges, CaptureParams, NegativeMix, SceneRanges, TegLayout, WorldParams,
};

use crate::error::{Error, Result};
use crate::io::read_json;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// `world.seed` is replaced by the run seed.
    pub world: WorldParams,
    pub detect: DetectParams,
    pub training: TrainingRecipe,
    pub dataset: DatasetConfig,
    pub teg: TegConfig,
    pub calib: CalibConfig,
    pub unit: UnitConfig,
    /// Where `eval-teg` and `simulate-unit` look for weights; defaults to `<out>/models`.
    pub models_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            world: WorldParams::default(),
            detect: DetectParams::default(),
            training: TrainingRecipe::default(),
            dataset: DatasetConfig::default(),
            teg: TegConfig::default(),
            calib: CalibConfig::default(),
            unit: UnitConfig::default(),
            models_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Applies the run seed where sections depend on it and validates.
    pub fn resolved(mut self, seed: Option<u64>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.world.seed = self.seed;
        self.detect
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.training
            .recall
            .validate()
            .map_err(|e| Error::Config(format!("training.recall: {e}")))?;
        self.training
            .precision
            .validate()
            .map_err(|e| Error::Config(format!("training.precision: {e}")))?;
        if self.training.ensemble_size == 0 {
            return Err(Error::Config(
                "training.ensemble_size must be at least 1".into(),
            ));
        }
        self.calib
            .volume
            .counts()
            .map_err(|e| Error::Config(format!("calib.volume: {e}")))?;
        if !(0.0..1.0).contains(&self.dataset.held_out_fraction) {
            return Err(Error::Config(
                "dataset.held_out_fraction must lie in [0, 1)".into(),
            ));
        }
        if self.unit.tile < 32 {
            return Err(Error::Config("unit.tile must be at least 32 px".into()));
        }
        Ok(self)
    }

    /// Training config with its seed offset applied.
    pub fn seeded(&self, c: &TrainingConfig) -> TrainingConfig {
        TrainingConfig {
            seed: self.seed.wrapping_add(c.seed),
            ..c.clone()
        }
    }
}

/// Patch set used to train one model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchSet {
    pub positives: usize,
    pub negatives: usize,
    pub mix: NegativeMix,
    pub seed: u64,
}

impl Default for PatchSet {
    fn default() -> Self {
        Self {
            positives: 500,
            negatives: 500,
            mix: NegativeMix::BROAD,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingRecipe {
    pub recall: TrainingConfig,
    pub recall_data: PatchSet,
    pub precision: TrainingConfig,
    pub precision_data: PatchSet,
    pub ensemble_size: usize,
    /// Screw and degradation draws for the training patches.
    pub ranges: SceneRanges,
}

impl Default for TrainingRecipe {
    fn default() -> Self {
        let base = TrainingConfig {
            batch_size: 32,
            ..TrainingConfig::default()
        };
        Self {
            recall: TrainingConfig {
                positive_weight: 2.0,
                seed: 11,
                ..base.clone()
            },
            recall_data: PatchSet::default(),
            precision: TrainingConfig {
                positive_weight: 1.0,
                seed: 21,
                ..base
            },
            precision_data: PatchSet {
                positives: 450,
                negatives: 650,
                mix: NegativeMix::CONFUSER_RICH,
                seed: 2,
            },
            ensemble_size: 3,
            ranges: training_ranges(),
        }
    }
}

/// `synth-dataset` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub patches: PatchSet,
    /// Patches in stage-2 form (gamma-normalized) instead of plain grayscale.
    pub precision_input: bool,
    pub held_out_fraction: f64,
    pub ranges: SceneRanges,
    /// TEG scene bundles written next to the patches.
    pub scenes: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            patches: PatchSet::default(),
            precision_input: false,
            held_out_fraction: 0.2,
            ranges: training_ranges(),
            scenes: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Degradation drawn within the operating envelope.
    InSpec,
    /// No degradation at all.
    Clean,
    /// Steep tilt and heavy occlusion; thresholds are reported, not enforced.
    OutOfSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TegConfig {
    pub scenes: usize,
    pub layout: TegLayout,
    pub condition: Condition,
    /// Draws for `in_spec`; the other conditions use fixed presets.
    pub ranges: SceneRanges,
    /// Detections within this distance of a truth screw can match it, px.
    pub match_radius: f64,
    pub scene_seed: u64,
    pub min_recall: f64,
    pub min_recall_lower: f64,
    pub max_false_positives: u64,
    pub max_center_p95_px: f64,
    pub confidence: f64,
}

impl Default for TegConfig {
    fn default() -> Self {
        Self {
            scenes: 60,
            layout: TegLayout::default(),
            condition: Condition::InSpec,
            ranges: SceneRanges::default(),
            match_radius: 3.0,
            scene_seed: 1000,
            min_recall: 0.995,
            min_recall_lower: 0.99,
            max_false_positives: 0,
            max_center_p95_px: 2.0,
            confidence: 0.95,
        }
    }
}

impl TegConfig {
    pub fn scene_ranges(&self) -> SceneRanges {
        match self.condition {
            Condition::InSpec => self.ranges,
            Condition::Clean => SceneRanges::clean(),
            Condition::OutOfSpec => SceneRanges::out_of_spec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibConfig {
    pub volume: WorkVolume,
    pub capture: CaptureParams,
    pub max_missing_fraction: f64,
    pub capture_seed: u64,
    pub queries: usize,
    /// Queries stay this far inside the lattice hull, mm.
    pub margin: f64,
    pub query_seed: u64,
    /// Local mapping must stay within this; global-only must exceed it.
    pub threshold_mm: f64,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            volume: WorkVolume::default(),
            capture: CaptureParams::default(),
            max_missing_fraction: MAX_MISSING_FRACTION,
            capture_seed: 0,
            queries: 10_000,
            margin: 25.0,
            query_seed: 7,
            threshold_mm: 0.35,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnitConfig {
    pub units: usize,
    pub screws_per_unit: usize,
    /// Side of the close-up rendered around each screw, px.
    pub tile: usize,
    /// Random offset of the screw inside its tile, px.
    pub jitter: f64,
    /// Screw positions stay this far inside the work volume, mm.
    pub margin: f64,
    pub ranges: SceneRanges,
    pub unit_seed: u64,
    /// Placement error a screw may have and still be removed, mm.
    pub budget_mm: f64,
    pub min_screw_rate: f64,
    pub min_unit_rate: f64,
    pub confidence: f64,
}

impl Default for UnitConfig {
    fn default() -> Self {
        Self {
            units: 200,
            screws_per_unit: 20,
            tile: 64,
            jitter: 6.0,
            margin: 25.0,
            ranges: SceneRanges::default(),
            unit_seed: 1000,
            budget_mm: 0.75,
            min_screw_rate: 0.995,
            min_unit_rate: 0.90,
            confidence: 0.95,
        }
    }
}
