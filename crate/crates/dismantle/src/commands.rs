//! Subcommands. Each writes its report as `<out>/<subcommand>.json` and
//! returns whether its acceptance checks passed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use dismantle_core::detect::DetectParams;
use dismantle_core::synth::{render_scene, Envelope};

use crate::config::RunConfig;
use crate::error::Result;
use crate::harness::{self, Calibration, DetectionRecord};
use crate::io::{self, LatticeFile, ModelSet};
use crate::report::{Check, Report};

/// Flags shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl Common {
    pub fn load(&self) -> Result<RunConfig> {
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let cfg = cfg.resolved(self.seed)?;
        io::ensure_dir(&self.out)?;
        Ok(cfg)
    }
}

fn finish<T: Serialize>(out: &Path, mut report: Report<T>, started: Instant) -> Result<bool> {
    report.runtime_s = started.elapsed().as_secs_f64();
    for c in &report.checks {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        log::info!("{mark} {} = {} ({})", c.name, c.value, c.limit);
    }
    io::write_json(&out.join(format!("{}.json", report.subcommand)), &report)?;
    Ok(report.passed)
}

fn models_dir(cfg: &RunConfig, common: &Common, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.models_dir.clone())
        .unwrap_or_else(|| common.out.join("models"))
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchEntry {
    pub image: String,
    pub label: String,
    pub split: String,
    pub screw: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub dir: String,
    pub seed: u64,
    pub screws: usize,
    pub confusers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub train_patches: usize,
    pub held_out_patches: usize,
    pub screw_patches: usize,
    pub non_screw_patches: usize,
    pub scenes: usize,
}

pub fn synth_dataset(common: &Common) -> Result<bool> {
    let started = Instant::now();
    let cfg = common.load()?;
    let d = &cfg.dataset;
    let patches = harness::patch_set(&d.patches, d.precision_input, &d.ranges, cfg.seed);
    let (train, held) = harness::split_indices(
        patches.len(),
        d.held_out_fraction,
        cfg.seed.wrapping_add(d.patches.seed),
    );
    let mut entries = Vec::with_capacity(patches.len());
    for (split, idx) in [("train", &train), ("held_out", &held)] {
        let dir = common.out.join("patches").join(split);
        io::ensure_dir(&dir)?;
        for &i in idx {
            let (image, label) = (
                format!("patches/{split}/{i:05}.png"),
                format!("patches/{split}/{i:05}_label.pgm"),
            );
            io::write_png_gray(&common.out.join(&image), patches[i].image())?;
            io::write_mask_pgm(&common.out.join(&label), patches[i].label())?;
            entries.push(PatchEntry {
                image,
                label,
                split: split.into(),
                screw: i < d.patches.positives,
            });
        }
    }
    io::write_json(&common.out.join("dataset_manifest.json"), &entries)?;

    let mut scenes = Vec::new();
    for i in 0..d.scenes {
        let spec = harness::teg_spec(&cfg, i);
        let (img, truth) = render_scene(&spec, &Envelope::default());
        let dir = format!("scenes/scene_{i:03}");
        io::write_scene_bundle(&common.out.join(&dir), &img, &spec, &truth)?;
        scenes.push(SceneEntry {
            dir,
            seed: spec.seed,
            screws: truth.screws.len(),
            confusers: truth.confusers.len(),
        });
    }
    io::write_json(&common.out.join("scenes_manifest.json"), &scenes)?;

    let summary = DatasetSummary {
        train_patches: train.len(),
        held_out_patches: held.len(),
        screw_patches: d.patches.positives,
        non_screw_patches: d.patches.negatives,
        scenes: scenes.len(),
    };
    let mut report = Report::new("synth-dataset", &cfg, summary);
    report
        .notes
        .push(desk_scale_note(d.patches.positives, d.patches.negatives));
    finish(&common.out, report, started)
}

fn desk_scale_note(pos: usize, neg: usize) -> String {
    format!("desk-scale synthetic data: {pos} screw and {neg} non-screw patches")
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub file: String,
    pub seed: u64,
    pub final_loss: f64,
    /// Pixel accuracy on patches drawn with a different seed.
    pub held_out_pixel_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub recall: ModelSummary,
    pub ensemble: Vec<ModelSummary>,
    pub recall_patches: usize,
    pub precision_patches: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LossRow {
    model: String,
    epoch: usize,
    lr: f64,
    loss: f64,
}

pub fn train(common: &Common) -> Result<bool> {
    let started = Instant::now();
    let cfg = common.load()?;
    let trained = harness::train_models(&cfg)?;
    let dir = common.out.join("models");
    let manifest = io::save_models(&dir, &trained.recall, &trained.ensemble)?;

    // Held-out sets: same composition, a fifth of the size, an unrelated seed.
    let r = &cfg.training;
    let held = |set: &crate::config::PatchSet| crate::config::PatchSet {
        positives: set.positives.div_ceil(5),
        negatives: set.negatives.div_ceil(5),
        seed: set.seed.wrapping_add(0x5eed),
        ..*set
    };
    let recall_held = harness::patch_set(&held(&r.recall_data), false, &r.ranges, cfg.seed);
    let precision_held = harness::patch_set(&held(&r.precision_data), true, &r.ranges, cfg.seed);
    let describe =
        |file: &str, t: &dismantle_core::fcn::TrainedModel, data| -> Result<ModelSummary> {
            Ok(ModelSummary {
                file: file.into(),
                seed: t.config.seed,
                final_loss: t.epoch_losses.last().copied().unwrap_or(f64::NAN),
                held_out_pixel_accuracy: harness::pixel_accuracy(&t.model, data)?,
            })
        };
    let summary = TrainSummary {
        recall: describe(&manifest.recall, &trained.recall, &recall_held)?,
        ensemble: trained
            .ensemble
            .iter()
            .zip(&manifest.ensemble)
            .map(|(t, f)| describe(f, t, &precision_held))
            .collect::<Result<_>>()?,
        recall_patches: trained.recall_patches,
        precision_patches: trained.precision_patches,
        seconds: trained.seconds,
    };

    let mut rows = Vec::new();
    for (name, t) in std::iter::once(("recall".to_string(), &trained.recall)).chain(
        trained
            .ensemble
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("ensemble_{i}"), t)),
    ) {
        for (epoch, &loss) in t.epoch_losses.iter().enumerate() {
            rows.push(LossRow {
                model: name.clone(),
                epoch,
                lr: dismantle_core::fcn::lr_at(&t.config, epoch),
                loss,
            });
        }
    }
    io::write_csv(&common.out.join("train_losses.csv"), &rows)?;

    let mut report = Report::new("train", &cfg, summary);
    report.hashes = manifest.hashes;
    report.notes.push(desk_scale_note(
        r.recall_data.positives,
        r.recall_data.negatives,
    ));
    finish(&common.out, report, started)
}

// ---------------------------------------------------------------------------

/// Per-scene detection report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDetections {
    pub seed: u64,
    pub scene: usize,
    pub scene_seed: u64,
    pub model_hashes: BTreeMap<String, String>,
    pub params: DetectParams,
    pub detections: Vec<DetectionRecord>,
}

pub fn eval_teg(common: &Common, models: Option<&Path>) -> Result<bool> {
    let started = Instant::now();
    let cfg = common.load()?;
    let models = io::load_models(&models_dir(&cfg, common, models))?;
    let hashes = models.hashes();
    let (summary, scenes) = harness::run_teg_eval(&cfg, &models)?;

    let det_dir = common.out.join("detections");
    io::ensure_dir(&det_dir)?;
    for s in &scenes {
        let r = SceneDetections {
            seed: cfg.seed,
            scene: s.index,
            scene_seed: s.seed,
            model_hashes: hashes.clone(),
            params: cfg.detect,
            detections: harness::detection_records(&s.set),
        };
        io::write_json(&det_dir.join(format!("scene_{:03}.json", s.index)), &r)?;
    }
    let rows: Vec<_> = scenes.iter().flat_map(|s| s.rows.iter().cloned()).collect();
    io::write_csv(&common.out.join("teg_detail.csv"), &rows)?;

    let checks = harness::teg_checks(&cfg, &summary);
    let mut report = Report::new("eval-teg", &cfg, summary).with_checks(checks);
    report.hashes = hashes;
    report.notes.push(
        "scenes include confusers (rivets, holes, stains) so that precision is measurable".into(),
    );
    report.notes.push(
        "a detection matches a screw within the match radius; errors are exact distances".into(),
    );
    finish(&common.out, report, started)
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrateSummary {
    pub nodes: usize,
    pub missing_nodes: usize,
    pub global_fit_rms: f64,
    pub global_fit_max: f64,
    pub seconds: f64,
}

fn write_lattice(
    cfg: &RunConfig,
    out: &Path,
    cal: &Calibration,
) -> Result<BTreeMap<String, String>> {
    let world_hash = io::world_hash(&cfg.world);
    let file = LatticeFile::new(&cal.lattice, &cal.map, Some(world_hash.clone()));
    io::write_lattice(&out.join("lattice.json"), &file)?;
    let mut h = BTreeMap::new();
    h.insert("world".to_string(), world_hash);
    h.insert("lattice".to_string(), io::json_hash(&file));
    Ok(h)
}

pub fn calibrate(common: &Common) -> Result<bool> {
    let started = Instant::now();
    let cfg = common.load()?;
    let cal = harness::calibrate(&cfg)?;
    let hashes = write_lattice(&cfg, &common.out, &cal)?;
    let summary = CalibrateSummary {
        nodes: cal.lattice.nodes.len(),
        missing_nodes: cal.lattice.missing_count(),
        global_fit_rms: cal.map.rms,
        global_fit_max: cal.map.max,
        seconds: cal.seconds,
    };
    let mut report = Report::new("calibrate", &cfg, summary);
    report.hashes = hashes;
    finish(&common.out, report, started)
}

pub fn eval_calib(common: &Common) -> Result<bool> {
    let started = Instant::now();
    let cfg = common.load()?;
    let cal = harness::calibrate(&cfg)?;
    let hashes = write_lattice(&cfg, &common.out, &cal)?;
    let (summary, rows) = harness::run_calib_eval(&cfg, &cal);
    io::write_csv(&common.out.join("calib_queries.csv"), &rows)?;
    let checks = harness::calib_checks(&cfg, &summary);
    let mut report = Report::new("eval-calib", &cfg, summary).with_checks(checks);
    report.hashes = hashes;
    finish(&common.out, report, started)
}

// ---------------------------------------------------------------------------

/// Uses the lattice file when given (its world hash must match the config),
/// otherwise collects a fresh lattice.
fn load_or_calibrate(cfg: &RunConfig, path: Option<&Path>) -> Result<Calibration> {
    let Some(path) = path else {
        return harness::calibrate(cfg);
    };
    let (lattice, map, file) = io::read_lattice(path)?;
    let want = io::world_hash(&cfg.world);
    if file.world_hash.as_deref() != Some(want.as_str()) {
        return Err(crate::Error::Config(format!(
            "{} was collected in a different world",
            path.display()
        )));
    }
    let world = dismantle_core::synth::TrueWorldModel::new(cfg.world.clone());
    Ok(Calibration {
        world,
        lattice,
        map,
        seconds: 0.0,
    })
}

pub fn simulate_unit(
    common: &Common,
    models: Option<&Path>,
    lattice: Option<&Path>,
) -> Result<bool> {
    let started = Instant::now();
    let cfg = common.load()?;
    let models: ModelSet = io::load_models(&models_dir(&cfg, common, models))?;
    let cal = load_or_calibrate(&cfg, lattice)?;
    let (summary, rows) = harness::simulate_units(&cfg, &models, &cal)?;
    io::write_csv(&common.out.join("unit_screws.csv"), &rows)?;
    let checks: Vec<Check> = harness::unit_checks(&cfg, &summary);
    let mut report = Report::new("simulate-unit", &cfg, summary).with_checks(checks);
    report.hashes = models.hashes();
    report
        .hashes
        .insert("world".into(), io::world_hash(&cfg.world));
    report.hashes.insert(
        "lattice".into(),
        io::json_hash(&LatticeFile::new(
            &cal.lattice,
            &cal.map,
            Some(io::world_hash(&cfg.world)),
        )),
    );
    finish(&common.out, report, started)
}
