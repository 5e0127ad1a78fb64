//! Dataset generation, training, and the three evaluations: detection on TEG
//! scenes, calibration verification, and end-to-end unit simulation.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use dismantle_core::calib::{
    camera_to_robot, coarse_map, collect_with, fit_global_map, verify_positioning,
    CalibrationLattice, GlobalLinearMap, MappingMode, QueryRecord, RegionStats,
};
use dismantle_core::detect::{detect_screws, DetectionSet, DropReason, RgbdImage};
use dismantle_core::fcn::{forward, train, LabeledPatch, TrainedModel, TrainingConfig};
use dismantle_core::imgproc::{BoundingBox, Point2};
use dismantle_core::linalg::{norm3, sub3};
use dismantle_core::stats::{
    batch_success, clopper_pearson, BinomialInterval, ErrorSummary, EvalCounts, Ratio,
};
use dismantle_core::synth::{
    default_intrinsics, derive_seed, random_screw, render_scene, teg_scene, training_patches,
    unit_tile, Envelope, JigObserver, SceneRanges, SceneSpec, SceneTruth, TrueWorldModel,
    SENSOR_HEIGHT, SENSOR_WIDTH,
};

use crate::config::{Condition, PatchSet, RunConfig};
use crate::error::Result;
use crate::io::ModelSet;
use crate::report::Check;

// ---------------------------------------------------------------------------
// Data and training

pub fn patch_set(
    set: &PatchSet,
    precision_input: bool,
    ranges: &SceneRanges,
    run_seed: u64,
) -> Vec<LabeledPatch> {
    training_patches(
        set.positives,
        set.negatives,
        &set.mix,
        precision_input,
        ranges,
        run_seed.wrapping_add(set.seed),
    )
}

/// Shuffled split of `0..n` into (train, held-out) index lists.
pub fn split_indices(n: usize, held_out_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((n as f64) * held_out_fraction).round() as usize;
    let (mut held, mut train) = (idx[..k].to_vec(), idx[k..].to_vec());
    held.sort_unstable();
    train.sort_unstable();
    (train, held)
}

/// Fraction of pixels whose thresholded probability (0.5) matches the label.
pub fn pixel_accuracy(
    model: &dismantle_core::fcn::FcnModel,
    patches: &[LabeledPatch],
) -> Result<f64> {
    let (mut right, mut total) = (0usize, 0usize);
    for p in patches {
        let map = forward(model, p.image())?;
        right += map
            .data()
            .iter()
            .zip(p.label().data())
            .filter(|(v, l)| (**v >= 0.5) == **l)
            .count();
        total += map.data().len();
    }
    Ok(if total == 0 {
        1.0
    } else {
        right as f64 / total as f64
    })
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub recall: TrainedModel,
    pub ensemble: Vec<TrainedModel>,
    pub recall_patches: usize,
    pub precision_patches: usize,
    pub seconds: f64,
}

impl Trained {
    pub fn models(&self) -> ModelSet {
        ModelSet {
            recall: self.recall.model.clone(),
            ensemble: self.ensemble.iter().map(|m| m.model.clone()).collect(),
        }
    }
}

/// `k` members seeded `seed + 0 .. seed + k - 1`, trained in parallel.
pub fn train_ensemble(
    config: &TrainingConfig,
    data: &[LabeledPatch],
    k: usize,
) -> Result<Vec<TrainedModel>> {
    (0..k as u64)
        .into_par_iter()
        .map(|i| {
            Ok(train(
                &TrainingConfig {
                    seed: config.seed.wrapping_add(i),
                    ..config.clone()
                },
                data,
            )?)
        })
        .collect()
}

/// Trains the recall model and the precision ensemble.
pub fn train_models(cfg: &RunConfig) -> Result<Trained> {
    let t = Instant::now();
    let r = &cfg.training;
    let recall_data = patch_set(&r.recall_data, false, &r.ranges, cfg.seed);
    let precision_data = patch_set(&r.precision_data, true, &r.ranges, cfg.seed);
    log::info!("training recall model on {} patches", recall_data.len());
    let recall = train(&cfg.seeded(&r.recall), &recall_data)?;
    log::info!(
        "training {} ensemble members on {} patches",
        r.ensemble_size,
        precision_data.len()
    );
    let ensemble = train_ensemble(&cfg.seeded(&r.precision), &precision_data, r.ensemble_size)?;
    Ok(Trained {
        recall,
        ensemble,
        recall_patches: recall_data.len(),
        precision_patches: precision_data.len(),
        seconds: t.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// TEG evaluation

/// Globally greedy one-to-one matching by increasing distance. Returns
/// `(truth index, detection index, distance)` for every pair within `radius`.
pub fn match_points(
    truth: &[Point2],
    detections: &[Point2],
    radius: f64,
) -> Vec<(usize, usize, f64)> {
    let mut pairs: Vec<(usize, usize, f64)> = truth
        .iter()
        .enumerate()
        .flat_map(|(i, t)| {
            detections
                .iter()
                .enumerate()
                .map(move |(j, d)| (i, j, t.distance(d)))
        })
        .filter(|p| p.2 <= radius)
        .collect();
    pairs.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let (mut t_used, mut d_used) = (vec![false; truth.len()], vec![false; detections.len()]);
    let mut out = Vec::new();
    for (i, j, d) in pairs {
        if !t_used[i] && !d_used[j] {
            t_used[i] = true;
            d_used[j] = true;
            out.push((i, j, d));
        }
    }
    out.sort_unstable_by_key(|p| p.0);
    out
}

/// One entry of a per-scene detection report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub p_global: Option<Point2>,
    pub p_3d: Option<[f64; 3]>,
    pub confidence: Option<f64>,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub drop_reason: Option<DropReason>,
}

pub fn detection_records(set: &DetectionSet) -> Vec<DetectionRecord> {
    let kept = set.detections.iter().map(|d| DetectionRecord {
        p_global: Some(d.p_global),
        p_3d: Some(d.p_3d),
        confidence: Some(d.confidence),
        bbox: d.source,
        drop_reason: None,
    });
    let dropped = set.dropped.iter().map(|d| DetectionRecord {
        p_global: d.p_global,
        p_3d: None,
        confidence: None,
        bbox: d.source,
        drop_reason: Some(d.reason),
    });
    kept.chain(dropped).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Tp,
    Fn,
    Fp,
}

/// One CSV row of the TEG detail: a truth screw or an unmatched detection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TegRow {
    pub scene: usize,
    pub outcome: Outcome,
    pub in_spec: Option<bool>,
    pub truth_x: Option<f64>,
    pub truth_y: Option<f64>,
    pub det_x: Option<f64>,
    pub det_y: Option<f64>,
    pub error_px: Option<f64>,
    pub error_mm: Option<f64>,
    pub confidence: Option<f64>,
    /// For misses, the reason stage 2 or later dropped a box covering the screw.
    pub drop_reason: Option<String>,
    /// For false positives, distance to the nearest confuser, px.
    pub nearest_confuser_px: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SceneEval {
    pub index: usize,
    pub seed: u64,
    pub spec: SceneSpec,
    pub truth: SceneTruth,
    pub set: DetectionSet,
    pub rows: Vec<TegRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TegSummary {
    pub condition: Condition,
    pub scenes: usize,
    pub screws: u64,
    pub in_spec_screws: u64,
    pub confusers: u64,
    pub counts: EvalCounts,
    pub recall: Ratio,
    pub precision: Ratio,
    pub recall_interval: BinomialInterval,
    pub in_spec_counts: EvalCounts,
    pub in_spec_recall: Ratio,
    /// False positives within the match radius of a confuser.
    pub confuser_false_positives: u64,
    pub candidates: u64,
    pub drop_reasons: BTreeMap<String, u64>,
    pub center_error_px: ErrorSummary,
    pub center_error_mm: ErrorSummary,
    /// Lateral pixel size at the layout's panel depth.
    pub mm_per_px: f64,
    pub match_radius_px: f64,
    pub seconds: f64,
}

fn scene_seed(cfg: &RunConfig, i: usize) -> u64 {
    cfg.seed
        .wrapping_add(cfg.teg.scene_seed)
        .wrapping_add(i as u64)
}

pub fn teg_spec(cfg: &RunConfig, i: usize) -> SceneSpec {
    let cam = default_intrinsics();
    teg_scene(
        &cam,
        [SENSOR_WIDTH, SENSOR_HEIGHT],
        &cfg.teg.layout,
        &cfg.teg.scene_ranges(),
        scene_seed(cfg, i),
    )
}

/// Renders TEG scene `i` with its truth (in-spec flags against the default envelope).
pub fn teg_render(cfg: &RunConfig, i: usize) -> (SceneSpec, RgbdImage, SceneTruth) {
    let spec = teg_spec(cfg, i);
    let (img, truth) = render_scene(&spec, &Envelope::default());
    (spec, img, truth)
}

pub fn eval_scene(cfg: &RunConfig, models: &ModelSet, i: usize) -> Result<SceneEval> {
    let (spec, img, truth) = teg_render(cfg, i);
    let set = detect_screws(
        &img,
        &models.recall,
        &models.ensemble,
        &spec.intrinsics,
        &cfg.detect,
    )?;
    let truth_px: Vec<Point2> = truth.screws.iter().map(|s| s.pixel).collect();
    let det_px: Vec<Point2> = set.detections.iter().map(|d| d.p_global).collect();
    let matches = match_points(&truth_px, &det_px, cfg.teg.match_radius);
    let mut by_truth = vec![None; truth_px.len()];
    let mut det_matched = vec![false; det_px.len()];
    for &(t, d, e) in &matches {
        by_truth[t] = Some((d, e));
        det_matched[d] = true;
    }
    let mut rows = Vec::new();
    for (t, s) in truth.screws.iter().enumerate() {
        let mut row = TegRow {
            scene: i,
            outcome: Outcome::Fn,
            in_spec: Some(s.in_spec),
            truth_x: Some(s.pixel.x),
            truth_y: Some(s.pixel.y),
            det_x: None,
            det_y: None,
            error_px: None,
            error_mm: None,
            confidence: None,
            drop_reason: None,
            nearest_confuser_px: None,
        };
        match by_truth[t] {
            Some((d, e)) => {
                let det = &set.detections[d];
                row.outcome = Outcome::Tp;
                row.det_x = Some(det.p_global.x);
                row.det_y = Some(det.p_global.y);
                row.error_px = Some(e);
                row.error_mm = Some(e * spec.intrinsics.mm_per_pixel(s.camera_point[2]));
                row.confidence = Some(det.confidence);
            }
            None => {
                let reasons: Vec<String> = set
                    .dropped
                    .iter()
                    .filter(|d| d.source.contains(s.pixel.x, s.pixel.y))
                    .map(|d| format!("{:?}", d.reason).to_lowercase())
                    .collect();
                row.drop_reason = Some(if reasons.is_empty() {
                    "no_candidate".into()
                } else {
                    reasons.join("+")
                });
            }
        }
        rows.push(row);
    }
    for (d, det) in set.detections.iter().enumerate() {
        if det_matched[d] {
            continue;
        }
        let nearest = truth
            .confusers
            .iter()
            .map(|c| c.pixel.distance(&det.p_global))
            .fold(f64::INFINITY, f64::min);
        rows.push(TegRow {
            scene: i,
            outcome: Outcome::Fp,
            in_spec: None,
            truth_x: None,
            truth_y: None,
            det_x: Some(det.p_global.x),
            det_y: Some(det.p_global.y),
            error_px: None,
            error_mm: None,
            confidence: Some(det.confidence),
            drop_reason: None,
            nearest_confuser_px: nearest.is_finite().then_some(nearest),
        });
    }
    Ok(SceneEval {
        index: i,
        seed: scene_seed(cfg, i),
        spec,
        truth,
        set,
        rows,
    })
}

pub fn summarize_teg(cfg: &RunConfig, scenes: &[SceneEval], seconds: f64) -> TegSummary {
    let rows: Vec<&TegRow> = scenes.iter().flat_map(|s| &s.rows).collect();
    let count = |o: Outcome, in_spec_only: bool| {
        rows.iter()
            .filter(|r| r.outcome == o && (!in_spec_only || r.in_spec == Some(true)))
            .count() as u64
    };
    let counts = EvalCounts {
        tp: count(Outcome::Tp, false),
        fn_: count(Outcome::Fn, false),
        fp: count(Outcome::Fp, false),
    };
    let in_spec_counts = EvalCounts {
        tp: count(Outcome::Tp, true),
        fn_: count(Outcome::Fn, true),
        fp: counts.fp,
    };
    let mut drop_reasons = BTreeMap::new();
    for r in rows.iter().filter(|r| r.outcome == Outcome::Fn) {
        *drop_reasons
            .entry(r.drop_reason.clone().unwrap_or_default())
            .or_insert(0) += 1;
    }
    let err_px: Vec<f64> = rows.iter().filter_map(|r| r.error_px).collect();
    let err_mm: Vec<f64> = rows.iter().filter_map(|r| r.error_mm).collect();
    let radius = cfg.teg.match_radius;
    TegSummary {
        condition: cfg.teg.condition,
        scenes: scenes.len(),
        screws: scenes.iter().map(|s| s.truth.screws.len() as u64).sum(),
        in_spec_screws: scenes
            .iter()
            .flat_map(|s| &s.truth.screws)
            .filter(|s| s.in_spec)
            .count() as u64,
        confusers: scenes.iter().map(|s| s.truth.confusers.len() as u64).sum(),
        counts,
        recall: counts.recall(),
        precision: counts.precision(),
        recall_interval: clopper_pearson(counts.tp, counts.tp + counts.fn_, cfg.teg.confidence),
        in_spec_counts,
        in_spec_recall: in_spec_counts.recall(),
        confuser_false_positives: rows
            .iter()
            .filter(|r| {
                r.outcome == Outcome::Fp && r.nearest_confuser_px.is_some_and(|d| d <= radius)
            })
            .count() as u64,
        candidates: scenes.iter().map(|s| s.set.candidates as u64).sum(),
        drop_reasons,
        center_error_px: ErrorSummary::of(&err_px),
        center_error_mm: ErrorSummary::of(&err_mm),
        mm_per_px: default_intrinsics().mm_per_pixel(cfg.teg.layout.panel_depth),
        match_radius_px: radius,
        seconds,
    }
}

/// Thresholds apply to in-spec and clean runs; out-of-spec runs only report.
pub fn teg_checks(cfg: &RunConfig, s: &TegSummary) -> Vec<Check> {
    if cfg.teg.condition == Condition::OutOfSpec {
        return Vec::new();
    }
    vec![
        Check::at_least("recall", s.recall.value, cfg.teg.min_recall),
        Check::at_least(
            "recall_ci_lower",
            s.recall_interval.lower,
            cfg.teg.min_recall_lower,
        ),
        Check::at_most(
            "false_positives",
            s.counts.fp as f64,
            cfg.teg.max_false_positives as f64,
        ),
        Check::at_most(
            "center_error_p95_px",
            s.center_error_px.p95,
            cfg.teg.max_center_p95_px,
        ),
    ]
}

pub fn run_teg_eval(cfg: &RunConfig, models: &ModelSet) -> Result<(TegSummary, Vec<SceneEval>)> {
    let t = Instant::now();
    let scenes = (0..cfg.teg.scenes)
        .into_par_iter()
        .map(|i| eval_scene(cfg, models, i))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize_teg(cfg, &scenes, t.elapsed().as_secs_f64());
    Ok((summary, scenes))
}

// ---------------------------------------------------------------------------
// Calibration

#[derive(Clone, Debug)]
pub struct Calibration {
    pub world: TrueWorldModel,
    pub lattice: CalibrationLattice,
    pub map: GlobalLinearMap,
    pub seconds: f64,
}

pub fn calibrate(cfg: &RunConfig) -> Result<Calibration> {
    let t = Instant::now();
    let world = TrueWorldModel::new(cfg.world.clone());
    let c = &cfg.calib;
    let counts = c.volume.counts()?;
    let mut observer = JigObserver {
        world: &world,
        params: c.capture,
        seed: cfg.seed.wrapping_add(c.capture_seed),
        counts,
    };
    let lattice = collect_with(&c.volume, &mut observer, c.max_missing_fraction)?;
    let map = fit_global_map(&lattice)?;
    Ok(Calibration {
        world,
        lattice,
        map,
        seconds: t.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: MappingMode,
    pub summary: ErrorSummary,
    pub failures: usize,
    pub regions: Vec<RegionStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibSummary {
    pub nodes: usize,
    pub missing_nodes: usize,
    pub global_fit_rms: f64,
    pub global_fit_max: f64,
    pub queries: usize,
    pub margin_mm: f64,
    pub local: ModeSummary,
    pub global_only: ModeSummary,
    pub collect_seconds: f64,
    pub verify_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub mode: MappingMode,
    pub camera_x: f64,
    pub camera_y: f64,
    pub camera_z: f64,
    pub truth_x: f64,
    pub truth_y: f64,
    pub truth_z: f64,
    pub commanded_x: f64,
    pub commanded_y: f64,
    pub commanded_z: f64,
    pub error_mm: f64,
}

impl QueryRow {
    fn new(mode: MappingMode, q: &QueryRecord) -> Self {
        Self {
            mode,
            camera_x: q.camera_point[0],
            camera_y: q.camera_point[1],
            camera_z: q.camera_point[2],
            truth_x: q.truth[0],
            truth_y: q.truth[1],
            truth_z: q.truth[2],
            commanded_x: q.commanded[0],
            commanded_y: q.commanded[1],
            commanded_z: q.commanded[2],
            error_mm: q.error,
        }
    }
}

pub fn run_calib_eval(cfg: &RunConfig, cal: &Calibration) -> (CalibSummary, Vec<QueryRow>) {
    let t = Instant::now();
    let c = &cfg.calib;
    let seed = cfg.seed.wrapping_add(c.query_seed);
    let mut rows = Vec::new();
    let mut run = |mode| {
        let r = verify_positioning(
            &cal.lattice,
            &cal.map,
            &cal.world,
            c.queries,
            c.margin,
            mode,
            seed,
        );
        rows.extend(r.queries.iter().map(|q| QueryRow::new(mode, q)));
        ModeSummary {
            mode,
            summary: r.summary,
            failures: r.failures,
            regions: r.regions,
        }
    };
    let local = run(MappingMode::Local);
    let global_only = run(MappingMode::GlobalOnly);
    let summary = CalibSummary {
        nodes: cal.lattice.nodes.len(),
        missing_nodes: cal.lattice.missing_count(),
        global_fit_rms: cal.map.rms,
        global_fit_max: cal.map.max,
        queries: c.queries,
        margin_mm: c.margin,
        local,
        global_only,
        collect_seconds: cal.seconds,
        verify_seconds: t.elapsed().as_secs_f64(),
    };
    (summary, rows)
}

pub fn calib_checks(cfg: &RunConfig, s: &CalibSummary) -> Vec<Check> {
    let lim = cfg.calib.threshold_mm;
    vec![
        Check::at_most("local_max_error_mm", s.local.summary.max, lim),
        Check::at_most("local_failed_queries", s.local.failures as f64, 0.0),
        Check::above("global_only_max_error_mm", s.global_only.summary.max, lim),
    ]
}

// ---------------------------------------------------------------------------
// Unit simulation

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScrewFailure {
    NoDetection,
    MappingFailed,
    OverBudget,
}

/// Placement of one screw under both mappings, from the same detection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScrewRow {
    pub unit: usize,
    pub screw: usize,
    pub robot_x: f64,
    pub robot_y: f64,
    pub robot_z: f64,
    pub detections: usize,
    pub confidence: Option<f64>,
    pub local_error_mm: Option<f64>,
    pub global_error_mm: Option<f64>,
    pub local_failure: Option<ScrewFailure>,
    pub global_failure: Option<ScrewFailure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeOutcome {
    pub mode: MappingMode,
    pub screw_successes: u64,
    pub unit_successes: u64,
    pub screw_rate: BinomialInterval,
    pub unit_rate: BinomialInterval,
    /// Unit rate implied by the per-screw rate if screws were independent.
    pub predicted_unit_rate: f64,
    /// Over screws with a mapped placement.
    pub error_mm: ErrorSummary,
    pub failures: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitSummary {
    pub units: usize,
    pub screws_per_unit: usize,
    pub screws: u64,
    pub budget_mm: f64,
    pub local: ModeOutcome,
    pub global_only: ModeOutcome,
    pub seconds: f64,
}

fn placement(
    detection: Option<[f64; 3]>,
    r_true: [f64; 3],
    budget: f64,
    map: impl Fn([f64; 3]) -> Option<[f64; 3]>,
) -> (Option<f64>, Option<ScrewFailure>) {
    let Some(p) = detection else {
        return (None, Some(ScrewFailure::NoDetection));
    };
    match map(p) {
        None => (None, Some(ScrewFailure::MappingFailed)),
        Some(c) => {
            let e = norm3(sub3(c, r_true));
            (Some(e), (e > budget).then_some(ScrewFailure::OverBudget))
        }
    }
}

/// One unit: `screws_per_unit` screws at random robot points, each imaged in
/// its own tile, detected, and mapped to a robot command.
pub fn simulate_unit(
    cfg: &RunConfig,
    models: &ModelSet,
    cal: &Calibration,
    unit: usize,
) -> Result<Vec<ScrewRow>> {
    let u = &cfg.unit;
    let unit_seed = cfg.seed.wrapping_add(u.unit_seed).wrapping_add(unit as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(unit_seed);
    let v = &cfg.calib.volume;
    let mut rows = Vec::with_capacity(u.screws_per_unit);
    for k in 0..u.screws_per_unit {
        let r: [f64; 3] = std::array::from_fn(|a| {
            let lo = v.origin[a] + u.margin;
            lo + rng.random::<f64>() * (v.extents[a] - 2.0 * u.margin)
        });
        let screw = random_screw(&mut rng, &u.ranges, [0.0; 2], 1.0);
        let spec = unit_tile(
            &cal.world,
            r,
            screw,
            u.tile,
            u.jitter,
            &u.ranges,
            derive_seed(unit_seed, k as u64),
        )
        .map_err(|e| crate::error::Error::Config(format!("screw outside the camera view: {e}")))?;
        let (img, _) = render_scene(&spec, &Envelope::default());
        let set = detect_screws(
            &img,
            &models.recall,
            &models.ensemble,
            &spec.intrinsics,
            &cfg.detect,
        )?;
        let best = set
            .detections
            .iter()
            .max_by(|a, b| a.confidence.total_cmp(&b.confidence));
        let p3 = best.map(|d| d.p_3d);
        let (le, lf) = placement(p3, r, u.budget_mm, |p| {
            camera_to_robot(p, &cal.lattice, &cal.map).ok()
        });
        let (ge, gf) = placement(p3, r, u.budget_mm, |p| Some(coarse_map(&cal.map, p)));
        rows.push(ScrewRow {
            unit,
            screw: k,
            robot_x: r[0],
            robot_y: r[1],
            robot_z: r[2],
            detections: set.detections.len(),
            confidence: best.map(|d| d.confidence),
            local_error_mm: le,
            global_error_mm: ge,
            local_failure: lf,
            global_failure: gf,
        });
    }
    Ok(rows)
}

fn mode_outcome(mode: MappingMode, cfg: &RunConfig, units: &[Vec<ScrewRow>]) -> ModeOutcome {
    let pick = |r: &ScrewRow| match mode {
        MappingMode::Local => (r.local_error_mm, r.local_failure),
        MappingMode::GlobalOnly => (r.global_error_mm, r.global_failure),
    };
    let screws: u64 = units.iter().map(|u| u.len() as u64).sum();
    let screw_ok = units
        .iter()
        .flatten()
        .filter(|r| pick(r).1.is_none())
        .count() as u64;
    let unit_ok = units
        .iter()
        .filter(|u| u.iter().all(|r| pick(r).1.is_none()))
        .count() as u64;
    let mut failures = BTreeMap::new();
    for f in units.iter().flatten().filter_map(|r| pick(r).1) {
        *failures.entry(format!("{f:?}")).or_insert(0) += 1;
    }
    let errors: Vec<f64> = units.iter().flatten().filter_map(|r| pick(r).0).collect();
    let conf = cfg.unit.confidence;
    let screw_rate = clopper_pearson(screw_ok, screws, conf);
    ModeOutcome {
        mode,
        screw_successes: screw_ok,
        unit_successes: unit_ok,
        screw_rate,
        unit_rate: clopper_pearson(unit_ok, units.len() as u64, conf),
        predicted_unit_rate: batch_success(screw_rate.estimate, cfg.unit.screws_per_unit as u32),
        error_mm: ErrorSummary::of(&errors),
        failures,
    }
}

pub fn simulate_units(
    cfg: &RunConfig,
    models: &ModelSet,
    cal: &Calibration,
) -> Result<(UnitSummary, Vec<ScrewRow>)> {
    let t = Instant::now();
    let units = (0..cfg.unit.units)
        .into_par_iter()
        .map(|u| simulate_unit(cfg, models, cal, u))
        .collect::<Result<Vec<_>>>()?;
    let summary = UnitSummary {
        units: units.len(),
        screws_per_unit: cfg.unit.screws_per_unit,
        screws: units.iter().map(|u| u.len() as u64).sum(),
        budget_mm: cfg.unit.budget_mm,
        local: mode_outcome(MappingMode::Local, cfg, &units),
        global_only: mode_outcome(MappingMode::GlobalOnly, cfg, &units),
        seconds: t.elapsed().as_secs_f64(),
    };
    Ok((summary, units.into_iter().flatten().collect()))
}

pub fn unit_checks(cfg: &RunConfig, s: &UnitSummary) -> Vec<Check> {
    let (l, g) = (&s.local, &s.global_only);
    vec![
        Check::at_least(
            "screw_success_rate",
            l.screw_rate.estimate,
            cfg.unit.min_screw_rate,
        ),
        Check::at_least(
            "unit_completion_rate",
            l.unit_rate.estimate,
            cfg.unit.min_unit_rate,
        ),
        Check::below(
            "global_only_unit_rate",
            g.unit_rate.estimate,
            l.unit_rate.estimate,
        ),
    ]
}
