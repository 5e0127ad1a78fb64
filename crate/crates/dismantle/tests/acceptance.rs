//! Acceptance criteria. Each test writes one `PASS`/`FAIL` line to stderr
//! (uncaptured, so it shows in a plain `cargo test` run) before asserting.
//!
//! Heavy tests share one trained model set and one calibration, and run one
//! at a time so their wall-clock limits are measured without contention.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dismantle::config::{PatchSet, RunConfig};
use dismantle::harness::{
    calibrate, patch_set, run_calib_eval, run_teg_eval, simulate_units, train_ensemble,
    train_models, CalibSummary, Calibration, TegSummary, Trained,
};
use dismantle::io::save_trained;
use dismantle_core::calib::{
    generate_lattice, local_interpolate, CorrespondencePair, Neighborhood27, WorkVolume,
};
use dismantle_core::fcn::{
    batch_loss, encode_weights, loss_and_grad, lr_at, train, FcnModel, LabeledPatch,
    TrainingConfig, DEFAULT_CHANNELS, KERNEL, PATCH_SIZE,
};
use dismantle_core::imgproc::{
    connected_regions, threshold, BinaryMask, BoundingBox, GrayImage, Point2, ProbabilityMap,
};
use dismantle_core::stats::{batch_success, required_unit_rate};
use dismantle_core::synth::{
    default_intrinsics, training_ranges, NegativeMix, SENSOR_HEIGHT, SENSOR_WIDTH,
};

static HEAVY: Mutex<()> = Mutex::new(());

fn heavy() -> MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: &str, passed: bool, detail: impl AsRef<str>) -> bool {
    let tag = if passed { "PASS" } else { "FAIL" };
    let line = format!("[{tag}] {id}: {}\n", detail.as_ref());
    let _ = std::io::stderr().write_all(line.as_bytes());
    passed
}

fn config() -> RunConfig {
    RunConfig::default()
        .resolved(Some(0))
        .expect("default config is valid")
}

struct Detection {
    trained: Trained,
    teg: TegSummary,
}

fn detection() -> &'static Detection {
    static CELL: OnceLock<Detection> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = config();
        let trained = train_models(&cfg).expect("training");
        let (teg, _) = run_teg_eval(&cfg, &trained.models()).expect("teg eval");
        Detection { trained, teg }
    })
}

fn calibration() -> &'static (Calibration, CalibSummary, f64) {
    static CELL: OnceLock<(Calibration, CalibSummary, f64)> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = config();
        let t = Instant::now();
        let cal = calibrate(&cfg).expect("calibration");
        let (summary, _) = run_calib_eval(&cfg, &cal);
        (cal, summary, t.elapsed().as_secs_f64())
    })
}

// ---------------------------------------------------------------------------

#[test]
fn c01_lattice_node_count() {
    let _g = heavy();
    let t = Instant::now();
    let n = generate_lattice(&WorkVolume::default()).unwrap().len();
    let s = t.elapsed().as_secs_f64();
    let ok = report(
        "C1 lattice nodes",
        n == 2736 && s < 1.0,
        format!("{n} nodes (== 2736) in {s:.4} s (< 1 s)"),
    );
    assert!(ok);
}

#[test]
fn c02_batch_reliability() {
    let b = batch_success(0.95, 20);
    let r = required_unit_rate(0.90, 20);
    let ok_b = (b - 0.358486).abs() <= 1e-6;
    let ok_r = (r - 0.99475).abs() <= 1e-5;
    report(
        "C2 batch_success(0.95, 20)",
        ok_b,
        format!("{b:.7} (0.358486 +- 1e-6)"),
    );
    report(
        "C2 required_unit_rate(0.90, 20)",
        ok_r,
        format!("{r:.7} (0.99475 +- 1e-5)"),
    );
    assert!(ok_b && ok_r);
}

#[test]
fn c03_local_mapping_beats_global() {
    let _g = heavy();
    let (_, s, secs) = calibration();
    let local = s.local.summary.max;
    let global = s.global_only.summary.max;
    let ok = s.queries >= 10_000
        && s.local.failures == 0
        && local <= 0.35
        && global > 0.35
        && *secs <= 60.0;
    let detail = format!(
        "{} queries, local max {local:.4} mm (<= 0.35), {} failed, global-only max {global:.4} mm (> 0.35), {secs:.1} s (<= 60 s)",
        s.queries, s.local.failures
    );
    assert!(report("C3 calibration accuracy", ok, detail));
}

/// Quadratic of a camera point with per-axis coefficients.
fn quad(c: &[[f64; 10]; 3], p: [f64; 3]) -> [f64; 3] {
    let [x, y, z] = p;
    let m = [1.0, x, y, z, x * x, y * y, z * z, x * y, y * z, z * x];
    std::array::from_fn(|a| c[a].iter().zip(&m).map(|(k, v)| k * v).sum())
}

#[test]
fn c04_local_fit_reproduces_quadratics() {
    let _g = heavy();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spacing = 50.0;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for _ in 0..100 {
        let coef: [[f64; 10]; 3] = std::array::from_fn(|a| {
            std::array::from_fn(|k| match k {
                0 => rng.random_range(-200.0..200.0),
                1..=3 => rng.random_range(-1.0..1.0) + if k - 1 == a { 1.0 } else { 0.0 },
                _ => rng.random_range(-2e-4..2e-4),
            })
        });
        let center = [
            rng.random_range(-400.0..400.0),
            rng.random_range(-200.0..200.0),
            rng.random_range(1100.0..1900.0),
        ];
        // Skewed grid axes plus per-node jitter, as a real camera would see it.
        let axes: [[f64; 3]; 3] = std::array::from_fn(|a| {
            std::array::from_fn(|b| {
                spacing * (if a == b { 1.0 } else { 0.0 } + rng.random_range(-0.1..0.1))
            })
        });
        let at = |u: [f64; 3]| -> [f64; 3] {
            std::array::from_fn(|b| center[b] + (0..3).map(|a| u[a] * axes[a][b]).sum::<f64>())
        };
        let mut pairs = Vec::with_capacity(27);
        for k in 0..3 {
            for j in 0..3 {
                for i in 0..3 {
                    let u = [i as f64 - 1.0, j as f64 - 1.0, k as f64 - 1.0];
                    let cam = at(u).map(|v| v + rng.random_range(-3.0..3.0));
                    pairs.push(CorrespondencePair {
                        camera_point: cam,
                        robot_point: quad(&coef, cam),
                        lattice_index: [10 + i, 10 + j, 10 + k],
                    });
                }
            }
        }
        let block = Neighborhood27 {
            center: [11, 11, 11],
            spacing,
            pairs,
        };
        for _ in 0..100 {
            let u = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let q = at(u);
            let got = local_interpolate(q, &block).expect("well-conditioned block");
            let want = quad(&coef, q);
            let e = (0..3)
                .map(|a| (got[a] - want[a]).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(e);
            count += 1;
        }
    }
    let s = t.elapsed().as_secs_f64();
    let ok = worst <= 1e-9 && s < 10.0;
    assert!(report(
        "C4 quadratic reproduction",
        ok,
        format!("{count} queries, max error {worst:.3e} mm (<= 1e-9), {s:.2} s (< 10 s)")
    ));
}

#[test]
fn c05_detection_recall_and_precision() {
    let _g = heavy();
    let d = detection();
    let s = &d.teg;
    let total = d.trained.seconds + s.seconds;
    let ok_counts = s.in_spec_screws >= 1000 && s.confusers >= 200;
    let ok_recall = s.recall.value >= 0.995 && s.recall_interval.lower >= 0.99;
    let ok_fp = s.counts.fp == 0;
    let ok_time = total <= 600.0;
    report(
        "C5 test set size",
        ok_counts,
        format!(
            "{} in-spec screws (>= 1000), {} confusers (>= 200)",
            s.in_spec_screws, s.confusers
        ),
    );
    report(
        "C5 recall",
        ok_recall,
        format!(
            "{}/{} = {:.5} (>= 0.995), 95% lower bound {:.5} (>= 0.99)",
            s.counts.tp,
            s.counts.tp + s.counts.fn_,
            s.recall.value,
            s.recall_interval.lower
        ),
    );
    report(
        "C5 false positives",
        ok_fp,
        format!(
            "{} (== 0), {} on confusers",
            s.counts.fp, s.confuser_false_positives
        ),
    );
    report(
        "C5 runtime",
        ok_time,
        format!(
            "training {:.0} s + evaluation {:.0} s = {total:.0} s (<= 600 s)",
            d.trained.seconds, s.seconds
        ),
    );
    assert!(ok_counts && ok_recall && ok_fp && ok_time);
}

#[test]
fn c06_center_error() {
    let _g = heavy();
    let s = &detection().teg;
    let p95 = s.center_error_px.p95;
    let ok = s.center_error_px.count > 0 && p95 <= 2.0;
    assert!(report(
        "C6 center error p95",
        ok,
        format!(
            "{p95:.3} px (<= 2 px) = {:.3} mm at {:.3} mm/px over {} matches",
            s.center_error_mm.p95, s.mm_per_px, s.center_error_px.count
        )
    ));
}

// ---------------------------------------------------------------------------
// Gradient check against an independent forward pass.

/// Direct-loop forward pass: logits plus the sign of every hidden pre-activation.
fn oracle_forward(model: &FcnModel, img: &GrayImage) -> (Vec<f64>, Vec<bool>) {
    let (w, h) = (img.width(), img.height());
    let r = (KERNEL / 2) as isize;
    let mut act: Vec<f64> = img.data().to_vec();
    let mut signs = Vec::new();
    for (li, l) in model.layers.iter().enumerate() {
        let mut out = vec![0.0; l.cout * h * w];
        for co in 0..l.cout {
            for y in 0..h {
                for x in 0..w {
                    let mut s = l.bias[co];
                    for ci in 0..l.cin {
                        for ky in 0..KERNEL {
                            for kx in 0..KERNEL {
                                let (sy, sx) =
                                    (y as isize + ky as isize - r, x as isize + kx as isize - r);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let wi = ((co * l.cin + ci) * KERNEL + ky) * KERNEL + kx;
                                s += l.weights[wi] * act[(ci * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(co * h + y) * w + x] = s;
                }
            }
        }
        if li + 1 < model.layers.len() {
            signs.extend(out.iter().map(|v| *v > 0.0));
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        act = out;
    }
    (act, signs)
}

fn oracle_loss(model: &FcnModel, batch: &[LabeledPatch]) -> (f64, Vec<bool>) {
    let (mut total, mut n, mut signs) = (0.0, 0usize, Vec::new());
    for p in batch {
        let (z, s) = oracle_forward(model, p.image());
        let m = p.image().width() * p.image().height();
        for i in 0..m {
            let (z0, z1) = (z[i], z[m + i]);
            let hi = z0.max(z1);
            let lse = hi + ((z0 - hi).exp() + (z1 - hi).exp()).ln();
            total += lse - if p.label().data()[i] { z1 } else { z0 };
        }
        n += m;
        signs.extend(s);
    }
    (total / n as f64, signs)
}

fn param_mut(model: &mut FcnModel, layer: usize, idx: usize) -> &mut f64 {
    let l = &mut model.layers[layer];
    let nw = l.weights.len();
    if idx < nw {
        &mut l.weights[idx]
    } else {
        &mut l.bias[idx - nw]
    }
}

#[test]
fn c07_gradient_matches_finite_differences() {
    let _g = heavy();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let step = 1e-4;
    // Below this magnitude gradients are compared absolutely.
    let floor = 1e-6;
    let (mut draws, mut skipped) = (0usize, 0usize);
    let mut worst_rel: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for m in 0..25u64 {
        let mut model = FcnModel::init(&DEFAULT_CHANNELS, 100 + m);
        for l in &mut model.layers {
            l.bias
                .iter_mut()
                .for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
        let batch: Vec<LabeledPatch> = (0..2)
            .map(|_| {
                let (cx, cy, rad) = (
                    rng.random_range(8.0..26.0),
                    rng.random_range(8.0..26.0),
                    rng.random_range(3.0..10.0),
                );
                let img =
                    GrayImage::from_fn(PATCH_SIZE, PATCH_SIZE, |_, _| rng.random_range(0.0..1.0));
                let label = BinaryMask::from_fn(PATCH_SIZE, PATCH_SIZE, |x, y| {
                    (x as f64 - cx).hypot(y as f64 - cy) <= rad
                });
                LabeledPatch::new(img, label).unwrap()
            })
            .collect();
        let (oracle, signs) = oracle_loss(&model, &batch);
        let core = batch_loss(&model, &batch).unwrap();
        worst_oracle = worst_oracle.max((oracle - core).abs() / core.abs().max(1e-12));
        let (loss, grads) = loss_and_grad(&model, &batch).unwrap();
        worst_oracle = worst_oracle.max((oracle - loss).abs() / loss.abs().max(1e-12));

        let mut done = 0;
        while done < 5 {
            let layer = rng.random_range(0..model.layers.len());
            let n = model.layers[layer].param_count();
            let idx = rng.random_range(0..n);
            let g = &grads.layers[layer];
            let analytic = if idx < g.weights.len() {
                g.weights[idx]
            } else {
                g.bias[idx - g.weights.len()]
            };
            let base = *param_mut(&mut model, layer, idx);
            *param_mut(&mut model, layer, idx) = base + step;
            let (lp, sp) = oracle_loss(&model, &batch);
            *param_mut(&mut model, layer, idx) = base - step;
            let (lm, sm) = oracle_loss(&model, &batch);
            *param_mut(&mut model, layer, idx) = base;
            if sp != signs || sm != signs {
                skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * step);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            worst_rel = worst_rel.max(rel);
            draws += 1;
            done += 1;
        }
    }
    let s = t.elapsed().as_secs_f64();
    let ok_oracle = worst_oracle <= 1e-12;
    let ok = draws >= 100 && worst_rel <= 1e-4 && s < 30.0;
    report(
        "C7 forward pass vs direct loops",
        ok_oracle,
        format!("max relative loss difference {worst_oracle:.2e} (<= 1e-12)"),
    );
    report(
        "C7 gradient check",
        ok,
        format!(
            "{draws} draws (>= 100, {skipped} kink crossings redrawn), max relative error {worst_rel:.2e} (<= 1e-4), {s:.1} s (< 30 s)"
        ),
    );
    assert!(ok_oracle && ok);
}

// ---------------------------------------------------------------------------

#[test]
fn c08_training_is_reproducible() {
    let _g = heavy();
    let data = patch_set(
        &PatchSet {
            positives: 24,
            negatives: 24,
            mix: NegativeMix::BROAD,
            seed: 3,
        },
        false,
        &training_ranges(),
        0,
    );
    let cfg = TrainingConfig {
        epochs: 3,
        batch_size: 8,
        seed: 17,
        ..TrainingConfig::default()
    };
    let a = train(&cfg, &data).unwrap();
    let b = train(&cfg, &data).unwrap();
    let c = train(
        &TrainingConfig {
            seed: 18,
            ..cfg.clone()
        },
        &data,
    )
    .unwrap();
    let same =
        encode_weights(&a.model) == encode_weights(&b.model) && a.epoch_losses == b.epoch_losses;
    let differs = encode_weights(&a.model) != encode_weights(&c.model);

    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    save_trained(&pa, &a).unwrap();
    save_trained(&pb, &b).unwrap();
    let read = |p: &std::path::Path| std::fs::read(p).unwrap();
    let files_same = read(&pa) == read(&pb)
        && read(&pa.with_extension("json")) == read(&pb.with_extension("json"));

    let e1 = train_ensemble(&cfg, &data, 2).unwrap();
    let e2 = train_ensemble(&cfg, &data, 2).unwrap();
    let ens_same = e1
        .iter()
        .zip(&e2)
        .all(|(x, y)| encode_weights(&x.model) == encode_weights(&y.model));

    let def = TrainingConfig::default();
    let lrs = [lr_at(&def, 0), lr_at(&def, 10), lr_at(&def, 29)];
    let want = [0.01, 0.0025, 0.000625];
    let ok_lr = lrs.iter().zip(&want).all(|(g, w)| (g - w).abs() <= 1e-15);

    let ok_det = same && differs && files_same && ens_same;
    report(
        "C8 bit-identical retraining",
        ok_det,
        format!("same seed identical: {same}, files identical: {files_same}, parallel ensemble identical: {ens_same}, other seed differs: {differs}"),
    );
    report(
        "C8 learning-rate schedule",
        ok_lr,
        format!("epochs 0/10/29 -> {:?} (want {:?})", lrs, want),
    );
    assert!(ok_det && ok_lr);
}

#[test]
fn c09_unit_simulation() {
    let _g = heavy();
    let cfg = config();
    let models = detection().trained.models();
    let (cal, _, cal_secs) = calibration();
    let (s, _) = simulate_units(&cfg, &models, cal).expect("unit simulation");
    let (l, g) = (&s.local, &s.global_only);
    let secs = s.seconds + cal_secs;
    let ok_units = s.units >= 200;
    let ok_screw = l.screw_rate.estimate >= 0.995;
    let ok_unit = l.unit_rate.estimate >= 0.90;
    let ok_ablation = g.unit_rate.estimate < l.unit_rate.estimate
        && g.screw_rate.estimate < l.screw_rate.estimate;
    let ok_time = secs <= 600.0;
    report(
        "C9 units simulated",
        ok_units,
        format!(
            "{} units x {} screws (>= 200 units)",
            s.units, s.screws_per_unit
        ),
    );
    report(
        "C9 per-screw success",
        ok_screw,
        format!(
            "{}/{} = {:.5} (>= 0.995)",
            l.screw_successes, s.screws, l.screw_rate.estimate
        ),
    );
    report(
        "C9 unit completion",
        ok_unit,
        format!(
            "{}/{} = {:.4} (>= 0.90), independent-screw prediction {:.4}",
            l.unit_successes, s.units, l.unit_rate.estimate, l.predicted_unit_rate
        ),
    );
    report(
        "C9 global-only ablation worse",
        ok_ablation,
        format!(
            "screws {:.4} < {:.4}, units {:.4} < {:.4}",
            g.screw_rate.estimate,
            l.screw_rate.estimate,
            g.unit_rate.estimate,
            l.unit_rate.estimate
        ),
    );
    report(
        "C9 runtime",
        ok_time,
        format!("{secs:.0} s (<= 600 s, training excluded)"),
    );
    assert!(ok_units && ok_screw && ok_unit && ok_ablation && ok_time);
}

// ---------------------------------------------------------------------------
// Oracle equivalence

fn flood_fill_regions(
    mask: &BinaryMask,
    min_area: usize,
    padding: usize,
) -> Vec<(usize, usize, usize, usize)> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if seen[start] || !mask.data()[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let (mut x0, mut y0, mut x1, mut y1, mut area) = (w, h, 0, 0, 0);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            area += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.data()[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if area >= min_area.max(1) {
            let (px0, py0) = (x0.saturating_sub(padding), y0.saturating_sub(padding));
            let (px1, py1) = ((x1 + 1 + padding).min(w), (y1 + 1 + padding).min(h));
            out.push((px0, py0, px1 - px0, py1 - py0));
        }
    }
    out.sort_unstable();
    out
}

#[test]
fn c10_oracle_equivalence() {
    let _g = heavy();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);

    let mut region_cases = 0;
    let mut region_ok = true;
    for _ in 0..400 {
        let (w, h) = (rng.random_range(1..48), rng.random_range(1..48));
        let density = rng.random_range(0.05..0.7);
        let mask = BinaryMask::from_fn(w, h, |_, _| rng.random_bool(density));
        let (min_area, padding) = (rng.random_range(0..6), rng.random_range(0..4));
        let mut got: Vec<_> = connected_regions(&mask, min_area, padding)
            .iter()
            .map(|b: &BoundingBox| (b.x, b.y, b.w, b.h))
            .collect();
        got.sort_unstable();
        region_ok &= got == flood_fill_regions(&mask, min_area, padding);
        region_cases += 1;
    }

    let mut thr_pixels = 0usize;
    let mut thr_ok = true;
    for _ in 0..200 {
        let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
        // Quantized values so plenty of pixels sit exactly on the threshold.
        let data: Vec<f64> = (0..w * h)
            .map(|_| rng.random_range(0..=20) as f64 / 20.0)
            .collect();
        let tau = rng.random_range(0..=20) as f64 / 20.0;
        let map = ProbabilityMap::new(w, h, data.clone()).unwrap();
        let got = threshold(&map, tau);
        thr_ok &= got.width() == w && got.height() == h;
        thr_ok &= got.data().iter().zip(&data).all(|(b, p)| *b == (*p >= tau));
        thr_pixels += w * h;
    }

    let cam = default_intrinsics();
    let mut worst: f64 = 0.0;
    let mut projections = 0;
    for i in 0..20_000 {
        let px = if i < 4 {
            Point2::new(
                ((i & 1) * (SENSOR_WIDTH - 1)) as f64,
                ((i >> 1) * (SENSOR_HEIGHT - 1)) as f64,
            )
        } else {
            Point2::new(
                rng.random_range(0.0..SENSOR_WIDTH as f64),
                rng.random_range(0.0..SENSOR_HEIGHT as f64),
            )
        };
        let depth = rng.random_range(800.0..2200.0);
        let p = cam.back_project(px, depth).expect("back-projection");
        let (q, z) = cam.project(p).expect("projection");
        worst = worst.max(q.distance(&px)).max((z - depth).abs());
        let pin = cam.project_pinhole(cam.back_project_pinhole(px, depth));
        worst = worst.max(pin.distance(&px));
        projections += 1;
    }
    let s = t.elapsed().as_secs_f64();

    report(
        "C10 connected regions vs flood fill",
        region_ok,
        format!("{region_cases} random masks agree"),
    );
    report(
        "C10 threshold vs scalar",
        thr_ok,
        format!("{thr_pixels} pixels agree"),
    );
    let ok_proj = worst <= 1e-6;
    report(
        "C10 projection round trip",
        ok_proj,
        format!("{projections} pixels across the sensor, max error {worst:.2e} px (<= 1e-6)"),
    );
    let ok_time = s < 30.0;
    report("C10 runtime", ok_time, format!("{s:.2} s (< 30 s)"));
    assert!(region_ok && thr_ok && ok_proj && ok_time);
}
