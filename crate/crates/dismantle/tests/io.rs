use proptest::prelude::*;

use dismantle::config::RunConfig;
use dismantle::harness::{calibrate, teg_render};
use dismantle::io::*;
use dismantle_core::calib::{camera_to_robot, WorkVolume};
use dismantle_core::detect::DepthMap;
use dismantle_core::fcn::{FcnModel, TrainedModel, TrainingConfig, DEFAULT_CHANNELS};
use dismantle_core::imgproc::{BinaryMask, GrayImage, ProbabilityMap, RgbImage};

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.calib.volume = WorkVolume {
        origin: [-100.0, -100.0, -100.0],
        extents: [200.0, 200.0, 150.0],
        spacing: 50.0,
    };
    cfg.resolved(Some(3)).unwrap()
}

proptest! {
    #[test]
    fn pgm16_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let data: Vec<f64> = (0..w * h).map(|i| ((seed.wrapping_mul(i as u64 + 1) >> 11) % 65536) as f64 / 65535.0).collect();
        let map = ProbabilityMap::new(w, h, data.clone()).unwrap();
        let back = decode_pgm_map(&encode_pgm16(&map)).unwrap();
        prop_assert_eq!((back.width(), back.height()), (w, h));
        for (a, b) in back.data().iter().zip(&data) {
            prop_assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-15);
        }
    }

    #[test]
    fn mask_round_trip(w in 1usize..30, h in 1usize..30, bits in proptest::collection::vec(any::<bool>(), 900)) {
        let mask = BinaryMask::from_fn(w, h, |x, y| bits[y * 30 + x]);
        let bytes = encode_mask_pgm(&mask);
        let header = format!("P5\n{w} {h}\n1\n");
        prop_assert!(bytes.starts_with(header.as_bytes()));
        prop_assert_eq!(decode_mask_pgm(&bytes).unwrap(), mask);
    }

    #[test]
    fn depth_round_trip(w in 1usize..16, h in 1usize..16, vals in proptest::collection::vec(-10.0f64..3000.0, 256)) {
        let depth = DepthMap::new(w, h, vals[..w * h].to_vec()).unwrap();
        let bytes = encode_depth(&depth);
        prop_assert_eq!(bytes.len(), 16 + 4 * w * h);
        let back = decode_depth(&bytes).unwrap();
        for (a, b) in back.data().iter().zip(depth.data()) {
            if b.is_nan() {
                prop_assert!(a.is_nan());
            } else {
                prop_assert_eq!(*a, *b as f32 as f64);
            }
        }
    }
}

#[test]
fn pgm_rejects_garbage() {
    assert!(decode_pgm_map(b"P2\n1 1\n255\n0").is_err());
    assert!(decode_pgm_map(b"P5\n2 2\n65535\n\0\0").is_err());
    assert!(decode_mask_pgm(b"P5\n1 1\n1\n\x02").is_err());
    // Comments and 8-bit rasters are accepted.
    let m = decode_pgm_map(b"P5\n# c\n2 1\n255\n\x00\xff").unwrap();
    assert_eq!(m.data(), &[0.0, 1.0]);
}

#[test]
fn depth_rejects_bad_header_and_length() {
    let d = DepthMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let mut bytes = encode_depth(&d);
    assert_eq!(&bytes[..4], b"DPF1");
    bytes.pop();
    assert!(decode_depth(&bytes).is_err());
    assert!(decode_depth(b"XXXX\0\0\0\0\0\0\0\0\0\0\0\0").is_err());
}

#[test]
fn png_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let rgb = RgbImage::from_fn(7, 5, |x, y| [x as f64 / 6.0, y as f64 / 4.0, 0.5]);
    let p = dir.path().join("rgb.png");
    write_png_rgb(&p, &rgb).unwrap();
    let back = read_png_rgb(&p).unwrap();
    for (a, b) in back.data().iter().zip(rgb.data()) {
        for c in 0..3 {
            assert!((a[c] - b[c]).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
    let gray = GrayImage::from_fn(4, 3, |x, y| (x + y) as f64 / 5.0);
    let g = dir.path().join("g.png");
    write_png_gray(&g, &gray).unwrap();
    let back = read_png_gray(&g).unwrap();
    for (a, b) in back.data().iter().zip(gray.data()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-9);
    }
}

#[test]
fn weights_round_trip_and_detect_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let model = FcnModel::init(&DEFAULT_CHANNELS, 9);
    let trained = TrainedModel {
        model: model.clone(),
        epoch_losses: vec![0.5, 0.25],
        config: TrainingConfig::default(),
    };
    let p = dir.path().join("m.bin");
    let side = save_trained(&p, &trained).unwrap();
    assert_eq!(side.param_count, model.param_count());
    assert_eq!(load_model(&p).unwrap(), model);

    let mut bytes = std::fs::read(&p).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&p, &bytes).unwrap();
    assert!(load_model(&p).is_err());
}

#[test]
fn model_set_round_trip_and_missing_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let t = |s| TrainedModel {
        model: FcnModel::init(&DEFAULT_CHANNELS, s),
        epoch_losses: vec![1.0],
        config: TrainingConfig::default(),
    };
    save_models(dir.path(), &t(1), &[t(2), t(3)]).unwrap();
    let set = load_models(dir.path()).unwrap();
    assert_eq!(set.ensemble.len(), 2);
    assert_eq!(set.recall, t(1).model);
    assert_eq!(set.hashes().len(), 3);

    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_models(empty.path()),
        Err(dismantle::Error::MissingModels(_))
    ));
}

#[test]
fn lattice_file_round_trip() {
    let cfg = small_config();
    let cal = calibrate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("lattice.json");
    write_lattice(
        &p,
        &LatticeFile::new(&cal.lattice, &cal.map, Some(world_hash(&cfg.world))),
    )
    .unwrap();
    let (lattice, map, file) = read_lattice(&p).unwrap();
    assert_eq!(lattice, cal.lattice);
    assert_eq!(map, cal.map);
    assert_eq!(
        file.world_hash.as_deref(),
        Some(world_hash(&cfg.world).as_str())
    );

    let cam = cal
        .lattice
        .nodes
        .iter()
        .find_map(|n| n.camera_point)
        .unwrap();
    assert_eq!(
        camera_to_robot(cam, &lattice, &map).unwrap(),
        camera_to_robot(cam, &cal.lattice, &cal.map).unwrap()
    );

    let mut broken = file.clone();
    broken.nodes.swap(0, 1);
    assert!(broken.lattice().is_err());
    let mut wrong_version = file;
    wrong_version.format_version = 99;
    assert!(wrong_version.lattice().is_err());
}

#[test]
fn scene_bundle_round_trip() {
    let cfg = small_config();
    let (spec, img, truth) = teg_render(&cfg, 0);
    let dir = tempfile::tempdir().unwrap();
    write_scene_bundle(dir.path(), &img, &spec, &truth).unwrap();
    for f in ["rgb.png", "depth.f32", "truth.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let (back, file) = read_scene_bundle(dir.path()).unwrap();
    assert_eq!(file.spec, spec);
    assert_eq!(file.truth, truth);
    assert_eq!(
        (back.rgb().width(), back.rgb().height()),
        (img.rgb().width(), img.rgb().height())
    );
    for (a, b) in back.depth().data().iter().zip(img.depth().data()) {
        assert!(a.is_nan() && b.is_nan() || (a - b).abs() <= 1e-3 * b.abs());
    }
}

#[test]
fn hashes_are_stable_hex() {
    let h = sha256_hex(b"abc");
    assert_eq!(
        h,
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
    assert_eq!(json_hash(&[1, 2, 3]), json_hash(&[1, 2, 3]));
    assert_ne!(json_hash(&[1, 2, 3]), json_hash(&[1, 2, 4]));
}
