use dismantle::config::RunConfig;
use dismantle::harness::{pixel_accuracy, split_indices};
use dismantle_core::fcn::{train, LabeledPatch};
use dismantle_core::synth::{training_patches, training_ranges, NegativeMix};

#[test]
fn toy_dataset_reaches_98_percent_held_out_pixel_accuracy() {
    let plain = NegativeMix {
        panel: 1.0,
        rivet: 0.0,
        hole: 0.0,
        stain: 0.0,
    };
    let data = training_patches(500, 500, &plain, false, &training_ranges(), 42);
    assert_eq!(data.len(), 1000);
    let (train_idx, held_idx) = split_indices(data.len(), 0.2, 7);
    let pick =
        |idx: &[usize]| -> Vec<LabeledPatch> { idx.iter().map(|&i| data[i].clone()).collect() };
    let (train_set, held) = (pick(&train_idx), pick(&held_idx));
    assert_eq!(held.len(), 200);

    // The recall model's training settings from the default run config.
    let config = RunConfig::default().training.recall;
    let trained = train(&config, &train_set).unwrap();
    let acc = pixel_accuracy(&trained.model, &held).unwrap();
    let passed = acc >= 0.98;
    let line = format!(
        "[{}] toy training: held-out pixel accuracy {acc:.4} (>= 0.98), final loss {:.4}\n",
        if passed { "PASS" } else { "FAIL" },
        trained.epoch_losses.last().unwrap()
    );
    std::io::Write::write_all(&mut std::io::stderr(), line.as_bytes()).unwrap();
    assert!(passed);
}
