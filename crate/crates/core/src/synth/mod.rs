//! Synthetic ground truth: the robot/camera world, calibration jig captures,
//! panel scenes with screws and confusers, and training patches.

mod jig;
mod noise;
mod scene;
mod world;

pub use jig::{
    collect_correspondences, measure_marker, simulate_jig_capture, CaptureParams, JigCapture,
    JigFault, JigObserver,
};
pub use noise::{derive_seed, fractal_noise, mix64, value_noise};
pub use scene::{
    random_confuser, random_confuser_of, random_screw, render_patch, render_patch_rgb,
    render_scene, teg_scene, training_patches, training_ranges, unit_tile, ConfuserKind,
    ConfuserSpec, ConfuserTruth, Degradation, Envelope, NegativeMix, PatchContent, SceneRanges,
    SceneSpec, SceneTruth, ScrewSpec, ScrewTruth, TegLayout, HEAD_RELIEF_MM,
    NOMINAL_HEAD_RADIUS_MM,
};
pub use world::{
    default_intrinsics, k1_for_corner_shift, Sinusoid, TrueWorldModel, WorldParams, DEFAULT_FOCAL,
    SENSOR_HEIGHT, SENSOR_WIDTH,
};
