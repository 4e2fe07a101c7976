//! IMU/ground-truth file formats, windowing and the synthetic data generator.

mod dataset;
mod sequence;
mod synth;
mod window;

pub use dataset::{
    generate_dataset, read_manifest, write_manifest, Dataset, ManifestRow, Split, SplitCounts,
    MANIFEST_FILE,
};
pub use sequence::{
    load_sequence, sequence_dir, write_sequence, GroundTruthTrack, ImuSequence, GRID_TOLERANCE,
    GT_FILE, IMU_FILE,
};
pub use synth::{synthesize, SyntheticSpec, GRAVITY, KNOT_SPACING};
pub use window::{batch_labels, batch_signals, make_windows, ImuWindow, WindowGeometry};
