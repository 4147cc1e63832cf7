//! End-to-end orchestration: case ingestion, per-preset sCBCT synthesis,
//! evaluation reports and training-set manifests.
//!
//! Per preset, synthesis runs: crop the reference to the field of view it
//! shares with the degraded volume, normalize the degraded volume to
//! `[0, 1]`, extract an artifact field, scale it by the reference's dynamic
//! range, add it to the reference, rescale to `[0, 1]`, forward project,
//! add Gaussian noise to the projections and reconstruct with OS-SART. The
//! reconstruction is clamped to `[0, 1]`, written with copies of the cropped
//! reference contours and compared with the normalized degraded volume.

mod config;
mod dataset;
mod evaluate;
mod stage;
mod synth;

pub use config::{
    parse_preset_selection, AugmentConfig, GeometryConfig, ModeChoice, PipelineConfig,
    PlaheConfig, Profile,
};
pub use dataset::{build_training_manifest, resolve, TrainingManifest, TrainingPair, TRAINING_MANIFEST_FILE};
pub use evaluate::{
    aggregate, evaluate_segmentation, segmentation_csv, BatchReport, DoseComparison,
    SegmentationReport, SegmentationRow, DOSE_HOT_VOLUME_CC,
};
pub use stage::{Stage, StageError, Staged};
pub use synth::{
    effective_ossart, noise_seed, preset_dir, similarity_rows, synthesize_case, CaseInputs,
    CaseManifest, InputDigest, LoadedCase, OutputFile, PresetRecord, PresetStatus,
    SimilarityRow, CASE_MANIFEST_FILE, SCBCT_FILE, SIMILARITY_CSV_FILE, SIMILARITY_JSON_FILE,
};
