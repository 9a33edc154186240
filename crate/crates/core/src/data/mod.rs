//! Participant-day records, CSV ingestion, segmentation, label expansion,
//! splits and synthetic data.

pub mod csvio;
pub mod record;
pub mod segment;
pub mod split;
pub mod synth;

pub use csvio::{
    dataset_header, dataset_to_csv_bytes, ingest_csv, read_confirmed_days, read_dataset, read_ground_truth, save_dataset,
    write_confirmed_days, write_dataset, write_ground_truth, Ingested, RejectedRow,
};
pub use record::{Dataset, Record, Sex};
pub use segment::{
    expand_labels, label_pipeline, segment_by_gaps, LabelPipelineStats, Segment, SegmentationStats, LABEL_HALF_WINDOW_DAYS,
    MIN_SEGMENT_DAYS,
};
pub use split::{kfold_splits, mc_split, participant_profiles, resample_count, stratified_resample, temporal_split, SplitMode};
pub use synth::{episode_direction, participant_id, synth_generate, SynthConfig, SynthOutput};
