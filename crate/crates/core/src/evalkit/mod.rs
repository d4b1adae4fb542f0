//! Evaluation: splits, reconstruction metrics, the channel-count ablation,
//! vitals assessment, SDPPG fiducials and embedding export.

mod embeddings;
mod experiments;
mod features;
mod metrics;
mod split;

pub use embeddings::{export_embeddings, read_embeddings, EmbeddingRow, DEFAULT_SEG_LEN};
pub use experiments::{
    ablate_channels, cohort_pairs, run_fold, sensing_overhead, vitals_assessment, AblationConfig, AblationRow,
    AblationRun, AblationTable, FoldOutcome, VitalsConfig, VitalsInput,
};
pub use features::{
    agi, feature_agreement, gradient, sdppg, sdppg_features, smooth5, BeatComparison, FeatureAgreement, Fiducial,
    FiducialSet, SdppgFeatures, FEATURE_NAMES,
};
pub use metrics::{
    metrics_table_csv, mrae, mrsd, reconstruction_metrics, relative_errors, vitals_table_csv, waveform_mrae,
    waveform_relative_error, Histogram, MetricsReport, RelativeSummary, SegmentError, VitalsRow, HISTOGRAM_BINS,
    METRICS_HEADER,
};
pub use split::{make_split, subject_ids, Fold, SplitKind, SplitPlan};
