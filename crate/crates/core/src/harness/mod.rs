//! Training protocol, evaluation, checkpoints, ablations and reports.

mod ablation;
mod checkpoint;
mod config;
mod outputs;
mod report;
mod run;

pub use ablation::{
    ablate_extractors, ablate_freeze, ablate_fusion, cross_validate, folds_table, fused_dims, seed_list, significance,
    sweep, visual_feature_values, ArmResult, ExtractorAblation, FoldResult, FreezeAblation, FreezeArm, FusionAblation,
    FusionRow, PairTest, SeedComparison, Sweep, SweepAxis, SweepPoint, EXTRACTOR_ARMS,
};
pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_VERSION};
pub use config::{Preset, PresetDims, RunConfig, Scheduler, SyntheticCorpus};
pub use outputs::{
    answer_error_table, loss_table, metrics_table, write_eval, write_json, write_run, write_timing, CHECKPOINT_FILE,
    METRICS_FILE, PREDICTIONS, REPORT_FILE, TEST_PREDICTIONS, TIMING_FILE, TRAIN_PREDICTIONS,
};
pub use report::{exact, percent, Table};
pub use run::{
    evaluate, load_visual, predict_corpus, run, run_on, train, Corpus, ParamCounts, RunOutcome, RunReport, Trained,
};
