//! Metrics, run configuration and the end-to-end workflows.

mod commands;
mod config;
mod metrics;
mod study;

pub use commands::{
    cmd_ablate, cmd_evaluate, cmd_extract, cmd_fit, cmd_gen_corpus, cmd_simulate, cmd_study_resolution, cmd_train,
    configured_effects, load_checkpoint, run_command, Command, LatentFile, RunSummary, MANIFEST_FILE, METRICS_FILE,
};
pub use config::{
    AblateConfig, CorpusConfig, IoConfig, Profile, RunConfig, Side, SimConfig, StudyConfig, Variant, LADDER_SCALE, HUMAN_LADDER,
};
pub use metrics::{
    evaluate_outcome, format_metric_csv, jaw_fit, jaw_recovery_error, masked_surface, metric_bone_fidelity, metric_csv_row,
    metric_fscore, metric_jaw_rigidity, metric_normal_error, metric_s2m, metric_skull_fixation, metric_v2v, penetration_pairs,
    MetricOptions, MetricReport, Outcome, METRIC_CSV_HEADER,
};
pub use study::{
    ablation_study, eval_mask, evaluate_checkpoint, evaluate_field_pair, field_output, format_ablation_csv, format_study_csv,
    jaw_open, load_corpus, mean_jaw_recovery, model_anatomy, resolution_study, sim_options, study_pairs, train_model,
    variant_config, AblationRow, FieldOutput, PairEval, ResolutionStudy, StudyRow,
};
