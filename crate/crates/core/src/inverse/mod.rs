//! Simulation-free losses, training, latent fitting and constraint extraction.

pub mod extract;
pub mod fit;
pub mod loss;
pub mod train;

pub use extract::{
    extract_constraints, extract_from_map, format_bundle, parse_bundle, read_bundle, write_bundle, ConstraintBundle,
    ExtractReport,
};
pub use fit::{fit_latents, FitConfig, FitResult, Observation};
pub use loss::{
    loss_bone, loss_bone_selfsup, loss_ereg, loss_fix, loss_id, loss_landmark, loss_rigid, loss_skin, loss_soft,
    soft_energy, test_objective, train_objective, Camera, LossBreakdown, LossEval, LossWeights, MaterialParams,
    PointGrad,
};
pub use train::{
    adam_step, batch_objective, format_loss_csv, latent_table, train, AdamState, LogRow, Optimizer, SampleCounts,
    Schedule, TrainConfig, TrainPair, TrainResult, TrainingSet,
};
