//! Learned block dynamics: network, training curriculum and model files.

mod io;
mod network;
mod train;

pub use io::{load_model, load_model_for, model_from_str, model_to_string, save_model, MODEL_SCHEMA_VERSION};
pub use network::{
    analytic_param_count, autoencoder_loss, sequence_loss, Architecture, BlockGrads, BlockTrace, Decoder, DenseShape,
    LatentState, Layout, NetworkParams, RecurrentShape, Sequence, Stage,
};
pub use train::{
    multi_step_mse, persistence_mse, single_step_mse, stage1_autoencoder, stage2_single_step,
    stage3_multi_step, train_curriculum, windows, write_metrics_csv, MetricRow, StageConfig, StageLosses,
    TrainConfig, TrainOutcome, TrainSummary, TrainingData,
};
