//! LSTM-based data detection: network, training and inference.

mod checkpoint;
mod detector;
mod lstm;
mod optim;
mod train;

pub use checkpoint::{Checkpoint, CheckpointConfig, ModelArrays, TrainedDetector, CHECKPOINT_VERSION};
pub use detector::{predict_bits, train_bank, DetectorConfig, FeatureMap, FrameExamples, GroupExamples, ModelBank, Sharing};
pub use lstm::{
    backward, batch_loss, cell_step, cross_entropy, forward, forward_batch, loss, lstm_cell_forward, CellOutput,
    ForwardCache, Gate, Layout, Loss, LstmParams, StepCache, GATES, PROB_EPS,
};
pub use optim::{clip_gradients, optimizer_step, Optimizer, TrainConfig, TrainingState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use train::{
    bit_accuracy, fill_batch, mean_cross_entropy, train, train_from, ExampleSet, ExampleSource, TrainingExample,
    TrainingHistory,
};
