//! From-scratch convolutional network: layer kernels, the classifier,
//! SGD with momentum and weight decay, early-stopped training and the model
//! file format.

mod io;
mod layers;
mod model;
mod optim;
mod tensor;
mod train;

pub use io::{load_model, read_model_file, save_model, write_model_file, FORMAT_VERSION};
pub use layers::{
    conv2d_backward, conv2d_forward, cross_entropy_loss, dense_backward, dense_forward,
    maxpool2x2_backward, maxpool2x2_forward, relu, relu_backward, relu_forward, softmax,
    softmax_cross_entropy_grad, ConvGrads, DenseGrads, PoolOutput,
};
pub use model::{as_batch, Model, ModelArchitecture, StageDims, INPUT_CHANNELS, NUM_CLASSES};
pub use optim::{lr_schedule, sgd_step, sgd_update};
pub use tensor::Tensor;
pub use train::{
    evaluate, train, train_with_observer, EarlyStopping, EpochRecord, History, StopDecision,
    TrainConfig,
};
pub(crate) use train::run_epoch;
