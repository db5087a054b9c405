//! Toy ε-prediction diffusion denoiser conditioned on gray frames, a palette
//! and a reference frame.

mod checkpoint;
mod network;
mod ops;
mod schedule;
mod train;
mod window;

pub use checkpoint::{Checkpoint, TrainingMeta, FORMAT_VERSION, MAGIC};
pub use network::{
    fuse_palette, predict_eps, project_palette, timestep_embedding, Denoiser, ForwardCache,
    NetworkConfig, ParamId, Params, Tensor,
};
pub use schedule::{make_schedule, NoiseSchedule};
pub use train::{
    loss_and_grad, train, train_with_progress, training_loss, Adam, TrainOptions, TrainReport,
    TrainingExample,
};
pub use window::{assemble_input, disassemble_input, forward_noise, LatentWindow};
