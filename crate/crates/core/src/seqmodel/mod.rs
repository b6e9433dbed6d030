//! The parametric vector field `v_t(x; θ)`: a small pre-norm transformer
//! over frames with a hand-written backward pass, its optimizer, and the
//! checkpoint format.

mod checkpoint;
mod condition;
mod config;
mod model;
mod optim;
mod params;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
    CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use condition::{ConditionBundle, EMO_DIM, NV_DIM};
pub use config::ModelConfig;
pub use model::{FieldInput, Model, Tape};
pub use optim::{batch_loss_and_grad, train_step, Adam, LossScope, LrSchedule, TrainItem};
pub use params::Parameters;
