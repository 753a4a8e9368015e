//! Contrastive training of the ReID encoders.

pub mod batch;
pub mod loss;
pub mod optim;
pub mod trainer;

pub use batch::{
    build_batch, filter_tracklets, pseudo_positive_split, split_segments, BatchSampler, ContrastiveBatch,
    FilterConfig, SampleProvenance, SplitFractions, ViewMode,
};
pub use loss::{nt_xent_loss, positive_of, LossConfig, LossOutput};
pub use optim::{lars_tensor, Adam, AdamConfig, Lars, LarsConfig};
pub use trainer::{joint_loss_and_grads, train_reid, write_loss_curve, LossPoint, TrainConfig, TrainMode, TrainOutput};
