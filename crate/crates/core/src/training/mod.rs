//! Losses, batch assembly, the optimisation loop and image metrics.

pub mod config;
pub mod data;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod trainer;

pub use config::TrainConfig;
pub use data::{BatchRay, Provenance, TrainBatch, TrainData};
pub use losses::{
    image_gradient_magnitude, loss_preconv, loss_reconstruction, loss_reconstruction_grad, loss_smoothness,
    smoothness_weight, total_loss, LossParts, LossWeights,
};
pub use metrics::{format_psnr, psnr, psnr_masked, ssim};
pub use pipeline::{BatchLoss, Pipeline};
pub use trainer::{load_checkpoint, save_checkpoint, CheckpointMeta, EvalResult, StepStats, Trainer};
