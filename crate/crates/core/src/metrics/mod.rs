//! Reconstruction metrics and training losses.

pub mod loss;
pub mod quality;
pub mod ssim;

pub use loss::{
    loss_and_gradients, loss_gradients, spatial_loss, spatial_loss_grad, spectral_loss, spectral_loss_grad, total_loss,
    LossBreakdown, LossConfig, LossMode, LossWeights, StageLoss,
};
pub use quality::{fitted_window, ms_ssim, mse, psnr, psnr_with_peak, sam, ssim, ssim_with, PSNR_CAP_DB};
pub use ssim::MsSsimConfig;
