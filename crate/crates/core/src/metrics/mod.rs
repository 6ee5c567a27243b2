//! Image similarity metrics: windowed SSIM and FSIM.

mod fsim;
mod ssim;

pub use fsim::{fsim, fsim_features, fsim_from_features, FsimConfig, FsimFeatures};
pub use ssim::{registered_ssim, ssim, SsimConfig, SsimPlan};
