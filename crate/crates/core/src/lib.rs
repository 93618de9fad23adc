//! Multi-view consistent stylization of Gaussian scenes through score
//! distillation with frequency-domain latent filtering.

pub mod cli;
pub mod config;
pub mod distill;
pub mod guidance;
pub mod rng;
pub mod scene;
pub mod schedule;
pub mod spectral;
pub mod stylize;
pub mod tensor;

pub use distill::{csd_delta, dds_delta, sds_delta, DistillConfig, Omega, ScoreDelta};
pub use guidance::{
    cfg_combine, guided_predict, ConditioningSpec, Denoiser, Fingerprint, FrozenLinearDenoiser,
    GaussianToyDenoiser, Role, Token,
};
pub use scene::{GaussianScene, SplatWeights};
pub use schedule::{ddim_noise, NoiseSchedule, ScheduleParams};
pub use spectral::{band_scale, fft3, ifft3, make_highpass, mvfc, FrequencyMask};
pub use tensor::{LatentPair, MultiViewLatent};
