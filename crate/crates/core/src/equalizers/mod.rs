//! Equalizers and their training procedures.

mod features;
mod fir;
mod gradsuite;
mod metrics;
mod models;
mod reference;
mod vae;
mod vqvae;

pub use features::{equalize_nn, extract_gmp_features, FeatureBank, FeatureExtractorConfig};
pub use fir::{demap_hard, equalize_fir, FirEqualizer};
pub use gradsuite::{run_grad_suite, GradCase, GradFault, GradPath};
pub use metrics::{align_and_ser, evm, ser_fixed, AlignSearch, Alignment};
pub use models::{Decoder, DecoderCache, Encoder, EncoderCache};
pub use vae::{elbo_linear, elbo_mp, elbo_parts, entropy, soft_demap, vae_decoder_soft, ElboParts, MpTaps, VaeConfig, VaeStats, VaeTrainer};
pub use vqvae::{psi_update, vqvae_loss, CommitWeight, StepStats, VqVaeConfig, VqVaeTrainer};
pub use reference::{cma_batch_step, cma_step, ddlms_run, ffe_mmse_solve, ffe_mmse_train_step, CmaState, DdLmsConfig, DdLmsPoint, DdLmsTrainer, FirObjective, FirTrainer};
