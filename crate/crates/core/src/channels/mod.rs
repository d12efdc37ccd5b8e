//! Forward channel simulators.

pub mod fiber;
pub mod gmp;
pub mod linear;
pub mod pa;

pub use fiber::{
    cd_compensate, dbp, fiber_link_apply, launch_waveform, ssfm_propagate, Direction, FiberLink,
    NoiseReference,
};
pub use gmp::{eval_terms, gmp_apply, gmp_fit, magnitudes, GmpIndexSets, GmpModel, GmpTerm, OrderLags, TermKind};
pub use linear::{linear_channel_apply, pulse_shape, LinearIsiChannel};
pub use pa::{
    pa_channel_apply, pa_channel_apply_with_drive, surrogate_pa, NoiseStdConvention, PaChannel,
    SoftLimiter,
};
