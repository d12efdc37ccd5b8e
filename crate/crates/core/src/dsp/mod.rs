//! Complex baseband signal primitives.

mod constellation;
mod filter;
mod noise;
mod signal;

pub use constellation::{make_qam, Constellation};
pub use filter::{
    decimate, fir_filter, fir_filter_real, group_delay, rrc_taps, upsample, FilterMode,
    DEFAULT_RRC_SPAN,
};
pub use noise::{add_awgn, dbm_to_watts, mean_power, snr_to_noise_variance, watts_to_dbm};
pub use signal::{draw_symbols, ComplexSignal, SymbolFrame};

pub use num_complex::Complex64 as C64;
