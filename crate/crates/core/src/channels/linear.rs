use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{
    add_awgn, fir_filter, fir_filter_real, rrc_taps, upsample, ComplexSignal, FilterMode,
    SymbolFrame, DEFAULT_RRC_SPAN,
};
use crate::error::{invalid, Result};
use crate::rng::SeededRng;

/// Linear intersymbol-interference channel with additive white Gaussian noise,
/// operating at 2 samples per symbol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearIsiChannel {
    pub taps: Vec<Complex64>,
    pub noise_variance: f64,
}

impl LinearIsiChannel {
    pub fn new(taps: Vec<Complex64>, noise_variance: f64) -> Result<Self> {
        if taps.is_empty() {
            return Err(invalid("channel needs at least one tap"));
        }
        if !(noise_variance >= 0.0) {
            return Err(invalid("noise variance must be non-negative"));
        }
        Ok(Self {
            taps,
            noise_variance,
        })
    }

    /// The five-tap T/2-spaced reference channel.
    pub fn reference_taps() -> Vec<Complex64> {
        vec![
            Complex64::new(0.055, 0.05),
            Complex64::new(0.283, -0.120),
            Complex64::new(-0.768, 0.279),
            Complex64::new(-0.064, -0.058),
            Complex64::new(0.047, -0.023),
        ]
    }

    pub fn reference(noise_variance: f64) -> Self {
        Self {
            taps: Self::reference_taps(),
            noise_variance,
        }
    }

    pub fn identity(noise_variance: f64) -> Self {
        Self {
            taps: vec![Complex64::new(1.0, 0.0)],
            noise_variance,
        }
    }

    pub fn apply(&self, tx: &ComplexSignal, rng: &mut SeededRng) -> Result<ComplexSignal> {
        linear_channel_apply(tx, self, rng)
    }
}

/// Same-mode convolution with the channel taps followed by AWGN.
pub fn linear_channel_apply(
    tx: &ComplexSignal,
    ch: &LinearIsiChannel,
    rng: &mut SeededRng,
) -> Result<ComplexSignal> {
    let filtered = fir_filter(tx, &ch.taps, FilterMode::Same);
    add_awgn(&filtered, ch.noise_variance, rng)
}

/// Zero-stuffing by `sps` followed by a unit-energy RRC filter, aligned so
/// that symbol `k` peaks at sample `k * sps`.
pub fn pulse_shape(frame: &SymbolFrame, sps: usize, rolloff: f64) -> Result<ComplexSignal> {
    let taps = rrc_taps(rolloff, DEFAULT_RRC_SPAN, sps)?;
    Ok(fir_filter_real(
        &upsample(frame, sps),
        &taps,
        FilterMode::Same,
    ))
}
