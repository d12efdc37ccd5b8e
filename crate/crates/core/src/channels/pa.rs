//! Power-amplifier channel: RRC-shaped symbols driven through a GMP
//! amplifier model, then AWGN.
//!
//! Power convention: a complex envelope `v` in volts delivers `|v|²/R`
//! watts into the load `R` (50 Ω by default).

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::gmp::{gmp_apply, gmp_fit, GmpIndexSets, GmpModel};
use super::linear::pulse_shape;
use crate::dsp::{
    add_awgn, dbm_to_watts, draw_symbols, fir_filter, make_qam, mean_power, ComplexSignal,
    Constellation, FilterMode, SymbolFrame,
};
use crate::error::{invalid, Result};
use crate::rng::SeededRng;

pub const PA_SPS: usize = 2;

/// How `noise_std_volts` maps onto the complex noise sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseStdConvention {
    /// Standard deviation of the complex sample: variance σ² split evenly over I and Q.
    Complex,
    /// Standard deviation of each quadrature: complex variance 2σ².
    PerDimension,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PaChannel {
    pub pa: GmpModel,
    pub noise_std_volts: f64,
    pub noise_convention: NoiseStdConvention,
    pub avg_output_power_dbm: f64,
    pub load_ohms: f64,
}

/// Memoryless soft limiter (Rapp AM/AM with a saturating AM/PM) preceded by
/// a short linear memory. Used only to generate the surrogate GMP.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftLimiter {
    pub memory: Vec<Complex64>,
    pub v_sat: f64,
    pub smoothness: f64,
    pub max_phase_rad: f64,
}

impl Default for SoftLimiter {
    fn default() -> Self {
        Self {
            memory: vec![
                Complex64::new(1.0, 0.0),
                Complex64::new(0.12, -0.06),
                Complex64::new(-0.03, 0.02),
            ],
            v_sat: 20.0,
            smoothness: 1.5,
            max_phase_rad: 0.25,
        }
    }
}

impl SoftLimiter {
    pub fn apply(&self, input: &ComplexSignal) -> ComplexSignal {
        let full = fir_filter(input, &self.memory, FilterMode::Full);
        let s2 = 2.0 * self.smoothness;
        let out = full.samples[..input.len()]
            .iter()
            .map(|w| {
                let r = w.norm();
                if r == 0.0 {
                    return Complex64::default();
                }
                let u = r / self.v_sat;
                let gain = (1.0 + u.powf(s2)).powf(-1.0 / s2);
                let phase = self.max_phase_rad * u * u / (1.0 + u * u);
                w * gain * Complex64::from_polar(1.0, phase)
            })
            .collect();
        ComplexSignal::new(out, input.sps)
    }
}

/// GMP surrogate of [`SoftLimiter::default`] over the index sets 𝒫 = {1..7},
/// ℒ = {0,1,2}, ℳ = {1}, fitted on 64-QAM waveforms (20% RRC, 2 samples per
/// symbol) at drive levels whose peaks reach about 1.4·V_sat.
pub fn surrogate_pa() -> Result<GmpModel> {
    let reference = SoftLimiter::default();
    let c = Arc::new(make_qam(64)?);
    let mut rng = SeededRng::new(0x9a_5e_ed);
    let mut input = Vec::new();
    let mut output = Vec::new();
    for &rms in &[2.0, 4.0, 6.0, 8.0, 9.0, 10.0] {
        let frame = draw_symbols(&c, 4096, &mut rng)?;
        let shaped = pulse_shape(&frame, PA_SPS, 0.2)?;
        let scale = rms / mean_power(&shaped.samples).sqrt();
        let x = shaped.scaled(scale);
        let y = reference.apply(&x);
        input.extend(x.samples);
        output.extend(y.samples);
    }
    gmp_fit(
        &ComplexSignal::new(input, PA_SPS),
        &ComplexSignal::new(output, PA_SPS),
        &GmpIndexSets::pa_model(),
    )
}

impl PaChannel {
    pub fn new(pa: GmpModel, avg_output_power_dbm: f64) -> Self {
        Self {
            pa,
            noise_std_volts: 0.4,
            noise_convention: NoiseStdConvention::Complex,
            avg_output_power_dbm,
            load_ohms: 50.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std_volts >= 0.0) {
            return Err(invalid("noise standard deviation must be non-negative"));
        }
        if !(self.load_ohms > 0.0) {
            return Err(invalid("load resistance must be positive"));
        }
        Ok(())
    }

    /// Complex noise variance per sample in V².
    pub fn noise_variance(&self) -> f64 {
        let s2 = self.noise_std_volts * self.noise_std_volts;
        match self.noise_convention {
            NoiseStdConvention::Complex => s2,
            NoiseStdConvention::PerDimension => 2.0 * s2,
        }
    }

    /// Target mean |v|² at the amplifier output.
    pub fn target_mean_square(&self) -> f64 {
        dbm_to_watts(self.avg_output_power_dbm) * self.load_ohms
    }

    /// Matched-filter symbol SNR of an ideal linear amplifier at this output power.
    pub fn operating_snr(&self) -> f64 {
        PA_SPS as f64 * self.target_mean_square() / self.noise_variance()
    }

    /// Drive scale applied to the unit-energy shaped waveform so that the
    /// amplifier output reaches the target average power. Calibrated on a
    /// fixed reference frame so every data block sees the same operating point.
    pub fn drive_scale(&self, c: &Arc<Constellation>, rolloff: f64) -> Result<f64> {
        let frame = draw_symbols(c, 8192, &mut SeededRng::new(0xca11b))?;
        let shaped = pulse_shape(&frame, PA_SPS, rolloff)?;
        let target = self.target_mean_square();
        let power = |g: f64| mean_power(&gmp_apply(&shaped.clone().scaled(g), &self.pa).samples);
        let base = mean_power(&shaped.samples);
        let mut hi = (target / base).sqrt();
        let mut lo = 0.0;
        let mut grow = 0;
        while power(hi) < target {
            lo = hi;
            hi *= 1.25;
            grow += 1;
            if grow > 40 {
                return Err(invalid(format!(
                    "amplifier cannot reach {} dBm average output",
                    self.avg_output_power_dbm
                )));
            }
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if power(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Shapes, amplifies and adds channel noise. `drive` is the result of
/// [`PaChannel::drive_scale`]; computing it once per operating point keeps
/// every block on the same amplifier operating point.
pub fn pa_channel_apply_with_drive(
    tx: &SymbolFrame,
    ch: &PaChannel,
    ps_rolloff: f64,
    drive: f64,
    rng: &mut SeededRng,
) -> Result<ComplexSignal> {
    ch.validate()?;
    let shaped = pulse_shape(tx, PA_SPS, ps_rolloff)?.scaled(drive);
    let amplified = gmp_apply(&shaped, &ch.pa);
    add_awgn(&amplified, ch.noise_variance(), rng)
}

pub fn pa_channel_apply(
    tx: &SymbolFrame,
    ch: &PaChannel,
    ps_rolloff: f64,
    rng: &mut SeededRng,
) -> Result<ComplexSignal> {
    let drive = ch.drive_scale(&tx.constellation, ps_rolloff)?;
    pa_channel_apply_with_drive(tx, ch, ps_rolloff, drive, rng)
}
