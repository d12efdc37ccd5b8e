use std::sync::Arc;

use num_complex::Complex64;

use super::config::ChannelSpec;
use crate::channels::{fiber_link_apply, pa_channel_apply_with_drive, pulse_shape, surrogate_pa, FiberLink, GmpModel, LinearIsiChannel, PaChannel};
use crate::dsp::{draw_symbols, make_qam, mean_power, snr_to_noise_variance, ComplexSignal, Constellation, SymbolFrame};
use crate::error::Result;
use crate::rng::SeededRng;

/// A transmitted frame and what the equalizers see of it.
#[derive(Clone, Debug)]
pub struct Block {
    pub frame: SymbolFrame,
    /// Received 2-SPS samples after gain normalization.
    pub y: Vec<Complex64>,
    /// Received samples before normalization (physical units).
    pub raw: ComplexSignal,
    pub gain: f64,
}

impl Block {
    pub fn len(&self) -> usize {
        self.frame.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame.is_empty()
    }
}

#[derive(Clone, Debug)]
enum Link {
    Linear { ch: LinearIsiChannel, rolloff: f64 },
    Fiber { link: FiberLink, rolloff: f64 },
    Pa { ch: PaChannel, drive: f64, rolloff: f64 },
}

/// One operating point of a channel: draws symbols and produces received blocks.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub constellation: Arc<Constellation>,
    link: Link,
}

/// Scales `y` so that its mean sample power equals the per-sample power of
/// the transmitted constellation at `sps` samples per symbol.
pub fn agc(y: &mut [Complex64], energy: f64, sps: usize) -> f64 {
    let p = mean_power(y);
    if !(p > 0.0) {
        return 1.0;
    }
    let g = (energy / sps as f64 / p).sqrt();
    y.iter_mut().for_each(|v| *v *= g);
    g
}

impl Scenario {
    pub fn new(spec: &ChannelSpec, order: usize) -> Result<Self> {
        let constellation = Arc::new(make_qam(order)?);
        let link = match spec {
            ChannelSpec::Linear { taps, snr_db, rolloff } => {
                let nv = snr_to_noise_variance(&constellation, *snr_db);
                let ch = match taps {
                    Some(t) => LinearIsiChannel::new(t.iter().map(|p| Complex64::new(p[0], p[1])).collect(), nv)?,
                    None => LinearIsiChannel::reference(nv),
                };
                Link::Linear { ch, rolloff: *rolloff }
            }
            ChannelSpec::Fiber { preset, launch_power_dbm, ssfm_steps, gamma_per_w_km, rx_noise, rolloff } => {
                let mut link = preset.link();
                link.launch_power_dbm = *launch_power_dbm;
                link.ssfm_steps = *ssfm_steps;
                if let Some(g) = gamma_per_w_km {
                    link.gamma_per_w_km = *g;
                }
                if !rx_noise {
                    link.rx_noise_dbm = None;
                }
                link.validate()?;
                Link::Fiber { link, rolloff: *rolloff }
            }
            ChannelSpec::Pa { output_power_dbm, noise_std_volts, rolloff, linear_pa } => {
                let pa = if *linear_pa { GmpModel::gain(Complex64::new(1.0, 0.0)) } else { surrogate_pa()? };
                let mut ch = PaChannel::new(pa, *output_power_dbm);
                ch.noise_std_volts = *noise_std_volts;
                ch.validate()?;
                let drive = ch.drive_scale(&constellation, *rolloff)?;
                Link::Pa { ch, drive, rolloff: *rolloff }
            }
        };
        Ok(Self { constellation, link })
    }

    pub fn sps(&self) -> usize {
        2
    }

    pub fn fiber(&self) -> Option<(&FiberLink, f64)> {
        match &self.link {
            Link::Fiber { link, rolloff } => Some((link, *rolloff)),
            _ => None,
        }
    }

    /// Symbol SNR of the ideal receiver, when the channel defines one.
    pub fn operating_snr(&self) -> Option<f64> {
        match &self.link {
            Link::Linear { ch, .. } => Some(self.constellation.energy() / ch.noise_variance),
            Link::Pa { ch, .. } => Some(ch.operating_snr()),
            Link::Fiber { .. } => None,
        }
    }

    /// Noise variance per sample after gain `g`, when known.
    pub fn noise_variance_after(&self, g: f64) -> Option<f64> {
        match &self.link {
            Link::Linear { ch, .. } => Some(ch.noise_variance * g * g),
            Link::Pa { ch, .. } => Some(ch.noise_variance() * g * g),
            Link::Fiber { .. } => None,
        }
    }

    /// Draws `n` symbols and passes them through the channel.
    pub fn transmit(&self, n: usize, rng: &mut SeededRng) -> Result<Block> {
        let frame = draw_symbols(&self.constellation, n, rng)?;
        let raw = match &self.link {
            Link::Linear { ch, rolloff } => ch.apply(&pulse_shape(&frame, 2, *rolloff)?, rng)?,
            Link::Fiber { link, rolloff } => fiber_link_apply(&frame, link, *rolloff, rng)?,
            Link::Pa { ch, drive, rolloff } => pa_channel_apply_with_drive(&frame, ch, *rolloff, *drive, rng)?,
        };
        let mut y = raw.samples.clone();
        let gain = agc(&mut y, self.constellation.energy(), raw.sps);
        Ok(Block { frame, y, raw, gain })
    }
}
