//! Single-span fiber link: split-step Fourier propagation, coherent receiver
//! front end, static dispersion compensation and digital backpropagation.
//!
//! Units: time in ps, frequency in rad/ps, distance in km, power in W.
//! The field obeys
//!
//! ```text
//! dA/dz = -α/2·A - jβ₂/2·d²A/dt² + jγ|A|²A
//! ```
//!
//! so the linear operator over a distance `dz` is
//! `exp((jβ₂ω²/2 - α/2)·dz)` on the DFT grid.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dsp::{
    add_awgn, dbm_to_watts, decimate, fir_filter_real, rrc_taps, upsample, ComplexSignal,
    FilterMode, SymbolFrame, DEFAULT_RRC_SPAN,
};
use crate::error::{invalid, Error, Result};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Forward,
    Backward,
}

/// How the receiver noise power is referenced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseReference {
    /// The stated power falls inside the symbol-rate bandwidth, so the
    /// matched-filter SNR equals received power over noise power.
    SymbolBandwidth,
    /// The stated power is spread over the whole simulation bandwidth.
    SimulationBandwidth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberLink {
    pub alpha_db_per_km: f64,
    pub beta2_ps2_per_km: f64,
    pub gamma_per_w_km: f64,
    pub length_km: f64,
    pub ssfm_steps: usize,
    pub launch_power_dbm: f64,
    /// `None` switches receiver noise off.
    pub rx_noise_dbm: Option<f64>,
    pub noise_reference: NoiseReference,
    /// Two-sided width of the brick-wall receiver filter.
    pub lpf_bandwidth_ghz: f64,
    pub rx_sample_rate_ghz: f64,
    pub cd_precomp_fraction: f64,
    pub symbol_rate_gbaud: f64,
    /// Simulation oversampling factor.
    pub sim_sps: usize,
}

impl FiberLink {
    /// Standard single-mode fiber, 110 km.
    pub fn ssmf() -> Self {
        Self {
            alpha_db_per_km: 0.2,
            beta2_ps2_per_km: -21.683,
            gamma_per_w_km: 1.3,
            length_km: 110.0,
            ssfm_steps: 100,
            launch_power_dbm: 8.0,
            rx_noise_dbm: Some(-33.5),
            noise_reference: NoiseReference::SymbolBandwidth,
            lpf_bandwidth_ghz: 45.0,
            rx_sample_rate_ghz: 50.0,
            cd_precomp_fraction: 0.9,
            symbol_rate_gbaud: 25.0,
            sim_sps: 8,
        }
    }

    /// Non-zero dispersion-shifted fiber, 110 km.
    pub fn nzdsf() -> Self {
        Self {
            alpha_db_per_km: 0.21,
            beta2_ps2_per_km: -4.0,
            gamma_per_w_km: 1.6,
            ..Self::ssmf()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ssfm_steps < 1 {
            return Err(invalid("ssfm_steps must be >= 1"));
        }
        if !(self.length_km > 0.0) {
            return Err(invalid("fiber length must be positive"));
        }
        if !(0.0..=1.0).contains(&self.cd_precomp_fraction) {
            return Err(invalid("cd_precomp_fraction must lie in [0, 1]"));
        }
        if self.sim_sps == 0 || !(self.symbol_rate_gbaud > 0.0) {
            return Err(invalid("symbol rate and oversampling must be positive"));
        }
        let ratio = self.sim_rate_ghz() / self.rx_sample_rate_ghz;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(invalid(
                "simulation rate must be an integer multiple of the receiver rate",
            ));
        }
        let rx_sps = self.rx_sample_rate_ghz / self.symbol_rate_gbaud;
        if (rx_sps - rx_sps.round()).abs() > 1e-9 {
            return Err(invalid(
                "receiver rate must be an integer multiple of the symbol rate",
            ));
        }
        Ok(())
    }

    pub fn sim_rate_ghz(&self) -> f64 {
        self.symbol_rate_gbaud * self.sim_sps as f64
    }

    pub fn rx_sps(&self) -> usize {
        (self.rx_sample_rate_ghz / self.symbol_rate_gbaud).round() as usize
    }

    pub fn launch_power_w(&self) -> f64 {
        dbm_to_watts(self.launch_power_dbm)
    }

    /// Field attenuation coefficient in 1/km (half the power coefficient).
    fn alpha_field(&self) -> f64 {
        self.alpha_db_per_km * std::f64::consts::LN_10 / 10.0 / 2.0
    }

    /// Average received power with the nonlinearity ignored.
    pub fn received_power_w(&self) -> f64 {
        self.launch_power_w() * 10f64.powf(-self.alpha_db_per_km * self.length_km / 10.0)
    }
}

/// Angular frequency grid (rad/ps) of an `n`-point DFT at sample period `dt_ps`.
fn omega_grid(n: usize, dt_ps: f64) -> Vec<f64> {
    let df = 2.0 * std::f64::consts::PI / (n as f64 * dt_ps);
    (0..n)
        .map(|k| {
            let k = if k <= (n - 1) / 2 {
                k as f64
            } else {
                k as f64 - n as f64
            };
            k * df
        })
        .collect()
}

struct Spectral {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl Spectral {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        Self {
            fwd,
            inv,
            scratch: vec![Complex64::default(); len],
        }
    }

    /// x <- IFFT(H · FFT(x)), with the 1/n normalization folded into H by the caller.
    fn apply(&mut self, x: &mut [Complex64], h: &[Complex64]) {
        self.fwd.process_with_scratch(x, &mut self.scratch);
        x.iter_mut().zip(h).for_each(|(v, g)| *v *= g);
        self.inv.process_with_scratch(x, &mut self.scratch);
    }
}

fn linear_operator(
    omega: &[f64],
    alpha_field: f64,
    beta2: f64,
    dz: f64,
    n: usize,
) -> Vec<Complex64> {
    let norm = 1.0 / n as f64;
    omega
        .iter()
        .map(|w| {
            let phase = 0.5 * beta2 * w * w * dz;
            Complex64::from_polar(norm * (-alpha_field * dz).exp(), phase)
        })
        .collect()
}

/// Symmetric split-step propagation over `length_km` in `steps` equal steps.
/// The backward direction applies the exact inverse of each forward step
/// (negated α, β₂, γ) in reverse order.
pub fn split_step(
    waveform: &ComplexSignal,
    fiber: &FiberLink,
    length_km: f64,
    steps: usize,
    sample_rate_ghz: f64,
    direction: Direction,
) -> Result<ComplexSignal> {
    if steps == 0 {
        return Err(invalid("split-step needs at least one step"));
    }
    let n = waveform.len();
    if n < 2 {
        return Err(invalid("waveform too short for spectral propagation"));
    }
    let sign = match direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let alpha = sign * fiber.alpha_field();
    let beta2 = sign * fiber.beta2_ps2_per_km;
    let gamma = sign * fiber.gamma_per_w_km;
    let dz = length_km / steps as f64;
    let omega = omega_grid(n, 1e3 / sample_rate_ghz);
    let half = linear_operator(&omega, alpha, beta2, dz / 2.0, n);
    // two adjacent half steps merge into one full step
    let full = linear_operator(&omega, alpha, beta2, dz, n);
    let mut spec = Spectral::new(n);
    let mut a = waveform.samples.clone();
    spec.apply(&mut a, &half);
    for step in 0..steps {
        if gamma != 0.0 {
            for v in a.iter_mut() {
                *v *= Complex64::from_polar(1.0, gamma * v.norm_sqr() * dz);
            }
        }
        let op = if step + 1 == steps { &half } else { &full };
        spec.apply(&mut a, op);
    }
    if a.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite("split-step propagation"));
    }
    Ok(ComplexSignal::new(a, waveform.sps))
}

/// Propagates a waveform sampled at `waveform.sps` samples per symbol over
/// the whole link with `fiber.ssfm_steps` steps.
pub fn ssfm_propagate(
    waveform: &ComplexSignal,
    fiber: &FiberLink,
    direction: Direction,
) -> Result<ComplexSignal> {
    let rate = fiber.symbol_rate_gbaud * waveform.sps as f64;
    split_step(
        waveform,
        fiber,
        fiber.length_km,
        fiber.ssfm_steps,
        rate,
        direction,
    )
}

/// All-pass filter undoing the dispersion accumulated over `distance_km`.
/// A negative distance re-applies dispersion.
pub fn cd_compensate(
    signal: &ComplexSignal,
    beta2_ps2_per_km: f64,
    distance_km: f64,
    sample_rate_ghz: f64,
) -> Result<ComplexSignal> {
    let n = signal.len();
    if n < 2 {
        return Err(invalid("signal too short for dispersion compensation"));
    }
    if distance_km == 0.0 {
        return Ok(signal.clone());
    }
    let omega = omega_grid(n, 1e3 / sample_rate_ghz);
    let op = linear_operator(&omega, 0.0, -beta2_ps2_per_km, distance_km, n);
    let mut out = signal.samples.clone();
    Spectral::new(n).apply(&mut out, &op);
    Ok(ComplexSignal::new(out, signal.sps))
}

/// Ideal low-pass filter keeping |f| <= bandwidth/2, followed by
/// downsampling by `factor`.
fn brickwall_resample(
    signal: &ComplexSignal,
    bandwidth_ghz: f64,
    sample_rate_ghz: f64,
    factor: usize,
) -> Result<ComplexSignal> {
    let n = signal.len();
    let df = sample_rate_ghz / n as f64;
    let norm = 1.0 / n as f64;
    let mask: Vec<Complex64> = (0..n)
        .map(|k| {
            let f = if k <= (n - 1) / 2 {
                k as f64
            } else {
                k as f64 - n as f64
            } * df;
            if f.abs() <= bandwidth_ghz / 2.0 {
                Complex64::new(norm, 0.0)
            } else {
                Complex64::default()
            }
        })
        .collect();
    let mut out = signal.samples.clone();
    Spectral::new(n).apply(&mut out, &mask);
    decimate(&ComplexSignal::new(out, signal.sps), factor, 0)
}

/// Upsampled and RRC-shaped symbols scaled to the launch power (W per sample).
pub fn launch_waveform(
    tx: &SymbolFrame,
    fiber: &FiberLink,
    ps_rolloff: f64,
) -> Result<ComplexSignal> {
    let taps = rrc_taps(ps_rolloff, DEFAULT_RRC_SPAN, fiber.sim_sps)?;
    let shaped = fir_filter_real(&upsample(tx, fiber.sim_sps), &taps, FilterMode::Same);
    // unit-energy taps give E|x|²/sps per sample
    let energy = tx.constellation.energy();
    let scale = (fiber.launch_power_w() * fiber.sim_sps as f64 / energy).sqrt();
    Ok(shaped.scaled(scale))
}

/// Full transmit–fiber–receiver chain. Returns the receiver-rate signal (in
/// √W) after static compensation of `cd_precomp_fraction` of the link's
/// dispersion.
pub fn fiber_link_apply(
    tx: &SymbolFrame,
    fiber: &FiberLink,
    ps_rolloff: f64,
    rng: &mut SeededRng,
) -> Result<ComplexSignal> {
    fiber.validate()?;
    let launched = launch_waveform(tx, fiber, ps_rolloff)?;
    let out = ssfm_propagate(&launched, fiber, Direction::Forward)?;
    let noisy = match fiber.rx_noise_dbm {
        Some(p_dbm) => {
            let p = dbm_to_watts(p_dbm);
            let var = match fiber.noise_reference {
                NoiseReference::SymbolBandwidth => p * fiber.sim_sps as f64,
                NoiseReference::SimulationBandwidth => p,
            };
            add_awgn(&out, var, rng)?
        }
        None => out,
    };
    let factor = (fiber.sim_rate_ghz() / fiber.rx_sample_rate_ghz).round() as usize;
    let rx = brickwall_resample(
        &noisy,
        fiber.lpf_bandwidth_ghz,
        fiber.sim_rate_ghz(),
        factor,
    )?;
    let rx = ComplexSignal::new(rx.samples, fiber.rx_sps());
    cd_compensate(
        &rx,
        fiber.beta2_ps2_per_km,
        fiber.cd_precomp_fraction * fiber.length_km,
        fiber.rx_sample_rate_ghz,
    )
}

/// Digital backpropagation of a receiver-rate signal produced by
/// [`fiber_link_apply`]. Returns one sample per symbol on the transmit
/// constellation scale.
pub fn dbp(
    rx: &ComplexSignal,
    fiber: &FiberLink,
    steps: usize,
    ps_rolloff: f64,
) -> Result<ComplexSignal> {
    fiber.validate()?;
    let rate = fiber.rx_sample_rate_ghz;
    let undone = cd_compensate(
        rx,
        fiber.beta2_ps2_per_km,
        -fiber.cd_precomp_fraction * fiber.length_km,
        rate,
    )?;
    let back = split_step(
        &undone,
        fiber,
        fiber.length_km,
        steps,
        rate,
        Direction::Backward,
    )?;
    let sps = fiber.rx_sps();
    let taps = rrc_taps(ps_rolloff, DEFAULT_RRC_SPAN, sps)?;
    let matched = fir_filter_real(&back, &taps, FilterMode::Same);
    let symbols = decimate(&matched, sps, 0)?;
    // launch scaling sqrt(P·R) times the sps-R-to-sps-K pulse correlation sqrt(K/R)
    let gain = (fiber.launch_power_w() * sps as f64).sqrt();
    Ok(symbols.scaled(1.0 / gain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{draw_symbols, make_qam, mean_power};

    fn lossless(gamma: f64) -> FiberLink {
        FiberLink {
            alpha_db_per_km: 0.0,
            gamma_per_w_km: gamma,
            ..FiberLink::ssmf()
        }
    }

    fn waveform(n_sym: usize, fiber: &FiberLink, seed: u64) -> ComplexSignal {
        let c = Arc::new(make_qam(16).unwrap());
        let f = draw_symbols(&c, n_sym, &mut SeededRng::new(seed)).unwrap();
        launch_waveform(&f, fiber, 0.1).unwrap()
    }

    fn max_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn omega_grid_layout() {
        let w = omega_grid(4, 1.0);
        let d = std::f64::consts::PI / 2.0;
        assert_eq!(w, vec![0.0, d, -2.0 * d, -d]);
    }

    #[test]
    fn dispersion_only_is_unitary() {
        let fiber = lossless(0.0);
        let x = waveform(512, &fiber, 1);
        let y = ssfm_propagate(&x, &fiber, Direction::Forward).unwrap();
        let (p0, p1) = (mean_power(&x.samples), mean_power(&y.samples));
        assert!(((p1 - p0) / p0).abs() < 1e-12);
    }

    #[test]
    fn kerr_propagation_conserves_power() {
        let fiber = FiberLink {
            launch_power_dbm: 10.0,
            ..lossless(1.3)
        };
        let x = waveform(512, &fiber, 2);
        let y = ssfm_propagate(&x, &fiber, Direction::Forward).unwrap();
        let (p0, p1) = (mean_power(&x.samples), mean_power(&y.samples));
        assert!(((p1 - p0) / p0).abs() < 1e-9);
    }

    #[test]
    fn backward_inverts_forward() {
        let fiber = FiberLink {
            ssfm_steps: 20,
            ..FiberLink::ssmf()
        };
        let x = waveform(256, &fiber, 3);
        let y = ssfm_propagate(&x, &fiber, Direction::Forward).unwrap();
        let z = ssfm_propagate(&y, &fiber, Direction::Backward).unwrap();
        assert!(max_err(&x.samples, &z.samples) < 1e-9);
    }

    #[test]
    fn loss_scaling() {
        let fiber = FiberLink {
            gamma_per_w_km: 0.0,
            ..FiberLink::ssmf()
        };
        let x = waveform(256, &fiber, 4);
        let y = ssfm_propagate(&x, &fiber, Direction::Forward).unwrap();
        let expect = mean_power(&x.samples) * 10f64.powf(-0.2 * 110.0 / 10.0);
        assert!(((mean_power(&y.samples) - expect) / expect).abs() < 1e-9);
    }

    #[test]
    fn cd_compensation_inverts_linear_propagation() {
        let fiber = lossless(0.0);
        let x = waveform(256, &fiber, 5);
        let rate = fiber.sim_rate_ghz();
        assert_eq!(
            cd_compensate(&x, fiber.beta2_ps2_per_km, 0.0, rate).unwrap(),
            x
        );
        let y = ssfm_propagate(&x, &fiber, Direction::Forward).unwrap();
        let z = cd_compensate(&y, fiber.beta2_ps2_per_km, fiber.length_km, rate).unwrap();
        assert!(max_err(&x.samples, &z.samples) < 1e-9);
        let p = mean_power(&y.samples);
        assert!(((mean_power(&z.samples) - p) / p).abs() < 1e-12);
    }

    #[test]
    fn invalid_links_rejected() {
        let mut f = FiberLink::ssmf();
        f.ssfm_steps = 0;
        assert!(f.validate().is_err());
        let mut f = FiberLink::ssmf();
        f.cd_precomp_fraction = 1.5;
        assert!(f.validate().is_err());
        let mut f = FiberLink::ssmf();
        f.rx_sample_rate_ghz = 60.0;
        assert!(f.validate().is_err());
    }

    #[test]
    fn absurd_power_reports_non_finite() {
        let fiber = FiberLink {
            launch_power_dbm: 3100.0,
            ssfm_steps: 2,
            ..FiberLink::ssmf()
        };
        let x = waveform(64, &fiber, 6);
        assert!(matches!(
            ssfm_propagate(&x, &fiber, Direction::Forward),
            Err(Error::NonFinite(_))
        ));
    }
}
