use super::{ComplexSignal, Constellation};
use crate::error::{invalid, Result};
use crate::rng::SeededRng;

/// Adds circularly symmetric Gaussian noise with `noise_variance` per
/// complex sample.
pub fn add_awgn(
    signal: &ComplexSignal,
    noise_variance: f64,
    rng: &mut SeededRng,
) -> Result<ComplexSignal> {
    if !(noise_variance >= 0.0) {
        return Err(invalid(format!(
            "noise variance {noise_variance} is negative"
        )));
    }
    let mut out = signal.clone();
    if noise_variance > 0.0 {
        for s in &mut out.samples {
            *s += rng.complex_normal(noise_variance);
        }
    }
    Ok(out)
}

/// σ_w² = E{|x|²}·10^(−snr_db/10).
pub fn snr_to_noise_variance(c: &Constellation, snr_db: f64) -> f64 {
    c.energy() * 10f64.powf(-snr_db / 10.0)
}

pub fn dbm_to_watts(p_dbm: f64) -> f64 {
    10f64.powf((p_dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(p_w: f64) -> f64 {
    10.0 * p_w.log10() + 30.0
}

pub fn mean_power(samples: &[num_complex::Complex64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::make_qam;
    use num_complex::Complex64;

    #[test]
    fn zero_variance_is_identity() {
        let s = ComplexSignal::new(vec![Complex64::new(0.3, -0.2); 10], 2);
        assert_eq!(add_awgn(&s, 0.0, &mut SeededRng::new(1)).unwrap(), s);
        assert!(add_awgn(&s, -1.0, &mut SeededRng::new(1)).is_err());
    }

    #[test]
    fn noise_moments() {
        let n = 1_000_000;
        let s = ComplexSignal::new(vec![Complex64::default(); n], 1);
        let out = add_awgn(&s, 1.0, &mut SeededRng::new(5)).unwrap();
        let p = mean_power(&out.samples);
        assert!((p - 1.0).abs() < 0.01, "{p}");
        let mean: Complex64 = out.samples.iter().sum::<Complex64>() / n as f64;
        // 3 sigma of the sample mean per real dimension
        let bound = 3.0 * (0.5f64).sqrt() / (n as f64).sqrt();
        assert!(mean.re.abs() < bound && mean.im.abs() < bound, "{mean}");
    }

    #[test]
    fn snr_conversion() {
        let c = make_qam(16).unwrap();
        assert!((snr_to_noise_variance(&c, 20.0) - 0.01).abs() < 1e-14);
        assert!((snr_to_noise_variance(&c, 0.0) - 1.0).abs() < 1e-14);
        assert!((snr_to_noise_variance(&c, 21.0) - 7.943_282_347e-3).abs() < 1e-12);
    }

    #[test]
    fn dbm_conversion() {
        assert!((dbm_to_watts(0.0) - 1e-3).abs() < 1e-18);
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
        assert!((dbm_to_watts(8.0) - 6.309_573e-3).abs() < 1e-9);
        assert!((watts_to_dbm(dbm_to_watts(-33.5)) + 33.5).abs() < 1e-12);
    }
}
