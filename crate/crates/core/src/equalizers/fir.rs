use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{ComplexSignal, Constellation, SymbolFrame};
use crate::error::{invalid, Result};
use std::sync::Arc;

/// Fractionally spaced FIR equalizer: 2 samples per symbol in, one out.
///
/// Output `k` is `Σ_i taps[i] · y[sps·k + c − i]` with `c` the center tap
/// index, so Dirac taps return the samples at the symbol instants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirEqualizer {
    pub taps: Vec<Complex64>,
    pub input_sps: usize,
}

impl FirEqualizer {
    pub fn dirac(num_taps: usize, input_sps: usize) -> Result<Self> {
        if num_taps.is_multiple_of(2) {
            return Err(invalid("equalizer tap count must be odd"));
        }
        if input_sps == 0 {
            return Err(invalid("input sps must be positive"));
        }
        let mut taps = vec![Complex64::default(); num_taps];
        taps[num_taps / 2] = Complex64::new(1.0, 0.0);
        Ok(Self { taps, input_sps })
    }

    pub fn from_taps(taps: Vec<Complex64>, input_sps: usize) -> Result<Self> {
        if taps.len().is_multiple_of(2) {
            return Err(invalid("equalizer tap count must be odd"));
        }
        Ok(Self { taps, input_sps })
    }

    pub fn center(&self) -> usize {
        self.taps.len() / 2
    }

    /// Equalized symbols for indices `range` of the symbol grid of `y`.
    pub fn apply_range(&self, y: &[Complex64], range: std::ops::Range<usize>) -> Vec<Complex64> {
        fir_decimating(y, &self.taps, self.input_sps, range)
    }

    /// Accumulates the tap gradient for output gradients `grad` over `range`.
    pub fn backward_range(
        &self,
        y: &[Complex64],
        range: std::ops::Range<usize>,
        grad: &[Complex64],
        tap_grad: &mut [Complex64],
    ) {
        fir_decimating_backward(y, self.taps.len(), self.input_sps, range, grad, tap_grad)
    }
}

pub(crate) fn fir_decimating(
    y: &[Complex64],
    taps: &[Complex64],
    sps: usize,
    range: std::ops::Range<usize>,
) -> Vec<Complex64> {
    let c = (taps.len() / 2) as isize;
    let n = y.len() as isize;
    range
        .map(|k| {
            let base = (sps * k) as isize + c;
            let mut acc = Complex64::default();
            for (i, w) in taps.iter().enumerate() {
                let j = base - i as isize;
                if j >= 0 && j < n {
                    acc += w * y[j as usize];
                }
            }
            acc
        })
        .collect()
}

/// `tap_grad[i] += Σ_k grad[k] · conj(y[sps·k + c − i])`.
pub(crate) fn fir_decimating_backward(
    y: &[Complex64],
    num_taps: usize,
    sps: usize,
    range: std::ops::Range<usize>,
    grad: &[Complex64],
    tap_grad: &mut [Complex64],
) {
    let c = (num_taps / 2) as isize;
    let n = y.len() as isize;
    for (k, g) in range.zip(grad) {
        let base = (sps * k) as isize + c;
        for (i, tg) in tap_grad.iter_mut().enumerate() {
            let j = base - i as isize;
            if j >= 0 && j < n {
                *tg += g * y[j as usize].conj();
            }
        }
    }
}

/// Equalizes every symbol of `y` (length `len / sps`).
pub fn equalize_fir(y: &ComplexSignal, eq: &FirEqualizer) -> Result<Vec<Complex64>> {
    if y.sps != eq.input_sps {
        return Err(invalid(format!("signal has {} sps, equalizer expects {}", y.sps, eq.input_sps)));
    }
    if eq.taps.len() > y.len() {
        return Err(invalid("more taps than samples"));
    }
    Ok(eq.apply_range(&y.samples, 0..y.len() / y.sps))
}

/// Per-symbol nearest constellation point, ties to the lowest index.
pub fn demap_hard(x: &[Complex64], c: &Arc<Constellation>) -> SymbolFrame {
    let indices = x.iter().map(|&z| c.nearest(z) as u16).collect();
    SymbolFrame::from_indices(indices, c.clone())
}
