//! Trainable decoders (received samples → symbol estimates) and encoders
//! (symbols → reconstructed samples) shared by the autoencoder trainers.

use std::ops::Range;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::features::{complex_to_rows, rows_to_complex, FeatureBank, FeatureExtractorConfig, NN_CHUNK};
use super::fir::{fir_decimating, fir_decimating_backward};
use crate::channels::{GmpModel, GmpTerm};
use crate::diff::{l2_penalty, Mlp, MlpSpec, ParamTensor, Residual, Tape};
use crate::error::{invalid, Error, Result};
use crate::rng::SeededRng;

fn dirac_tensor(name: &str, n: usize) -> ParamTensor {
    let mut t = ParamTensor::zeros(name, vec![n, 2]);
    t.values[2 * (n / 2)] = 1.0;
    t
}

/// Equalizer mapping the 2-SPS observation to one estimate per symbol.
#[derive(Clone, Debug)]
pub enum Decoder {
    /// Fractionally spaced FIR filter.
    Fir { taps: ParamTensor, sps: usize },
    /// Linear combination of GMP features (a memory polynomial when the
    /// feature set has a-terms only).
    Gmp { cfg: FeatureExtractorConfig, coeffs: ParamTensor },
    /// Network on GMP features with a residual path to the center sample.
    Nn { cfg: FeatureExtractorConfig, mlp: Mlp },
}

pub enum DecoderCache {
    Fir,
    Gmp(DMatrix<f64>),
    Nn(Tape, DMatrix<f64>),
}

impl Decoder {
    pub fn fir(num_taps: usize, sps: usize) -> Result<Self> {
        if num_taps.is_multiple_of(2) || num_taps == 0 {
            return Err(invalid("decoder tap count must be odd"));
        }
        Ok(Decoder::Fir { taps: dirac_tensor("decoder.taps", num_taps), sps })
    }

    pub fn gmp(cfg: FeatureExtractorConfig) -> Result<Self> {
        cfg.sets.validate()?;
        let terms = cfg.terms();
        let center = terms
            .iter()
            .position(|t| t.order == 1 && t.lag == 0)
            .ok_or_else(|| invalid("feature set lacks the raw center sample"))?;
        let mut coeffs = ParamTensor::zeros("decoder.coeffs", vec![terms.len(), 2]);
        coeffs.values[2 * center] = 1.0;
        Ok(Decoder::Gmp { cfg, coeffs })
    }

    /// Network with ReLU hidden layers and the given residual mode; `residual`
    /// `None` here means the center-sample passthrough.
    pub fn nn(cfg: FeatureExtractorConfig, hidden: &[usize], trainable_skip: bool, rng: &mut SeededRng) -> Result<Self> {
        let (re, im) = cfg.center_pair().ok_or_else(|| invalid("feature set lacks the raw center sample"))?;
        let residual = if trainable_skip { Residual::LinearSkip { re, im } } else { Residual::Center { re, im } };
        let spec = MlpSpec::relu(cfg.real_width(), hidden, 2, residual);
        Ok(Decoder::Nn { cfg, mlp: Mlp::init(spec, rng)? })
    }

    pub fn sps(&self) -> usize {
        match self {
            Decoder::Fir { sps, .. } => *sps,
            Decoder::Gmp { cfg, .. } | Decoder::Nn { cfg, .. } => cfg.sps,
        }
    }

    /// Half the decoder span, in symbols.
    pub fn half_span_symbols(&self) -> usize {
        let half_samples = match self {
            Decoder::Fir { taps, .. } => taps.complex_len() / 2,
            Decoder::Gmp { cfg, .. } | Decoder::Nn { cfg, .. } => cfg
                .terms()
                .iter()
                .map(|t| t.carrier_offset().unsigned_abs().max(t.envelope_offset().unsigned_abs()))
                .max()
                .unwrap_or(0),
        };
        half_samples.div_ceil(self.sps())
    }

    pub fn forward(&self, y: &[Complex64], range: Range<usize>) -> Result<(Vec<Complex64>, DecoderCache)> {
        match self {
            Decoder::Fir { taps, sps } => Ok((fir_decimating(y, &taps.to_complex(), *sps, range), DecoderCache::Fir)),
            Decoder::Gmp { cfg, coeffs } => {
                let rows = FeatureBank::window(y, cfg, range.clone()).rows(range);
                let c = coeffs.to_complex();
                let out = (0..rows.nrows())
                    .map(|r| {
                        c.iter()
                            .enumerate()
                            .map(|(t, w)| w * Complex64::new(rows[(r, 2 * t)], rows[(r, 2 * t + 1)]))
                            .sum()
                    })
                    .collect();
                Ok((out, DecoderCache::Gmp(rows)))
            }
            Decoder::Nn { cfg, mlp } => {
                let rows = FeatureBank::window(y, cfg, range.clone()).rows(range);
                let (out, tape) = mlp.forward_batch(rows)?;
                let x = rows_to_complex(&out);
                Ok((x, DecoderCache::Nn(tape, out)))
            }
        }
    }

    /// Accumulates parameter gradients for symbol-estimate gradients `grad`.
    pub fn backward(&mut self, y: &[Complex64], range: Range<usize>, cache: &DecoderCache, grad: &[Complex64]) -> Result<()> {
        match (self, cache) {
            (Decoder::Fir { taps, sps }, DecoderCache::Fir) => {
                let mut tg = vec![Complex64::default(); taps.complex_len()];
                fir_decimating_backward(y, taps.complex_len(), *sps, range, grad, &mut tg);
                taps.add_complex_grad(&tg);
                Ok(())
            }
            (Decoder::Gmp { coeffs, .. }, DecoderCache::Gmp(rows)) => {
                let nt = coeffs.complex_len();
                let mut tg = vec![Complex64::default(); nt];
                for (r, g) in grad.iter().enumerate() {
                    for (t, acc) in tg.iter_mut().enumerate() {
                        *acc += g * Complex64::new(rows[(r, 2 * t)], -rows[(r, 2 * t + 1)]);
                    }
                }
                coeffs.add_complex_grad(&tg);
                Ok(())
            }
            (Decoder::Nn { mlp, .. }, DecoderCache::Nn(tape, _)) => {
                mlp.backward_batch(tape, &complex_to_rows(grad))?;
                Ok(())
            }
            _ => Err(Error::StaleTape),
        }
    }

    /// L2 penalty on the input and hidden weights of a network decoder.
    pub fn l2(&mut self, weight: f64) -> f64 {
        match self {
            Decoder::Nn { mlp, .. } if weight > 0.0 => {
                let mut regs = mlp.regularized_mut();
                l2_penalty(&mut regs, weight)
            }
            _ => 0.0,
        }
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        match self {
            Decoder::Fir { taps, .. } => vec![taps],
            Decoder::Gmp { coeffs, .. } => vec![coeffs],
            Decoder::Nn { mlp, .. } => mlp.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        match self {
            Decoder::Fir { taps, .. } => vec![taps],
            Decoder::Gmp { coeffs, .. } => vec![coeffs],
            Decoder::Nn { mlp, .. } => mlp.params_mut(),
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Equalizes every symbol of a 2-SPS sequence.
    pub fn equalize(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = y.len() / self.sps();
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + NN_CHUNK).min(n);
            out.extend(self.forward(y, start..end)?.0);
            start = end;
        }
        Ok(out)
    }

    pub fn fir_taps(&self) -> Option<Vec<Complex64>> {
        match self {
            Decoder::Fir { taps, .. } => Some(taps.to_complex()),
            _ => None,
        }
    }
}

/// `x |x|^e` and its Wirtinger derivatives `(∂/∂x, ∂/∂x̄)`.
#[inline]
pub(crate) fn power_term(x: Complex64, e: u32) -> (Complex64, Complex64, Complex64) {
    if e == 0 {
        return (x, Complex64::new(1.0, 0.0), Complex64::default());
    }
    let r = x.norm();
    if r == 0.0 {
        return (Complex64::default(), Complex64::default(), Complex64::default());
    }
    let re = r.powi(e as i32);
    let half = e as f64 / 2.0;
    (x * re, Complex64::new((1.0 + half) * re, 0.0), x * x * (half * re / (r * r)))
}

/// Gradient of a real loss with respect to `x`, given its gradient `g` with
/// respect to `f(x)` and the Wirtinger derivatives of `f`.
#[inline]
pub(crate) fn chain_nonholomorphic(g: Complex64, df_dx: Complex64, df_dxbar: Complex64) -> Complex64 {
    g.conj() * df_dxbar + g * df_dx.conj()
}

/// Model of the channel mapping symbol decisions to 2-SPS samples.
#[derive(Clone, Debug)]
pub enum Encoder {
    /// `ŷ = Σ_p h_p * (x|x|^(p-1))↑sps`: one fractionally spaced FIR per
    /// order. Order set `{1}` is the plain linear encoder.
    Poly { orders: Vec<u32>, taps: Vec<ParamTensor>, sps: usize },
    /// Network over a window of the zero-stuffed decisions, one output per sample.
    Nn { window: usize, mlp: Mlp, sps: usize },
}

pub enum EncoderCache {
    Poly,
    Nn(Tape),
}

fn zero_stuff(x: &[Complex64], sps: usize) -> Vec<Complex64> {
    let mut u = vec![Complex64::default(); x.len() * sps];
    for (k, v) in x.iter().enumerate() {
        u[k * sps] = *v;
    }
    u
}

impl Encoder {
    pub fn fir(num_taps: usize, sps: usize) -> Result<Self> {
        Self::poly(&[1], num_taps, sps)
    }

    /// Memory polynomial; the first-order branch starts as a Dirac, the
    /// others at zero.
    pub fn poly(orders: &[u32], num_taps: usize, sps: usize) -> Result<Self> {
        if num_taps.is_multiple_of(2) || num_taps == 0 {
            return Err(invalid("encoder tap count must be odd"));
        }
        if orders.is_empty() || orders.contains(&0) {
            return Err(invalid("encoder orders must be positive"));
        }
        let taps = orders
            .iter()
            .map(|&p| {
                if p == 1 {
                    dirac_tensor(&format!("encoder.h{p}"), num_taps)
                } else {
                    ParamTensor::zeros(format!("encoder.h{p}"), vec![num_taps, 2])
                }
            })
            .collect();
        Ok(Encoder::Poly { orders: orders.to_vec(), taps, sps })
    }

    pub fn nn(window: usize, hidden: &[usize], sps: usize, rng: &mut SeededRng) -> Result<Self> {
        if window.is_multiple_of(2) {
            return Err(invalid("encoder window must be odd"));
        }
        let spec = MlpSpec::relu(2 * window, hidden, 2, Residual::None);
        Ok(Encoder::Nn { window, mlp: Mlp::init(spec, rng)?, sps })
    }

    /// Network with a trainable linear path from the whole window, which
    /// starts as the identity on the centre sample.
    pub fn nn_with_skip(window: usize, hidden: &[usize], sps: usize, rng: &mut SeededRng) -> Result<Self> {
        if window.is_multiple_of(2) {
            return Err(invalid("encoder window must be odd"));
        }
        let c = 2 * (window / 2);
        let spec = MlpSpec::relu(2 * window, hidden, 2, Residual::LinearSkip { re: c, im: c + 1 });
        Ok(Encoder::Nn { window, mlp: Mlp::init(spec, rng)?, sps })
    }

    pub fn sps(&self) -> usize {
        match self {
            Encoder::Poly { sps, .. } | Encoder::Nn { sps, .. } => *sps,
        }
    }

    pub fn half_span_symbols(&self) -> usize {
        let half = match self {
            Encoder::Poly { taps, .. } => taps[0].complex_len() / 2,
            Encoder::Nn { window, .. } => window / 2,
        };
        half.div_ceil(self.sps())
    }

    fn nn_rows(u: &[Complex64], window: usize) -> DMatrix<f64> {
        let half = (window / 2) as isize;
        let n = u.len() as isize;
        DMatrix::from_fn(u.len(), 2 * window, |m, c| {
            let j = m as isize - half + (c / 2) as isize;
            if j < 0 || j >= n {
                0.0
            } else if c % 2 == 0 {
                u[j as usize].re
            } else {
                u[j as usize].im
            }
        })
    }

    /// Reconstructed samples (`sps` per decision).
    pub fn forward(&self, x: &[Complex64]) -> Result<(Vec<Complex64>, EncoderCache)> {
        match self {
            Encoder::Poly { orders, taps, sps } => {
                let n = x.len() * sps;
                let mut out = vec![Complex64::default(); n];
                for (&p, h) in orders.iter().zip(taps) {
                    let psi: Vec<Complex64> = x.iter().map(|&v| power_term(v, p - 1).0).collect();
                    let u = zero_stuff(&psi, *sps);
                    let y = fir_decimating(&u, &h.to_complex(), 1, 0..n);
                    out.iter_mut().zip(y).for_each(|(o, v)| *o += v);
                }
                Ok((out, EncoderCache::Poly))
            }
            Encoder::Nn { window, mlp, sps } => {
                let u = zero_stuff(x, *sps);
                let (out, tape) = mlp.forward_batch(Self::nn_rows(&u, *window))?;
                Ok((rows_to_complex(&out), EncoderCache::Nn(tape)))
            }
        }
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the decisions.
    pub fn backward(&mut self, x: &[Complex64], cache: &EncoderCache, grad: &[Complex64]) -> Result<Vec<Complex64>> {
        match (self, cache) {
            (Encoder::Poly { orders, taps, sps }, EncoderCache::Poly) => {
                let n = x.len() * *sps;
                let mut gx = vec![Complex64::default(); x.len()];
                for (&p, h) in orders.iter().zip(taps.iter_mut()) {
                    let terms: Vec<_> = x.iter().map(|&v| power_term(v, p - 1)).collect();
                    let psi: Vec<Complex64> = terms.iter().map(|t| t.0).collect();
                    let u = zero_stuff(&psi, *sps);
                    let nt = h.complex_len();
                    let mut tg = vec![Complex64::default(); nt];
                    fir_decimating_backward(&u, nt, 1, 0..n, grad, &mut tg);
                    h.add_complex_grad(&tg);
                    // ŷ_m = Σ_j h_j u[m + c − j]  ⇒  grad u[q] = Σ_j grad_ŷ[q − c + j] conj(h_j)
                    let c = (nt / 2) as isize;
                    let hc = h.to_complex();
                    for (k, t) in terms.iter().enumerate() {
                        let q = (k * *sps) as isize;
                        let mut g = Complex64::default();
                        for (j, w) in hc.iter().enumerate() {
                            let m = q - c + j as isize;
                            if m >= 0 && m < n as isize {
                                g += grad[m as usize] * w.conj();
                            }
                        }
                        gx[k] += chain_nonholomorphic(g, t.1, t.2);
                    }
                }
                Ok(gx)
            }
            (Encoder::Nn { window, mlp, sps }, EncoderCache::Nn(tape)) => {
                let dx = mlp.backward_batch(tape, &complex_to_rows(grad))?;
                let half = (*window / 2) as isize;
                let n = (x.len() * *sps) as isize;
                let mut gx = vec![Complex64::default(); x.len()];
                for m in 0..n {
                    for i in 0..*window {
                        let j = m - half + i as isize;
                        if j >= 0 && j < n && (j as usize).is_multiple_of(*sps) {
                            let r = m as usize;
                            gx[j as usize / *sps] += Complex64::new(dx[(r, 2 * i)], dx[(r, 2 * i + 1)]);
                        }
                    }
                }
                Ok(gx)
            }
            _ => Err(Error::StaleTape),
        }
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        match self {
            Encoder::Poly { taps, .. } => taps.iter().collect(),
            Encoder::Nn { mlp, .. } => mlp.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        match self {
            Encoder::Poly { taps, .. } => taps.iter_mut().collect(),
            Encoder::Nn { mlp, .. } => mlp.params_mut(),
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// The polynomial encoder as a GMP over the zero-stuffed symbol sequence
    /// (lag `l` ↔ tap `c + l`), for export.
    pub fn to_gmp(&self) -> Option<GmpModel> {
        match self {
            Encoder::Poly { orders, taps, .. } => {
                let mut terms = Vec::new();
                let mut coeffs = Vec::new();
                for (&p, h) in orders.iter().zip(taps) {
                    let c = (h.complex_len() / 2) as i32;
                    for (j, w) in h.to_complex().into_iter().enumerate() {
                        terms.push(GmpTerm::a(p, j as i32 - c));
                        coeffs.push(w);
                    }
                }
                GmpModel::new(terms, coeffs).ok()
            }
            Encoder::Nn { .. } => None,
        }
    }
}
