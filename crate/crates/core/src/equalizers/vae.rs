//! Variational autoencoder baseline with a soft demapper and a closed-form
//! evidence lower bound for linear and memory-polynomial channel models.
//!
//! The encoder maps symbol sequences to samples as
//! `ŷ_i = Σ_p Σ_k g_pk[i] ψ_p(x_k)` with `ψ_p(x) = x|x|^(p-1)` and
//! `g_pk[i] = h_p[i + c − sps·k]` (`c` the centre tap). Under a factorized
//! posterior `Q` the expected squared residual splits into the residual of the
//! posterior mean plus a per-symbol variance term, so the bound is exact in
//! closed form. The constants `−L ln π − N ln M` are dropped.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fir::{fir_decimating, fir_decimating_backward};
use super::models::{power_term, Decoder};
use crate::channels::{GmpModel, GmpTerm, TermKind};
use crate::diff::{adam_step, AdamConfig, AdamState, ParamTensor};
use crate::dsp::Constellation;
use crate::error::{invalid, Error, Result};

/// Posterior logits `z_km = −|x̃_k − 𝒳_m|² / σ_d²`.
fn logits(x: &[Complex64], c: &Constellation, sigma_d2: f64) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), c.order(), |k, m| -(x[k] - c.point(m)).norm_sqr() / sigma_d2)
}

/// Row-wise log-softmax.
fn log_softmax(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = z.clone();
    for mut row in out.row_iter_mut() {
        let mx = row.max();
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

/// Soft decisions `Q_km ∝ exp(−|x̃_k − 𝒳_m|² / σ_d²)`, one row per symbol.
pub fn soft_demap(x: &[Complex64], c: &Constellation, sigma_d2: f64) -> Result<DMatrix<f64>> {
    if !(sigma_d2 > 0.0) {
        return Err(invalid("demapper variance must be positive"));
    }
    Ok(log_softmax(&logits(x, c, sigma_d2)).map(f64::exp))
}

/// Equalizes `y` with `decoder` and returns the soft decisions.
pub fn vae_decoder_soft(y: &[Complex64], decoder: &Decoder, c: &Constellation, sigma_d2: f64) -> Result<DMatrix<f64>> {
    soft_demap(&decoder.equalize(y)?, c, sigma_d2)
}

/// `−Σ Q ln Q`.
pub fn entropy(q: &DMatrix<f64>) -> f64 {
    -q.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Memory polynomial over the zero-stuffed symbol sequence: one odd-length
/// fractionally spaced FIR per order.
#[derive(Clone, Debug, PartialEq)]
pub struct MpTaps {
    pub orders: Vec<u32>,
    pub taps: Vec<Vec<Complex64>>,
    pub sps: usize,
}

impl MpTaps {
    pub fn linear(h: &[Complex64], sps: usize) -> Result<Self> {
        let t = Self { orders: vec![1], taps: vec![h.to_vec()], sps };
        t.validate()?;
        Ok(t)
    }

    /// From a model of a-terms only; lag `l` lands on tap `c + l`.
    pub fn from_gmp(model: &GmpModel, sps: usize) -> Result<Self> {
        let mut orders: Vec<u32> = Vec::new();
        let mut reach = 0;
        for t in model.terms() {
            if t.kind != TermKind::A {
                return Err(invalid("closed-form bound needs a memory polynomial (a-terms only)"));
            }
            if !orders.contains(&t.order) {
                orders.push(t.order);
            }
            reach = reach.max(t.lag.unsigned_abs() as usize);
        }
        orders.sort_unstable();
        let mut taps = vec![vec![Complex64::default(); 2 * reach + 1]; orders.len()];
        for (t, &a) in model.terms().iter().zip(model.coeffs()) {
            let p = orders.iter().position(|&o| o == t.order).unwrap();
            taps[p][(reach as i32 + t.lag) as usize] = a;
        }
        let mp = Self { orders, taps, sps };
        mp.validate()?;
        Ok(mp)
    }

    pub fn to_gmp(&self) -> GmpModel {
        let mut terms = Vec::new();
        let mut coeffs = Vec::new();
        for (&p, h) in self.orders.iter().zip(&self.taps) {
            let c = (h.len() / 2) as i32;
            for (j, &w) in h.iter().enumerate() {
                terms.push(GmpTerm::a(p, j as i32 - c));
                coeffs.push(w);
            }
        }
        GmpModel::new(terms, coeffs).expect("orders are distinct")
    }

    fn validate(&self) -> Result<()> {
        if self.sps == 0 || self.orders.is_empty() || self.orders.len() != self.taps.len() {
            return Err(invalid("memory polynomial needs one tap vector per order and sps >= 1"));
        }
        if self.orders.contains(&0) {
            return Err(invalid("orders must be positive"));
        }
        let len = self.taps[0].len();
        if len.is_multiple_of(2) || self.taps.iter().any(|h| h.len() != len) {
            return Err(invalid("tap vectors must share one odd length"));
        }
        Ok(())
    }

    fn center(&self) -> usize {
        self.taps[0].len() / 2
    }

    /// Symbols whose encoder footprint leaves a length-`n·sps` window.
    pub fn half_span_symbols(&self) -> usize {
        self.center().div_ceil(self.sps)
    }

    /// Noise-free output for a symbol sequence.
    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mu: Vec<Vec<Complex64>> =
            self.orders.iter().map(|&p| x.iter().map(|&v| power_term(v, p - 1).0).collect()).collect();
        self.mean_output(&mu, x.len())
    }

    /// `Σ_p h_p * (μ_p)↑sps` over all `n·sps` samples.
    fn mean_output(&self, mu: &[Vec<Complex64>], n: usize) -> Vec<Complex64> {
        let len = n * self.sps;
        let mut out = vec![Complex64::default(); len];
        for (h, m) in self.taps.iter().zip(mu) {
            let mut u = vec![Complex64::default(); len];
            for (k, v) in m.iter().enumerate() {
                u[k * self.sps] = *v;
            }
            for (o, v) in out.iter_mut().zip(fir_decimating(&u, h, 1, 0..len)) {
                *o += v;
            }
        }
        out
    }
}

/// Value and gradients of the bound.
#[derive(Clone, Debug)]
pub struct ElboParts {
    pub elbo: f64,
    /// Expected squared residual `E_Q ‖y − ŷ‖²` over the window.
    pub expected_sq: f64,
    pub entropy: f64,
    /// Samples in the window.
    pub num_obs: usize,
    /// `∂A/∂Q` (not including the entropy).
    pub d_a_dq: DMatrix<f64>,
    /// `∂A/∂h_p`, same layout as the taps.
    pub d_a_dh: Vec<Vec<Complex64>>,
}

/// Closed-form bound over samples `window` of `y` (`y.len() == sps·N`).
pub fn elbo_parts(
    y: &[Complex64],
    q: &DMatrix<f64>,
    c: &Constellation,
    mp: &MpTaps,
    sigma_w2: f64,
    window: Range<usize>,
) -> Result<ElboParts> {
    mp.validate()?;
    if !(sigma_w2 > 0.0) || !sigma_w2.is_finite() {
        return Err(invalid("channel noise variance must be positive"));
    }
    let n = q.nrows();
    let sps = mp.sps;
    if q.ncols() != c.order() {
        return Err(Error::WidthMismatch { expected: c.order(), got: q.ncols() });
    }
    if y.len() != n * sps {
        return Err(Error::WidthMismatch { expected: n * sps, got: y.len() });
    }
    if window.end > y.len() || window.is_empty() {
        return Err(invalid("observation window outside the sequence"));
    }
    let np = mp.orders.len();
    let ntaps = mp.taps[0].len();
    let cen = mp.center() as isize;

    // ψ_p(𝒳_m) for every point.
    let psi: Vec<Vec<Complex64>> =
        mp.orders.iter().map(|&p| c.points().iter().map(|&v| power_term(v, p - 1).0).collect()).collect();
    // Posterior moments μ_kp and C_k(p,p').
    let mu: Vec<Vec<Complex64>> =
        (0..np).map(|p| (0..n).map(|k| (0..c.order()).map(|m| psi[p][m] * q[(k, m)]).sum()).collect()).collect();
    let mut cov = vec![vec![Complex64::default(); np * np]; n];
    for (k, ck) in cov.iter_mut().enumerate() {
        for m in 0..c.order() {
            let w = q[(k, m)];
            if w == 0.0 {
                continue;
            }
            for a in 0..np {
                for b in 0..np {
                    ck[a * np + b] += w * psi[a][m].conj() * psi[b][m];
                }
            }
        }
    }

    let mean = mp.mean_output(&mu, n);
    let mut resid = vec![Complex64::default(); y.len()];
    let mut a1 = 0.0;
    for i in window.clone() {
        resid[i] = y[i] - mean[i];
        a1 += resid[i].norm_sqr();
    }

    // Tap range of symbol k inside the window: i = sps·k + j − c.
    let taps_of = |k: usize| -> Range<usize> {
        let base = (sps * k) as isize - cen;
        let lo = (window.start as isize - base).max(0) as usize;
        let hi = (window.end as isize - base).clamp(0, ntaps as isize) as usize;
        lo.min(hi)..hi
    };

    let mut a2 = 0.0;
    let mut d_a_dh = vec![vec![Complex64::default(); ntaps]; np];
    let mut g_mu = vec![vec![Complex64::default(); n]; np];
    let mut d_a_dq = DMatrix::zeros(n, c.order());
    // R_k(p,p') = Σ_j conj(h_pj) h_p'j over the symbol's in-window taps.
    let mut r = vec![Complex64::default(); np * np];
    let mut d = vec![Complex64::default(); np * np];
    let mut prev: Option<Range<usize>> = None;
    for k in 0..n {
        let js = taps_of(k);
        if prev.as_ref() != Some(&js) {
            for a in 0..np {
                for b in 0..np {
                    r[a * np + b] = js.clone().map(|j| mp.taps[a][j].conj() * mp.taps[b][j]).sum();
                }
            }
            prev = Some(js.clone());
        }
        for a in 0..np {
            for b in 0..np {
                d[a * np + b] = cov[k][a * np + b] - mu[a][k].conj() * mu[b][k];
            }
        }
        for a in 0..np {
            for b in 0..np {
                a2 += (r[a * np + b] * d[a * np + b]).re;
            }
        }
        // ∂A/∂μ_kp = −2 Σ_i conj(g_pk[i]) r_i − 2 (R_k μ_k)_p
        for a in 0..np {
            let mut g = Complex64::default();
            for j in js.clone() {
                let i = (sps * k) as isize + j as isize - cen;
                g += mp.taps[a][j].conj() * resid[i as usize];
            }
            let rmu: Complex64 = (0..np).map(|b| r[a * np + b] * mu[b][k]).sum();
            g_mu[a][k] = -2.0 * g - 2.0 * rmu;
        }
        // ∂A/∂Q_km = Σ_p Re(conj(G_μkp) ψ_p(𝒳_m)) + ψ(𝒳_m)^H R_k ψ(𝒳_m)
        for m in 0..c.order() {
            let mut v = 0.0;
            for a in 0..np {
                v += (g_mu[a][k].conj() * psi[a][m]).re;
                for b in 0..np {
                    v += (psi[a][m].conj() * r[a * np + b] * psi[b][m]).re;
                }
            }
            d_a_dq[(k, m)] = v;
        }
        // variance term: ∂/∂h_pj += 2 (D_k g_k)_p with g_k = h_·j
        for j in js {
            for a in 0..np {
                let dg: Complex64 = (0..np).map(|b| d[a * np + b] * mp.taps[b][j]).sum();
                d_a_dh[a][j] += 2.0 * dg;
            }
        }
    }
    // residual term: ∂/∂h_pj = −2 Σ_i r_i conj(u_p[i + c − j])
    for a in 0..np {
        let mut u = vec![Complex64::default(); y.len()];
        for (k, v) in mu[a].iter().enumerate() {
            u[k * sps] = *v;
        }
        let g: Vec<Complex64> = resid.iter().map(|v| -2.0 * v).collect();
        fir_decimating_backward(&u, ntaps, 1, 0..y.len(), &g, &mut d_a_dh[a]);
    }

    let expected_sq = a1 + a2;
    let h = entropy(q);
    let num_obs = window.len();
    let elbo = -(num_obs as f64) * sigma_w2.ln() - expected_sq / sigma_w2 + h;
    Ok(ElboParts { elbo, expected_sq, entropy: h, num_obs, d_a_dq, d_a_dh })
}

/// Bound for a linear channel `h` (2-SPS taps, odd length) over all samples.
pub fn elbo_linear(y: &[Complex64], q: &DMatrix<f64>, c: &Constellation, h: &[Complex64], sigma_w2: f64, sps: usize) -> Result<f64> {
    let mp = MpTaps::linear(h, sps)?;
    Ok(elbo_parts(y, q, c, &mp, sigma_w2, 0..y.len())?.elbo)
}

/// Bound for a memory-polynomial channel over all samples.
pub fn elbo_mp(y: &[Complex64], q: &DMatrix<f64>, c: &Constellation, mp: &MpTaps, sigma_w2: f64) -> Result<f64> {
    Ok(elbo_parts(y, q, c, mp, sigma_w2, 0..y.len())?.elbo)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub lr: f64,
    /// Starting demapper variance; use the true noise variance when known.
    pub sigma_d2_init: f64,
    pub sigma_w2_init: f64,
    pub adam: AdamConfig,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self { lr: 1e-3, sigma_d2_init: 0.1, sigma_w2_init: 0.1, adam: AdamConfig::default() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VaeStats {
    /// `−ELBO` per observed sample.
    pub loss: f64,
    pub sigma_d2: f64,
    pub sigma_w2: f64,
}

/// Trains decoder, demapper variance, encoder taps and noise variance by
/// minimizing the negative bound.
pub struct VaeTrainer {
    pub decoder: Decoder,
    pub constellation: Arc<Constellation>,
    pub config: VaeConfig,
    orders: Vec<u32>,
    /// Encoder taps per order, then `ln σ_d²` and `ln σ_w²`.
    enc: Vec<ParamTensor>,
    log_sigma_d2: ParamTensor,
    log_sigma_w2: ParamTensor,
    sps: usize,
    dec_opt: AdamState,
    enc_opt: AdamState,
    steps: u64,
}

impl VaeTrainer {
    /// Encoder with the given orders and odd tap count; the order-1 branch
    /// starts as a Dirac.
    pub fn new(decoder: Decoder, orders: &[u32], enc_taps: usize, constellation: Arc<Constellation>, config: VaeConfig) -> Result<Self> {
        if enc_taps.is_multiple_of(2) || orders.is_empty() || orders.contains(&0) {
            return Err(invalid("encoder needs positive orders and an odd tap count"));
        }
        if !(config.sigma_d2_init > 0.0) || !(config.sigma_w2_init > 0.0) || !(config.lr >= 0.0) {
            return Err(invalid("variances must be positive and the learning rate non-negative"));
        }
        let sps = decoder.sps();
        let enc = orders
            .iter()
            .map(|&p| {
                let mut h = vec![Complex64::default(); enc_taps];
                if p == 1 {
                    h[enc_taps / 2] = Complex64::new(1.0, 0.0);
                }
                ParamTensor::from_complex(format!("encoder.h{p}"), &h)
            })
            .collect::<Vec<_>>();
        let log_sigma_d2 = ParamTensor::new("sigma_d2.ln", vec![1], vec![config.sigma_d2_init.ln()]);
        let log_sigma_w2 = ParamTensor::new("sigma_w2.ln", vec![1], vec![config.sigma_w2_init.ln()]);
        let mut dec_params = decoder.params();
        dec_params.push(&log_sigma_d2);
        let dec_opt = AdamState::new(&dec_params, config.adam);
        let mut enc_params: Vec<&ParamTensor> = enc.iter().collect();
        enc_params.push(&log_sigma_w2);
        let enc_opt = AdamState::new(&enc_params, config.adam);
        Ok(Self { decoder, constellation, config, orders: orders.to_vec(), enc, log_sigma_d2, log_sigma_w2, sps, dec_opt, enc_opt, steps: 0 })
    }

    pub fn sigma_d2(&self) -> f64 {
        self.log_sigma_d2.values[0].exp()
    }

    pub fn sigma_w2(&self) -> f64 {
        self.log_sigma_w2.values[0].exp()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn encoder(&self) -> MpTaps {
        MpTaps { orders: self.orders.clone(), taps: self.enc.iter().map(|t| t.to_complex()).collect(), sps: self.sps }
    }

    pub fn recon_guard(&self) -> usize {
        (self.enc[0].complex_len() / 2).div_ceil(self.sps)
    }

    /// `−ELBO` per observed sample and its gradients for symbols `range`.
    pub fn compute_gradients(&mut self, y: &[Complex64], range: Range<usize>) -> Result<VaeStats> {
        let sps = self.sps;
        let n = range.len();
        let guard = self.recon_guard();
        if n <= 2 * guard {
            return Err(invalid(format!("minibatch of {n} symbols is shorter than twice the {guard}-symbol guard")));
        }
        if sps * range.end > y.len() {
            return Err(invalid("minibatch extends past the received sequence"));
        }
        for p in self.params_mut() {
            p.zero_grad();
        }
        let sd2 = self.sigma_d2();
        let sw2 = self.sigma_w2();
        let (x_soft, dcache) = self.decoder.forward(y, range.clone())?;
        let z = logits(&x_soft, &self.constellation, sd2);
        let lq = log_softmax(&z);
        let q = lq.map(f64::exp);
        let obs = &y[sps * range.start..sps * range.end];
        let window = sps * guard..sps * (n - guard);
        let parts = elbo_parts(obs, &q, &self.constellation, &self.encoder(), sw2, window)?;
        let scale = 1.0 / parts.num_obs as f64;
        let loss = -parts.elbo * scale;
        if !loss.is_finite() {
            return Err(Error::NonFinite("negative elbo"));
        }

        // ∂loss/∂Q = (∂A/∂Q / σ_w² + ln Q + 1) / L; the constant drops out of the softmax.
        let mut g_x = vec![Complex64::default(); n];
        let mut g_lsd = 0.0;
        for k in 0..n {
            let gq: Vec<f64> = (0..q.ncols()).map(|m| scale * (parts.d_a_dq[(k, m)] / sw2 + lq[(k, m)])).collect();
            let avg: f64 = (0..q.ncols()).map(|m| q[(k, m)] * gq[m]).sum();
            for m in 0..q.ncols() {
                let gz = q[(k, m)] * (gq[m] - avg);
                g_x[k] += gz * (-2.0 / sd2) * (x_soft[k] - self.constellation.point(m));
                g_lsd -= gz * z[(k, m)];
            }
        }
        self.decoder.backward(y, range, &dcache, &g_x)?;
        self.log_sigma_d2.grad[0] += g_lsd;
        for (t, g) in self.enc.iter_mut().zip(&parts.d_a_dh) {
            let g: Vec<Complex64> = g.iter().map(|v| v * (scale / sw2)).collect();
            t.add_complex_grad(&g);
        }
        self.log_sigma_w2.grad[0] += 1.0 - parts.expected_sq / sw2 * scale;
        Ok(VaeStats { loss, sigma_d2: sd2, sigma_w2: sw2 })
    }

    pub fn train_step(&mut self, y: &[Complex64], range: Range<usize>) -> Result<VaeStats> {
        let stats = self.compute_gradients(y, range)?;
        let lr = self.config.lr;
        let mut dec = self.decoder.params_mut();
        dec.push(&mut self.log_sigma_d2);
        adam_step(&mut dec, &mut self.dec_opt, lr);
        let mut enc: Vec<&mut ParamTensor> = self.enc.iter_mut().collect();
        enc.push(&mut self.log_sigma_w2);
        adam_step(&mut enc, &mut self.enc_opt, lr);
        if self.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("vae parameters"));
        }
        self.steps += 1;
        Ok(stats)
    }

    pub fn equalize(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        self.decoder.equalize(y)
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut p = self.decoder.params();
        p.push(&self.log_sigma_d2);
        p.extend(self.enc.iter());
        p.push(&self.log_sigma_w2);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut p = self.decoder.params_mut();
        p.push(&mut self.log_sigma_d2);
        p.extend(self.enc.iter_mut());
        p.push(&mut self.log_sigma_w2);
        p
    }
}
