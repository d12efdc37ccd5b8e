use std::ops::Range;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::models::{Decoder, Encoder};
use crate::diff::{adam_step, straight_through, straight_through_backward, AdamConfig, AdamState, ParamTensor};
use crate::dsp::Constellation;
use crate::error::{invalid, Error, Result};

/// Weight of the commitment term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommitWeight {
    /// `recon + ρ·commit`.
    Static(f64),
    /// `ψ_t·recon + (1 − ψ_t)·commit` with `ψ_0 = 0.5` and
    /// `ψ_{t+1} = recon_t / (recon_t + commit_t)`.
    Dynamic,
}

impl Default for CommitWeight {
    fn default() -> Self {
        CommitWeight::Static(1.0)
    }
}

/// Mean-per-sample reconstruction error plus `rho` times the mean-per-symbol
/// commitment error.
pub fn vqvae_loss(y: &[Complex64], x_soft: &[Complex64], x_hard: &[Complex64], y_rec: &[Complex64], rho: f64) -> f64 {
    assert_eq!(y.len(), y_rec.len());
    assert_eq!(x_soft.len(), x_hard.len());
    let recon = mean_sq_diff(y, y_rec);
    let commit = mean_sq_diff(x_soft, x_hard);
    recon + rho * commit
}

fn mean_sq_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(u, v)| (u - v).norm_sqr()).sum::<f64>() / a.len() as f64
}

/// Next value of the dynamic balance weight; kept strictly inside (0, 1).
pub fn psi_update(recon: f64, commit: f64, psi_prev: f64) -> f64 {
    let total = recon + commit;
    if !(total > 0.0) || !total.is_finite() {
        return psi_prev;
    }
    (recon / total).clamp(1e-9, 1.0 - 1e-9)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqVaeConfig {
    pub commit: CommitWeight,
    pub lr: f64,
    /// L2 weight on the input and hidden layers of a network decoder.
    pub l2_weight: f64,
    pub adam: AdamConfig,
}

impl Default for VqVaeConfig {
    fn default() -> Self {
        Self { commit: CommitWeight::Static(1.0), lr: 1e-3, l2_weight: 0.0, adam: AdamConfig::default() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    /// Objective actually minimized (weighted terms plus regularization).
    pub loss: f64,
    pub recon: f64,
    pub commit: f64,
    /// Weight used for this step under the dynamic scheme.
    pub psi: Option<f64>,
}

pub struct VqVaeTrainer {
    pub decoder: Decoder,
    pub encoder: Encoder,
    pub constellation: Arc<Constellation>,
    pub config: VqVaeConfig,
    psi: f64,
    dec_opt: AdamState,
    enc_opt: AdamState,
    steps: u64,
}

impl VqVaeTrainer {
    pub fn new(decoder: Decoder, encoder: Encoder, constellation: Arc<Constellation>, config: VqVaeConfig) -> Result<Self> {
        if decoder.sps() != encoder.sps() {
            return Err(invalid("decoder and encoder disagree on samples per symbol"));
        }
        if let CommitWeight::Static(rho) = config.commit {
            if !(rho > 0.0) {
                return Err(invalid("commitment weight must be positive"));
            }
        }
        if !(config.lr >= 0.0) || !(config.l2_weight >= 0.0) {
            return Err(invalid("learning rate and L2 weight must be non-negative"));
        }
        let dec_opt = AdamState::new(&decoder.params(), config.adam);
        let enc_opt = AdamState::new(&encoder.params(), config.adam);
        Ok(Self { decoder, encoder, constellation, config, psi: 0.5, dec_opt, enc_opt, steps: 0 })
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Symbols at each end of a minibatch whose reconstruction window would
    /// reach outside it.
    pub fn recon_guard(&self) -> usize {
        self.encoder.half_span_symbols()
    }

    fn weights(&self) -> (f64, f64) {
        match self.config.commit {
            CommitWeight::Static(rho) => (1.0, rho),
            CommitWeight::Dynamic => (self.psi, 1.0 - self.psi),
        }
    }

    fn decide(&self, x: &[Complex64]) -> Vec<Complex64> {
        x.iter().map(|&z| self.constellation.point(self.constellation.nearest(z))).collect()
    }

    /// Loss and gradients for symbols `range` of the 2-SPS sequence `y`.
    /// With `frozen` the decisions are held fixed (the straight-through
    /// surrogate `x̃ + (x̂₀ − x̃₀)` feeds the encoder), which makes the loss a
    /// smooth function of the parameters for finite-difference checks.
    pub fn compute_gradients(
        &mut self,
        y: &[Complex64],
        range: Range<usize>,
        frozen: Option<(&[Complex64], &[Complex64])>,
    ) -> Result<StepStats> {
        let sps = self.decoder.sps();
        let n = range.len();
        let guard = self.recon_guard();
        if n <= 2 * guard {
            return Err(invalid(format!("minibatch of {n} symbols is shorter than twice the {guard}-symbol guard")));
        }
        if sps * range.end > y.len() {
            return Err(invalid("minibatch extends past the received sequence"));
        }
        self.decoder.zero_grad();
        self.encoder.zero_grad();

        let (x_soft, dcache) = self.decoder.forward(y, range.clone())?;
        let (x_hard, x_enc) = match frozen {
            None => {
                let h = self.decide(&x_soft);
                let st = straight_through(&x_soft, &h);
                (h, st)
            }
            Some((decisions, offset)) => {
                let st = x_soft.iter().zip(offset).map(|(a, o)| a + o).collect();
                (decisions.to_vec(), st)
            }
        };
        let (y_rec, ecache) = self.encoder.forward(&x_enc)?;

        let obs = &y[sps * range.start..sps * range.end];
        let lo = sps * guard;
        let hi = sps * (n - guard);
        let recon = mean_sq_diff(&obs[lo..hi], &y_rec[lo..hi]);
        let commit = mean_sq_diff(&x_soft, &x_hard);
        let (w_r, w_c) = self.weights();

        let scale_r = 2.0 * w_r / (hi - lo) as f64;
        let mut g_rec = vec![Complex64::default(); y_rec.len()];
        for m in lo..hi {
            g_rec[m] = scale_r * (y_rec[m] - obs[m]);
        }
        let g_enc_in = self.encoder.backward(&x_enc, &ecache, &g_rec)?;
        let mut g_soft = straight_through_backward(&g_enc_in);
        let scale_c = 2.0 * w_c / n as f64;
        for (g, (a, b)) in g_soft.iter_mut().zip(x_soft.iter().zip(&x_hard)) {
            *g += scale_c * (a - b);
        }
        self.decoder.backward(y, range, &dcache, &g_soft)?;
        let reg = self.decoder.l2(self.config.l2_weight);

        let loss = w_r * recon + w_c * commit + reg;
        if !loss.is_finite() {
            return Err(Error::NonFinite("vq-vae loss"));
        }
        let psi = matches!(self.config.commit, CommitWeight::Dynamic).then_some(self.psi);
        Ok(StepStats { loss, recon, commit, psi })
    }

    /// One optimization step on symbols `range` of `y`.
    pub fn train_step(&mut self, y: &[Complex64], range: Range<usize>) -> Result<StepStats> {
        let stats = self.compute_gradients(y, range, None)?;
        let lr = self.config.lr;
        adam_step(&mut self.decoder.params_mut(), &mut self.dec_opt, lr);
        adam_step(&mut self.encoder.params_mut(), &mut self.enc_opt, lr);
        if self.decoder.params().iter().chain(self.encoder.params().iter()).any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("vq-vae parameters"));
        }
        if matches!(self.config.commit, CommitWeight::Dynamic) {
            self.psi = psi_update(stats.recon, stats.commit, self.psi);
        }
        self.steps += 1;
        Ok(stats)
    }

    /// Decisions and straight-through offsets at the current parameters, for
    /// use with [`Self::compute_gradients`].
    pub fn freeze_decisions(&self, y: &[Complex64], range: Range<usize>) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        let (x_soft, _) = self.decoder.forward(y, range)?;
        let hard = self.decide(&x_soft);
        let offset = hard.iter().zip(&x_soft).map(|(h, s)| h - s).collect();
        Ok((hard, offset))
    }

    /// Smallest distance from any soft output in `range` to a decision boundary
    /// (half the distance to its second-nearest point, minus to its nearest).
    pub fn decision_margin(&self, y: &[Complex64], range: Range<usize>) -> Result<f64> {
        let (x_soft, _) = self.decoder.forward(y, range)?;
        let pts = self.constellation.points();
        Ok(x_soft
            .iter()
            .map(|z| {
                let mut d: Vec<f64> = pts.iter().map(|p| (z - p).norm()).collect();
                d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                (d[1] - d[0]) / 2.0
            })
            .fold(f64::INFINITY, f64::min))
    }

    pub fn equalize(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        self.decoder.equalize(y)
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut p = self.decoder.params();
        p.extend(self.encoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut p = self.decoder.params_mut();
        p.extend(self.encoder.params_mut());
        p
    }
}
