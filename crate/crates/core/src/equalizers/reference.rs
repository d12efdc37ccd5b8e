//! Reference equalizers: data-aided MMSE FFE, standard and batch CMA, and
//! decision-directed LMS.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fir::{fir_decimating, fir_decimating_backward};
use crate::diff::{adam_step, AdamConfig, AdamState, ParamTensor};
use crate::dsp::Constellation;
use crate::error::{invalid, Error, Result};

/// Training criterion of a batch-updated FIR equalizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirObjective {
    /// `mean |x̃ − x|²` against pilots.
    Mmse,
    /// `mean (|x̃|² − r2)²`.
    ConstantModulus,
    /// `mean |x̃ − dec(x̃)|²` with the decision held fixed.
    DecisionDirected,
}

/// FIR equalizer trained with Adam on minibatches.
#[derive(Clone, Debug)]
pub struct FirTrainer {
    pub taps: ParamTensor,
    pub sps: usize,
    pub lr: f64,
    constellation: Arc<Constellation>,
    opt: AdamState,
}

impl FirTrainer {
    pub fn new(num_taps: usize, sps: usize, lr: f64, constellation: Arc<Constellation>) -> Result<Self> {
        if num_taps.is_multiple_of(2) {
            return Err(invalid("equalizer tap count must be odd"));
        }
        let mut taps = ParamTensor::zeros("ffe.taps", vec![num_taps, 2]);
        taps.values[2 * (num_taps / 2)] = 1.0;
        let opt = AdamState::new(&[&taps], AdamConfig::default());
        Ok(Self { taps, sps, lr, constellation, opt })
    }

    pub fn equalize(&self, y: &[Complex64]) -> Vec<Complex64> {
        fir_decimating(y, &self.taps.to_complex(), self.sps, 0..y.len() / self.sps)
    }

    pub fn forward(&self, y: &[Complex64], range: Range<usize>) -> Vec<Complex64> {
        fir_decimating(y, &self.taps.to_complex(), self.sps, range)
    }

    /// Loss and tap gradient (left in `taps.grad`) for one minibatch.
    pub fn compute_gradients(
        &mut self,
        y: &[Complex64],
        range: Range<usize>,
        objective: FirObjective,
        pilots: Option<&[Complex64]>,
    ) -> Result<f64> {
        let x = self.forward(y, range.clone());
        let n = x.len() as f64;
        if x.is_empty() {
            return Err(Error::EmptyFrame);
        }
        let (loss, grad): (f64, Vec<Complex64>) = match objective {
            FirObjective::Mmse => {
                let p = pilots.ok_or_else(|| invalid("MMSE training needs pilots"))?;
                if p.len() != x.len() {
                    return Err(invalid(format!("{} pilots for {} symbols", p.len(), x.len())));
                }
                let l = x.iter().zip(p).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / n;
                (l, x.iter().zip(p).map(|(a, b)| 2.0 * (a - b) / n).collect())
            }
            FirObjective::ConstantModulus => {
                let r2 = self.constellation.cma_r2();
                let l = x.iter().map(|z| (z.norm_sqr() - r2).powi(2)).sum::<f64>() / n;
                (l, x.iter().map(|z| 4.0 * (z.norm_sqr() - r2) * z / n).collect())
            }
            FirObjective::DecisionDirected => {
                let c = &self.constellation;
                let d: Vec<Complex64> = x.iter().map(|&z| c.point(c.nearest(z))).collect();
                let l = x.iter().zip(&d).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / n;
                (l, x.iter().zip(&d).map(|(a, b)| 2.0 * (a - b) / n).collect())
            }
        };
        self.taps.zero_grad();
        let mut tg = vec![Complex64::default(); self.taps.complex_len()];
        fir_decimating_backward(y, tg.len(), self.sps, range, &grad, &mut tg);
        self.taps.add_complex_grad(&tg);
        if !loss.is_finite() {
            return Err(Error::NonFinite("fir equalizer loss"));
        }
        Ok(loss)
    }

    pub fn train_step(
        &mut self,
        y: &[Complex64],
        range: Range<usize>,
        objective: FirObjective,
        pilots: Option<&[Complex64]>,
    ) -> Result<f64> {
        let loss = self.compute_gradients(y, range, objective, pilots)?;
        adam_step(&mut [&mut self.taps], &mut self.opt, self.lr);
        if !self.taps.is_finite() {
            return Err(Error::NonFinite("fir equalizer taps"));
        }
        Ok(loss)
    }
}

pub fn ffe_mmse_train_step(
    trainer: &mut FirTrainer,
    y: &[Complex64],
    range: Range<usize>,
    pilots: &[Complex64],
) -> Result<f64> {
    trainer.train_step(y, range, FirObjective::Mmse, Some(pilots))
}

pub fn cma_batch_step(trainer: &mut FirTrainer, y: &[Complex64], range: Range<usize>) -> Result<f64> {
    trainer.train_step(y, range, FirObjective::ConstantModulus, None)
}

/// Least-squares (MMSE) FIR taps from pilots over `range`.
pub fn ffe_mmse_solve(
    y: &[Complex64],
    pilots: &[Complex64],
    num_taps: usize,
    sps: usize,
    range: Range<usize>,
) -> Result<Vec<Complex64>> {
    if pilots.len() != range.len() {
        return Err(invalid("pilots do not cover the range"));
    }
    let c = (num_taps / 2) as isize;
    let ny = y.len() as isize;
    let rows = range.len();
    let a = DMatrix::from_fn(rows, num_taps, |r, i| {
        let j = (sps * (range.start + r)) as isize + c - i as isize;
        if j >= 0 && j < ny {
            y[j as usize]
        } else {
            Complex64::default()
        }
    });
    let b = DVector::from_column_slice(pilots);
    let ah = a.adjoint();
    let gram = &ah * &a;
    let rhs = &ah * b;
    let sol = gram.cholesky().ok_or(Error::RankDeficient { rank: 0, cols: num_taps })?.solve(&rhs);
    Ok(sol.iter().copied().collect())
}

/// Per-symbol constant modulus algorithm with a step-halving schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmaState {
    pub taps: Vec<Complex64>,
    pub r2: f64,
    pub sps: usize,
    pub mu0: f64,
    /// Symbols between halvings of the step size.
    pub halve_every: u64,
    pub processed: u64,
}

impl CmaState {
    pub fn new(num_taps: usize, sps: usize, constellation: &Constellation) -> Result<Self> {
        if num_taps.is_multiple_of(2) {
            return Err(invalid("equalizer tap count must be odd"));
        }
        let mut taps = vec![Complex64::default(); num_taps];
        taps[num_taps / 2] = Complex64::new(1.0, 0.0);
        Ok(Self { taps, r2: constellation.cma_r2(), sps, mu0: 1e-3, halve_every: 1 << 14, processed: 0 })
    }

    pub fn mu(&self) -> f64 {
        let halvings = (self.processed / self.halve_every.max(1)).min(60) as i32;
        self.mu0 * 0.5f64.powi(halvings)
    }

    /// One update from the samples feeding symbol `k`; returns the output.
    pub fn step(&mut self, y: &[Complex64], k: usize) -> Complex64 {
        let mu = self.mu();
        let c = (self.taps.len() / 2) as isize;
        let base = (self.sps * k) as isize + c;
        let n = y.len() as isize;
        let sample = |i: usize| {
            let j = base - i as isize;
            if j >= 0 && j < n {
                y[j as usize]
            } else {
                Complex64::default()
            }
        };
        let z: Complex64 = self.taps.iter().enumerate().map(|(i, w)| w * sample(i)).sum();
        let e = self.r2 - z.norm_sqr();
        for i in 0..self.taps.len() {
            self.taps[i] += mu * e * z * sample(i).conj();
        }
        self.processed += 1;
        z
    }

    /// Processes symbols `range` in order, returning the outputs.
    pub fn run(&mut self, y: &[Complex64], range: Range<usize>) -> Vec<Complex64> {
        range.map(|k| self.step(y, k)).collect()
    }

    pub fn equalize(&self, y: &[Complex64]) -> Vec<Complex64> {
        fir_decimating(y, &self.taps, self.sps, 0..y.len() / self.sps)
    }
}

pub fn cma_step(state: &mut CmaState, y: &[Complex64], k: usize) -> Complex64 {
    state.step(y, k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdLmsConfig {
    pub batch: usize,
    pub lr: f64,
    pub switch_ser: f64,
    pub max_pretrain_updates: usize,
    pub dd_updates: usize,
}

impl Default for DdLmsConfig {
    fn default() -> Self {
        Self { batch: 64, lr: 1e-2, switch_ser: 1e-2, max_pretrain_updates: 20_000, dd_updates: 2_000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DdLmsPoint {
    pub update: usize,
    pub decision_directed: bool,
    pub loss: f64,
    /// SER of this minibatch's decisions against the pilots (no ambiguity search).
    pub batch_ser: f64,
}

/// Pilot-aided MMSE pre-training until the running SER of the last 16
/// minibatches reaches `switch_ser`, then decision-directed updates.
#[derive(Clone, Debug)]
pub struct DdLmsTrainer {
    pub fir: FirTrainer,
    pub switch_ser: f64,
    recent: std::collections::VecDeque<f64>,
    switched: bool,
    updates: usize,
}

impl DdLmsTrainer {
    pub fn new(fir: FirTrainer, switch_ser: f64) -> Self {
        Self { fir, switch_ser, recent: Default::default(), switched: false, updates: 0 }
    }

    pub fn decision_directed(&self) -> bool {
        self.switched
    }

    /// One update on symbols `range`; `pilots` are only read before the switch.
    pub fn step(&mut self, y: &[Complex64], range: Range<usize>, pilots: &[Complex64]) -> Result<DdLmsPoint> {
        let c = self.fir.constellation.clone();
        let dd = self.switched;
        let loss = if dd {
            self.fir.train_step(y, range.clone(), FirObjective::DecisionDirected, None)?
        } else {
            self.fir.train_step(y, range.clone(), FirObjective::Mmse, Some(pilots))?
        };
        let x = self.fir.forward(y, range);
        let batch_ser = x.iter().zip(pilots).filter(|(a, b)| c.nearest(**a) != c.nearest(**b)).count() as f64 / x.len() as f64;
        if !dd {
            self.recent.push_back(batch_ser);
            if self.recent.len() > 16 {
                self.recent.pop_front();
            }
            let mean = self.recent.iter().sum::<f64>() / self.recent.len() as f64;
            self.switched = self.recent.len() == 16 && mean <= self.switch_ser;
        }
        let point = DdLmsPoint { update: self.updates, decision_directed: dd, loss, batch_ser };
        self.updates += 1;
        Ok(point)
    }
}

/// [`DdLmsTrainer`] over a fixed frame whose minibatches are taken cyclically.
pub fn ddlms_run(
    trainer: &mut FirTrainer,
    y: &[Complex64],
    pilots: &[Complex64],
    cfg: &DdLmsConfig,
    guard: usize,
) -> Result<Vec<DdLmsPoint>> {
    let nsym = pilots.len().min(y.len() / trainer.sps);
    if nsym < cfg.batch + 2 * guard || cfg.batch == 0 {
        return Err(invalid("frame too short for the DD-LMS batch size"));
    }
    let span = nsym - 2 * guard;
    let mut cursor = 0usize;
    let mut next = || {
        if cursor + cfg.batch > span {
            cursor = 0;
        }
        let r = guard + cursor..guard + cursor + cfg.batch;
        cursor += cfg.batch;
        r
    };
    let mut dd = DdLmsTrainer::new(trainer.clone(), cfg.switch_ser);
    let mut trace = Vec::new();
    while !dd.decision_directed() {
        if trace.len() >= cfg.max_pretrain_updates {
            return Err(Error::PretrainBudget { target: cfg.switch_ser, updates: cfg.max_pretrain_updates });
        }
        let r = next();
        trace.push(dd.step(y, r.clone(), &pilots[r])?);
    }
    for _ in 0..cfg.dd_updates {
        let r = next();
        trace.push(dd.step(y, r.clone(), &pilots[r])?);
    }
    *trainer = dd.fir;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{pulse_shape, LinearIsiChannel};
    use crate::diff::finite_diff_check;
    use crate::dsp::{draw_symbols, make_qam, snr_to_noise_variance};
    use crate::rng::SeededRng;

    fn setup(seed: u64, n: usize, snr: Option<f64>, ch: Option<Vec<Complex64>>) -> (Arc<Constellation>, Vec<Complex64>, Vec<Complex64>) {
        let c = Arc::new(make_qam(16).unwrap());
        let mut rng = SeededRng::new(seed);
        let f = draw_symbols(&c, n, &mut rng).unwrap();
        let tx = pulse_shape(&f, 2, 0.1).unwrap();
        let nv = snr.map_or(0.0, |s| snr_to_noise_variance(&c, s));
        let ch = LinearIsiChannel::new(ch.unwrap_or_else(LinearIsiChannel::reference_taps), nv).unwrap();
        (c, ch.apply(&tx, &mut rng).unwrap().samples, f.symbols)
    }

    #[test]
    fn cma_constants() {
        assert!((make_qam(4).unwrap().cma_r2() - 1.0).abs() < 1e-12);
        assert!((make_qam(16).unwrap().cma_r2() - 1.32).abs() < 1e-12);
    }

    #[test]
    fn cma_on_modulus_circle_does_not_move() {
        let c = make_qam(4).unwrap();
        let mut s = CmaState::new(3, 2, &c).unwrap();
        let y = vec![c.point(0), Complex64::new(0.3, 0.2), c.point(2), Complex64::default()];
        let before = s.taps.clone();
        s.step(&y, 0);
        assert_eq!(s.taps, before);
        s.step(&y, 1);
        assert_eq!(s.taps, before);
    }

    #[test]
    fn cma_update_shrinks_modulus_error() {
        let c = make_qam(16).unwrap();
        let mut s = CmaState::new(3, 2, &c).unwrap();
        s.mu0 = 0.05;
        let y = vec![Complex64::new(0.5, 0.2); 6];
        let e0 = (s.step(&y, 1).norm_sqr() - s.r2).abs();
        let z1 = fir_decimating(&y, &s.taps, 2, 1..2)[0];
        assert!((z1.norm_sqr() - s.r2).abs() < e0);
    }

    #[test]
    fn cma_schedule_halves() {
        let c = make_qam(16).unwrap();
        let mut s = CmaState::new(3, 2, &c).unwrap();
        assert_eq!(s.mu(), 1e-3);
        s.processed = 1 << 14;
        assert_eq!(s.mu(), 5e-4);
        s.processed = 3 << 14;
        assert_eq!(s.mu(), 1.25e-4);
    }

    #[test]
    fn batch_gradients_match_finite_differences() {
        let (c, y, x) = setup(1, 200, Some(20.0), None);
        let mut t = FirTrainer::new(9, 2, 1e-3, c).unwrap();
        let mut rng = SeededRng::new(4);
        for v in t.taps.values.iter_mut() {
            *v += rng.uniform_range(-0.2, 0.2);
        }
        let range = 30..90;
        for obj in [FirObjective::Mmse, FirObjective::ConstantModulus] {
            t.compute_gradients(&y, range.clone(), obj, Some(&x[range.clone()])).unwrap();
            let g = t.taps.grad.clone();
            let base = t.taps.values.clone();
            let mut probe = t.clone();
            let r = finite_diff_check(
                |p| {
                    probe.taps.values.copy_from_slice(p);
                    probe.compute_gradients(&y, range.clone(), obj, Some(&x[range.clone()])).unwrap()
                },
                &base,
                &g,
                1e-5,
            );
            assert!(r.max_rel_err < 1e-6, "{obj:?} {r:?}");
        }
    }

    #[test]
    fn constant_modulus_gradient_vanishes_on_circle() {
        let c = Arc::new(make_qam(4).unwrap());
        let mut t = FirTrainer::new(1, 2, 1e-3, c.clone()).unwrap();
        let y: Vec<Complex64> = (0..20).map(|k| c.point(k % 4)).flat_map(|p| [p, Complex64::default()]).collect();
        t.compute_gradients(&y, 0..20, FirObjective::ConstantModulus, None).unwrap();
        assert!(t.taps.grad.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn misaligned_pilots_rejected() {
        let (c, y, x) = setup(2, 100, None, None);
        let mut t = FirTrainer::new(5, 2, 1e-3, c).unwrap();
        assert!(ffe_mmse_train_step(&mut t, &y, 10..50, &x[10..49]).is_err());
        assert!(ffe_mmse_solve(&y, &x[10..49], 5, 2, 10..50).is_err());
    }

    #[test]
    fn dirac_is_mmse_fixed_point_on_clean_identity() {
        // y sampled at symbol instants with zeros in between: Dirac is exact
        let (c, _, x) = setup(3, 200, None, None);
        let y: Vec<Complex64> = x.iter().flat_map(|&s| [s, Complex64::default()]).collect();
        let mut t = FirTrainer::new(7, 2, 1e-2, c).unwrap();
        let before = t.taps.values.clone();
        for _ in 0..10 {
            let l = ffe_mmse_train_step(&mut t, &y, 20..180, &x[20..180]).unwrap();
            assert_eq!(l, 0.0);
        }
        assert_eq!(t.taps.values, before);
    }

    #[test]
    fn mmse_solution_suppresses_isi() {
        // with the true channel and 21 dB noise, the least-squares 31-tap FFE leaves
        // ISI (excess error beyond the noise-limited MMSE) below −20 dB
        let (_, y, x) = setup(4, 20_000, Some(21.0), None);
        let w = ffe_mmse_solve(&y, &x[100..19_900], 31, 2, 100..19_900).unwrap();
        let (_, y_clean, _) = setup(4, 20_000, None, None);
        let xc = fir_decimating(&y_clean, &w, 2, 100..19_900);
        // residual ISI measured on the noise-free signal, after the least-squares gain
        let num: Complex64 = xc.iter().zip(&x[100..19_900]).map(|(a, b)| a * b.conj()).sum();
        let den: f64 = x[100..19_900].iter().map(|b| b.norm_sqr()).sum();
        let gain = num / den;
        let isi: f64 = xc.iter().zip(&x[100..19_900]).map(|(a, b)| (a - gain * b).norm_sqr()).sum::<f64>()
            / xc.iter().map(|a| a.norm_sqr()).sum::<f64>();
        assert!(10.0 * isi.log10() < -20.0, "ISI {} dB", 10.0 * isi.log10());
    }

    #[test]
    fn ddlms_noise_free_matches_supervised() {
        let (c, y, x) = setup(5, 6000, None, None);
        let cfg = DdLmsConfig { batch: 64, lr: 1e-2, switch_ser: 1e-2, max_pretrain_updates: 5000, dd_updates: 200 };
        let mut dd = FirTrainer::new(31, 2, cfg.lr, c.clone()).unwrap();
        let trace = ddlms_run(&mut dd, &y, &x, &cfg, 16).unwrap();
        let dd_part: Vec<_> = trace.iter().filter(|p| p.decision_directed).collect();
        assert_eq!(dd_part.len(), 200);
        assert!(dd_part.iter().all(|p| p.batch_ser == 0.0));
    }

    #[test]
    fn ddlms_budget_error() {
        let (c, y, x) = setup(6, 3000, Some(5.0), None);
        let cfg = DdLmsConfig { max_pretrain_updates: 30, ..Default::default() };
        let mut dd = FirTrainer::new(31, 2, cfg.lr, c).unwrap();
        assert!(matches!(ddlms_run(&mut dd, &y, &x, &cfg, 16), Err(Error::PretrainBudget { .. })));
    }
}
