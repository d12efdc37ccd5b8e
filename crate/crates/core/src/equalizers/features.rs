use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channels::{eval_terms, magnitudes, GmpIndexSets, GmpTerm, TermKind};
use crate::diff::Mlp;
use crate::dsp::ComplexSignal;
use crate::error::{invalid, Error, Result};

/// GMP feature set evaluated around the center sample `sps·k` of symbol `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureExtractorConfig {
    pub sets: GmpIndexSets,
    #[serde(default = "two")]
    pub sps: usize,
}

fn two() -> usize {
    2
}

impl FeatureExtractorConfig {
    pub fn new(sets: GmpIndexSets) -> Result<Self> {
        sets.validate()?;
        Ok(Self { sets, sps: 2 })
    }

    pub fn fiber() -> Self {
        Self { sets: GmpIndexSets::fiber_features(), sps: 2 }
    }

    pub fn pa() -> Self {
        Self { sets: GmpIndexSets::pa_features(), sps: 2 }
    }

    pub fn len(&self) -> usize {
        self.sets.term_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Real width of the feature vector fed to a network (re, im per term).
    pub fn real_width(&self) -> usize {
        2 * self.len()
    }

    pub fn terms(&self) -> Vec<GmpTerm> {
        self.sets.terms()
    }

    /// Real-pair columns of the raw center sample (first-order a-term at lag 0).
    pub fn center_pair(&self) -> Option<(usize, usize)> {
        self.terms()
            .iter()
            .position(|t| t.kind == TermKind::A && t.order == 1 && t.lag == 0)
            .map(|i| (2 * i, 2 * i + 1))
    }
}

/// Feature vector `s^k` in canonical term order.
pub fn extract_gmp_features(y: &ComplexSignal, cfg: &FeatureExtractorConfig, k: usize) -> Vec<Complex64> {
    let terms = cfg.terms();
    let mag = magnitudes(&y.samples);
    let mut out = vec![Complex64::default(); terms.len()];
    eval_terms(&y.samples, &mag, (cfg.sps * k) as isize, &terms, &mut out);
    out
}

/// Precomputed basis and magnitudes for repeated feature extraction on one
/// received sequence.
pub struct FeatureBank<'a> {
    samples: &'a [Complex64],
    mag: Vec<f64>,
    terms: Vec<GmpTerm>,
    sps: usize,
    /// Index in the full sequence of `samples[0]`.
    offset: isize,
}

impl<'a> FeatureBank<'a> {
    pub fn new(samples: &'a [Complex64], cfg: &FeatureExtractorConfig) -> Self {
        Self { samples, mag: magnitudes(samples), terms: cfg.terms(), sps: cfg.sps, offset: 0 }
    }

    /// Bank restricted to the samples that symbols `range` can reach.
    pub fn window(y: &'a [Complex64], cfg: &FeatureExtractorConfig, range: std::ops::Range<usize>) -> Self {
        let terms = cfg.terms();
        let reach = terms
            .iter()
            .map(|t| t.carrier_offset().abs().max(t.envelope_offset().abs()))
            .max()
            .unwrap_or(0);
        let lo = ((cfg.sps * range.start) as isize - reach).max(0) as usize;
        let hi = ((cfg.sps * range.end) as isize + reach + 1).min(y.len() as isize).max(lo as isize) as usize;
        let samples = &y[lo..hi];
        Self { samples, mag: magnitudes(samples), terms, sps: cfg.sps, offset: lo as isize }
    }

    pub fn width(&self) -> usize {
        2 * self.terms.len()
    }

    /// One row per symbol index, columns interleaved (re, im) per term.
    pub fn rows<I: IntoIterator<Item = usize>>(&self, symbols: I) -> DMatrix<f64> {
        let idx: Vec<usize> = symbols.into_iter().collect();
        let w = self.width();
        let mut m = DMatrix::<f64>::zeros(idx.len(), w);
        let mut buf = vec![Complex64::default(); self.terms.len()];
        for (r, &k) in idx.iter().enumerate() {
            eval_terms(self.samples, &self.mag, (self.sps * k) as isize - self.offset, &self.terms, &mut buf);
            for (t, z) in buf.iter().enumerate() {
                m[(r, 2 * t)] = z.re;
                m[(r, 2 * t + 1)] = z.im;
            }
        }
        m
    }
}

pub(crate) fn rows_to_complex(m: &DMatrix<f64>) -> Vec<Complex64> {
    (0..m.nrows()).map(|r| Complex64::new(m[(r, 0)], m[(r, 1)])).collect()
}

pub(crate) fn complex_to_rows(z: &[Complex64]) -> DMatrix<f64> {
    DMatrix::from_fn(z.len(), 2, |r, c| if c == 0 { z[r].re } else { z[r].im })
}

pub(crate) const NN_CHUNK: usize = 4096;

/// Per-symbol network equalization on GMP features of `y`.
pub fn equalize_nn(y: &ComplexSignal, cfg: &FeatureExtractorConfig, mlp: &Mlp) -> Result<Vec<Complex64>> {
    if y.sps != cfg.sps {
        return Err(invalid(format!("signal has {} sps, features expect {}", y.sps, cfg.sps)));
    }
    let want = cfg.real_width();
    if mlp.spec().input_width() != want {
        return Err(Error::WidthMismatch { expected: want, got: mlp.spec().input_width() });
    }
    if mlp.spec().output_width() != 2 {
        return Err(Error::WidthMismatch { expected: 2, got: mlp.spec().output_width() });
    }
    let n = y.len() / y.sps;
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + NN_CHUNK).min(n);
        let bank = FeatureBank::window(&y.samples, cfg, start..end);
        let pred = mlp.predict_batch(bank.rows(start..end))?;
        out.extend(rows_to_complex(&pred));
        start = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::OrderLags;
    use crate::diff::{MlpSpec, Residual};
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    #[test]
    fn fiber_feature_length() {
        let cfg = FeatureExtractorConfig::fiber();
        assert_eq!(cfg.len(), 43 + 11 + 7 + 33 + 33);
        assert_eq!(cfg.len(), 127);
        let y = ComplexSignal::new(vec![Complex64::new(0.3, 0.1); 200], 2);
        assert_eq!(extract_gmp_features(&y, &cfg, 50).len(), 127);
        assert_eq!(FeatureExtractorConfig::pa().len(), 115);
    }

    #[test]
    fn first_order_terms_are_raw_samples() {
        let cfg = FeatureExtractorConfig::fiber();
        let mut rng = SeededRng::new(1);
        let y = ComplexSignal::new((0..200).map(|_| rng.complex_normal(1.0)).collect(), 2);
        let s = extract_gmp_features(&y, &cfg, 40);
        for (i, t) in cfg.terms().iter().enumerate() {
            if t.order == 1 {
                assert_eq!(s[i], y.samples[(80 - t.lag) as usize]);
            }
        }
    }

    #[test]
    fn constant_input_gives_unit_features() {
        let cfg = FeatureExtractorConfig::fiber();
        let y = ComplexSignal::new(vec![Complex64::new(1.0, 0.0); 200], 2);
        for v in extract_gmp_features(&y, &cfg, 50) {
            assert_eq!(v, Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn zero_network_with_residual_passes_center_sample() {
        let cfg = FeatureExtractorConfig::fiber();
        let (re, im) = cfg.center_pair().unwrap();
        let mlp = Mlp::zeros(MlpSpec::relu(cfg.real_width(), &[32, 8], 2, Residual::Center { re, im })).unwrap();
        let mut rng = SeededRng::new(2);
        let y = ComplexSignal::new((0..300).map(|_| rng.complex_normal(1.0)).collect(), 2);
        let x = equalize_nn(&y, &cfg, &mlp).unwrap();
        assert_eq!(x.len(), 150);
        for k in 0..150 {
            assert_eq!(x[k], y.samples[2 * k]);
        }
    }

    #[test]
    fn width_mismatch_reported() {
        let cfg = FeatureExtractorConfig::pa();
        let mlp = Mlp::zeros(MlpSpec::relu(254, &[4], 2, Residual::None)).unwrap();
        let y = ComplexSignal::new(vec![Complex64::default(); 64], 2);
        assert!(matches!(equalize_nn(&y, &cfg, &mlp), Err(Error::WidthMismatch { expected: 230, got: 254 })));
    }

    #[test]
    fn feature_permutation_with_permuted_weights_is_invariant() {
        let cfg = FeatureExtractorConfig::pa();
        let mut rng = SeededRng::new(5);
        let spec = MlpSpec::relu(cfg.real_width(), &[8], 2, Residual::None);
        let mlp = Mlp::init(spec.clone(), &mut rng).unwrap();
        let y = ComplexSignal::new((0..100).map(|_| rng.complex_normal(0.5)).collect(), 2);
        let base = equalize_nn(&y, &cfg, &mlp).unwrap();

        // reverse the a-term order and permute first-layer columns to match
        let mut sets = cfg.sets.clone();
        sets.a.reverse();
        let pcfg = FeatureExtractorConfig { sets, sps: 2 };
        let old: Vec<GmpTerm> = cfg.terms();
        let new: Vec<GmpTerm> = pcfg.terms();
        let mut pm = mlp.clone();
        let d = cfg.real_width();
        {
            let mut params = pm.params_mut();
            let w = &mut params[0];
            let orig = w.values.clone();
            for (j_new, t) in new.iter().enumerate() {
                let j_old = old.iter().position(|u| u == t).unwrap();
                for row in 0..8 {
                    for part in 0..2 {
                        w.values[row * d + 2 * j_new + part] = orig[row * d + 2 * j_old + part];
                    }
                }
            }
        }
        let perm = equalize_nn(&y, &pcfg, &pm).unwrap();
        for (a, b) in base.iter().zip(&perm) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    fn arb_sets() -> impl Strategy<Value = GmpIndexSets> {
        let fam = prop::collection::vec((1u32..6, prop::collection::btree_set(-6i32..6, 1..5)), 0..3);
        let shifts = prop::collection::btree_set(1i32..4, 1..3);
        (fam.clone(), fam.clone(), fam, shifts.clone(), shifts).prop_map(|(a, b, c, bs, cs)| {
            let mk = |v: Vec<(u32, std::collections::BTreeSet<i32>)>| {
                let mut seen = std::collections::BTreeMap::new();
                for (p, l) in v {
                    seen.insert(p, l);
                }
                seen.into_iter().map(|(order, l)| OrderLags { order, lags: l.into_iter().collect() }).collect::<Vec<_>>()
            };
            let mut a = mk(a);
            if a.is_empty() {
                a.push(OrderLags { order: 1, lags: vec![0] });
            }
            GmpIndexSets { a, b: mk(b), b_shifts: bs.into_iter().collect(), c: mk(c), c_shifts: cs.into_iter().collect() }
        })
    }

    proptest! {
        #[test]
        fn counted_length_equals_constructed(sets in arb_sets()) {
            let cfg = FeatureExtractorConfig::new(sets).unwrap();
            let y = ComplexSignal::new(vec![Complex64::new(0.5, -0.5); 40], 2);
            prop_assert_eq!(extract_gmp_features(&y, &cfg, 10).len(), cfg.len());
            prop_assert_eq!(FeatureBank::new(&y.samples, &cfg).rows(0..3).ncols(), cfg.real_width());
            let full = FeatureBank::new(&y.samples, &cfg).rows(5..9);
            let win = FeatureBank::window(&y.samples, &cfg, 5..9).rows(5..9);
            prop_assert_eq!(full, win);
        }
    }
}
