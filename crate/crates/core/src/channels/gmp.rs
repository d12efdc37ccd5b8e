//! Generalized memory polynomial (GMP) basis and model.
//!
//! A term of order `p`, lag `l` and cross-term shift `m` evaluated at sample
//! `k` of a sequence `x` is
//!
//! * a-term: `x[k-l] |x[k-l]|^(p-1)`
//! * b-term: `x[k-l] |x[k-l-m]|^(p-1)` (lagging envelope)
//! * c-term: `x[k-l] |x[k-l+m]|^(p-1)` (leading envelope)
//!
//! Samples outside the sequence are zero. The same basis drives the power
//! amplifier model and the nonlinear feature extractor of the equalizers.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::ComplexSignal;
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TermKind {
    A,
    B,
    C,
}

impl TermKind {
    fn tag(self) -> char {
        match self {
            TermKind::A => 'a',
            TermKind::B => 'b',
            TermKind::C => 'c',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GmpTerm {
    pub kind: TermKind,
    pub order: u32,
    pub lag: i32,
    pub shift: i32,
}

impl GmpTerm {
    pub fn a(order: u32, lag: i32) -> Self {
        Self {
            kind: TermKind::A,
            order,
            lag,
            shift: 0,
        }
    }

    /// Offset (relative to `k`) of the sample carried by this term.
    #[inline]
    pub fn carrier_offset(&self) -> isize {
        -(self.lag as isize)
    }

    /// Offset (relative to `k`) of the sample whose magnitude is raised to `p-1`.
    #[inline]
    pub fn envelope_offset(&self) -> isize {
        match self.kind {
            TermKind::A => -(self.lag as isize),
            TermKind::B => -(self.lag as isize) - self.shift as isize,
            TermKind::C => -(self.lag as isize) + self.shift as isize,
        }
    }
}

/// Orders with their lag sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderLags {
    pub order: u32,
    pub lags: Vec<i32>,
}

/// Declared index sets 𝒫, ℒ^p and ℳ for the three term families.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmpIndexSets {
    pub a: Vec<OrderLags>,
    #[serde(default)]
    pub b: Vec<OrderLags>,
    #[serde(default)]
    pub b_shifts: Vec<i32>,
    #[serde(default)]
    pub c: Vec<OrderLags>,
    #[serde(default)]
    pub c_shifts: Vec<i32>,
}

fn range(lo: i32, hi: i32) -> Vec<i32> {
    (lo..=hi).collect()
}

fn ol(order: u32, lags: Vec<i32>) -> OrderLags {
    OrderLags { order, lags }
}

impl GmpIndexSets {
    /// Memory polynomial: a-terms only, same lags for every order.
    pub fn memory_polynomial(orders: &[u32], lags: &[i32]) -> Self {
        Self {
            a: orders.iter().map(|&p| ol(p, lags.to_vec())).collect(),
            ..Default::default()
        }
    }

    /// Feature set of the fiber equalizer (127 features).
    pub fn fiber_features() -> Self {
        Self {
            a: vec![
                ol(1, range(-21, 21)),
                ol(3, range(-5, 5)),
                ol(5, range(-3, 3)),
            ],
            b: vec![ol(3, range(-5, 5))],
            b_shifts: vec![1, 2, 3],
            c: vec![ol(3, range(-5, 5))],
            c_shifts: vec![1, 2, 3],
        }
    }

    /// Feature set of the power-amplifier equalizer (115 features).
    pub fn pa_features() -> Self {
        let mut a = vec![ol(1, range(-15, 15))];
        a.extend((2..=7).map(|p| ol(p, range(-3, 3))));
        Self {
            a,
            b: vec![ol(3, range(-3, 3))],
            b_shifts: vec![1, 2, 3],
            c: vec![ol(3, range(-3, 3))],
            c_shifts: vec![1, 2, 3],
        }
    }

    /// Index sets of the surrogate power amplifier: orders 1..7, lags {0,1,2},
    /// shift {1}. First-order cross terms equal first-order a-terms
    /// (|x|⁰ = 1), so the b and c families start at order 2.
    pub fn pa_model() -> Self {
        let fam = |lo: u32| (lo..=7).map(|p| ol(p, vec![0, 1, 2])).collect::<Vec<_>>();
        Self {
            a: fam(1),
            b: fam(2),
            b_shifts: vec![1],
            c: fam(2),
            c_shifts: vec![1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.a.iter().chain(&self.b).chain(&self.c);
        for f in all {
            if f.order < 1 {
                return Err(invalid("nonlinear orders must be >= 1"));
            }
            if f.lags.is_empty() {
                return Err(invalid(format!("order {} has an empty lag set", f.order)));
            }
        }
        if !self.b.is_empty() && self.b_shifts.is_empty() {
            return Err(invalid("b-terms declared without shifts"));
        }
        if !self.c.is_empty() && self.c_shifts.is_empty() {
            return Err(invalid("c-terms declared without shifts"));
        }
        if self.a.is_empty() && self.b.is_empty() && self.c.is_empty() {
            return Err(invalid("index sets declare no terms"));
        }
        Ok(())
    }

    /// Σ|ℒ_a^p| + Σ|ℒ_b^p||ℳ_b| + Σ|ℒ_c^p||ℳ_c|.
    pub fn term_count(&self) -> usize {
        let a: usize = self.a.iter().map(|f| f.lags.len()).sum();
        let b: usize = self.b.iter().map(|f| f.lags.len()).sum::<usize>() * self.b_shifts.len();
        let c: usize = self.c.iter().map(|f| f.lags.len()).sum::<usize>() * self.c_shifts.len();
        a + b + c
    }

    /// Terms in canonical order: a (by order, then lag), then b and c (by
    /// order, then lag, then shift).
    pub fn terms(&self) -> Vec<GmpTerm> {
        let mut out = Vec::with_capacity(self.term_count());
        for f in &self.a {
            out.extend(f.lags.iter().map(|&l| GmpTerm::a(f.order, l)));
        }
        for (kind, fams, shifts) in [
            (TermKind::B, &self.b, &self.b_shifts),
            (TermKind::C, &self.c, &self.c_shifts),
        ] {
            for f in fams {
                for &lag in &f.lags {
                    for &shift in shifts {
                        out.push(GmpTerm {
                            kind,
                            order: f.order,
                            lag,
                            shift,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn is_memory_polynomial(&self) -> bool {
        self.b.is_empty() && self.c.is_empty()
    }
}

#[inline]
fn mag_pow(mag: f64, e: u32) -> f64 {
    match e {
        0 => 1.0,
        1 => mag,
        2 => mag * mag,
        _ => mag.powi(e as i32),
    }
}

/// Evaluates `terms` centred on sample `center` of `x` into `out`, using the
/// precomputed magnitudes `mag` (`mag[i] == x[i].norm()`).
pub fn eval_terms(
    x: &[Complex64],
    mag: &[f64],
    center: isize,
    terms: &[GmpTerm],
    out: &mut [Complex64],
) {
    let n = x.len() as isize;
    for (t, o) in terms.iter().zip(out.iter_mut()) {
        let ci = center + t.carrier_offset();
        if ci < 0 || ci >= n {
            *o = Complex64::default();
            continue;
        }
        let carrier = x[ci as usize];
        *o = if t.order == 1 {
            carrier
        } else {
            let ei = center + t.envelope_offset();
            if ei < 0 || ei >= n {
                Complex64::default()
            } else {
                carrier * mag_pow(mag[ei as usize], t.order - 1)
            }
        };
    }
}

pub fn magnitudes(x: &[Complex64]) -> Vec<f64> {
    x.iter().map(|s| s.norm()).collect()
}

/// GMP with one complex coefficient per basis term.
#[derive(Clone, Debug, PartialEq)]
pub struct GmpModel {
    terms: Vec<GmpTerm>,
    coeffs: Vec<Complex64>,
}

impl GmpModel {
    pub fn new(terms: Vec<GmpTerm>, coeffs: Vec<Complex64>) -> Result<Self> {
        if terms.len() != coeffs.len() {
            return Err(Error::WidthMismatch {
                expected: terms.len(),
                got: coeffs.len(),
            });
        }
        if terms.iter().any(|t| t.order < 1) {
            return Err(invalid("nonlinear orders must be >= 1"));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &terms {
            if !seen.insert(*t) {
                return Err(invalid(format!("duplicate term {t:?}")));
            }
        }
        Ok(Self { terms, coeffs })
    }

    pub fn zeros(sets: &GmpIndexSets) -> Result<Self> {
        sets.validate()?;
        let terms = sets.terms();
        let coeffs = vec![Complex64::default(); terms.len()];
        Self::new(terms, coeffs)
    }

    /// Model `a_{1,0} = gain`, everything else absent.
    pub fn gain(gain: Complex64) -> Self {
        Self {
            terms: vec![GmpTerm::a(1, 0)],
            coeffs: vec![gain],
        }
    }

    pub fn terms(&self) -> &[GmpTerm] {
        &self.terms
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn coefficient(&self, term: &GmpTerm) -> Option<Complex64> {
        self.terms
            .iter()
            .position(|t| t == term)
            .map(|i| self.coeffs[i])
    }

    pub fn set(&mut self, term: GmpTerm, value: Complex64) {
        match self.terms.iter().position(|t| *t == term) {
            Some(i) => self.coeffs[i] = value,
            None => {
                self.terms.push(term);
                self.coeffs.push(value);
            }
        }
    }

    pub fn is_memory_polynomial(&self) -> bool {
        self.terms.iter().all(|t| t.kind == TermKind::A)
    }

    pub fn apply(&self, input: &ComplexSignal) -> ComplexSignal {
        gmp_apply(input, self)
    }

    /// Plain-text coefficient table, one `kind p l m re im` line per term.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# kind p l m re im\n");
        for (t, c) in self.terms.iter().zip(&self.coeffs) {
            let _ = writeln!(
                s,
                "{} {} {} {} {:e} {:e}",
                t.kind.tag(),
                t.order,
                t.lag,
                t.shift,
                c.re,
                c.im
            );
        }
        s
    }
}

impl FromStr for GmpModel {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut terms = Vec::new();
        let mut coeffs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| Error::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(err("expected 6 fields: kind p l m re im"));
            }
            let kind = match f[0] {
                "a" => TermKind::A,
                "b" => TermKind::B,
                "c" => TermKind::C,
                _ => return Err(err("kind must be a, b or c")),
            };
            let order: u32 = f[1].parse().map_err(|_| err("bad order"))?;
            let lag: i32 = f[2].parse().map_err(|_| err("bad lag"))?;
            let shift: i32 = f[3].parse().map_err(|_| err("bad shift"))?;
            let re: f64 = f[4].parse().map_err(|_| err("bad real part"))?;
            let im: f64 = f[5].parse().map_err(|_| err("bad imaginary part"))?;
            if kind == TermKind::A && shift != 0 {
                return Err(err("a-terms carry shift 0"));
            }
            terms.push(GmpTerm {
                kind,
                order,
                lag,
                shift,
            });
            coeffs.push(Complex64::new(re, im));
        }
        GmpModel::new(terms, coeffs)
    }
}

pub fn gmp_apply(input: &ComplexSignal, model: &GmpModel) -> ComplexSignal {
    let x = &input.samples;
    let mag = magnitudes(x);
    let mut row = vec![Complex64::default(); model.terms.len()];
    let out = (0..x.len())
        .map(|k| {
            eval_terms(x, &mag, k as isize, &model.terms, &mut row);
            row.iter().zip(&model.coeffs).map(|(b, c)| b * c).sum()
        })
        .collect();
    ComplexSignal::new(out, input.sps)
}

/// Least-squares fit of the GMP basis declared by `sets` mapping `input` to
/// `output`.
pub fn gmp_fit(
    input: &ComplexSignal,
    output: &ComplexSignal,
    sets: &GmpIndexSets,
) -> Result<GmpModel> {
    sets.validate()?;
    let terms = sets.terms();
    let (n, k) = (input.len(), terms.len());
    if output.len() != n {
        return Err(Error::WidthMismatch {
            expected: n,
            got: output.len(),
        });
    }
    if n < k {
        return Err(invalid(format!(
            "{n} samples cannot determine {k} coefficients"
        )));
    }
    let x = &input.samples;
    let mag = magnitudes(x);
    let mut a = DMatrix::<Complex64>::zeros(n, k);
    let mut row = vec![Complex64::default(); k];
    for r in 0..n {
        eval_terms(x, &mag, r as isize, &terms, &mut row);
        for (c, v) in row.iter().enumerate() {
            a[(r, c)] = *v;
        }
    }
    // equilibrate columns; high orders otherwise dominate the conditioning
    let mut scale = vec![1.0; k];
    for c in 0..k {
        let norm = a.column(c).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::RankDeficient {
                rank: k - 1,
                cols: k,
            });
        }
        scale[c] = norm;
        a.column_mut(c).iter_mut().for_each(|v| *v /= norm);
    }
    let b = DVector::from_iterator(n, output.samples.iter().copied());
    let qr = a.qr();
    let r = qr.r();
    let diag_max = (0..k).map(|i| r[(i, i)].norm()).fold(0.0, f64::max);
    let rank = (0..k)
        .filter(|&i| r[(i, i)].norm() > 1e-10 * diag_max)
        .count();
    if rank < k {
        return Err(Error::RankDeficient { rank, cols: k });
    }
    let qtb = qr.q().adjoint() * b;
    let sol = r
        .solve_upper_triangular(&qtb)
        .ok_or(Error::RankDeficient { rank, cols: k })?;
    let coeffs = sol.iter().zip(&scale).map(|(c, s)| c / s).collect();
    GmpModel::new(terms, coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{fir_filter, FilterMode};
    use crate::rng::SeededRng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_signal(n: usize, seed: u64) -> ComplexSignal {
        let mut rng = SeededRng::new(seed);
        ComplexSignal::new((0..n).map(|_| rng.complex_normal(1.0)).collect(), 1)
    }

    #[test]
    fn feature_counts() {
        assert_eq!(GmpIndexSets::fiber_features().term_count(), 127);
        assert_eq!(GmpIndexSets::fiber_features().terms().len(), 127);
        assert_eq!(GmpIndexSets::pa_features().term_count(), 115);
        assert_eq!(GmpIndexSets::pa_model().term_count(), 57);
    }

    #[test]
    fn pure_gain() {
        let x = random_signal(32, 1);
        let g = c(0.7, -0.2);
        let y = GmpModel::gain(g).apply(&x);
        for (a, b) in x.samples.iter().zip(&y.samples) {
            assert!((a * g - b).norm() < 1e-15);
        }
    }

    #[test]
    fn cubic_term_on_isolated_sample() {
        let mut m = GmpModel::gain(c(1.0, 0.0));
        m.set(GmpTerm::a(3, 0), c(0.1, 0.0));
        let x = ComplexSignal::new(vec![c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)], 1);
        let y = m.apply(&x);
        assert!((y.samples[1] - c(1.1, 0.0)).norm() < 1e-15);
        assert_eq!(y.samples[0], c(0.0, 0.0));
    }

    #[test]
    fn unit_lag_is_a_delay() {
        let m = GmpModel::new(vec![GmpTerm::a(1, 1)], vec![c(1.0, 0.0)]).unwrap();
        let x = random_signal(10, 2);
        let y = m.apply(&x);
        assert_eq!(y.samples[0], c(0.0, 0.0));
        for k in 1..10 {
            assert_eq!(y.samples[k], x.samples[k - 1]);
        }
    }

    #[test]
    fn first_order_model_is_a_causal_fir() {
        let taps = vec![c(0.9, 0.1), c(-0.2, 0.3), c(0.05, -0.01), c(0.0, 0.2)];
        let terms = (0..4).map(|l| GmpTerm::a(1, l)).collect();
        let m = GmpModel::new(terms, taps.clone()).unwrap();
        let x = random_signal(50, 3);
        let y = m.apply(&x);
        let f = fir_filter(&x, &taps, FilterMode::Full);
        for k in 0..50 {
            assert!((y.samples[k] - f.samples[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn cross_terms_use_shifted_envelopes() {
        let x = ComplexSignal::new(vec![c(1.0, 0.0), c(2.0, 0.0), c(0.0, 3.0), c(0.5, 0.0)], 1);
        let b = GmpModel::new(
            vec![GmpTerm {
                kind: TermKind::B,
                order: 3,
                lag: 0,
                shift: 1,
            }],
            vec![c(1.0, 0.0)],
        )
        .unwrap();
        let cc = GmpModel::new(
            vec![GmpTerm {
                kind: TermKind::C,
                order: 3,
                lag: 0,
                shift: 1,
            }],
            vec![c(1.0, 0.0)],
        )
        .unwrap();
        let yb = b.apply(&x);
        let yc = cc.apply(&x);
        // b: x[k] |x[k-1]|^2 ; c: x[k] |x[k+1]|^2
        assert_eq!(yb.samples[0], c(0.0, 0.0));
        assert!((yb.samples[2] - c(0.0, 3.0) * 4.0).norm() < 1e-12);
        assert!((yc.samples[1] - c(2.0, 0.0) * 9.0).norm() < 1e-12);
        assert_eq!(yc.samples[3], c(0.0, 0.0));
    }

    #[test]
    fn fit_recovers_known_model() {
        let sets = GmpIndexSets::pa_model();
        let mut rng = SeededRng::new(9);
        let mut truth = GmpModel::zeros(&sets).unwrap();
        for (t, v) in truth.terms.clone().iter().zip(truth.coeffs.iter_mut()) {
            let s = 0.3f64.powi(t.order as i32 - 1);
            *v = c(rng.normal() * s, rng.normal() * s);
        }
        let x = random_signal(4000, 10).scaled(0.5);
        let y = truth.apply(&x);
        let fit = gmp_fit(&x, &y, &sets).unwrap();
        for (a, b) in fit.coeffs.iter().zip(&truth.coeffs) {
            assert!((a - b).norm() <= 1e-8 * b.norm().max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn fit_of_linear_data_has_no_nonlinear_terms() {
        let sets = GmpIndexSets::memory_polynomial(&[1, 3, 5], &[0, 1, 2]);
        let x = random_signal(2000, 4);
        let y = fir_filter(
            &x,
            &[c(1.0, 0.1), c(0.2, -0.3), c(-0.1, 0.0)],
            FilterMode::Full,
        );
        let y = ComplexSignal::new(y.samples[..2000].to_vec(), 1);
        let fit = gmp_fit(&x, &y, &sets).unwrap();
        for (t, v) in fit.terms().iter().zip(fit.coeffs()) {
            if t.order > 1 {
                assert!(v.norm() <= 1e-10, "{t:?} {v}");
            }
        }
    }

    #[test]
    fn first_order_cross_terms_are_degenerate() {
        let mut sets = GmpIndexSets::pa_model();
        sets.b.insert(0, ol(1, vec![0, 1, 2]));
        let x = random_signal(500, 6);
        assert!(matches!(gmp_fit(&x, &x, &sets), Err(Error::RankDeficient { rank: 57, cols: 60 })));
    }

    #[test]
    fn fit_needs_enough_samples() {
        let sets = GmpIndexSets::pa_model();
        let x = random_signal(10, 5);
        assert!(gmp_fit(&x, &x, &sets).is_err());
    }

    #[test]
    fn fit_detects_rank_deficiency() {
        // a constant-magnitude input makes |x|^2 x proportional to x
        let sets = GmpIndexSets::memory_polynomial(&[1, 3], &[0]);
        let x = ComplexSignal::new(
            (0..100)
                .map(|k| Complex64::from_polar(1.0, k as f64))
                .collect(),
            1,
        );
        assert!(matches!(
            gmp_fit(&x, &x, &sets),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn text_round_trip() {
        let sets = GmpIndexSets::pa_model();
        let mut m = GmpModel::zeros(&sets).unwrap();
        for (i, v) in m.coeffs.iter_mut().enumerate() {
            *v = c(i as f64 * 0.125 - 3.0, 1.0 / (i as f64 + 1.0));
        }
        let back: GmpModel = m.to_text().parse().unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn text_errors_carry_line_numbers() {
        let err = "# header\na 1 0 0 1.0\n".parse::<GmpModel>().unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!("x 1 0 0 1 0".parse::<GmpModel>().is_err());
        assert!("a 1 0 2 1 0".parse::<GmpModel>().is_err());
    }
}
