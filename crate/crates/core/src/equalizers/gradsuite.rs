//! Finite-difference checks of every analytic gradient path, runnable
//! outside the test harness.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{Decoder, Encoder, FeatureExtractorConfig, FirObjective, FirTrainer, MpTaps, VaeConfig, VaeTrainer, VqVaeConfig, VqVaeTrainer};
use crate::channels::{GmpIndexSets, OrderLags};
use crate::diff::{finite_diff_check, l2_penalty, GradCheckReport, Mlp, MlpSpec, ParamTensor, Residual};
use crate::dsp::make_qam;
use crate::equalizers::CommitWeight;
use crate::error::{invalid, Result};
use crate::rng::SeededRng;

/// Groups of gradient paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GradPath {
    /// FIR taps under the MMSE and constant-modulus objectives.
    Fir,
    /// Network weights (with L2 penalty) and network inputs.
    Mlp,
    /// Closed-form VAE objective with FIR and memory-polynomial models.
    Elbo,
    /// VQ-VAE loss through both networks.
    VqVae,
}

impl GradPath {
    pub const ALL: [GradPath; 4] = [GradPath::Fir, GradPath::Mlp, GradPath::Elbo, GradPath::VqVae];

    pub fn name(self) -> &'static str {
        match self {
            GradPath::Fir => "fir",
            GradPath::Mlp => "mlp",
            GradPath::Elbo => "elbo",
            GradPath::VqVae => "vqvae",
        }
    }

    /// Parses a comma-separated selection; `all` expands to every path.
    pub fn parse_list(s: &str) -> Result<Vec<GradPath>> {
        let mut out = Vec::new();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "all" => out.extend(Self::ALL),
                "fir" => out.push(GradPath::Fir),
                "mlp" => out.push(GradPath::Mlp),
                "elbo" => out.push(GradPath::Elbo),
                "vqvae" => out.push(GradPath::VqVae),
                _ => return Err(invalid(format!("unknown gradient path '{tok}' (all|fir|mlp|elbo|vqvae)"))),
            }
        }
        let mut seen = Vec::new();
        out.retain(|p| {
            let new = !seen.contains(p);
            seen.push(*p);
            new
        });
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct GradCase {
    pub path: GradPath,
    pub case: String,
    pub report: GradCheckReport,
}

/// Deliberate corruption of the analytic gradients, for exercising the
/// failure path of callers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GradFault {
    #[default]
    None,
    /// Negates the analytic gradient of every case.
    SignFlip,
}

fn flat(ps: &[&ParamTensor]) -> (Vec<f64>, Vec<f64>) {
    (ps.iter().flat_map(|p| p.values.clone()).collect(), ps.iter().flat_map(|p| p.grad.clone()).collect())
}

fn load(ps: Vec<&mut ParamTensor>, v: &[f64]) {
    let mut off = 0;
    for p in ps {
        let k = p.len();
        p.values.copy_from_slice(&v[off..off + k]);
        off += k;
    }
}

fn jitter(ps: Vec<&mut ParamTensor>, rng: &mut SeededRng, scale: f64) {
    for p in ps {
        p.values.iter_mut().for_each(|v| *v += rng.uniform_range(-scale, scale));
    }
}

fn check(loss: impl FnMut(&[f64]) -> f64, base: &[f64], analytic: &[f64], h: f64, fault: GradFault) -> GradCheckReport {
    let a: Vec<f64> = match fault {
        GradFault::None => analytic.to_vec(),
        GradFault::SignFlip => analytic.iter().map(|g| -g).collect(),
    };
    finite_diff_check(loss, base, &a, h)
}

fn small_features() -> Result<FeatureExtractorConfig> {
    FeatureExtractorConfig::new(GmpIndexSets {
        a: vec![OrderLags { order: 1, lags: vec![-2, -1, 0, 1, 2] }, OrderLags { order: 3, lags: vec![-1, 0, 1] }],
        b: vec![OrderLags { order: 3, lags: vec![0, 1] }],
        b_shifts: vec![1, 2],
        c: vec![OrderLags { order: 3, lags: vec![0] }],
        c_shifts: vec![1],
    })
}

fn fir_cases(fault: GradFault, out: &mut Vec<GradCase>) -> Result<()> {
    let c = Arc::new(make_qam(16)?);
    let mut rng = SeededRng::new(101);
    let x: Vec<Complex64> = (0..120).map(|_| c.point(rng.index(16))).collect();
    let ch = MpTaps::linear(&[Complex64::new(0.1, 0.05), Complex64::new(1.0, 0.0), Complex64::new(0.3, -0.2)], 2)?;
    let y: Vec<Complex64> = ch.apply(&x).iter().map(|v| v + rng.complex_normal(0.01)).collect();
    let range = 20..100;
    for (name, obj) in [("ffe-mmse", FirObjective::Mmse), ("cma-batch", FirObjective::ConstantModulus)] {
        let mut t = FirTrainer::new(9, 2, 1e-3, c.clone())?;
        t.taps.values.iter_mut().for_each(|v| *v += rng.uniform_range(-0.2, 0.2));
        t.compute_gradients(&y, range.clone(), obj, Some(&x[range.clone()]))?;
        let (base, g) = (t.taps.values.clone(), t.taps.grad.clone());
        let mut probe = t.clone();
        let report = check(
            |p| {
                probe.taps.values.copy_from_slice(p);
                probe.compute_gradients(&y, range.clone(), obj, Some(&x[range.clone()])).unwrap_or(f64::NAN)
            },
            &base,
            &g,
            1e-5,
            fault,
        );
        out.push(GradCase { path: GradPath::Fir, case: name.into(), report });
    }
    Ok(())
}

fn mlp_cases(fault: GradFault, out: &mut Vec<GradCase>) -> Result<()> {
    let mut rng = SeededRng::new(202);
    for (name, residual) in [
        ("weights", Residual::None),
        ("weights+center", Residual::Center { re: 1, im: 4 }),
        ("weights+skip", Residual::LinearSkip { re: 0, im: 5 }),
    ] {
        let mut mlp = Mlp::init(MlpSpec::relu(6, &[5, 3], 2, residual), &mut rng)?;
        jitter(mlp.params_mut(), &mut rng, 0.5);
        let x = DMatrix::from_fn(7, 6, |_, _| rng.uniform_range(-1.0, 1.0));
        let target = DMatrix::from_fn(7, 2, |_, _| rng.uniform_range(-1.0, 1.0));
        let lam = 0.03;
        mlp.zero_grad();
        let (yv, tape) = mlp.forward_batch(x.clone())?;
        mlp.backward_batch(&tape, &((yv - &target) * 2.0))?;
        l2_penalty(&mut mlp.regularized_mut(), lam);
        let (base, g) = flat(&mlp.params());
        let mut probe = mlp.clone();
        let report = check(
            |p| {
                load(probe.params_mut(), p);
                let yv = probe.predict_batch(x.clone()).map(|v| (v - &target).norm_squared()).unwrap_or(f64::NAN);
                yv + l2_penalty(&mut probe.regularized_mut(), lam)
            },
            &base,
            &g,
            1e-5,
            fault,
        );
        out.push(GradCase { path: GradPath::Mlp, case: name.into(), report });
    }
    let mut mlp = Mlp::init(MlpSpec::relu(4, &[6], 2, Residual::Center { re: 0, im: 1 }), &mut rng)?;
    jitter(mlp.params_mut(), &mut rng, 0.3);
    let x: Vec<f64> = (0..4).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let (_, tape) = mlp.forward(&x)?;
    let dx = mlp.backward(&tape, &[1.0, -2.0])?;
    let report = check(
        |p| mlp.forward(p).map(|(y, _)| y[0] - 2.0 * y[1]).unwrap_or(f64::NAN),
        &x,
        &dx,
        1e-5,
        fault,
    );
    out.push(GradCase { path: GradPath::Mlp, case: "inputs".into(), report });
    Ok(())
}

fn elbo_cases(fault: GradFault, out: &mut Vec<GradCase>) -> Result<()> {
    let c = Arc::new(make_qam(16)?);
    let cases: Vec<(&str, Decoder, Vec<u32>)> = vec![
        ("fir-linear", Decoder::fir(9, 2)?, vec![1]),
        ("fir-mp", Decoder::fir(9, 2)?, vec![1, 3]),
        ("gmp-mp", Decoder::gmp(small_features()?)?, vec![1, 3]),
    ];
    for (i, (name, decoder, orders)) in cases.into_iter().enumerate() {
        let mut rng = SeededRng::new(303 + i as u64);
        let x: Vec<Complex64> = (0..60).map(|_| c.point(rng.index(16))).collect();
        let linear: Vec<Complex64> = (0..5).map(|k| Complex64::new(if k == 2 { 1.0 } else { 0.0 }, 0.0) + rng.complex_normal(0.01)).collect();
        let cubic: Vec<Complex64> = (0..5).map(|_| rng.complex_normal(4e-4)).collect();
        let ch = MpTaps { orders: vec![1, 3], taps: vec![linear, cubic], sps: 2 };
        let y: Vec<Complex64> = ch.apply(&x).iter().map(|v| v + rng.complex_normal(0.01)).collect();
        let cfg = VaeConfig { sigma_d2_init: 0.05, sigma_w2_init: 0.08, ..Default::default() };
        let mut t = VaeTrainer::new(decoder, &orders, 7, c.clone(), cfg)?;
        jitter(t.params_mut(), &mut rng, 0.05);
        let range = 6..54;
        t.compute_gradients(&y, range.clone())?;
        let (base, g) = flat(&t.params());
        let report = check(
            |p| {
                load(t.params_mut(), p);
                t.compute_gradients(&y, range.clone()).map(|s| s.loss).unwrap_or(f64::NAN)
            },
            &base,
            &g,
            1e-6,
            fault,
        );
        out.push(GradCase { path: GradPath::Elbo, case: name.into(), report });
    }
    Ok(())
}

fn vqvae_cases(fault: GradFault, out: &mut Vec<GradCase>) -> Result<()> {
    let c = Arc::new(make_qam(16)?);
    let mut rng = SeededRng::new(404);
    let cases: Vec<(&str, Decoder, Encoder, CommitWeight)> = vec![
        ("fir/fir", Decoder::fir(15, 2)?, Encoder::fir(9, 2)?, CommitWeight::Static(1.0)),
        ("fir/fir dynamic", Decoder::fir(15, 2)?, Encoder::fir(9, 2)?, CommitWeight::Dynamic),
        ("nn/poly", Decoder::nn(small_features()?, &[6, 4], true, &mut rng)?, Encoder::poly(&[1, 3], 7, 2)?, CommitWeight::Static(0.5)),
        ("nn/nn", Decoder::nn(small_features()?, &[6], false, &mut rng)?, Encoder::nn_with_skip(7, &[5], 2, &mut rng)?, CommitWeight::Static(1.0)),
    ];
    for (name, decoder, encoder, commit) in cases {
        let x: Vec<Complex64> = (0..80).map(|_| c.point(rng.index(16))).collect();
        let ch = MpTaps::linear(&[Complex64::new(0.2, 0.1), Complex64::new(1.0, 0.0), Complex64::new(-0.1, 0.2)], 2)?;
        let y: Vec<Complex64> = ch.apply(&x).iter().map(|v| v + rng.complex_normal(0.01)).collect();
        let mut t = VqVaeTrainer::new(decoder, encoder, c.clone(), VqVaeConfig { commit, l2_weight: 1e-3, ..Default::default() })?;
        jitter(t.params_mut(), &mut rng, 0.05);
        let range = 10..70;
        let (dec, off) = t.freeze_decisions(&y, range.clone())?;
        t.compute_gradients(&y, range.clone(), Some((&dec, &off)))?;
        let (base, g) = flat(&t.params());
        let report = check(
            |p| {
                load(t.params_mut(), p);
                t.compute_gradients(&y, range.clone(), Some((&dec, &off))).map(|s| s.loss).unwrap_or(f64::NAN)
            },
            &base,
            &g,
            1e-6,
            fault,
        );
        out.push(GradCase { path: GradPath::VqVae, case: name.into(), report });
    }
    Ok(())
}

/// Runs the selected groups and returns one report per case.
pub fn run_grad_suite(paths: &[GradPath], fault: GradFault) -> Result<Vec<GradCase>> {
    if paths.is_empty() {
        return Err(invalid("no gradient paths selected"));
    }
    let mut out = Vec::new();
    for p in paths {
        match p {
            GradPath::Fir => fir_cases(fault, &mut out)?,
            GradPath::Mlp => mlp_cases(fault, &mut out)?,
            GradPath::Elbo => elbo_cases(fault, &mut out)?,
            GradPath::VqVae => vqvae_cases(fault, &mut out)?,
        }
    }
    Ok(out)
}
