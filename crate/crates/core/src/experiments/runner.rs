use std::ops::Range;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{DecoderSpec, EncoderSpec, EqualizerSpec, ExperimentConfig, FeatureSet, SweepAxis, TrainingSpec};
use super::scenario::{Block, Scenario};
use super::theory::qam_ser_awgn;
use crate::channels::{dbp, FiberLink};
use crate::equalizers::{
    align_and_ser, demap_hard, ffe_mmse_solve, ser_fixed, AlignSearch, CmaState, DdLmsTrainer, Decoder, Encoder, FeatureExtractorConfig, FirObjective, FirTrainer, VaeConfig, VaeTrainer,
    VqVaeConfig, VqVaeTrainer,
};
use crate::error::{invalid, Error, Result};
use crate::rng::SeededRng;

/// Delay search used for blind equalizers.
pub const BLIND_SEARCH: AlignSearch = AlignSearch::Phase4Delay { max_delay: 3 };

/// Symbols kept at each end of a freshly generated block, outside any
/// minibatch, so filter transients never enter training.
const EDGE_PAD: usize = 48;

/// Symbols of equalized output kept per point for constellation export.
const SNAPSHOT_SYMBOLS: usize = 4096;
const WARMUP_STREAM: u64 = 70;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: u64,
    pub loss: f64,
    pub ser: f64,
}

/// Outcome for one equalizer at one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub axis_value: f64,
    pub equalizer: String,
    pub kind: String,
    pub ser: f64,
    pub errors: usize,
    pub symbols: usize,
    /// Fewer than the requested errors were seen before the symbol cap.
    pub censored: bool,
    pub diverged: bool,
    /// Diverged, or the traced SER rose well above its best value late in training.
    pub unstable: bool,
    pub loss_final: f64,
    pub steps: u64,
    pub wall_ms: u64,
    pub seed: u64,
    pub batch: usize,
    /// Learning rate actually used (the selected one among candidates).
    pub lr: Option<f64>,
    /// SHA-256 prefix of the trained parameters.
    pub checksum: String,
    pub trace: Vec<TracePoint>,
    /// Equalized symbols (after ambiguity removal) from the first test block.
    #[serde(skip)]
    pub snapshot: Vec<Complex64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config: ExperimentConfig,
    pub version: String,
    pub points: Vec<PointResult>,
}

impl ExperimentRecord {
    pub fn find(&self, axis_value: f64, equalizer: &str) -> Option<&PointResult> {
        self.points.iter().find(|p| p.axis_value == axis_value && p.equalizer == equalizer)
    }

    pub fn series(&self, equalizer: &str) -> Vec<&PointResult> {
        self.points.iter().filter(|p| p.equalizer == equalizer).collect()
    }
}

/// Where minibatches come from.
#[derive(Clone)]
enum Source {
    Fixed(Arc<Block>),
    Fresh(Arc<Scenario>),
}

#[derive(Clone)]
struct Batches {
    source: Source,
    batch: usize,
    pad: usize,
    rng: SeededRng,
    current: Option<Arc<Block>>,
    slots: Vec<usize>,
    cursor: usize,
}

impl Batches {
    fn new(source: Source, batch: usize, pad: usize, rng: SeededRng) -> Result<Self> {
        let mut b = Self { source, batch, pad, rng, current: None, slots: Vec::new(), cursor: 0 };
        if let Source::Fixed(block) = &b.source {
            let usable = block.len().saturating_sub(2 * pad);
            let n = usable / batch;
            if n == 0 {
                return Err(invalid(format!("training set of {} symbols holds no batch of {batch}", block.len())));
            }
            b.slots = (0..n).collect();
            b.current = Some(block.clone());
            b.cursor = n;
        }
        Ok(b)
    }

    fn per_epoch(&self) -> usize {
        self.slots.len()
    }

    fn next(&mut self) -> Result<(Arc<Block>, Range<usize>)> {
        match &self.source {
            Source::Fixed(block) => {
                if self.cursor >= self.slots.len() {
                    self.rng.shuffle(&mut self.slots);
                    self.cursor = 0;
                }
                let s = self.pad + self.slots[self.cursor] * self.batch;
                self.cursor += 1;
                Ok((block.clone(), s..s + self.batch))
            }
            Source::Fresh(scenario) => {
                let need = self.cursor + self.batch + self.pad;
                if self.current.as_ref().is_none_or(|b| need > b.len()) {
                    let n = (16 * self.batch).max(4096) + 2 * self.pad;
                    self.current = Some(Arc::new(scenario.transmit(n, &mut self.rng)?));
                    self.cursor = self.pad;
                }
                let s = self.cursor;
                self.cursor += self.batch;
                Ok((self.current.clone().unwrap(), s..s + self.batch))
            }
        }
    }
}

enum Model {
    VqVae(Box<VqVaeTrainer>),
    Vae(Box<VaeTrainer>),
    Fir { trainer: FirTrainer, objective: FirObjective },
    DdLms(DdLmsTrainer),
    Cma(CmaState),
    Taps(Vec<Complex64>),
    Dbp { link: FiberLink, steps: usize, rolloff: f64, gain: Complex64 },
    /// Output rotated by a phase fitted with pilots.
    Derotated(Box<Model>, Complex64),
}

fn feature_config(f: FeatureSet) -> FeatureExtractorConfig {
    match f {
        FeatureSet::Fiber => FeatureExtractorConfig::fiber(),
        FeatureSet::Pa => FeatureExtractorConfig::pa(),
    }
}

fn build_decoder(spec: &DecoderSpec, rng: &mut SeededRng) -> Result<Decoder> {
    match spec {
        DecoderSpec::Fir { taps } => Decoder::fir(*taps, 2),
        DecoderSpec::Nn { features, hidden, linear_skip } => Decoder::nn(feature_config(*features), hidden, *linear_skip, rng),
        DecoderSpec::Gmp { features } => Decoder::gmp(feature_config(*features)),
    }
}

fn build_encoder(spec: &EncoderSpec, rng: &mut SeededRng) -> Result<Encoder> {
    match spec {
        EncoderSpec::Fir { taps } => Encoder::fir(*taps, 2),
        EncoderSpec::Poly { orders, taps } => Encoder::poly(orders, *taps, 2),
        EncoderSpec::Nn { window, hidden, linear_skip } => {
            if *linear_skip {
                Encoder::nn_with_skip(*window, hidden, 2, rng)
            } else {
                Encoder::nn(*window, hidden, 2, rng)
            }
        }
    }
}

fn fir_half_span(taps: usize) -> usize {
    (taps / 2).div_ceil(2)
}

impl Model {
    fn step(&mut self, block: &Block, range: Range<usize>) -> Result<f64> {
        let y = &block.y;
        match self {
            Model::VqVae(t) => Ok(t.train_step(y, range)?.loss),
            Model::Vae(t) => Ok(t.train_step(y, range)?.loss),
            Model::Fir { trainer, objective } => {
                let pilots = &block.frame.symbols[range.clone()];
                trainer.train_step(y, range, *objective, Some(pilots))
            }
            Model::DdLms(t) => Ok(t.step(y, range.clone(), &block.frame.symbols[range])?.loss),
            Model::Cma(s) => {
                let r2 = s.r2;
                let n = range.len() as f64;
                let loss = s.run(y, range).iter().map(|z| (z.norm_sqr() - r2).powi(2)).sum::<f64>() / n;
                if loss.is_finite() && s.taps.iter().all(|w| w.re.is_finite() && w.im.is_finite()) {
                    Ok(loss)
                } else {
                    Err(Error::NonFinite("cma taps"))
                }
            }
            Model::Derotated(m, _) => m.step(block, range),
            Model::Taps(_) | Model::Dbp { .. } => Ok(0.0),
        }
    }

    fn equalize(&self, block: &Block) -> Result<Vec<Complex64>> {
        let y = &block.y;
        let out = match self {
            Model::VqVae(t) => t.equalize(y)?,
            Model::Vae(t) => t.equalize(y)?,
            Model::Fir { trainer, .. } => trainer.equalize(y),
            Model::DdLms(t) => t.fir.equalize(y),
            Model::Cma(s) => s.equalize(y),
            Model::Taps(w) => crate::equalizers::FirEqualizer::from_taps(w.clone(), 2)?.apply_range(y, 0..y.len() / 2),
            Model::Dbp { link, steps, rolloff, gain } => dbp(&block.raw, link, *steps, *rolloff)?.samples.iter().map(|v| v * gain).collect(),
            Model::Derotated(m, r) => m.equalize(block)?.iter().map(|v| v * r).collect(),
        };
        if out.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("equalizer output"));
        }
        Ok(out)
    }

    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        let mut feed = |vals: &[f64]| vals.iter().for_each(|v| h.update(v.to_le_bytes()));
        let complex = |w: &[Complex64]| w.iter().flat_map(|z| [z.re, z.im]).collect::<Vec<_>>();
        match self {
            Model::VqVae(t) => t.params().iter().for_each(|p| feed(&p.values)),
            Model::Vae(t) => t.params().iter().for_each(|p| feed(&p.values)),
            Model::Fir { trainer, .. } => feed(&trainer.taps.values),
            Model::DdLms(t) => feed(&t.fir.taps.values),
            Model::Cma(s) => feed(&complex(&s.taps)),
            Model::Taps(w) => feed(&complex(w)),
            Model::Dbp { gain, .. } => feed(&[gain.re, gain.im]),
            Model::Derotated(m, r) => {
                feed(&[r.re, r.im]);
                h.update(m.checksum().as_bytes());
            }
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Symbols a model reaches beyond the one it outputs.
fn half_span(spec: &EqualizerSpec) -> usize {
    let dec = |d: &DecoderSpec| match d {
        DecoderSpec::Fir { taps } => fir_half_span(*taps),
        DecoderSpec::Nn { features, .. } | DecoderSpec::Gmp { features } => {
            let cfg = feature_config(*features);
            cfg.terms().iter().map(|t| t.carrier_offset().unsigned_abs().max(t.envelope_offset().unsigned_abs())).max().unwrap_or(0).div_ceil(2)
        }
    };
    match spec {
        EqualizerSpec::VqVae { decoder, encoder, .. } => {
            let enc = match encoder {
                EncoderSpec::Fir { taps } | EncoderSpec::Poly { taps, .. } => fir_half_span(*taps),
                EncoderSpec::Nn { window, .. } => fir_half_span(*window),
            };
            dec(decoder).max(enc)
        }
        EqualizerSpec::Vae { decoder, encoder_taps, .. } => dec(decoder).max(fir_half_span(*encoder_taps)),
        EqualizerSpec::Ffe { taps, .. } | EqualizerSpec::FfeLs { taps, .. } | EqualizerSpec::Cma { taps, .. } | EqualizerSpec::CmaBatch { taps, .. } | EqualizerSpec::DdLms { taps, .. } => {
            fir_half_span(*taps)
        }
        EqualizerSpec::Dbp { .. } => 0,
    }
}

/// Guard used for every frame of an experiment.
pub fn guard_symbols(cfg: &ExperimentConfig) -> usize {
    cfg.guard_symbols.unwrap_or_else(|| cfg.equalizers.iter().map(half_span).max().unwrap_or(0).max(EDGE_PAD))
}

fn search_for(spec: &EqualizerSpec) -> AlignSearch {
    if spec.is_blind() {
        BLIND_SEARCH
    } else {
        AlignSearch::None
    }
}

/// Constant-modulus equalizers leave an arbitrary carrier phase; they are
/// scored after a pilot-fitted derotation.
fn needs_genie_phase(spec: &EqualizerSpec) -> bool {
    matches!(spec, EqualizerSpec::Cma { .. } | EqualizerSpec::CmaBatch { .. })
}

fn block_ser(model: &Model, block: &Block, guard: usize, search: AlignSearch, genie: bool) -> Result<f64> {
    let mut x = model.equalize(block)?;
    if genie {
        let r = genie_phase(model, block, guard)?;
        x.iter_mut().for_each(|v| *v *= r);
    }
    let n = block.len();
    let c = &block.frame.constellation;
    Ok(align_and_ser(&demap_hard(&x[guard..n - guard], c), &block.frame.slice(guard..n - guard), search)?.ser)
}

/// Unit-modulus rotation best aligning the output with the transmitted
/// symbols over the delays the blind search would consider.
fn genie_phase(model: &Model, block: &Block, guard: usize) -> Result<Complex64> {
    let x = model.equalize(block)?;
    let s = &block.frame.symbols;
    let n = block.len() as isize;
    let max_delay = 3isize;
    let mut best = (f64::NEG_INFINITY, Complex64::new(1.0, 0.0));
    for d in -max_delay..=max_delay {
        let ks = (guard as isize).max(-d)..(n - guard as isize).min(n - d);
        let corr: Complex64 = ks.clone().map(|k| x[(k + d) as usize].conj() * s[k as usize]).sum();
        let energy: f64 = ks.map(|k| x[(k + d) as usize].norm_sqr()).sum();
        let score = corr.norm() / energy.sqrt();
        if score > best.0 && corr.norm() > 0.0 {
            best = (score, corr / corr.norm());
        }
    }
    Ok(best.1)
}

struct Trained {
    model: Option<Model>,
    loss_final: f64,
    steps: u64,
    diverged: bool,
    trace: Vec<TracePoint>,
    lr: Option<f64>,
}

struct TrainContext<'a> {
    training: &'a TrainingSpec,
    source: Source,
    data_rng: SeededRng,
    model_rng: SeededRng,
    trace_block: Option<&'a Block>,
    validation: &'a Block,
    guard: usize,
    /// Gain applied to the training data, for translating known noise levels.
    gain: f64,
    scenario: &'a Scenario,
}

fn run_updates(model: &mut Model, ctx: &TrainContext, search: AlignSearch, genie: bool, per_symbol: bool) -> Result<(f64, u64, bool, Vec<TracePoint>)> {
    let t = ctx.training;
    let batch = if per_symbol && !t.on_the_fly { ctx.source_len().saturating_sub(2 * ctx.guard) } else { t.batch };
    let mut batches = Batches::new(ctx.source.clone(), batch.max(1), if t.on_the_fly { EDGE_PAD } else { ctx.guard }, ctx.data_rng.clone())?;
    let total = if t.on_the_fly {
        t.updates
    } else if per_symbol {
        t.epochs
    } else {
        t.epochs * batches.per_epoch()
    };
    let mut trace = Vec::new();
    let mut loss = f64::NAN;
    let mut steps = 0u64;
    let traced = |m: &Model, step: u64, loss: f64, trace: &mut Vec<TracePoint>| {
        if let Some(b) = ctx.trace_block {
            let ser = block_ser(m, b, ctx.guard, search, genie).unwrap_or(1.0);
            trace.push(TracePoint { step, loss, ser });
        }
    };
    if t.trace_every > 0 {
        traced(model, 0, loss, &mut trace);
    }
    for u in 0..total {
        let (block, range) = batches.next()?;
        match model.step(&block, range) {
            Ok(l) => loss = l,
            Err(Error::NonFinite(_)) => {
                if t.trace_every > 0 {
                    trace.push(TracePoint { step: u as u64 + 1, loss: f64::NAN, ser: 1.0 });
                }
                return Ok((f64::NAN, u as u64 + 1, true, trace));
            }
            Err(e) => return Err(e),
        }
        steps = u as u64 + 1;
        if t.trace_every > 0 && steps.is_multiple_of(t.trace_every as u64) {
            traced(model, steps, loss, &mut trace);
        }
    }
    Ok((loss, steps, false, trace))
}

impl TrainContext<'_> {
    fn source_len(&self) -> usize {
        match &self.source {
            Source::Fixed(b) => b.len(),
            Source::Fresh(_) => 0,
        }
    }

    fn fixed_block(&self) -> Result<&Block> {
        match &self.source {
            Source::Fixed(b) => Ok(b),
            Source::Fresh(_) => Err(invalid("closed-form fits need a fixed training set")),
        }
    }
}

/// Warms every candidate up on the same batches and keeps the one with the
/// lowest recent training loss. Uses no labels.
fn pick_start(candidates: Vec<Model>, ctx: &TrainContext) -> Result<Model> {
    let t = ctx.training;
    let pad = if t.on_the_fly { EDGE_PAD } else { ctx.guard };
    let batches = Batches::new(ctx.source.clone(), t.batch, pad, ctx.data_rng.derive(WARMUP_STREAM))?;
    let total = if t.on_the_fly { t.updates } else { t.epochs * batches.per_epoch() };
    let warmup = (total / 8).max(4);
    let tail = warmup / 4;
    let mut best: Option<(f64, Model)> = None;
    for mut m in candidates {
        let mut b = batches.clone();
        let mut recent = 0.0;
        let mut ok = true;
        for u in 0..warmup {
            let (block, range) = b.next()?;
            match m.step(&block, range) {
                Ok(l) if u >= warmup - tail => recent += l,
                Ok(_) => {}
                Err(Error::NonFinite(_)) => {
                    ok = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let score = if ok { recent / tail as f64 } else { f64::INFINITY };
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, m));
        }
    }
    Ok(best.expect("at least one candidate").1)
}

fn train(spec: &EqualizerSpec, ctx: &TrainContext) -> Result<Trained> {
    let mut t = train_raw(spec, ctx)?;
    if needs_genie_phase(spec) {
        if let Some(m) = t.model.take() {
            let r = genie_phase(&m, ctx.validation, ctx.guard)?;
            t.model = Some(Model::Derotated(Box::new(m), r));
        }
    }
    Ok(t)
}

fn train_raw(spec: &EqualizerSpec, ctx: &TrainContext) -> Result<Trained> {
    let mut model_rng = ctx.model_rng.clone();
    let c = ctx.scenario.constellation.clone();
    let search = search_for(spec);
    let genie = needs_genie_phase(spec);
    let simple = |mut model: Model, lr: Option<f64>, per_symbol: bool| -> Result<Trained> {
        let (loss_final, steps, diverged, trace) = run_updates(&mut model, ctx, search, genie, per_symbol)?;
        Ok(Trained { model: (!diverged).then_some(model), loss_final, steps, diverged, trace, lr })
    };
    match spec {
        EqualizerSpec::VqVae { decoder, encoder, commit, lr, l2_weight, restarts, .. } => {
            let config = VqVaeConfig { commit: *commit, lr: *lr, l2_weight: *l2_weight, ..Default::default() };
            let build = |rng: &mut SeededRng| -> Result<Model> {
                let dec = build_decoder(decoder, rng)?;
                let enc = build_encoder(encoder, rng)?;
                Ok(Model::VqVae(Box::new(VqVaeTrainer::new(dec, enc, c.clone(), config.clone())?)))
            };
            let mut candidates = vec![build(&mut model_rng)?];
            for r in 1..*restarts {
                candidates.push(build(&mut ctx.model_rng.derive(r as u64))?);
            }
            let model = if candidates.len() > 1 { pick_start(candidates, ctx)? } else { candidates.pop().expect("one candidate") };
            simple(model, Some(*lr), false)
        }
        EqualizerSpec::Vae { decoder, orders, encoder_taps, lr, sigma_d2, .. } => {
            let dec = build_decoder(decoder, &mut model_rng)?;
            let sd2 = sigma_d2.or_else(|| ctx.scenario.noise_variance_after(ctx.gain)).unwrap_or(0.1);
            let config = VaeConfig { lr: *lr, sigma_d2_init: sd2, ..Default::default() };
            simple(Model::Vae(Box::new(VaeTrainer::new(dec, orders, *encoder_taps, c, config)?)), Some(*lr), false)
        }
        EqualizerSpec::Ffe { taps, lr, .. } | EqualizerSpec::CmaBatch { taps, lr, .. } => {
            let objective = if matches!(spec, EqualizerSpec::Ffe { .. }) { FirObjective::Mmse } else { FirObjective::ConstantModulus };
            let mut best: Option<(f64, Trained)> = None;
            for &rate in lr {
                let model = Model::Fir { trainer: FirTrainer::new(*taps, 2, rate, c.clone())?, objective };
                let t = simple(model, Some(rate), false)?;
                let ser = match &t.model {
                    Some(m) if lr.len() > 1 => block_ser(m, ctx.validation, ctx.guard, search, genie).unwrap_or(1.0),
                    Some(_) => 0.0,
                    None => 2.0,
                };
                if best.as_ref().is_none_or(|(s, _)| ser < *s) {
                    best = Some((ser, t));
                }
            }
            Ok(best.expect("at least one learning rate").1)
        }
        EqualizerSpec::DdLms { taps, lr, switch_ser, .. } => {
            let fir = FirTrainer::new(*taps, 2, *lr, c)?;
            simple(Model::DdLms(DdLmsTrainer::new(fir, *switch_ser)), Some(*lr), false)
        }
        EqualizerSpec::Cma { taps, mu0, halve_every, passes, .. } => {
            let mut s = CmaState::new(*taps, 2, &c)?;
            s.mu0 = *mu0;
            s.halve_every = *halve_every;
            let mut t = if ctx.training.on_the_fly {
                simple(Model::Cma(s), Some(*mu0), true)?
            } else {
                let block = ctx.fixed_block()?;
                let mut model = Model::Cma(s);
                let range = ctx.guard..block.len() - ctx.guard;
                let mut loss = f64::NAN;
                let mut diverged = false;
                for _ in 0..*passes {
                    match model.step(block, range.clone()) {
                        Ok(l) => loss = l,
                        Err(Error::NonFinite(_)) => {
                            diverged = true;
                            break;
                        }
                        Err(e) => return Err(e),
                    }
                }
                let steps = (*passes * range.len()) as u64;
                Trained { model: (!diverged).then_some(model), loss_final: loss, steps, diverged, trace: Vec::new(), lr: Some(*mu0) }
            };
            t.lr = Some(*mu0);
            Ok(t)
        }
        EqualizerSpec::FfeLs { taps, .. } => {
            let block = ctx.fixed_block()?;
            let range = ctx.guard..block.len() - ctx.guard;
            let w = ffe_mmse_solve(&block.y, &block.frame.symbols[range.clone()], *taps, 2, range)?;
            Ok(Trained { model: Some(Model::Taps(w)), loss_final: f64::NAN, steps: 0, diverged: false, trace: Vec::new(), lr: None })
        }
        EqualizerSpec::Dbp { steps, .. } => {
            let (link, rolloff) = ctx.scenario.fiber().ok_or_else(|| invalid("digital backpropagation needs a fiber channel"))?;
            let block = ctx.fixed_block().or(Ok::<_, Error>(ctx.validation))?;
            let mut model = Model::Dbp { link: link.clone(), steps: *steps, rolloff, gain: Complex64::new(1.0, 0.0) };
            let x = model.equalize(block)?;
            let r = ctx.guard..block.len() - ctx.guard;
            let num: Complex64 = r.clone().map(|k| x[k].conj() * block.frame.symbols[k]).sum();
            let den: f64 = r.map(|k| x[k].norm_sqr()).sum();
            if let Model::Dbp { gain, .. } = &mut model {
                *gain = num / den;
            }
            Ok(Trained { model: Some(model), loss_final: f64::NAN, steps: 0, diverged: false, trace: Vec::new(), lr: None })
        }
    }
}

struct EvalState {
    errors: usize,
    symbols: usize,
    alignment: Option<(isize, Complex64)>,
    done: bool,
    snapshot: Vec<Complex64>,
    failed: bool,
}

fn evaluate(models: &[(Option<&Model>, AlignSearch)], scenario: &Scenario, cfg: &ExperimentConfig, guard: usize, rng: &SeededRng) -> Result<Vec<EvalState>> {
    let e = &cfg.eval;
    let mut states: Vec<EvalState> = models
        .iter()
        .map(|(m, _)| EvalState { errors: 0, symbols: 0, alignment: None, done: m.is_none(), snapshot: Vec::new(), failed: m.is_none() })
        .collect();
    let mut b = 0u64;
    while states.iter().any(|s| !s.done) {
        let block = scenario.transmit(e.block_symbols + 2 * guard, &mut rng.derive(b))?;
        b += 1;
        let n = block.len();
        let truth = block.frame.slice(guard..n - guard);
        let c = &block.frame.constellation;
        let updates: Vec<Option<Result<(usize, usize, (isize, Complex64), Vec<Complex64>)>>> = models
            .par_iter()
            .zip(states.par_iter())
            .map(|((m, search), st)| {
                if st.done {
                    return None;
                }
                let m = m.expect("active models exist");
                Some((|| {
                    let x = m.equalize(&block)?;
                    let decided = demap_hard(&x[guard..n - guard], c);
                    let a = match st.alignment {
                        None => align_and_ser(&decided, &truth, *search)?,
                        Some((d, r)) => ser_fixed(&decided, &truth, d, r)?,
                    };
                    let snap = if st.snapshot.is_empty() {
                        let lo = (guard as isize + a.delay).max(0) as usize;
                        x[lo..(lo + SNAPSHOT_SYMBOLS).min(n - guard)].iter().map(|v| v * a.rotation).collect()
                    } else {
                        Vec::new()
                    };
                    Ok((a.errors, a.compared, (a.delay, a.rotation), snap))
                })())
            })
            .collect();
        for (st, u) in states.iter_mut().zip(updates) {
            match u {
                None => {}
                Some(Err(Error::NonFinite(_))) => {
                    st.failed = true;
                    st.done = true;
                }
                Some(Err(err)) => return Err(err),
                Some(Ok((errors, compared, align, snap))) => {
                    st.errors += errors;
                    st.symbols += compared;
                    st.alignment.get_or_insert(align);
                    if st.snapshot.is_empty() {
                        st.snapshot = snap;
                    }
                }
            }
        }
        // Every equalizer sees the same blocks: stop only once all have enough errors.
        let active: Vec<&EvalState> = states.iter().filter(|s| !s.failed).collect();
        let enough = active.iter().all(|s| s.errors >= e.min_errors && s.symbols >= e.min_symbols);
        let capped = active.iter().any(|s| s.symbols + e.block_symbols > e.max_symbols);
        if enough || capped {
            states.iter_mut().for_each(|s| s.done = true);
        }
    }
    Ok(states)
}

fn run_point(cfg: &ExperimentConfig, index: usize, value: f64) -> Result<Vec<PointResult>> {
    let channel = match cfg.sweep.axis {
        SweepAxis::None => cfg.channel.clone(),
        _ => cfg.channel.at(value),
    };
    let scenario = Arc::new(Scenario::new(&channel, cfg.constellation)?);
    let root = SeededRng::new(cfg.seed).derive(index as u64);
    let guard = guard_symbols(cfg);
    let t = &cfg.training;
    let (source, gain) = if t.on_the_fly {
        let probe = scenario.transmit(4096, &mut root.derive(90))?;
        (Source::Fresh(scenario.clone()), probe.gain)
    } else {
        let block = Arc::new(scenario.transmit(t.symbols, &mut root.derive(1))?);
        let g = block.gain;
        (Source::Fixed(block), g)
    };
    let validation = scenario.transmit(t.validation_symbols.max(4 * guard), &mut root.derive(2))?;
    let trace_block = if t.trace_every > 0 { Some(scenario.transmit(t.trace_symbols + 2 * guard, &mut root.derive(4))?) } else { None };

    let trained: Vec<(Result<Trained>, u64)> = cfg
        .equalizers
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let start = Instant::now();
            let ctx = TrainContext {
                training: t,
                source: source.clone(),
                data_rng: root.derive(10),
                model_rng: root.derive(100 + i as u64),
                trace_block: trace_block.as_ref(),
                validation: &validation,
                guard,
                gain,
                scenario: &scenario,
            };
            let r = train(spec, &ctx);
            (r, start.elapsed().as_millis() as u64)
        })
        .collect();
    let mut outcomes = Vec::with_capacity(trained.len());
    for (r, ms) in trained {
        outcomes.push((r?, ms));
    }
    let models: Vec<(Option<&Model>, AlignSearch)> = outcomes.iter().zip(&cfg.equalizers).map(|((o, _), s)| (o.model.as_ref(), search_for(s))).collect();
    let eval_start = Instant::now();
    let states = evaluate(&models, &scenario, cfg, guard, &root.derive(3))?;
    let eval_ms = eval_start.elapsed().as_millis() as u64 / cfg.equalizers.len().max(1) as u64;

    let mut out = Vec::new();
    for ((spec, (o, ms)), st) in cfg.equalizers.iter().zip(outcomes).zip(states) {
        let diverged = o.diverged || st.failed;
        let ser = if diverged || st.symbols == 0 { 1.0 } else { st.errors as f64 / st.symbols as f64 };
        let unstable = diverged || late_rise(&o.trace);
        out.push(PointResult {
            axis_value: value,
            equalizer: spec.label(),
            kind: spec.kind().to_string(),
            ser,
            errors: st.errors,
            symbols: st.symbols,
            censored: !diverged && st.errors < cfg.eval.min_errors,
            diverged,
            unstable,
            loss_final: o.loss_final,
            steps: o.steps,
            wall_ms: ms + eval_ms,
            seed: cfg.seed,
            batch: t.batch,
            lr: o.lr,
            checksum: o.model.as_ref().map(|m| m.checksum()).unwrap_or_default(),
            trace: o.trace,
            snapshot: st.snapshot,
        });
    }
    Ok(out)
}

/// SER in the last quarter of a trace rising above twice the best value seen.
fn late_rise(trace: &[TracePoint]) -> bool {
    if trace.len() < 8 {
        return false;
    }
    let best = trace.iter().map(|p| p.ser).fold(f64::INFINITY, f64::min);
    let tail = &trace[trace.len() * 3 / 4..];
    tail.iter().map(|p| p.ser).fold(0.0, f64::max) > 2.0 * best + 1e-3
}

/// Trains and evaluates every equalizer at every sweep point.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    cfg.validate()?;
    let points = cfg.points();
    let results: Vec<Result<Vec<PointResult>>> = points.par_iter().enumerate().map(|(i, &v)| run_point(cfg, i, v)).collect();
    let mut all = Vec::new();
    for r in results {
        all.extend(r?);
    }
    Ok(ExperimentRecord { config: cfg.clone(), version: env!("CARGO_PKG_VERSION").to_string(), points: all })
}

fn require(cfg: &ExperimentConfig, family: &str, axis: SweepAxis) -> Result<()> {
    if cfg.channel.family() != family {
        return Err(invalid(format!("this sweep needs a {family} channel, got {}", cfg.channel.family())));
    }
    if cfg.sweep.axis != axis {
        return Err(invalid(format!("this sweep needs axis {axis:?}")));
    }
    Ok(())
}

/// SER against SNR on the linear channel; a fresh equalizer per point.
pub fn run_snr_sweep(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    require(cfg, "linear", SweepAxis::SnrDb)?;
    run_experiment(cfg)
}

/// SER against launch power on the fiber link.
pub fn run_launch_power_sweep(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    require(cfg, "fiber", SweepAxis::LaunchPowerDbm)?;
    run_experiment(cfg)
}

/// SER against amplifier output power; adds a `theory` series with the
/// AWGN symbol error rate at each point's operating SNR.
pub fn run_pa_power_sweep(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    require(cfg, "pa", SweepAxis::PaPowerDbm)?;
    let mut rec = run_experiment(cfg)?;
    for &v in &cfg.sweep.values {
        let s = Scenario::new(&cfg.channel.at(v), cfg.constellation)?;
        let snr = s.operating_snr().expect("amplifier channels define an SNR");
        rec.points.push(theory_point(v, cfg, qam_ser_awgn(cfg.constellation, snr)?));
    }
    Ok(rec)
}

fn theory_point(v: f64, cfg: &ExperimentConfig, ser: f64) -> PointResult {
    PointResult {
        axis_value: v,
        equalizer: "theory".into(),
        kind: "theory".into(),
        ser,
        errors: 0,
        symbols: 0,
        censored: false,
        diverged: false,
        unstable: false,
        loss_final: f64::NAN,
        steps: 0,
        wall_ms: 0,
        seed: cfg.seed,
        batch: 0,
        lr: None,
        checksum: String::new(),
        trace: Vec::new(),
        snapshot: Vec::new(),
    }
}

/// Trains on fresh data for every (batch size, learning rate) cell and
/// records SER traces. Equalizer labels gain a `@N<batch>,lr<lr>` suffix.
pub fn run_convergence(cfg: &ExperimentConfig, grid: &[(usize, f64)]) -> Result<ExperimentRecord> {
    if grid.is_empty() {
        return Err(invalid("empty convergence grid"));
    }
    let mut cell_cfgs = Vec::new();
    for &(batch, lr) in grid {
        if batch == 0 || !(lr >= 0.0) {
            return Err(invalid(format!("invalid grid cell ({batch}, {lr})")));
        }
        let mut c = cfg.clone();
        c.training.on_the_fly = true;
        c.training.batch = batch;
        if c.training.trace_every == 0 {
            c.training.trace_every = 10;
        }
        c.equalizers = cfg.equalizers.iter().map(|e| e.with_lr(lr).with_label(format!("{}@N{batch},lr{lr}", e.label()))).collect();
        c.validate()?;
        cell_cfgs.push(c);
    }
    let records: Vec<Result<ExperimentRecord>> = cell_cfgs.par_iter().map(run_experiment).collect();
    let mut points = Vec::new();
    for r in records {
        points.extend(r?.points);
    }
    Ok(ExperimentRecord { config: cfg.clone(), version: env!("CARGO_PKG_VERSION").to_string(), points })
}

/// Runs `f` on a pool of `threads` workers (all cores when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n.max(1));
    }
    let pool = b.build().map_err(|e| invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
