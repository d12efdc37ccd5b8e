use serde::{Deserialize, Serialize};

use crate::channels::FiberLink;
use crate::equalizers::CommitWeight;
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FiberPreset {
    Ssmf,
    Nzdsf,
}

impl FiberPreset {
    pub fn link(self) -> FiberLink {
        match self {
            FiberPreset::Ssmf => FiberLink::ssmf(),
            FiberPreset::Nzdsf => FiberLink::nzdsf(),
        }
    }
}

/// Channel family and its operating point. The sweep axis, when present,
/// overrides the operating point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ChannelSpec {
    Linear {
        /// 2-SPS impulse response as `[re, im]` pairs; the five-tap reference
        /// channel when absent.
        #[serde(default)]
        taps: Option<Vec<[f64; 2]>>,
        #[serde(default = "default_snr")]
        snr_db: f64,
        #[serde(default = "default_linear_rolloff")]
        rolloff: f64,
    },
    Fiber {
        #[serde(default = "default_fiber_preset")]
        preset: FiberPreset,
        #[serde(default = "default_launch")]
        launch_power_dbm: f64,
        #[serde(default = "default_ssfm_steps")]
        ssfm_steps: usize,
        /// Overrides the preset's nonlinear coefficient.
        #[serde(default)]
        gamma_per_w_km: Option<f64>,
        #[serde(default = "yes")]
        rx_noise: bool,
        #[serde(default = "default_linear_rolloff")]
        rolloff: f64,
    },
    Pa {
        #[serde(default = "default_pa_power")]
        output_power_dbm: f64,
        #[serde(default = "default_pa_noise")]
        noise_std_volts: f64,
        #[serde(default = "default_pa_rolloff")]
        rolloff: f64,
        /// Replace the amplifier by a unit gain.
        #[serde(default)]
        linear_pa: bool,
    },
}

fn default_snr() -> f64 {
    21.0
}
fn default_linear_rolloff() -> f64 {
    0.1
}
fn default_fiber_preset() -> FiberPreset {
    FiberPreset::Ssmf
}
fn default_launch() -> f64 {
    8.0
}
fn default_ssfm_steps() -> usize {
    20
}
fn yes() -> bool {
    true
}
fn default_pa_power() -> f64 {
    30.0
}
fn default_pa_noise() -> f64 {
    0.4
}
fn default_pa_rolloff() -> f64 {
    0.2
}

impl ChannelSpec {
    pub fn family(&self) -> &'static str {
        match self {
            ChannelSpec::Linear { .. } => "linear",
            ChannelSpec::Fiber { .. } => "fiber",
            ChannelSpec::Pa { .. } => "pa",
        }
    }

    /// Value of the operating point along `axis`.
    pub fn operating_point(&self) -> f64 {
        match self {
            ChannelSpec::Linear { snr_db, .. } => *snr_db,
            ChannelSpec::Fiber { launch_power_dbm, .. } => *launch_power_dbm,
            ChannelSpec::Pa { output_power_dbm, .. } => *output_power_dbm,
        }
    }

    pub fn at(&self, value: f64) -> Self {
        let mut c = self.clone();
        match &mut c {
            ChannelSpec::Linear { snr_db, .. } => *snr_db = value,
            ChannelSpec::Fiber { launch_power_dbm, .. } => *launch_power_dbm = value,
            ChannelSpec::Pa { output_power_dbm, .. } => *output_power_dbm = value,
        }
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SnrDb,
    LaunchPowerDbm,
    PaPowerDbm,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    #[serde(default)]
    pub values: Vec<f64>,
}

impl Default for Sweep {
    fn default() -> Self {
        Self { axis: SweepAxis::None, values: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DecoderSpec {
    /// T/2-spaced FIR.
    Fir { taps: usize },
    /// Network over GMP features of the received samples.
    Nn {
        features: FeatureSet,
        hidden: Vec<usize>,
        /// Trainable linear skip path instead of the fixed centre passthrough.
        #[serde(default)]
        linear_skip: bool,
    },
    /// Linear combination of GMP features.
    Gmp { features: FeatureSet },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSet {
    Fiber,
    Pa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EncoderSpec {
    Fir { taps: usize },
    /// Memory polynomial with one FIR per order.
    Poly { orders: Vec<u32>, taps: usize },
    /// Network over a window of upsampled decisions.
    Nn {
        window: usize,
        hidden: Vec<usize>,
        /// Trainable linear path that starts as the identity.
        #[serde(default)]
        linear_skip: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EqualizerSpec {
    VqVae {
        #[serde(default)]
        label: Option<String>,
        decoder: DecoderSpec,
        encoder: EncoderSpec,
        #[serde(default)]
        commit: CommitWeight,
        #[serde(default = "default_lr")]
        lr: f64,
        #[serde(default)]
        l2_weight: f64,
        /// Initializations tried; the one with the lowest training loss
        /// after a short warm-up is trained to the end.
        #[serde(default = "one")]
        restarts: usize,
    },
    Vae {
        #[serde(default)]
        label: Option<String>,
        decoder: DecoderSpec,
        #[serde(default = "first_order")]
        orders: Vec<u32>,
        encoder_taps: usize,
        #[serde(default = "default_lr")]
        lr: f64,
        /// Initial demapper variance; the true noise variance when known, else 0.1.
        #[serde(default)]
        sigma_d2: Option<f64>,
    },
    /// Pilot-trained FIR (Adam, MSE); the best learning rate on a
    /// validation frame is kept.
    Ffe {
        #[serde(default)]
        label: Option<String>,
        taps: usize,
        #[serde(default = "default_lr_grid")]
        lr: Vec<f64>,
    },
    /// Least-squares FIR fitted on the whole training frame.
    FfeLs {
        #[serde(default)]
        label: Option<String>,
        taps: usize,
    },
    /// Per-symbol constant modulus algorithm.
    Cma {
        #[serde(default)]
        label: Option<String>,
        taps: usize,
        #[serde(default = "default_cma_mu")]
        mu0: f64,
        #[serde(default = "default_cma_halve")]
        halve_every: u64,
        #[serde(default = "one")]
        passes: usize,
    },
    /// Constant modulus cost on minibatches with Adam.
    CmaBatch {
        #[serde(default)]
        label: Option<String>,
        taps: usize,
        #[serde(default = "default_lr_grid")]
        lr: Vec<f64>,
    },
    DdLms {
        #[serde(default)]
        label: Option<String>,
        taps: usize,
        #[serde(default = "default_dd_lr")]
        lr: f64,
        #[serde(default = "default_switch")]
        switch_ser: f64,
    },
    /// Digital backpropagation followed by a pilot-fitted complex gain.
    Dbp {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "default_dbp_steps")]
        steps: usize,
    },
}

fn default_lr() -> f64 {
    1e-3
}
fn first_order() -> Vec<u32> {
    vec![1]
}
fn default_lr_grid() -> Vec<f64> {
    LR_GRID.to_vec()
}
fn default_cma_mu() -> f64 {
    1e-3
}
fn default_cma_halve() -> u64 {
    1 << 14
}
fn one() -> usize {
    1
}
fn default_dd_lr() -> f64 {
    1e-2
}
fn default_switch() -> f64 {
    1e-2
}
fn default_dbp_steps() -> usize {
    100
}

/// Learning rates tried for the reference equalizers.
pub const LR_GRID: [f64; 9] = [1e-2, 2e-2, 5e-2, 1e-3, 2e-3, 5e-3, 1e-4, 2e-4, 5e-4];

impl EqualizerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            EqualizerSpec::VqVae { .. } => "vq-vae",
            EqualizerSpec::Vae { .. } => "vae",
            EqualizerSpec::Ffe { .. } => "ffe",
            EqualizerSpec::FfeLs { .. } => "ffe-ls",
            EqualizerSpec::Cma { .. } => "cma",
            EqualizerSpec::CmaBatch { .. } => "cma-batch",
            EqualizerSpec::DdLms { .. } => "dd-lms",
            EqualizerSpec::Dbp { .. } => "dbp",
        }
    }

    pub fn label(&self) -> String {
        let l = match self {
            EqualizerSpec::VqVae { label, .. }
            | EqualizerSpec::Vae { label, .. }
            | EqualizerSpec::Ffe { label, .. }
            | EqualizerSpec::FfeLs { label, .. }
            | EqualizerSpec::Cma { label, .. }
            | EqualizerSpec::CmaBatch { label, .. }
            | EqualizerSpec::DdLms { label, .. }
            | EqualizerSpec::Dbp { label, .. } => label,
        };
        l.clone().unwrap_or_else(|| self.kind().to_string())
    }

    /// Replaces the learning rate (or candidate set) with `lr`.
    pub fn with_lr(&self, new: f64) -> Self {
        let mut s = self.clone();
        match &mut s {
            EqualizerSpec::VqVae { lr, .. } | EqualizerSpec::Vae { lr, .. } | EqualizerSpec::DdLms { lr, .. } => *lr = new,
            EqualizerSpec::Ffe { lr, .. } | EqualizerSpec::CmaBatch { lr, .. } => *lr = vec![new],
            EqualizerSpec::Cma { mu0, .. } => *mu0 = new,
            EqualizerSpec::FfeLs { .. } | EqualizerSpec::Dbp { .. } => {}
        }
        s
    }

    pub fn with_label(&self, new: String) -> Self {
        let mut s = self.clone();
        match &mut s {
            EqualizerSpec::VqVae { label, .. }
            | EqualizerSpec::Vae { label, .. }
            | EqualizerSpec::Ffe { label, .. }
            | EqualizerSpec::FfeLs { label, .. }
            | EqualizerSpec::Cma { label, .. }
            | EqualizerSpec::CmaBatch { label, .. }
            | EqualizerSpec::DdLms { label, .. }
            | EqualizerSpec::Dbp { label, .. } => *label = Some(new),
        }
        s
    }

    /// Uses pilots during training or evaluation alignment.
    pub fn is_blind(&self) -> bool {
        matches!(self, EqualizerSpec::VqVae { .. } | EqualizerSpec::Vae { .. } | EqualizerSpec::Cma { .. } | EqualizerSpec::CmaBatch { .. })
    }

    fn validate(&self, channel: &ChannelSpec) -> Result<()> {
        let odd = |n: usize, what: &str| {
            if n % 2 == 1 {
                Ok(())
            } else {
                Err(invalid(format!("{}: {what} must be odd", self.label())))
            }
        };
        let positive_lr = |lrs: &[f64]| {
            if lrs.is_empty() || lrs.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                Err(invalid(format!("{}: learning rates must be finite and non-negative", self.label())))
            } else {
                Ok(())
            }
        };
        match self {
            EqualizerSpec::VqVae { decoder, encoder, commit, lr, l2_weight, restarts, .. } => {
                validate_decoder(decoder, &self.label())?;
                if *restarts == 0 {
                    return Err(invalid(format!("{}: restarts must be at least 1", self.label())));
                }
                match encoder {
                    EncoderSpec::Fir { taps } | EncoderSpec::Poly { taps, .. } => odd(*taps, "encoder taps")?,
                    EncoderSpec::Nn { window, .. } => odd(*window, "encoder window")?,
                }
                if let CommitWeight::Static(rho) = commit {
                    if !(*rho > 0.0) {
                        return Err(invalid(format!("{}: commitment weight must be positive", self.label())));
                    }
                }
                positive_lr(&[*lr])?;
                if !(*l2_weight >= 0.0) {
                    return Err(invalid(format!("{}: l2_weight must be non-negative", self.label())));
                }
            }
            EqualizerSpec::Vae { decoder, orders, encoder_taps, lr, sigma_d2, .. } => {
                validate_decoder(decoder, &self.label())?;
                odd(*encoder_taps, "encoder taps")?;
                if orders.is_empty() || orders.contains(&0) {
                    return Err(invalid(format!("{}: orders must be positive", self.label())));
                }
                positive_lr(&[*lr])?;
                if sigma_d2.is_some_and(|v| !(v > 0.0)) {
                    return Err(invalid(format!("{}: sigma_d2 must be positive", self.label())));
                }
            }
            EqualizerSpec::Ffe { taps, lr, .. } | EqualizerSpec::CmaBatch { taps, lr, .. } => {
                odd(*taps, "taps")?;
                positive_lr(lr)?;
            }
            EqualizerSpec::FfeLs { taps, .. } => odd(*taps, "taps")?,
            EqualizerSpec::Cma { taps, mu0, halve_every, passes, .. } => {
                odd(*taps, "taps")?;
                positive_lr(&[*mu0])?;
                if *halve_every == 0 || *passes == 0 {
                    return Err(invalid(format!("{}: halve_every and passes must be positive", self.label())));
                }
            }
            EqualizerSpec::DdLms { taps, lr, switch_ser, .. } => {
                odd(*taps, "taps")?;
                positive_lr(&[*lr])?;
                if !(0.0..=1.0).contains(switch_ser) {
                    return Err(invalid(format!("{}: switch_ser must lie in [0, 1]", self.label())));
                }
            }
            EqualizerSpec::Dbp { steps, .. } => {
                if !matches!(channel, ChannelSpec::Fiber { .. }) {
                    return Err(invalid("digital backpropagation needs a fiber channel"));
                }
                if *steps == 0 {
                    return Err(invalid("dbp needs at least one step"));
                }
            }
        }
        Ok(())
    }
}

fn validate_decoder(d: &DecoderSpec, label: &str) -> Result<()> {
    match d {
        DecoderSpec::Fir { taps } if taps % 2 == 0 => Err(invalid(format!("{label}: decoder taps must be odd"))),
        DecoderSpec::Nn { hidden, .. } if hidden.contains(&0) => Err(invalid(format!("{label}: hidden widths must be positive"))),
        _ => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    /// Size of the fixed training set.
    #[serde(default = "default_train_symbols")]
    pub symbols: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    /// Passes over the fixed training set.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Fresh data for every update instead of a fixed set.
    #[serde(default)]
    pub on_the_fly: bool,
    /// Updates when training on the fly.
    #[serde(default = "default_updates")]
    pub updates: usize,
    /// Record (loss, SER) every this many updates; 0 disables traces.
    #[serde(default)]
    pub trace_every: usize,
    /// Held-out symbols used for trace SER.
    #[serde(default = "default_trace_symbols")]
    pub trace_symbols: usize,
    /// Symbols used to pick a learning rate among candidates.
    #[serde(default = "default_validation")]
    pub validation_symbols: usize,
}

fn default_train_symbols() -> usize {
    1 << 16
}
fn default_batch() -> usize {
    1024
}
fn default_epochs() -> usize {
    30
}
fn default_updates() -> usize {
    2000
}
fn default_trace_symbols() -> usize {
    1 << 14
}
fn default_validation() -> usize {
    1 << 16
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            symbols: default_train_symbols(),
            batch: default_batch(),
            epochs: default_epochs(),
            on_the_fly: false,
            updates: default_updates(),
            trace_every: 0,
            trace_symbols: default_trace_symbols(),
            validation_symbols: default_validation(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    #[serde(default = "default_min_errors")]
    pub min_errors: usize,
    #[serde(default = "default_min_symbols")]
    pub min_symbols: usize,
    #[serde(default = "default_max_symbols")]
    pub max_symbols: usize,
    #[serde(default = "default_block")]
    pub block_symbols: usize,
}

fn default_min_errors() -> usize {
    100
}
fn default_min_symbols() -> usize {
    1 << 16
}
fn default_max_symbols() -> usize {
    10_000_000
}
fn default_block() -> usize {
    1 << 16
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self { min_errors: 100, min_symbols: 1 << 16, max_symbols: 10_000_000, block_symbols: 1 << 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_order")]
    pub constellation: usize,
    #[serde(default)]
    pub seed: u64,
    pub channel: ChannelSpec,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub training: TrainingSpec,
    #[serde(default)]
    pub eval: EvalSpec,
    pub equalizers: Vec<EqualizerSpec>,
    /// Symbols trimmed at each frame edge; derived from the equalizer spans when absent.
    #[serde(default)]
    pub guard_symbols: Option<usize>,
}

fn default_order() -> usize {
    16
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if ![4, 16, 64, 256].contains(&self.constellation) {
            return Err(invalid(format!("unsupported constellation order {}", self.constellation)));
        }
        if self.equalizers.is_empty() {
            return Err(invalid("no equalizers configured"));
        }
        let mut labels = std::collections::HashSet::new();
        for e in &self.equalizers {
            e.validate(&self.channel)?;
            if !labels.insert(e.label()) {
                return Err(invalid(format!("duplicate equalizer label '{}'", e.label())));
            }
        }
        let axis_ok = matches!(
            (&self.sweep.axis, &self.channel),
            (SweepAxis::None, _)
                | (SweepAxis::SnrDb, ChannelSpec::Linear { .. })
                | (SweepAxis::LaunchPowerDbm, ChannelSpec::Fiber { .. })
                | (SweepAxis::PaPowerDbm, ChannelSpec::Pa { .. })
        );
        if !axis_ok {
            return Err(invalid(format!("sweep axis {:?} does not apply to a {} channel", self.sweep.axis, self.channel.family())));
        }
        match self.sweep.axis {
            SweepAxis::None if !self.sweep.values.is_empty() => return Err(invalid("sweep values given without an axis")),
            SweepAxis::None => {}
            _ if self.sweep.values.is_empty() => return Err(invalid("sweep axis given without values")),
            _ => {}
        }
        if self.sweep.values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sweep values must be finite"));
        }
        let t = &self.training;
        if t.batch == 0 {
            return Err(invalid("batch size must be positive"));
        }
        if !t.on_the_fly && t.batch > t.symbols {
            return Err(invalid("batch size exceeds the training set"));
        }
        if t.on_the_fly && t.updates == 0 {
            return Err(invalid("on-the-fly training needs updates > 0"));
        }
        let e = &self.eval;
        if e.block_symbols == 0 || e.max_symbols < e.block_symbols.min(e.min_symbols) {
            return Err(invalid("evaluation block must be positive and fit under max_symbols"));
        }
        match &self.channel {
            ChannelSpec::Linear { taps, rolloff, .. } => {
                if taps.as_ref().is_some_and(|t| t.is_empty()) {
                    return Err(invalid("channel taps must be nonempty"));
                }
                check_rolloff(*rolloff)?;
            }
            ChannelSpec::Fiber { ssfm_steps, rolloff, .. } => {
                if *ssfm_steps == 0 {
                    return Err(invalid("ssfm_steps must be >= 1"));
                }
                check_rolloff(*rolloff)?;
            }
            ChannelSpec::Pa { noise_std_volts, rolloff, .. } => {
                if !(*noise_std_volts >= 0.0) {
                    return Err(invalid("noise_std_volts must be non-negative"));
                }
                check_rolloff(*rolloff)?;
            }
        }
        Ok(())
    }

    /// Axis values of the sweep (the operating point alone when there is no axis).
    pub fn points(&self) -> Vec<f64> {
        match self.sweep.axis {
            SweepAxis::None => vec![self.channel.operating_point()],
            _ => self.sweep.values.clone(),
        }
    }
}

fn check_rolloff(r: f64) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(invalid("rolloff must lie in (0, 1]"))
    }
}
