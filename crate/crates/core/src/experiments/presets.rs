use serde::{Deserialize, Serialize};

use super::config::{
    ChannelSpec, DecoderSpec, EncoderSpec, EqualizerSpec, EvalSpec, ExperimentConfig, FeatureSet, FiberPreset, Sweep, SweepAxis, TrainingSpec, LR_GRID,
};
use crate::equalizers::CommitWeight;
use crate::error::{invalid, Result};

pub const PRESETS: [&str; 6] = ["paper-linear-16qam", "paper-ssmf", "paper-nzdsf", "paper-pa-surrogate", "convergence-linear-16qam", "rho-linear-16qam"];

/// Equalizer length (T/2-spaced taps) on the linear channel.
const LINEAR_TAPS: usize = 15;

/// (batch, learning rate) cells of the convergence study.
pub const CONVERGENCE_GRID: [(usize, f64); 4] = [(1024, 1e-3), (1024, 1e-2), (64, 1e-3), (64, 1e-2)];

/// Problem size: `Desk` is sized for a workstation, `Paper` restores the
/// full dataset sizes, step counts and sweep grids.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(invalid(format!("unknown profile '{s}' (desk|paper)"))),
        }
    }
}

fn vq_fir() -> EqualizerSpec {
    EqualizerSpec::VqVae {
        label: None,
        decoder: DecoderSpec::Fir { taps: LINEAR_TAPS },
        encoder: EncoderSpec::Fir { taps: 25 },
        commit: CommitWeight::Static(1.0),
        lr: 1e-3,
        l2_weight: 0.0,
        restarts: 1,
    }
}

/// Equalizers compared on the linear channel.
pub fn linear_equalizers() -> Vec<EqualizerSpec> {
    vec![
        vq_fir(),
        EqualizerSpec::Ffe { label: None, taps: LINEAR_TAPS, lr: LR_GRID.to_vec() },
        EqualizerSpec::Vae { label: None, decoder: DecoderSpec::Fir { taps: LINEAR_TAPS }, orders: vec![1], encoder_taps: 25, lr: 1e-3, sigma_d2: None },
        EqualizerSpec::CmaBatch { label: None, taps: LINEAR_TAPS, lr: LR_GRID.to_vec() },
        EqualizerSpec::Cma { label: None, taps: LINEAR_TAPS, mu0: 1e-3, halve_every: 1 << 14, passes: 1 },
    ]
}

fn linear(profile: Profile) -> ExperimentConfig {
    let values = match profile {
        Profile::Desk => vec![18.0, 21.0, 24.0],
        Profile::Paper => (14..=24).map(f64::from).collect(),
    };
    ExperimentConfig {
        name: "paper-linear-16qam".into(),
        constellation: 16,
        seed: 1,
        channel: ChannelSpec::Linear { taps: None, snr_db: 21.0, rolloff: 0.1 },
        sweep: Sweep { axis: SweepAxis::SnrDb, values },
        training: TrainingSpec { symbols: 1 << 16, batch: 1024, epochs: 30, ..Default::default() },
        eval: EvalSpec { min_errors: 1000, ..Default::default() },
        equalizers: linear_equalizers(),
        guard_symbols: None,
    }
}

/// Linear channel at 21 dB, trained on fresh data; meant for `run_convergence`.
fn convergence(profile: Profile) -> ExperimentConfig {
    let mut cfg = linear(profile);
    cfg.name = "convergence-linear-16qam".into();
    cfg.sweep = Sweep::default();
    cfg.training = TrainingSpec { on_the_fly: true, updates: 3000, trace_every: 50, ..Default::default() };
    cfg.eval = EvalSpec { min_errors: 1000, ..Default::default() };
    cfg.equalizers.retain(|e| !matches!(e, EqualizerSpec::Cma { .. }));
    if profile == Profile::Paper {
        cfg.training.updates = 10_000;
    }
    cfg
}

/// Commitment-weight study: small batches, large learning rate, fresh data.
fn rho(profile: Profile) -> ExperimentConfig {
    let vq = |label: &str, commit| EqualizerSpec::VqVae {
        label: Some(label.into()),
        decoder: DecoderSpec::Fir { taps: LINEAR_TAPS },
        encoder: EncoderSpec::Fir { taps: 25 },
        commit,
        lr: 1e-2,
        l2_weight: 0.0,
        restarts: 1,
    };
    let mut cfg = convergence(profile);
    cfg.name = "rho-linear-16qam".into();
    cfg.training.batch = 64;
    cfg.training.updates = 5000;
    cfg.training.trace_every = 25;
    cfg.equalizers = vec![
        vq("rho-0.2", CommitWeight::Static(0.2)),
        vq("rho-1", CommitWeight::Static(1.0)),
        vq("rho-10", CommitWeight::Static(10.0)),
        vq("dynamic", CommitWeight::Dynamic),
        EqualizerSpec::DdLms { label: None, taps: LINEAR_TAPS, lr: 1e-2, switch_ser: 1e-2 },
    ];
    cfg
}

/// Feature-based network VQ-VAE for the fiber link.
pub fn fiber_vq_nn() -> EqualizerSpec {
    EqualizerSpec::VqVae {
        label: Some("nn-vq-vae".into()),
        decoder: DecoderSpec::Nn { features: FeatureSet::Fiber, hidden: vec![32, 8], linear_skip: true },
        encoder: EncoderSpec::Nn { window: 31, hidden: vec![64, 32], linear_skip: true },
        commit: CommitWeight::Static(1.0),
        lr: 1e-3,
        l2_weight: 1e-5,
        restarts: 3,
    }
}

fn fiber(preset: FiberPreset, profile: Profile) -> ExperimentConfig {
    let (symbols, steps, epochs) = match profile {
        Profile::Desk => (1 << 15, 20, 80),
        Profile::Paper => (65536, 100, 80),
    };
    let name = match preset {
        FiberPreset::Ssmf => "paper-ssmf",
        FiberPreset::Nzdsf => "paper-nzdsf",
    };
    let mut equalizers = vec![EqualizerSpec::Ffe { label: Some("linear-ffe".into()), taps: 41, lr: LR_GRID.to_vec() }, fiber_vq_nn()];
    if profile == Profile::Paper {
        equalizers.push(EqualizerSpec::VqVae {
            label: Some("mp-vq-vae".into()),
            decoder: DecoderSpec::Gmp { features: FeatureSet::Fiber },
            encoder: EncoderSpec::Poly { orders: vec![1, 3, 5], taps: 31 },
            commit: CommitWeight::Static(1.0),
            lr: 1e-3,
            l2_weight: 0.0,
            restarts: 1,
        });
        equalizers.push(EqualizerSpec::Vae {
            label: Some("mp-vae".into()),
            decoder: DecoderSpec::Gmp { features: FeatureSet::Fiber },
            orders: vec![1, 3, 5],
            encoder_taps: 31,
            lr: 1e-3,
            sigma_d2: None,
        });
        equalizers.push(EqualizerSpec::Dbp { label: None, steps: 100 });
    }
    ExperimentConfig {
        name: name.into(),
        constellation: 16,
        seed: 1,
        channel: ChannelSpec::Fiber { preset, launch_power_dbm: 8.0, ssfm_steps: steps, gamma_per_w_km: None, rx_noise: true, rolloff: 0.1 },
        sweep: Sweep { axis: SweepAxis::LaunchPowerDbm, values: (4..=10).map(f64::from).collect() },
        training: TrainingSpec { symbols, batch: 2048, epochs, validation_symbols: 1 << 15, ..Default::default() },
        eval: EvalSpec { max_symbols: 1 << 21, block_symbols: 1 << 15, min_symbols: 1 << 15, ..Default::default() },
        equalizers,
        guard_symbols: None,
    }
}

/// Feature-based network VQ-VAE for the amplifier channel.
pub fn pa_vq_nn() -> EqualizerSpec {
    EqualizerSpec::VqVae {
        label: Some("nn-vq-vae".into()),
        decoder: DecoderSpec::Nn { features: FeatureSet::Pa, hidden: vec![64, 16], linear_skip: true },
        encoder: EncoderSpec::Nn { window: 23, hidden: vec![64, 32], linear_skip: true },
        commit: CommitWeight::Static(1.0),
        lr: 1e-3,
        l2_weight: 0.0,
        restarts: 3,
    }
}

fn pa(profile: Profile) -> ExperimentConfig {
    let (symbols, batch, values) = match profile {
        Profile::Desk => (1 << 16, 1024, vec![24.0, 28.0, 31.0, 33.0, 35.0]),
        Profile::Paper => (1 << 18, 1 << 14, (24..=36).map(f64::from).collect()),
    };
    ExperimentConfig {
        name: "paper-pa-surrogate".into(),
        constellation: 64,
        seed: 1,
        channel: ChannelSpec::Pa { output_power_dbm: 30.0, noise_std_volts: 0.4, rolloff: 0.2, linear_pa: false },
        sweep: Sweep { axis: SweepAxis::PaPowerDbm, values },
        training: TrainingSpec { symbols, batch, epochs: 30, ..Default::default() },
        eval: EvalSpec { max_symbols: 1 << 23, ..Default::default() },
        equalizers: vec![EqualizerSpec::Ffe { label: Some("linear-ffe".into()), taps: 41, lr: LR_GRID.to_vec() }, pa_vq_nn()],
        guard_symbols: None,
    }
}

/// Named configuration at the requested scale.
pub fn preset(name: &str, profile: Profile) -> Result<ExperimentConfig> {
    let cfg = match name {
        "paper-linear-16qam" => linear(profile),
        "paper-ssmf" => fiber(FiberPreset::Ssmf, profile),
        "paper-nzdsf" => fiber(FiberPreset::Nzdsf, profile),
        "paper-pa-surrogate" => pa(profile),
        "convergence-linear-16qam" => convergence(profile),
        "rho-linear-16qam" => rho(profile),
        _ => return Err(invalid(format!("unknown preset '{name}' (known: {})", PRESETS.join(", ")))),
    };
    cfg.validate()?;
    Ok(cfg)
}
