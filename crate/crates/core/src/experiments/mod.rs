//! Sweeps, convergence studies and their on-disk records.

mod config;
mod output;
mod presets;
mod runner;
mod scenario;
mod theory;

pub use config::{
    ChannelSpec, DecoderSpec, EncoderSpec, EqualizerSpec, EvalSpec, ExperimentConfig, FeatureSet, FiberPreset, Sweep, SweepAxis, TrainingSpec, LR_GRID,
};
pub use output::{
    artifact_stem, export_constellation, write_details_csv, write_record_json, write_results_csv, write_trace_csv, write_traces, RESULTS_HEADER, TRACE_HEADER,
};
pub use presets::{fiber_vq_nn, linear_equalizers, pa_vq_nn, preset, Profile, CONVERGENCE_GRID, PRESETS};
pub use runner::{
    guard_symbols, run_convergence, run_experiment, run_launch_power_sweep, run_pa_power_sweep, run_snr_sweep, with_threads, ExperimentRecord, PointResult, TracePoint,
    BLIND_SEARCH,
};
pub use scenario::{agc, Block, Scenario};
pub use theory::qam_ser_awgn;
