//! Core algorithms for weighted sum-rate maximization on a simultaneously
//! transmitting and reflecting surface assisting a full-duplex access point.
//!
//! Module map:
//! - [`channel`]: fading channel generation and cascaded channel products.
//! - [`rate`]: SINR / spectral-efficiency expressions and profile types.
//! - [`solver`]: interior-point engine for the convex subproblems.
//! - [`sca`]: rate bounds and the surface optimization loops.
//! - [`baselines`]: partitioned-surface and half-duplex comparison schemes.
//! - [`harness`]: Monte Carlo trial orchestration, sweeps, and CSV output.

pub mod baselines;
pub mod channel;
pub mod harness;
pub mod rate;
pub mod sca;
pub mod solver;

pub use baselines::{
    conventional_ris, conventional_ris_with_policy, optimize_time_split, AmplitudePolicy,
    HdAllocation, HdReport, PartitionSpec,
};
pub use channel::{
    compose, path_loss_linear, sample_realization, ChannelError, ChannelRealization,
    CompositeChannels, FadingParams, ScenarioGeometry,
};
pub use harness::{
    default_config, parse_config, run_sweep, run_trial, ExperimentConfig, HarnessError, Scheme,
    SchemeOutcome, SweepAxis, SweepResult, TrialRecord, UplinkSnrMode,
};
pub use rate::{
    effective_uplink_snr, rate_pair, weighted_sum_rate, LinkBudget, QosThresholds, RateError,
    StarProfile, Weights,
};
pub use sca::es::{initialize_es, optimize_es, EsInit, ScaReport};
pub use sca::ms::{optimize_ms, ModeChoice, MsReport, PenaltySettings};
pub use sca::{ScaSettings, ScaStatus};
pub use solver::SolverSettings;
