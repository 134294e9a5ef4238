//! Experiment configuration: paper-style defaults plus a flat
//! `key = value` override file.
//!
//! The file format is deliberately primitive so any tooling can write it:
//! one assignment per line, `#` comments, dotted prefixes grouping related
//! keys, and comma-separated lists for sweep axes. Unknown keys are errors
//! rather than silent no-ops.

use super::{HarnessError, Scheme, UplinkSnrMode};
use crate::channel::{FadingParams, ScenarioGeometry};
use crate::rate::Weights;
use crate::sca::ms::PenaltySettings;
use crate::solver::SolverSettings;

/// Link-budget offset (dB) applied to every link on top of the distance
/// power law, folding in antenna and amplifier gains that the distance
/// model alone leaves out. Chosen so the energy-splitting scheme lands in
/// the mid-single-digit bits/s/Hz range around M = 32 at 15 dB transmit
/// SNR; see the diagnostic sweep in this module's tests.
pub const DEFAULT_GAIN_OFFSET_DB: f64 = 89.0;

/// Everything a sweep needs, bundled for serialization through the
/// override file.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: ScenarioGeometry,
    pub fading: FadingParams,
    /// Element-count axis (single value unless sweeping over it).
    pub m_elems: Vec<usize>,
    /// Transmit-SNR axis in dB (single value unless sweeping over it).
    pub snr_db: Vec<f64>,
    pub weights: Weights,
    /// Threshold factor: each user's minimum rate is
    /// `log2(1 + kappa * average SNR)`.
    pub qos_kappa: f64,
    pub uplink_mode: UplinkSnrMode,
    /// Residual loop power for the explicit self-interference mode.
    pub si_power: f64,
    /// Reflect-side size of the partitioned baseline; `None` splits evenly.
    pub partition_m_r: Option<usize>,
    pub schemes: Vec<Scheme>,
    pub trials: usize,
    pub base_seed: u64,
    /// Ascent-loop stop tolerance (fractional objective increase).
    pub eps1: f64,
    /// Ascent-loop iteration cap.
    pub i_max: usize,
    pub penalty: PenaltySettings,
    pub solver: SolverSettings,
    /// Used only when converting spectral efficiencies to absolute rates.
    pub bandwidth_hz: f64,
}

/// Simulation defaults: the urban micro geometry with Nakagami shapes
/// (1, 4, 3, 2), weights (0.7, 0.3), threshold factor 0.1, 10 MHz, and the
/// effective-SNR convention where the uplink SNR and the inter-user
/// interference strength are both half the downlink SNR.
pub fn default_config() -> ExperimentConfig {
    ExperimentConfig {
        scenario: ScenarioGeometry::new(80.0, 100.0, 30.0, 20.0, 42.0, 3.5)
            .expect("static geometry")
            .with_gain_offset_db(DEFAULT_GAIN_OFFSET_DB),
        fading: FadingParams::new(1.0, 4.0, 3.0, 2.0).expect("static shapes"),
        m_elems: vec![16, 32, 48, 64, 96, 128],
        snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
        weights: Weights::new(0.7, 0.3).expect("static weights"),
        qos_kappa: 0.1,
        uplink_mode: UplinkSnrMode::Effective,
        si_power: 0.0,
        partition_m_r: None,
        schemes: Scheme::ALL.to_vec(),
        trials: 100,
        base_seed: 1,
        eps1: 1e-3,
        i_max: 30,
        penalty: PenaltySettings::default(),
        solver: SolverSettings::default(),
        bandwidth_hz: 1e7,
    }
}

impl ExperimentConfig {
    /// Check cross-field invariants that the parser cannot see per line.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        for &d in &[
            self.scenario.d_ap_ris,
            self.scenario.d_ap_u1,
            self.scenario.d_ris_u1,
            self.scenario.d_ris_u2,
        ] {
            if !(d > 0.0) {
                return bad(format!("distances must be positive, got {d}"));
            }
        }
        if !(self.scenario.nu >= 0.0) {
            return bad(format!("decay exponent must be nonnegative, got {}", self.scenario.nu));
        }
        for &s in &[self.fading.m_f, self.fading.m_g, self.fading.m_u, self.fading.m_v] {
            if !(s >= 0.5) {
                return bad(format!("fading shapes must be at least 0.5, got {s}"));
            }
        }
        if self.m_elems.is_empty() || self.m_elems.contains(&0) {
            return bad("element counts must be a non-empty list of positive values".into());
        }
        if self.snr_db.is_empty() {
            return bad("the SNR list must not be empty".into());
        }
        if !(self.qos_kappa >= 0.0) {
            return bad(format!("threshold factor must be nonnegative, got {}", self.qos_kappa));
        }
        if !(self.si_power >= 0.0) {
            return bad(format!("loop power must be nonnegative, got {}", self.si_power));
        }
        if self.schemes.is_empty() {
            return bad("at least one scheme must be selected".into());
        }
        for (i, s) in self.schemes.iter().enumerate() {
            if self.schemes[..i].contains(s) {
                return bad(format!("scheme {s} listed twice"));
            }
        }
        if self.trials == 0 {
            return bad("at least one trial is required".into());
        }
        if !(self.eps1 > 0.0) || self.i_max == 0 {
            return bad("ascent tolerance must be positive and the iteration cap nonzero".into());
        }
        if !(self.penalty.mu0 > 0.0)
            || !(self.penalty.omega > 1.0)
            || !(self.penalty.eps2 > 0.0)
            || self.penalty.max_outer == 0
        {
            return bad("penalty settings out of range".into());
        }
        if !(self.bandwidth_hz > 0.0) {
            return bad(format!("bandwidth must be positive, got {}", self.bandwidth_hz));
        }
        Ok(())
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("key {key}: cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, HarnessError> {
    value.split(',').map(|item| parse_num(key, item.trim())).collect()
}

fn parse_schemes(value: &str) -> Result<Vec<Scheme>, HarnessError> {
    value.split(',').map(|item| Scheme::parse(item.trim())).collect()
}

fn parse_uplink_mode(value: &str) -> Result<UplinkSnrMode, HarnessError> {
    match value {
        "effective" => Ok(UplinkSnrMode::Effective),
        "explicit_si" => Ok(UplinkSnrMode::ExplicitSi),
        other => Err(HarnessError::Config(format!(
            "snr.uplink_mode must be `effective` or `explicit_si`, got {other:?}"
        ))),
    }
}

/// Apply `key = value` overrides to a config in place.
pub fn apply_config_text(cfg: &mut ExperimentConfig, text: &str) -> Result<(), HarnessError> {
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            HarnessError::Config(format!("line {}: expected `key = value`, got {raw:?}", idx + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "scenario.d_ap_ris" => cfg.scenario.d_ap_ris = parse_num(key, value)?,
            "scenario.d_ap_u1" => cfg.scenario.d_ap_u1 = parse_num(key, value)?,
            "scenario.d_ris_u1" => cfg.scenario.d_ris_u1 = parse_num(key, value)?,
            "scenario.d_ris_u2" => cfg.scenario.d_ris_u2 = parse_num(key, value)?,
            "scenario.zeta0_db" => cfg.scenario.zeta0_db = parse_num(key, value)?,
            "scenario.nu" => cfg.scenario.nu = parse_num(key, value)?,
            "scenario.gain_offset_db" => cfg.scenario.gain_offset_db = parse_num(key, value)?,
            "fading.m_f" => cfg.fading.m_f = parse_num(key, value)?,
            "fading.m_g" => cfg.fading.m_g = parse_num(key, value)?,
            "fading.m_u" => cfg.fading.m_u = parse_num(key, value)?,
            "fading.m_v" => cfg.fading.m_v = parse_num(key, value)?,
            "weights.w1" => {
                let w1: f64 = parse_num(key, value)?;
                cfg.weights = Weights::new(w1, 1.0 - w1)
                    .map_err(|e| HarnessError::Config(format!("key {key}: {e}")))?;
            }
            "qos.kappa" => cfg.qos_kappa = parse_num(key, value)?,
            "snr.values_db" => cfg.snr_db = parse_list(key, value)?,
            "snr.uplink_mode" => cfg.uplink_mode = parse_uplink_mode(value)?,
            "snr.si_power" => cfg.si_power = parse_num(key, value)?,
            "elements.values" => cfg.m_elems = parse_list(key, value)?,
            "partition.m_r" => {
                cfg.partition_m_r =
                    if value == "auto" { None } else { Some(parse_num(key, value)?) };
            }
            "schemes" => cfg.schemes = parse_schemes(value)?,
            "trials" => cfg.trials = parse_num(key, value)?,
            "seed" => cfg.base_seed = parse_num(key, value)?,
            "sca.eps1" => cfg.eps1 = parse_num(key, value)?,
            "sca.i_max" => cfg.i_max = parse_num(key, value)?,
            "penalty.mu0" => cfg.penalty.mu0 = parse_num(key, value)?,
            "penalty.omega" => cfg.penalty.omega = parse_num(key, value)?,
            "penalty.eps2" => cfg.penalty.eps2 = parse_num(key, value)?,
            "penalty.max_outer" => cfg.penalty.max_outer = parse_num(key, value)?,
            "solver.gap_target" => cfg.solver.gap_target = parse_num(key, value)?,
            "solver.kkt_tol" => cfg.solver.kkt_tol = parse_num(key, value)?,
            "solver.max_newton_steps" => cfg.solver.max_newton_steps = parse_num(key, value)?,
            "solver.max_barrier_rounds" => cfg.solver.max_barrier_rounds = parse_num(key, value)?,
            "bandwidth_hz" => cfg.bandwidth_hz = parse_num(key, value)?,
            other => {
                return Err(HarnessError::Config(format!("line {}: unknown key {other:?}", idx + 1)))
            }
        }
    }
    cfg.validate()
}

/// Parse a full override file on top of the defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = default_config();
    apply_config_text(&mut cfg, text)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::path_loss_linear;

    #[test]
    fn defaults_are_internally_consistent() {
        let cfg = default_config();
        cfg.validate().unwrap();
        assert_eq!(cfg.weights.w1() + cfg.weights.w2(), 1.0);
        // Raw path loss at the access-point-to-surface distance.
        let pl = path_loss_linear(80.0, cfg.scenario.zeta0_db, cfg.scenario.nu).unwrap();
        assert!((pl - 1.37780e-11).abs() <= 5e-15, "path loss {pl}");
    }

    #[test]
    fn threshold_formula_at_fifteen_db() {
        let cfg = default_config();
        let snr = 10f64.powf(1.5);
        let budget =
            crate::rate::LinkBudget::new(snr, snr / 2.0, snr / 2.0).unwrap();
        let qos = crate::rate::QosThresholds::from_kappa(cfg.qos_kappa, &budget).unwrap();
        assert!((qos.r1_min - 2.0574).abs() <= 1e-4, "downlink threshold {}", qos.r1_min);
        assert!((qos.r2_min - (1.0 + 0.05 * snr).log2()).abs() <= 1e-12);
    }

    #[test]
    fn overrides_round_trip() {
        let text = "\
# comment line
trials = 7
seed = 99
schemes = es, hd
snr.values_db = 5, 15
elements.values = 8
weights.w1 = 0.6
qos.kappa = 0.2
snr.uplink_mode = explicit_si
snr.si_power = 0.01
partition.m_r = 3
sca.eps1 = 1e-4
penalty.omega = 5 # inline comment
scenario.gain_offset_db = 90
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.trials, 7);
        assert_eq!(cfg.base_seed, 99);
        assert_eq!(cfg.schemes, vec![Scheme::Es, Scheme::Hd]);
        assert_eq!(cfg.snr_db, vec![5.0, 15.0]);
        assert_eq!(cfg.m_elems, vec![8]);
        assert_eq!(cfg.weights.w1(), 0.6);
        assert_eq!(cfg.qos_kappa, 0.2);
        assert_eq!(cfg.uplink_mode, UplinkSnrMode::ExplicitSi);
        assert_eq!(cfg.si_power, 0.01);
        assert_eq!(cfg.partition_m_r, Some(3));
        assert_eq!(cfg.eps1, 1e-4);
        assert_eq!(cfg.penalty.omega, 5.0);
        assert_eq!(cfg.scenario.gain_offset_db, 90.0);
    }

    #[test]
    fn unknown_keys_and_malformed_lines_are_rejected() {
        assert!(matches!(
            parse_config("solver.magic = 3").unwrap_err(),
            HarnessError::Config(_)
        ));
        assert!(matches!(parse_config("trials 7").unwrap_err(), HarnessError::Config(_)));
        assert!(matches!(parse_config("trials = x").unwrap_err(), HarnessError::Config(_)));
        assert!(matches!(parse_config("trials = 0").unwrap_err(), HarnessError::Config(_)));
        assert!(matches!(
            parse_config("schemes = es, es").unwrap_err(),
            HarnessError::Config(_)
        ));
        assert!(matches!(
            parse_config("weights.w1 = 1.4").unwrap_err(),
            HarnessError::Config(_)
        ));
    }
}
