//! Comparison schemes: a partitioned conventional surface and a half-duplex
//! time split.
//!
//! The conventional baseline freezes the element roles a priori — the first
//! `M_r` elements only reflect, the rest only transmit — and optimizes the
//! live coefficients with the same ascent loop as the joint schemes, each
//! coefficient inside its own unit disc. Magnitudes are relaxed to `<= 1`
//! inside the subproblems (they saturate at any optimum by the same
//! monotonicity argument as the shared-aperture ball); a hard-projection
//! variant that renormalizes to unit modulus after every iteration is
//! available behind a policy switch.
//!
//! The half-duplex scheme serves the two users in orthogonal time slots, so
//! self-interference and inter-user interference vanish and the optimal
//! coefficients are closed-form co-phasings at unit modulus. Only the slot
//! split remains: each slot reuses the full power budget, so a slot of
//! length `lambda` carries `lambda * log2(1 + gain / lambda)` bits/s/Hz,
//! which is concave in `lambda`, and the weighted sum is maximized by a
//! golden-section search over the threshold-feasible interval.

use crate::channel::CompositeChannels;
use crate::rate::{LinkBudget, QosThresholds, StarProfile, Weights};
use crate::sca::es::{run_sca_core, BallStyle, CoreChannels, ScaReport};
use crate::sca::{
    downlink_bound_form, embed_pair, expansion_point_from_parts, extract_pair, rates_from_parts,
    uplink_bound_form, ScaSettings, ScaStatus, VarLayout,
};
use crate::solver::{solve, SolveStatus};
use num_complex::Complex64;
use std::f64::consts::LN_2;

/// Fixed element-role split of a partitioned surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionSpec {
    m_r: usize,
    m_t: usize,
}

impl PartitionSpec {
    pub fn new(m_r: usize, m_t: usize) -> Self {
        Self { m_r, m_t }
    }

    /// Even split; an odd element count favors the reflection side.
    pub fn half(m: usize) -> Self {
        Self { m_r: m.div_ceil(2), m_t: m / 2 }
    }

    pub fn m_r(&self) -> usize {
        self.m_r
    }

    pub fn m_t(&self) -> usize {
        self.m_t
    }
}

/// How the partitioned baseline treats coefficient magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmplitudePolicy {
    /// Magnitudes relaxed to `<= 1` inside the convex subproblems.
    Relaxed,
    /// Live coefficients renormalized to unit modulus after every
    /// iteration. The ascent guarantee does not survive the projection, so
    /// the loop tracks the best threshold-feasible projected iterate.
    UnitModulusProjection,
}

/// Deterministic co-phased starting coefficients for the two partitions.
fn partition_init(cc: &CoreChannels) -> (Vec<Complex64>, Vec<Complex64>) {
    let sr = cc
        .h
        .iter()
        .map(|hm| Complex64::from_polar(1.0, cc.direct.arg() - hm.arg()))
        .collect();
    let st = cc.z.iter().map(|zm| Complex64::from_polar(1.0, -zm.arg())).collect();
    (sr, st)
}

/// Optimize a surface whose first `M_r` elements only reflect and whose
/// remaining elements only transmit.
///
/// The returned profile is full-length: frozen coefficients are zero.
pub fn conventional_ris(
    ch: &CompositeChannels,
    direct: Complex64,
    budget: &LinkBudget,
    settings: &ScaSettings,
    partition: PartitionSpec,
) -> ScaReport {
    conventional_ris_with_policy(ch, direct, budget, settings, partition, AmplitudePolicy::Relaxed)
}

/// `conventional_ris` with an explicit magnitude policy.
pub fn conventional_ris_with_policy(
    ch: &CompositeChannels,
    direct: Complex64,
    budget: &LinkBudget,
    settings: &ScaSettings,
    partition: PartitionSpec,
    policy: AmplitudePolicy,
) -> ScaReport {
    let m = ch.num_elements();
    assert_eq!(partition.m_r + partition.m_t, m, "partition does not cover the surface");
    let mr = partition.m_r;
    let cc = CoreChannels { h: &ch.h[..mr], q: &ch.q[mr..], z: &ch.z[mr..], direct };
    let (init_sr, init_st) = partition_init(&cc);

    let out = match policy {
        AmplitudePolicy::Relaxed => {
            run_sca_core(&cc, budget, settings, BallStyle::Independent, &init_sr, &init_st)
        }
        AmplitudePolicy::UnitModulusProjection => {
            run_projected(&cc, budget, settings, &init_sr, &init_st)
        }
    };

    let mut sr = out.sr;
    let mut st = vec![Complex64::new(0.0, 0.0); mr];
    sr.resize(m, Complex64::new(0.0, 0.0));
    st.extend(out.st);
    ScaReport {
        profile: StarProfile::new(sr, st).expect("live coefficients stay inside the unit disc"),
        rates: out.rates,
        weighted_sum: out.weighted_sum,
        trajectory: out.trajectory,
        iterations: out.iterations,
        status: out.status,
    }
}

/// Projected variant of the partitioned ascent: each subproblem solution is
/// renormalized to unit modulus before the next expansion.
fn run_projected(
    cc: &CoreChannels,
    budget: &LinkBudget,
    settings: &ScaSettings,
    init_sr: &[Complex64],
    init_st: &[Complex64],
) -> crate::sca::es::CoreOutcome {
    use crate::sca::es::{build_subproblem, zeros_outcome, CoreOutcome};

    let layout = VarLayout::partitioned(init_sr.len(), init_st.len());
    let project = |v: &[Complex64]| -> Vec<Complex64> {
        v.iter().map(|s| Complex64::from_polar(1.0, s.arg())).collect()
    };
    let meets = |rates: (f64, f64)| -> bool {
        crate::rate::qos_satisfied(rates, &settings.qos, settings.qos_slack)
    };
    let (w1, w2) = (settings.weights.w1(), settings.weights.w2());

    let mut sr = project(init_sr);
    let mut st = project(init_st);
    let rates = rates_from_parts(&sr, &st, cc.h, cc.q, cc.z, cc.direct, budget);
    let mut wsr = w1 * rates.0 + w2 * rates.1;
    let mut best: Option<(Vec<Complex64>, Vec<Complex64>, (f64, f64), f64)> = if meets(rates) {
        Some((sr.clone(), st.clone(), rates, wsr))
    } else {
        None
    };
    let mut trajectory = vec![wsr];
    let mut iterations = 0;
    let mut status = ScaStatus::MaxIter;

    const INWARD: f64 = 1.0 - 1e-7;
    for _ in 0..settings.i_max {
        let esr: Vec<Complex64> = sr.iter().map(|v| v * INWARD).collect();
        let est: Vec<Complex64> = st.iter().map(|v| v * INWARD).collect();
        let point = expansion_point_from_parts(&esr, &est, cc.h, cc.q, cc.z, cc.direct, budget);
        let f1 = downlink_bound_form(&layout, &point, cc.h, cc.q, cc.direct, budget);
        let f2 = uplink_bound_form(&layout, &point, cc.z, budget);
        let prog = build_subproblem(
            &layout,
            &f1,
            &f2,
            cc,
            budget,
            &settings.weights,
            Some(&settings.qos),
            BallStyle::Independent,
        );
        let mut warm = embed_pair(&layout, &esr, &est);
        warm[layout.r1()] = crate::sca::es::aux_start(f1.eval(&warm) / LN_2);
        warm[layout.r2()] = crate::sca::es::aux_start(f2.eval(&warm) / LN_2);
        // The projected point can sit outside a positive threshold row; the
        // solver then falls back to its own feasibility search.
        let sol = match solve(&prog, &settings.solver, Some(&warm)) {
            Ok(s) => s,
            Err(_) => break,
        };
        if sol.status != SolveStatus::Optimal {
            break;
        }
        let (rsr, rst) = extract_pair(&layout, &sol.x);
        let nsr = project(&rsr);
        let nst = project(&rst);
        let nrates = rates_from_parts(&nsr, &nst, cc.h, cc.q, cc.z, cc.direct, budget);
        let nwsr = w1 * nrates.0 + w2 * nrates.1;
        iterations += 1;
        trajectory.push(nwsr);
        if meets(nrates) && best.as_ref().is_none_or(|b| nwsr > b.3) {
            best = Some((nsr.clone(), nst.clone(), nrates, nwsr));
        }
        let frac = (nwsr - wsr) / wsr.abs().max(1e-12);
        sr = nsr;
        st = nst;
        wsr = nwsr;
        if frac.abs() < settings.eps1 {
            status = ScaStatus::Converged;
            break;
        }
    }

    match best {
        Some((bsr, bst, rates, wsr)) => CoreOutcome {
            sr: bsr,
            st: bst,
            rates,
            weighted_sum: wsr,
            trajectory,
            iterations,
            status,
        },
        None => zeros_outcome(init_sr.len(), init_st.len()),
    }
}

/// Half-duplex operating point: slot fractions plus the closed-form
/// unit-modulus coefficients each slot uses.
#[derive(Debug, Clone)]
pub struct HdAllocation {
    pub lambda1: f64,
    pub lambda2: f64,
    pub s_r_h: Vec<Complex64>,
    pub s_t_h: Vec<Complex64>,
}

/// Result of the time-split optimization.
#[derive(Debug, Clone)]
pub struct HdReport {
    /// Meaningless slot split (all uplink) when `status` is `Infeasible`.
    pub alloc: HdAllocation,
    pub rates: (f64, f64),
    pub weighted_sum: f64,
    pub status: ScaStatus,
}

/// Closed-form per-slot coefficients: with one active link per slot, every
/// element co-phases it at unit modulus — reflections align the surface
/// path with the direct one, transmissions align the uplink cascade.
pub fn hd_cophased_profiles(
    ch: &CompositeChannels,
    direct: Complex64,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let s_r_h = ch
        .h
        .iter()
        .map(|hm| Complex64::from_polar(1.0, direct.arg() - hm.arg()))
        .collect();
    let s_t_h = ch.z.iter().map(|zm| Complex64::from_polar(1.0, -zm.arg())).collect();
    (s_r_h, s_t_h)
}

/// Spectral efficiency of a slot of length `lambda` whose full-time SNR is
/// `gain`: transmit power concentrates into the slot, so the rate is
/// `lambda * log2(1 + gain / lambda)`, extended continuously by 0 at
/// `lambda = 0`.
pub fn time_scaled_rate(lambda: f64, gain: f64) -> f64 {
    if lambda <= 0.0 || gain <= 0.0 {
        return 0.0;
    }
    let g = gain / lambda;
    if g.is_finite() {
        lambda * (1.0 + g).log2()
    } else {
        // gain / lambda overflowed; the true value is far below resolution.
        0.0
    }
}

/// Rates of a half-duplex allocation on the given channels.
pub fn hd_rates(
    alloc: &HdAllocation,
    ch: &CompositeChannels,
    direct: Complex64,
    budget: &LinkBudget,
) -> (f64, f64) {
    let down: Complex64 =
        direct + alloc.s_r_h.iter().zip(ch.h.iter()).map(|(s, h)| s * h).sum::<Complex64>();
    let up: Complex64 = alloc.s_t_h.iter().zip(ch.z.iter()).map(|(s, z)| s * z).sum();
    let g1 = budget.gamma1_bar * down.norm_sqr();
    let g2 = budget.gamma2_bar * up.norm_sqr();
    (time_scaled_rate(alloc.lambda1, g1), time_scaled_rate(alloc.lambda2, g2))
}

/// Smallest slot length whose rate reaches `r_min`, or `None` when even a
/// full-time slot falls short. The slot rate is strictly increasing in the
/// slot length, so bisection applies.
fn min_slot_for(r_min: f64, gain: f64) -> Option<f64> {
    if r_min <= 0.0 {
        return Some(0.0);
    }
    if time_scaled_rate(1.0, gain) < r_min {
        return None;
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if time_scaled_rate(mid, gain) >= r_min {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Golden-section maximization of a concave function on `[lo, hi]`.
fn golden_max(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if b - a <= 1e-12 {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Optimize the half-duplex slot split for the weighted sum rate under the
/// rate thresholds.
///
/// Both slot rates are concave in the split, the downlink one increasing
/// and the uplink one decreasing, so the threshold-feasible splits form an
/// interval and a golden-section search over it is exact.
pub fn optimize_time_split(
    ch: &CompositeChannels,
    direct: Complex64,
    budget: &LinkBudget,
    weights: &Weights,
    qos: &QosThresholds,
) -> HdReport {
    let (s_r_h, s_t_h) = hd_cophased_profiles(ch, direct);
    let down: Complex64 =
        direct + s_r_h.iter().zip(ch.h.iter()).map(|(s, h)| s * h).sum::<Complex64>();
    let up: Complex64 = s_t_h.iter().zip(ch.z.iter()).map(|(s, z)| s * z).sum();
    let g1 = budget.gamma1_bar * down.norm_sqr();
    let g2 = budget.gamma2_bar * up.norm_sqr();

    let lo = min_slot_for(qos.r1_min, g1);
    let hi = min_slot_for(qos.r2_min, g2).map(|l2| 1.0 - l2);
    let (lo, hi) = match (lo, hi) {
        (Some(lo), Some(hi)) if lo <= hi => (lo, hi),
        _ => {
            return HdReport {
                alloc: HdAllocation { lambda1: 0.0, lambda2: 1.0, s_r_h, s_t_h },
                rates: (0.0, 0.0),
                weighted_sum: 0.0,
                status: ScaStatus::Infeasible,
            };
        }
    };

    let objective = |l1: f64| {
        weights.w1() * time_scaled_rate(l1, g1) + weights.w2() * time_scaled_rate(1.0 - l1, g2)
    };
    let lambda1 = golden_max(lo, hi, objective);
    let alloc = HdAllocation { lambda1, lambda2: 1.0 - lambda1, s_r_h, s_t_h };
    let rates = hd_rates(&alloc, ch, direct, budget);
    HdReport {
        weighted_sum: weights.w1() * rates.0 + weights.w2() * rates.1,
        rates,
        alloc,
        status: ScaStatus::Converged,
    }
}
