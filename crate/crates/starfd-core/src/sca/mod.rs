//! Successive convex approximation of the weighted sum-rate problem.
//!
//! Both user rates are non-convex in the surface profile. Around an
//! expansion profile `s0` each rate admits a concave global lower bound
//! that touches the true rate at `s0` (first-order surrogate of the
//! difference-of-logs structure). Each outer iteration maximizes the
//! weighted surrogates subject to the power coupling, re-expands at the
//! solution, and repeats; tangency plus the global-bound property make the
//! true objective non-decreasing along the iterates.
//!
//! This module holds the expansion state, the two bounds (scalar evaluators
//! in bit/s/Hz and quadratic-form builders in nats for the solver), and the
//! coordinate layout shared by the energy-splitting, mode-switching and
//! partitioned-surface assemblers.

pub mod es;
pub mod ms;

use crate::channel::CompositeChannels;
use crate::rate::{dot_t, LinkBudget, QosThresholds, StarProfile, Weights};
use crate::solver::{
    embed_complex_quadratic, embed_linear_re, QuadTerms, RealQuadForm, SolverSettings,
};
use nalgebra::DVector;
use num_complex::Complex64;
use std::f64::consts::LN_2;

/// Termination state of an approximation loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaStatus {
    /// The fractional objective increase fell below the threshold.
    Converged,
    /// An iteration budget ran out (outer loop or inner solver).
    MaxIter,
    /// No profile satisfies the rate thresholds.
    Infeasible,
}

/// Shared tuning for the approximation loops.
#[derive(Debug, Clone, Copy)]
pub struct ScaSettings {
    /// Fractional true-objective increase below which the loop stops.
    pub eps1: f64,
    /// Outer iteration cap.
    pub i_max: usize,
    pub weights: Weights,
    pub qos: QosThresholds,
    /// Tolerance when re-checking achieved rates against the thresholds.
    pub qos_slack: f64,
    pub solver: SolverSettings,
}

impl Default for ScaSettings {
    fn default() -> Self {
        Self {
            eps1: 1e-3,
            i_max: 30,
            weights: Weights::new(0.7, 0.3).expect("default weights are a partition"),
            qos: QosThresholds::new(0.0, 0.0).expect("zero thresholds are valid"),
            qos_slack: 1e-6,
            solver: SolverSettings::default(),
        }
    }
}

/// State frozen at the expansion profile: `psi` is the scaled downlink
/// signal, `kappa` the downlink interference-plus-noise level, and `chi`
/// the scaled uplink signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionPoint {
    pub psi: Complex64,
    pub kappa: f64,
    pub chi: Complex64,
}

/// Expansion state of a full-surface profile.
pub fn expansion_point(
    profile: &StarProfile,
    ch: &CompositeChannels,
    direct: Complex64,
    budget: &LinkBudget,
) -> ExpansionPoint {
    expansion_point_from_parts(profile.s_r(), profile.s_t(), &ch.h, &ch.q, &ch.z, direct, budget)
}

pub(crate) fn expansion_point_from_parts(
    sr: &[Complex64],
    st: &[Complex64],
    h: &[Complex64],
    q: &[Complex64],
    z: &[Complex64],
    direct: Complex64,
    budget: &LinkBudget,
) -> ExpansionPoint {
    ExpansionPoint {
        psi: budget.gamma1_bar.sqrt() * (direct + dot_t(sr, h)),
        kappa: budget.gamma2p_bar * dot_t(st, q).norm_sqr() + 1.0,
        chi: budget.gamma2_bar.sqrt() * dot_t(st, z),
    }
}

/// Rates computed from raw coefficient slices (lengths may differ between
/// the reflect and transmit sides, as in the partitioned baseline).
pub(crate) fn rates_from_parts(
    sr: &[Complex64],
    st: &[Complex64],
    h: &[Complex64],
    q: &[Complex64],
    z: &[Complex64],
    direct: Complex64,
    budget: &LinkBudget,
) -> (f64, f64) {
    let signal = (direct + dot_t(sr, h)).norm_sqr();
    let leakage = dot_t(st, q).norm_sqr();
    let up = dot_t(st, z).norm_sqr();
    (
        (1.0 + budget.gamma1_bar * signal / (budget.gamma2p_bar * leakage + 1.0)).log2(),
        (1.0 + budget.gamma2_bar * up).log2(),
    )
}

/// Concave lower bound on the downlink rate (bit/s/Hz), tangent at the
/// profile that produced `point`.
///
/// In the coupling term the uplink leakage enters through the same
/// interference cascade as the true SINR (including the noise floor), which
/// is what makes the bound exact at the expansion profile; see
/// [`downlink_rate_bound_signal_coupled`] for the non-tangent alternative.
pub fn downlink_rate_bound(
    profile: &StarProfile,
    point: &ExpansionPoint,
    ch: &CompositeChannels,
    direct: Complex64,
    budget: &LinkBudget,
) -> f64 {
    let a2 = point.psi.norm_sqr();
    let kappa = point.kappa;
    let c1 = if a2 > 0.0 { a2 / (kappa * (kappa + a2)) } else { 0.0 };
    let sig = direct + dot_t(profile.s_r(), &ch.h);
    let leak = dot_t(profile.s_t(), &ch.q).norm_sqr();
    let cross = (point.psi.conj() * budget.gamma1_bar.sqrt() * sig).re;
    let val = (1.0 + a2 / kappa).ln() + 2.0 / kappa * cross
        - c1 * (budget.gamma1_bar * sig.norm_sqr() + budget.gamma2p_bar * leak + 1.0)
        - a2 / kappa;
    val / LN_2
}

/// Variant of the downlink bound whose coupling term tracks the uplink
/// *signal* power instead of the interference cascade. Kept for comparison:
/// it is not tangent at the expansion profile whenever leakage and uplink
/// signal levels differ, so it cannot drive the ascent loop.
pub fn downlink_rate_bound_signal_coupled(
    profile: &StarProfile,
    point: &ExpansionPoint,
    ch: &CompositeChannels,
    direct: Complex64,
    budget: &LinkBudget,
) -> f64 {
    let a2 = point.psi.norm_sqr();
    let kappa = point.kappa;
    let c1 = if a2 > 0.0 { a2 / (kappa * (kappa + a2)) } else { 0.0 };
    let sig = direct + dot_t(profile.s_r(), &ch.h);
    let up = dot_t(profile.s_t(), &ch.z).norm_sqr();
    let cross = (point.psi.conj() * budget.gamma1_bar.sqrt() * sig).re;
    let val = (1.0 + a2 / kappa).ln() + 2.0 / kappa * cross
        - c1 * (budget.gamma1_bar * sig.norm_sqr() + budget.gamma2_bar * up)
        - a2 / kappa;
    val / LN_2
}

/// Concave lower bound on the uplink rate (bit/s/Hz), tangent at the
/// profile that produced `point`.
pub fn uplink_rate_bound(
    profile: &StarProfile,
    point: &ExpansionPoint,
    ch: &CompositeChannels,
    budget: &LinkBudget,
) -> f64 {
    let b2 = point.chi.norm_sqr();
    let c2 = b2 / (1.0 + b2);
    let sig = budget.gamma2_bar.sqrt() * dot_t(profile.s_t(), &ch.z);
    let val = (1.0 + b2).ln() + 2.0 * (point.chi.conj() * (sig - point.chi)).re
        - c2 * (sig.norm_sqr() - b2);
    val / LN_2
}

/// Coordinate layout of a subproblem: stacked reflect coefficients, stacked
/// transmit coefficients, optional mode amplitudes, and the two rate
/// auxiliaries last.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct VarLayout {
    pub m_r: usize,
    pub m_t: usize,
    pub mode_vars: bool,
}

impl VarLayout {
    pub fn es(m: usize) -> Self {
        Self { m_r: m, m_t: m, mode_vars: false }
    }

    pub fn ms(m: usize) -> Self {
        Self { m_r: m, m_t: m, mode_vars: true }
    }

    pub fn partitioned(m_r: usize, m_t: usize) -> Self {
        Self { m_r, m_t, mode_vars: false }
    }

    pub fn dim(&self) -> usize {
        2 * (self.m_r + self.m_t)
            + if self.mode_vars { self.m_r + self.m_t } else { 0 }
            + 2
    }

    pub fn sr_offset(&self) -> usize {
        0
    }

    pub fn st_offset(&self) -> usize {
        2 * self.m_r
    }

    pub fn sr_re(&self, i: usize) -> usize {
        i
    }

    pub fn sr_im(&self, i: usize) -> usize {
        self.m_r + i
    }

    pub fn st_re(&self, i: usize) -> usize {
        2 * self.m_r + i
    }

    pub fn st_im(&self, i: usize) -> usize {
        2 * self.m_r + self.m_t + i
    }

    pub fn dr(&self, i: usize) -> usize {
        debug_assert!(self.mode_vars);
        2 * (self.m_r + self.m_t) + i
    }

    pub fn dt(&self, i: usize) -> usize {
        debug_assert!(self.mode_vars);
        2 * (self.m_r + self.m_t) + self.m_r + i
    }

    pub fn r1(&self) -> usize {
        self.dim() - 2
    }

    pub fn r2(&self) -> usize {
        self.dim() - 1
    }
}

/// Stack profile coefficients into solver coordinates (mode amplitudes and
/// rate auxiliaries, when present, are left at zero).
pub(crate) fn embed_pair(layout: &VarLayout, sr: &[Complex64], st: &[Complex64]) -> DVector<f64> {
    debug_assert_eq!(sr.len(), layout.m_r);
    debug_assert_eq!(st.len(), layout.m_t);
    let mut x = DVector::zeros(layout.dim());
    for (i, v) in sr.iter().enumerate() {
        x[layout.sr_re(i)] = v.re;
        x[layout.sr_im(i)] = v.im;
    }
    for (i, v) in st.iter().enumerate() {
        x[layout.st_re(i)] = v.re;
        x[layout.st_im(i)] = v.im;
    }
    x
}

pub(crate) fn extract_pair(layout: &VarLayout, x: &DVector<f64>) -> (Vec<Complex64>, Vec<Complex64>) {
    let sr = (0..layout.m_r)
        .map(|i| Complex64::new(x[layout.sr_re(i)], x[layout.sr_im(i)]))
        .collect();
    let st = (0..layout.m_t)
        .map(|i| Complex64::new(x[layout.st_re(i)], x[layout.st_im(i)]))
        .collect();
    (sr, st)
}

/// Box bounds for the two rate auxiliaries: the amplitude-aligned channel
/// sums cap what either rate can reach, padded with margin so the caps
/// never pinch the barrier iterates.
pub(crate) fn aux_upper_bounds(
    h: &[Complex64],
    z: &[Complex64],
    direct: Complex64,
    budget: &LinkBudget,
) -> (f64, f64) {
    let amp1: f64 = direct.norm() + h.iter().map(|v| v.norm()).sum::<f64>();
    let amp2: f64 = z.iter().map(|v| v.norm()).sum::<f64>();
    (
        (1.0 + budget.gamma1_bar * amp1 * amp1).log2() + 2.0,
        (1.0 + budget.gamma2_bar * amp2 * amp2).log2() + 2.0,
    )
}

/// Sum quadratic forms that are each zero- or rank-structured over the full
/// coordinate space.
fn sum_rank_forms(dim: usize, parts: Vec<RealQuadForm>) -> RealQuadForm {
    let mut terms = Vec::new();
    let mut lin = DVector::zeros(dim);
    let mut constant = 0.0;
    for part in parts {
        debug_assert_eq!(part.dim(), dim);
        let (quad, l, c) = part.into_parts();
        match quad {
            QuadTerms::Zero => {}
            QuadTerms::Rank(mut t) => terms.append(&mut t),
            _ => unreachable!("bound forms are rank-structured"),
        }
        lin += l;
        constant += c;
    }
    RealQuadForm::from_rank_terms(dim, terms, lin, constant)
        .expect("summed parts share the layout dimension")
}

/// Downlink bound as a quadratic form over `layout`, in nats.
pub(crate) fn downlink_bound_form(
    layout: &VarLayout,
    point: &ExpansionPoint,
    h: &[Complex64],
    q: &[Complex64],
    direct: Complex64,
    budget: &LinkBudget,
) -> RealQuadForm {
    debug_assert_eq!(h.len(), layout.m_r);
    debug_assert_eq!(q.len(), layout.m_t);
    let dim = layout.dim();
    let a2 = point.psi.norm_sqr();
    let kappa = point.kappa;
    let c1 = if a2 > 0.0 { a2 / (kappa * (kappa + a2)) } else { 0.0 };
    let sg1 = budget.gamma1_bar.sqrt();

    let mut parts = Vec::new();
    if c1 > 0.0 {
        parts.push(
            embed_complex_quadratic(h, direct, -c1 * budget.gamma1_bar)
                .lifted(dim, layout.sr_offset()),
        );
        parts.push(
            embed_complex_quadratic(q, Complex64::new(0.0, 0.0), -c1 * budget.gamma2p_bar)
                .lifted(dim, layout.st_offset()),
        );
    }
    let cross_coef = 2.0 / kappa * sg1 * point.psi.conj();
    let cross: Vec<Complex64> = h.iter().map(|hm| cross_coef * hm).collect();
    let mut lin = DVector::zeros(dim);
    lin.rows_mut(layout.sr_offset(), 2 * layout.m_r)
        .copy_from(&embed_linear_re(&cross));
    let constant =
        (1.0 + a2 / kappa).ln() - a2 / kappa - c1 + (cross_coef * direct).re;
    parts.push(RealQuadForm::linear(dim, lin, constant).expect("layout dimension"));
    sum_rank_forms(dim, parts)
}

/// Uplink bound as a quadratic form over `layout`, in nats.
pub(crate) fn uplink_bound_form(
    layout: &VarLayout,
    point: &ExpansionPoint,
    z: &[Complex64],
    budget: &LinkBudget,
) -> RealQuadForm {
    debug_assert_eq!(z.len(), layout.m_t);
    let dim = layout.dim();
    let b2 = point.chi.norm_sqr();
    let c2 = b2 / (1.0 + b2);
    let sg2 = budget.gamma2_bar.sqrt();

    let mut parts = Vec::new();
    if c2 > 0.0 {
        parts.push(
            embed_complex_quadratic(z, Complex64::new(0.0, 0.0), -c2 * budget.gamma2_bar)
                .lifted(dim, layout.st_offset()),
        );
    }
    let cross_coef = 2.0 * sg2 * point.chi.conj();
    let cross: Vec<Complex64> = z.iter().map(|zm| cross_coef * zm).collect();
    let mut lin = DVector::zeros(dim);
    lin.rows_mut(layout.st_offset(), 2 * layout.m_t)
        .copy_from(&embed_linear_re(&cross));
    let constant = (1.0 + b2).ln() - 2.0 * b2 + c2 * b2;
    parts.push(RealQuadForm::linear(dim, lin, constant).expect("layout dimension"));
    sum_rank_forms(dim, parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rate::rate_pair;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cvec<R: Rng>(rng: &mut R, m: usize, scale: f64) -> Vec<Complex64> {
        (0..m)
            .map(|_| {
                Complex64::from_polar(scale * rng.gen_range(0.0..1.0), rng.gen_range(0.0..std::f64::consts::TAU))
            })
            .collect()
    }

    fn random_profile<R: Rng>(rng: &mut R, m: usize) -> StarProfile {
        let mut sr = Vec::with_capacity(m);
        let mut st = Vec::with_capacity(m);
        for _ in 0..m {
            let power: f64 = rng.gen_range(0.0..1.0);
            let split: f64 = rng.gen_range(0.0..1.0);
            sr.push(Complex64::from_polar(
                (power * split).sqrt(),
                rng.gen_range(0.0..std::f64::consts::TAU),
            ));
            st.push(Complex64::from_polar(
                (power * (1.0 - split)).sqrt(),
                rng.gen_range(0.0..std::f64::consts::TAU),
            ));
        }
        StarProfile::new(sr, st).expect("powers sum below one")
    }

    fn random_setup<R: Rng>(
        rng: &mut R,
        m: usize,
    ) -> (CompositeChannels, Complex64, LinkBudget) {
        let ch = CompositeChannels {
            h: random_cvec(rng, m, 1.5),
            q: random_cvec(rng, m, 1.5),
            z: random_cvec(rng, m, 1.5),
        };
        let f = Complex64::from_polar(rng.gen_range(0.0..1.5), rng.gen_range(0.0..std::f64::consts::TAU));
        let budget = LinkBudget::new(
            rng.gen_range(0.01..50.0),
            rng.gen_range(0.01..50.0),
            rng.gen_range(0.01..50.0),
        )
        .unwrap();
        (ch, f, budget)
    }

    #[test]
    fn bounds_are_tangent_at_the_expansion_profile() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x7a46);
        for _ in 0..300 {
            let m = rng.gen_range(1..7);
            let (ch, f, budget) = random_setup(&mut rng, m);
            let profile = random_profile(&mut rng, m);
            let point = expansion_point(&profile, &ch, f, &budget);
            let rates = rate_pair(&profile, &ch, f, &budget);
            let lb1 = downlink_rate_bound(&profile, &point, &ch, f, &budget);
            let lb2 = uplink_rate_bound(&profile, &point, &ch, &budget);
            assert!(
                (lb1 - rates.0).abs() <= 1e-9 * rates.0.abs().max(1.0),
                "downlink bound {lb1} vs rate {}",
                rates.0
            );
            assert!(
                (lb2 - rates.1).abs() <= 1e-9 * rates.1.abs().max(1.0),
                "uplink bound {lb2} vs rate {}",
                rates.1
            );
        }
    }

    #[test]
    fn bounds_never_exceed_the_true_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x10b4);
        for _ in 0..2_000 {
            let m = rng.gen_range(1..6);
            let (ch, f, budget) = random_setup(&mut rng, m);
            let anchor = random_profile(&mut rng, m);
            let probe = random_profile(&mut rng, m);
            let point = expansion_point(&anchor, &ch, f, &budget);
            let rates = rate_pair(&probe, &ch, f, &budget);
            let lb1 = downlink_rate_bound(&probe, &point, &ch, f, &budget);
            let lb2 = uplink_rate_bound(&probe, &point, &ch, &budget);
            assert!(lb1 <= rates.0 + 1e-9 * rates.0.abs().max(1.0), "lb1 {lb1} > {}", rates.0);
            assert!(lb2 <= rates.1 + 1e-9 * rates.1.abs().max(1.0), "lb2 {lb2} > {}", rates.1);
        }
    }

    #[test]
    fn forms_agree_with_scalar_evaluators() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xf00d);
        for _ in 0..200 {
            let m = rng.gen_range(1..6);
            let (ch, f, budget) = random_setup(&mut rng, m);
            let anchor = random_profile(&mut rng, m);
            let probe = random_profile(&mut rng, m);
            let point = expansion_point(&anchor, &ch, f, &budget);
            let layout = VarLayout::es(m);
            let x = embed_pair(&layout, probe.s_r(), probe.s_t());

            let f1 = downlink_bound_form(&layout, &point, &ch.h, &ch.q, f, &budget);
            let f2 = uplink_bound_form(&layout, &point, &ch.z, &budget);
            let d1 = downlink_rate_bound(&probe, &point, &ch, f, &budget);
            let d2 = uplink_rate_bound(&probe, &point, &ch, &budget);
            assert!((f1.eval(&x) / LN_2 - d1).abs() <= 1e-10 * d1.abs().max(1.0));
            assert!((f2.eval(&x) / LN_2 - d2).abs() <= 1e-10 * d2.abs().max(1.0));
        }
    }

    #[test]
    fn forms_support_uneven_partition_layouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xbeef);
        let (m_r, m_t) = (3, 2);
        let h = random_cvec(&mut rng, m_r, 1.0);
        let q = random_cvec(&mut rng, m_t, 1.0);
        let z = random_cvec(&mut rng, m_t, 1.0);
        let f = Complex64::new(0.4, -0.2);
        let budget = LinkBudget::new(3.0, 1.5, 2.0).unwrap();
        let sr = random_cvec(&mut rng, m_r, 0.7);
        let st = random_cvec(&mut rng, m_t, 0.7);
        let point = expansion_point_from_parts(&sr, &st, &h, &q, &z, f, &budget);
        let layout = VarLayout::partitioned(m_r, m_t);
        let x = embed_pair(&layout, &sr, &st);

        // Tangency holds in the reduced space too.
        let rates = rates_from_parts(&sr, &st, &h, &q, &z, f, &budget);
        let f1 = downlink_bound_form(&layout, &point, &h, &q, f, &budget);
        let f2 = uplink_bound_form(&layout, &point, &z, &budget);
        assert!((f1.eval(&x) / LN_2 - rates.0).abs() <= 1e-9);
        assert!((f2.eval(&x) / LN_2 - rates.1).abs() <= 1e-9);

        let (sr_back, st_back) = extract_pair(&layout, &x);
        assert_eq!(sr, sr_back);
        assert_eq!(st, st_back);
    }

    #[test]
    fn signal_coupled_variant_misses_tangency() {
        // With leakage and uplink signal at different levels the variant
        // bound departs from the true rate at its own expansion profile,
        // which disqualifies it from driving the ascent.
        let mut rng = ChaCha8Rng::seed_from_u64(0xd1ff);
        let m = 3;
        let (ch, f, budget) = random_setup(&mut rng, m);
        let profile = random_profile(&mut rng, m);
        let point = expansion_point(&profile, &ch, f, &budget);
        let rate = rate_pair(&profile, &ch, f, &budget).0;
        let variant = downlink_rate_bound_signal_coupled(&profile, &point, &ch, f, &budget);
        assert!(
            (variant - rate).abs() > 1e-6,
            "variant unexpectedly tangent: {variant} vs {rate}"
        );
    }

    #[test]
    fn rates_from_parts_matches_profile_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xaaaa);
        for _ in 0..100 {
            let m = rng.gen_range(1..5);
            let (ch, f, budget) = random_setup(&mut rng, m);
            let profile = random_profile(&mut rng, m);
            let direct = rate_pair(&profile, &ch, f, &budget);
            let parts = rates_from_parts(
                profile.s_r(),
                profile.s_t(),
                &ch.h,
                &ch.q,
                &ch.z,
                f,
                &budget,
            );
            assert_eq!(direct, parts);
        }
    }
}
