//! Fading channel generation for a surface-assisted full-duplex link.
//!
//! The geometry has an access point (AP) serving a downlink user over a
//! direct path and a reconfigurable surface, while an uplink user reaches
//! the AP only through the surface. Every surface-related link is modeled
//! element-wise as independent Nakagami-m fading with uniform phase, scaled
//! by a distance power law; the residual AP self-interference loop is
//! circularly-symmetric complex Gaussian.
//!
//! Coefficients follow the convention `coeff = envelope * exp(-j*psi)` with
//! `psi ~ U[0, 2*pi)` and `E[envelope^2]` equal to the link's large-scale
//! gain. Sampling order is fixed (documented on [`sample_realization`]) so a
//! seeded RNG stream reproduces a realization bit for bit.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use std::f64::consts::TAU;
use thiserror::Error;

/// Errors raised while validating geometry/fading inputs or sampling.
#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("path-loss exponent must be non-negative, got {0}")]
    NegativeExponent(f64),
    #[error("Nakagami shape must be at least 0.5, got {0}")]
    InvalidShape(f64),
    #[error("mean-square power must be positive, got {0}")]
    NonPositivePower(f64),
    #[error("self-interference power must be non-negative, got {0}")]
    NegativeSiPower(f64),
    #[error("element count must be at least 1")]
    EmptySurface,
}

/// Node placement and large-scale propagation parameters.
///
/// `gain_offset_db` is a link-budget normalization (antenna/amplifier gains
/// folded into every link) applied on top of the distance power law; `0.0`
/// reproduces the raw path-loss model.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioGeometry {
    pub d_ap_ris: f64,
    pub d_ap_u1: f64,
    pub d_ris_u1: f64,
    pub d_ris_u2: f64,
    pub zeta0_db: f64,
    pub nu: f64,
    pub gain_offset_db: f64,
}

impl ScenarioGeometry {
    pub fn new(
        d_ap_ris: f64,
        d_ap_u1: f64,
        d_ris_u1: f64,
        d_ris_u2: f64,
        zeta0_db: f64,
        nu: f64,
    ) -> Result<Self, ChannelError> {
        for &d in &[d_ap_ris, d_ap_u1, d_ris_u1, d_ris_u2] {
            if !(d > 0.0) {
                return Err(ChannelError::NonPositiveDistance(d));
            }
        }
        if !(nu >= 0.0) {
            return Err(ChannelError::NegativeExponent(nu));
        }
        Ok(Self {
            d_ap_ris,
            d_ap_u1,
            d_ris_u1,
            d_ris_u2,
            zeta0_db,
            nu,
            gain_offset_db: 0.0,
        })
    }

    /// Same geometry with a link-budget offset applied to every link (dB).
    pub fn with_gain_offset_db(mut self, offset_db: f64) -> Self {
        self.gain_offset_db = offset_db;
        self
    }

    fn link_gain(&self, d: f64) -> Result<f64, ChannelError> {
        Ok(path_loss_linear(d, self.zeta0_db, self.nu)? * 10f64.powf(self.gain_offset_db / 10.0))
    }
}

/// Nakagami-m shape parameters per link.
///
/// `m = 1` collapses to Rayleigh; larger values de-emphasize deep fades.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FadingParams {
    /// Direct AP -> downlink-user path.
    pub m_f: f64,
    /// AP <-> surface links (both directions).
    pub m_g: f64,
    /// Uplink-user -> surface link.
    pub m_u: f64,
    /// Surface -> downlink-user link.
    pub m_v: f64,
}

impl FadingParams {
    pub fn new(m_f: f64, m_g: f64, m_u: f64, m_v: f64) -> Result<Self, ChannelError> {
        for &m in &[m_f, m_g, m_u, m_v] {
            if !(m >= 0.5) {
                return Err(ChannelError::InvalidShape(m));
            }
        }
        Ok(Self { m_f, m_g, m_u, m_v })
    }
}

/// One draw of every small-scale coefficient in the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// AP -> surface, per element.
    pub g_d: Vec<Complex64>,
    /// Surface -> AP, per element.
    pub g_u: Vec<Complex64>,
    /// Uplink user -> surface, per element.
    pub u: Vec<Complex64>,
    /// Surface -> downlink user, per element.
    pub v: Vec<Complex64>,
    /// Direct AP -> downlink user coefficient.
    pub f: Complex64,
    /// Residual self-interference loop at the AP.
    pub g_ap: Complex64,
}

impl ChannelRealization {
    pub fn num_elements(&self) -> usize {
        self.g_d.len()
    }
}

/// Element-wise cascaded channels used by the rate expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeChannels {
    /// Downlink cascade `h_m = v_m * g_d_m` (AP -> surface -> downlink user).
    pub h: Vec<Complex64>,
    /// Inter-user cascade `q_m = v_m * u_m` (uplink user -> surface -> downlink user).
    pub q: Vec<Complex64>,
    /// Uplink cascade `z_m = g_u_m * u_m` (uplink user -> surface -> AP).
    pub z: Vec<Complex64>,
}

impl CompositeChannels {
    pub fn num_elements(&self) -> usize {
        self.h.len()
    }
}

/// Linear large-scale gain of a link at distance `d_m` meters:
/// `10^(-(zeta0_db + 10 * nu * log10(d)) / 10)`.
///
/// `zeta0_db` is the loss at 1 m and `nu` the decay exponent, so the gain is
/// dimensionless and strictly positive.
pub fn path_loss_linear(d_m: f64, zeta0_db: f64, nu: f64) -> Result<f64, ChannelError> {
    if !(d_m > 0.0) {
        return Err(ChannelError::NonPositiveDistance(d_m));
    }
    if !(nu >= 0.0) {
        return Err(ChannelError::NegativeExponent(nu));
    }
    let loss_db = zeta0_db + 10.0 * nu * d_m.log10();
    Ok(10f64.powf(-loss_db / 10.0))
}

/// Draw a Nakagami-m envelope with `E[X^2] = mean_square`.
///
/// Implemented as the square root of a Gamma(shape, mean_square / shape)
/// variate, which has the required second moment for any shape >= 0.5.
pub fn sample_nakagami_envelope<R: Rng + ?Sized>(
    shape: f64,
    mean_square: f64,
    rng: &mut R,
) -> Result<f64, ChannelError> {
    if !(shape >= 0.5) {
        return Err(ChannelError::InvalidShape(shape));
    }
    if !(mean_square > 0.0) {
        return Err(ChannelError::NonPositivePower(mean_square));
    }
    let gamma = Gamma::new(shape, mean_square / shape).expect("validated parameters");
    Ok(gamma.sample(rng).sqrt())
}

fn sample_link<R: Rng + ?Sized>(shape: f64, gain: f64, rng: &mut R) -> Complex64 {
    let env = {
        let gamma = Gamma::new(shape, gain / shape).expect("validated parameters");
        gamma.sample(rng).sqrt()
    };
    let psi: f64 = rng.gen_range(0.0..TAU);
    // envelope * e^{-j psi}
    Complex64::from_polar(env, -psi)
}

/// Sample a full channel realization for `m_elems` surface elements.
///
/// `si_power` is the variance of the complex Gaussian residual
/// self-interference loop; zero yields `g_ap = 0` exactly.
///
/// Draw order is part of the reproducibility contract: `g_d[0..M]`,
/// `g_u[0..M]`, `u[0..M]`, `v[0..M]` (envelope then phase for each element),
/// then `f`, then the two Gaussian components of `g_ap`.
pub fn sample_realization<R: Rng + ?Sized>(
    geom: &ScenarioGeometry,
    fading: &FadingParams,
    m_elems: usize,
    si_power: f64,
    rng: &mut R,
) -> Result<ChannelRealization, ChannelError> {
    if m_elems == 0 {
        return Err(ChannelError::EmptySurface);
    }
    if !(si_power >= 0.0) {
        return Err(ChannelError::NegativeSiPower(si_power));
    }
    let zeta_g = geom.link_gain(geom.d_ap_ris)?;
    let zeta_f = geom.link_gain(geom.d_ap_u1)?;
    let zeta_v = geom.link_gain(geom.d_ris_u1)?;
    let zeta_u = geom.link_gain(geom.d_ris_u2)?;

    let draw_vec = |shape: f64, gain: f64, rng: &mut R| -> Vec<Complex64> {
        (0..m_elems).map(|_| sample_link(shape, gain, rng)).collect()
    };
    let g_d = draw_vec(fading.m_g, zeta_g, rng);
    let g_u = draw_vec(fading.m_g, zeta_g, rng);
    let u = draw_vec(fading.m_u, zeta_u, rng);
    let v = draw_vec(fading.m_v, zeta_v, rng);
    let f = sample_link(fading.m_f, zeta_f, rng);
    let g_ap = if si_power > 0.0 {
        let comp = Normal::new(0.0, (si_power / 2.0).sqrt()).expect("validated std");
        Complex64::new(comp.sample(rng), comp.sample(rng))
    } else {
        Complex64::new(0.0, 0.0)
    };

    Ok(ChannelRealization { g_d, g_u, u, v, f, g_ap })
}

/// Form the element-wise cascaded channels from one realization.
pub fn compose(re: &ChannelRealization) -> CompositeChannels {
    let m = re.num_elements();
    let mut h = Vec::with_capacity(m);
    let mut q = Vec::with_capacity(m);
    let mut z = Vec::with_capacity(m);
    for i in 0..m {
        h.push(re.v[i] * re.g_d[i]);
        q.push(re.v[i] * re.u[i]);
        z.push(re.g_u[i] * re.u[i]);
    }
    CompositeChannels { h, q, z }
}
