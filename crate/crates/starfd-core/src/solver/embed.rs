//! Real embedding of complex magnitude-squared terms.
//!
//! A complex profile vector `x` of length `M` is stacked as the real vector
//! `[Re x; Im x]` of length `2M`. Under the unconjugated product used by the
//! surface model,
//!
//! `|d + a^T x|^2 = x_R^T (u u^T + w w^T) x_R + b^T x_R + |d|^2`
//!
//! with `u = [Re a; -Im a]`, `w = [Im a; Re a]`, and
//! `b = 2 (Re d) u + 2 (Im d) w`, where `x_R = [Re x; Im x]`. The rank-two
//! structure is preserved so downstream Newton systems stay low-rank.

use super::RealQuadForm;
use nalgebra::DVector;
use num_complex::Complex64;

/// Build `scale * |offset + a^T x|^2` over the stacked coordinates
/// `[Re x; Im x]` as a rank-two quadratic form.
pub fn embed_complex_quadratic(a: &[Complex64], offset: Complex64, scale: f64) -> RealQuadForm {
    let m = a.len();
    let dim = 2 * m;
    let mut u = DVector::zeros(dim);
    let mut w = DVector::zeros(dim);
    for (i, c) in a.iter().enumerate() {
        u[i] = c.re;
        u[m + i] = -c.im;
        w[i] = c.im;
        w[m + i] = c.re;
    }
    let lin = 2.0 * scale * (offset.re * &u + offset.im * &w);
    let constant = scale * offset.norm_sqr();
    RealQuadForm::from_rank_terms(dim, vec![(scale, u), (scale, w)], lin, constant)
        .expect("embedding dimensions are consistent by construction")
}

/// Gradient vector of `Re[c^T x]` over `[Re x; Im x]`:
/// coefficient `Re c_m` on the real part and `-Im c_m` on the imaginary part.
pub fn embed_linear_re(c: &[Complex64]) -> DVector<f64> {
    let m = c.len();
    let mut out = DVector::zeros(2 * m);
    for (i, v) in c.iter().enumerate() {
        out[i] = v.re;
        out[m + i] = -v.im;
    }
    out
}

/// Stack a complex vector as `[Re x; Im x]`.
pub fn stack_complex(x: &[Complex64]) -> DVector<f64> {
    let m = x.len();
    let mut out = DVector::zeros(2 * m);
    for (i, v) in x.iter().enumerate() {
        out[i] = v.re;
        out[m + i] = v.im;
    }
    out
}

/// Recover a complex vector from its `[Re x; Im x]` stacking.
pub fn unstack_complex(x: &[f64]) -> Vec<Complex64> {
    assert!(x.len() % 2 == 0, "stacked vector must have even length");
    let m = x.len() / 2;
    (0..m).map(|i| Complex64::new(x[i], x[m + i])).collect()
}
