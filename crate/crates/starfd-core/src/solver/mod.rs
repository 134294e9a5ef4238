//! A small self-contained convex solver for quadratically constrained
//! programs with second-order-cone rows, used as the subproblem engine of
//! the successive convex approximation loops.
//!
//! Problems are stated over real vectors: maximize a concave quadratic
//! subject to convex quadratic inequalities `g_i(x) <= 0`, coordinate cones
//! `||x[S]|| <= x[b]`, and box bounds. Complex profile variables enter
//! through the `[Re x; Im x]` stacking provided by [`embed_complex_quadratic`].
//!
//! The solve path is a log-barrier interior-point method with damped Newton
//! centering (see [`barrier`]). Quadratic terms are stored in structured
//! form (diagonal or low-rank) so the Newton systems of large surface
//! problems factor through a block-diagonal-plus-low-rank decomposition
//! instead of a dense matrix.

mod barrier;
mod embed;

pub use barrier::{phase1_feasible_point, solve, Phase1Result};
pub use embed::{embed_complex_quadratic, embed_linear_re, stack_complex, unstack_complex};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Relative tolerance for the symmetry and curvature checks performed when
/// programs are assembled.
pub const CURVATURE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("quadratic matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("inequality {index} is not convex (min curvature {curvature:e})")]
    NotConvex { index: usize, curvature: f64 },
    #[error("objective is not concave (max curvature {0:e})")]
    NotConcave(f64),
    #[error("box bounds are inverted at coordinate {0}")]
    InvertedBox(usize),
    #[error("cone {index} references coordinate {coord} out of range")]
    ConeOutOfRange { index: usize, coord: usize },
    #[error("a strictly feasible warm start is required when cones are present")]
    NeedFeasibleStart,
    #[error("line search stalled before reaching a feasible point")]
    LineSearchStall,
    #[error("Newton system factorization failed")]
    Factorization,
}

/// Storage for the quadratic part `A` of `x^T A x + b^T x + c`.
///
/// `Diag` holds `sum_i d_i x_i^2` as sparse `(i, d_i)` pairs; `Rank` holds
/// `sum_k c_k (u_k^T x)^2`, the natural output of the complex embedding.
#[derive(Debug, Clone, PartialEq)]
pub enum QuadTerms {
    Zero,
    Diag(Vec<(usize, f64)>),
    Rank(Vec<(f64, DVector<f64>)>),
    Dense(DMatrix<f64>),
}

/// Real quadratic `x^T A x + b^T x + c` with structured storage of `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealQuadForm {
    dim: usize,
    quad: QuadTerms,
    lin: DVector<f64>,
    constant: f64,
}

impl RealQuadForm {
    pub fn zero(dim: usize) -> Self {
        Self { dim, quad: QuadTerms::Zero, lin: DVector::zeros(dim), constant: 0.0 }
    }

    pub fn linear(dim: usize, lin: DVector<f64>, constant: f64) -> Result<Self, SolverError> {
        if lin.len() != dim {
            return Err(SolverError::DimensionMismatch { expected: dim, got: lin.len() });
        }
        Ok(Self { dim, quad: QuadTerms::Zero, lin, constant })
    }

    /// Sparse-diagonal quadratic `sum (i, d) d * x_i^2 + b^T x + c`.
    pub fn diagonal(
        dim: usize,
        diag: Vec<(usize, f64)>,
        lin: DVector<f64>,
        constant: f64,
    ) -> Result<Self, SolverError> {
        if lin.len() != dim {
            return Err(SolverError::DimensionMismatch { expected: dim, got: lin.len() });
        }
        for &(i, _) in &diag {
            if i >= dim {
                return Err(SolverError::DimensionMismatch { expected: dim, got: i });
            }
        }
        Ok(Self { dim, quad: QuadTerms::Diag(diag), lin, constant })
    }

    /// Low-rank quadratic `sum_k c_k (u_k^T x)^2 + b^T x + c`.
    pub fn from_rank_terms(
        dim: usize,
        terms: Vec<(f64, DVector<f64>)>,
        lin: DVector<f64>,
        constant: f64,
    ) -> Result<Self, SolverError> {
        if lin.len() != dim {
            return Err(SolverError::DimensionMismatch { expected: dim, got: lin.len() });
        }
        for (_, u) in &terms {
            if u.len() != dim {
                return Err(SolverError::DimensionMismatch { expected: dim, got: u.len() });
            }
        }
        Ok(Self { dim, quad: QuadTerms::Rank(terms), lin, constant })
    }

    /// Dense quadratic; `a` must be symmetric to 1e-12 (relative).
    pub fn from_dense(
        a: DMatrix<f64>,
        lin: DVector<f64>,
        constant: f64,
    ) -> Result<Self, SolverError> {
        let dim = lin.len();
        if a.nrows() != dim || a.ncols() != dim {
            return Err(SolverError::DimensionMismatch { expected: dim, got: a.nrows() });
        }
        let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
        let mut worst = 0.0f64;
        for i in 0..dim {
            for j in (i + 1)..dim {
                worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
            }
        }
        if worst > 1e-12 * scale {
            return Err(SolverError::NotSymmetric(worst));
        }
        Ok(Self { dim, quad: QuadTerms::Dense(a), lin, constant })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn quad(&self) -> &QuadTerms {
        &self.quad
    }

    pub fn lin(&self) -> &DVector<f64> {
        &self.lin
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        let quad_val = match &self.quad {
            QuadTerms::Zero => 0.0,
            QuadTerms::Diag(d) => d.iter().map(|&(i, v)| v * x[i] * x[i]).sum(),
            QuadTerms::Rank(terms) => terms
                .iter()
                .map(|(c, u)| {
                    let p = u.dot(x);
                    c * p * p
                })
                .sum(),
            QuadTerms::Dense(a) => (a * x).dot(x),
        };
        quad_val + self.lin.dot(x) + self.constant
    }

    /// Accumulate `scale * (2 A x + b)` into `out`.
    pub fn add_grad_scaled(&self, x: &DVector<f64>, scale: f64, out: &mut DVector<f64>) {
        match &self.quad {
            QuadTerms::Zero => {}
            QuadTerms::Diag(d) => {
                for &(i, v) in d {
                    out[i] += scale * 2.0 * v * x[i];
                }
            }
            QuadTerms::Rank(terms) => {
                for (c, u) in terms {
                    let p = u.dot(x);
                    out.axpy(scale * 2.0 * c * p, u, 1.0);
                }
            }
            QuadTerms::Dense(a) => {
                out.gemv(2.0 * scale, a, x, 1.0);
            }
        }
        out.axpy(scale, &self.lin, 1.0);
    }

    /// Coordinates touched by the quadratic or linear part, or `None` when
    /// the form is effectively dense.
    pub fn support(&self) -> Option<Vec<usize>> {
        let mut coords: Vec<usize> = match &self.quad {
            QuadTerms::Zero => Vec::new(),
            QuadTerms::Diag(d) => d.iter().map(|&(i, _)| i).collect(),
            QuadTerms::Rank(_) | QuadTerms::Dense(_) => return None,
        };
        for (i, v) in self.lin.iter().enumerate() {
            if *v != 0.0 {
                coords.push(i);
            }
        }
        coords.sort_unstable();
        coords.dedup();
        Some(coords)
    }

    /// Multiply every coefficient (quadratic, linear, constant) by `s`.
    pub fn scaled(mut self, s: f64) -> Self {
        match &mut self.quad {
            QuadTerms::Zero => {}
            QuadTerms::Diag(d) => d.iter_mut().for_each(|e| e.1 *= s),
            QuadTerms::Rank(terms) => terms.iter_mut().for_each(|t| t.0 *= s),
            QuadTerms::Dense(a) => *a *= s,
        }
        self.lin *= s;
        self.constant *= s;
        self
    }

    pub fn negated(self) -> Self {
        self.scaled(-1.0)
    }

    pub fn with_linear_added(mut self, coord: usize, v: f64) -> Self {
        self.lin[coord] += v;
        self
    }

    pub fn with_constant_added(mut self, v: f64) -> Self {
        self.constant += v;
        self
    }

    /// Smallest admissible curvature direction sign check: `true` when the
    /// quadratic part is positive semidefinite up to `tol` (relative).
    ///
    /// Structured storages are checked term-by-term (each diagonal entry or
    /// rank coefficient must be non-negative, which is exact for the forms
    /// produced by the embedding); dense storage gets a full symmetric
    /// eigenvalue pass.
    pub fn quad_is_psd(&self, tol: f64) -> bool {
        match &self.quad {
            QuadTerms::Zero => true,
            QuadTerms::Diag(d) => {
                let scale = d.iter().fold(1.0f64, |m, &(_, v)| m.max(v.abs()));
                d.iter().all(|&(_, v)| v >= -tol * scale)
            }
            QuadTerms::Rank(terms) => {
                let scale = terms.iter().fold(1.0f64, |m, (c, _)| m.max(c.abs()));
                terms.iter().all(|(c, _)| *c >= -tol * scale)
            }
            QuadTerms::Dense(a) => {
                let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                let eig = a.clone().symmetric_eigen();
                eig.eigenvalues.iter().all(|&l| l >= -tol * scale)
            }
        }
    }

    pub fn quad_is_nsd(&self, tol: f64) -> bool {
        self.clone().negated().quad_is_psd(tol)
    }

    /// Decompose into raw storage `(quad, lin, constant)`.
    pub fn into_parts(self) -> (QuadTerms, DVector<f64>, f64) {
        (self.quad, self.lin, self.constant)
    }

    /// Re-index the form into a larger space, shifting every coordinate by
    /// `offset`. Panics if the result would not fit.
    pub fn lifted(self, new_dim: usize, offset: usize) -> Self {
        assert!(self.dim + offset <= new_dim, "lift target too small");
        let mut lin = DVector::zeros(new_dim);
        lin.rows_mut(offset, self.dim).copy_from(&self.lin);
        let quad = match self.quad {
            QuadTerms::Zero => QuadTerms::Zero,
            QuadTerms::Diag(d) => {
                QuadTerms::Diag(d.into_iter().map(|(i, v)| (i + offset, v)).collect())
            }
            QuadTerms::Rank(terms) => QuadTerms::Rank(
                terms
                    .into_iter()
                    .map(|(c, u)| {
                        let mut big = DVector::zeros(new_dim);
                        big.rows_mut(offset, u.len()).copy_from(&u);
                        (c, big)
                    })
                    .collect(),
            ),
            QuadTerms::Dense(a) => {
                let mut big = DMatrix::zeros(new_dim, new_dim);
                big.view_mut((offset, offset), (a.nrows(), a.ncols())).copy_from(&a);
                QuadTerms::Dense(big)
            }
        };
        Self { dim: new_dim, quad, lin, constant: self.constant }
    }
}

/// Cone row `||x[norm_coords]||_2 <= x[bound_coord]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocCone {
    pub norm_coords: Vec<usize>,
    pub bound_coord: usize,
}

impl SocCone {
    /// Cone residual `x_b^2 - sum x_i^2`; strict interior requires this to
    /// be positive together with `x_b > 0`.
    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        let b = x[self.bound_coord];
        b * b - self.norm_coords.iter().map(|&i| x[i] * x[i]).sum::<f64>()
    }

    pub fn strictly_feasible(&self, x: &DVector<f64>) -> bool {
        x[self.bound_coord] > 0.0 && self.residual(x) > 0.0
    }
}

/// Per-coordinate bounds; use infinities for absent sides.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxBounds {
    pub fn free(dim: usize) -> Self {
        Self {
            lower: DVector::from_element(dim, f64::NEG_INFINITY),
            upper: DVector::from_element(dim, f64::INFINITY),
        }
    }

    pub fn strictly_contains(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(&v, (&l, &u))| v > l && v < u)
    }

    pub fn finite_count(&self) -> usize {
        self.lower.iter().filter(|v| v.is_finite()).count()
            + self.upper.iter().filter(|v| v.is_finite()).count()
    }
}

/// Maximize `objective` subject to `ineq[i] <= 0`, cone rows, and bounds.
#[derive(Debug, Clone)]
pub struct ConvexProgram {
    pub dim: usize,
    pub objective: RealQuadForm,
    pub ineq: Vec<RealQuadForm>,
    pub soc: Vec<SocCone>,
    pub bounds: Option<BoxBounds>,
}

impl ConvexProgram {
    /// Check dimensions and curvature signs (objective concave, constraints
    /// convex) up to [`CURVATURE_TOL`].
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.objective.dim() != self.dim {
            return Err(SolverError::DimensionMismatch {
                expected: self.dim,
                got: self.objective.dim(),
            });
        }
        if !self.objective.quad_is_nsd(CURVATURE_TOL) {
            return Err(SolverError::NotConcave(CURVATURE_TOL));
        }
        for (i, g) in self.ineq.iter().enumerate() {
            if g.dim() != self.dim {
                return Err(SolverError::DimensionMismatch { expected: self.dim, got: g.dim() });
            }
            if !g.quad_is_psd(CURVATURE_TOL) {
                return Err(SolverError::NotConvex { index: i, curvature: CURVATURE_TOL });
            }
        }
        for (j, cone) in self.soc.iter().enumerate() {
            for &c in cone.norm_coords.iter().chain(std::iter::once(&cone.bound_coord)) {
                if c >= self.dim {
                    return Err(SolverError::ConeOutOfRange { index: j, coord: c });
                }
            }
            if cone.norm_coords.contains(&cone.bound_coord) {
                return Err(SolverError::ConeOutOfRange { index: j, coord: cone.bound_coord });
            }
        }
        if let Some(b) = &self.bounds {
            if b.lower.len() != self.dim || b.upper.len() != self.dim {
                return Err(SolverError::DimensionMismatch {
                    expected: self.dim,
                    got: b.lower.len(),
                });
            }
            for i in 0..self.dim {
                if b.lower[i] > b.upper[i] {
                    return Err(SolverError::InvertedBox(i));
                }
            }
        }
        Ok(())
    }

    /// True when `x` is strictly inside every constraint.
    pub fn strictly_feasible(&self, x: &DVector<f64>) -> bool {
        self.ineq.iter().all(|g| g.eval(x) < 0.0)
            && self.soc.iter().all(|c| c.strictly_feasible(x))
            && self.bounds.as_ref().map_or(true, |b| b.strictly_contains(x))
    }

    /// Barrier complexity parameter: quadratics count 1, cones 2, and each
    /// finite box side 1. Controls the duality-gap bound `m / t`.
    pub fn barrier_parameter(&self) -> f64 {
        (self.ineq.len() + 2 * self.soc.len()) as f64
            + self.bounds.as_ref().map_or(0.0, |b| b.finite_count() as f64)
    }
}

/// Interior-point tuning knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Initial barrier weight; non-positive selects `m / 1.0` automatically
    /// (duality-gap bound of one at the first round).
    pub barrier_t0: f64,
    /// Multiplicative barrier update per round.
    pub barrier_mu: f64,
    /// Target on the duality-gap bound `m / t`.
    pub gap_target: f64,
    /// Newton decrement threshold (`lambda^2 / 2`) per centering.
    pub newton_tol: f64,
    /// Constraint violation allowed in reported solutions.
    pub feasibility_tol: f64,
    /// Acceptable stationarity residual for `Optimal` status.
    pub kkt_tol: f64,
    pub max_newton_steps: usize,
    pub max_barrier_rounds: usize,
    /// Armijo sufficient-decrease fraction.
    pub armijo_alpha: f64,
    /// Backtracking shrink factor.
    pub backtrack_beta: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            barrier_t0: 0.0,
            barrier_mu: 10.0,
            gap_target: 1e-9,
            newton_tol: 1e-9,
            feasibility_tol: 1e-8,
            kkt_tol: 1e-7,
            max_newton_steps: 80,
            max_barrier_rounds: 64,
            armijo_alpha: 0.3,
            backtrack_beta: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolveStatus::Optimal => write!(f, "optimal"),
            SolveStatus::MaxIter => write!(f, "max-iterations"),
            SolveStatus::Infeasible => write!(f, "infeasible"),
        }
    }
}

/// Interior-point result. `x` is the final central-path iterate and is
/// strictly feasible whenever the status is not `Infeasible`.
#[derive(Debug, Clone)]
pub struct Solution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    /// Newton decrement (`lambda^2 / 2`) at the last centering.
    pub kkt_residual: f64,
    /// Barrier bound `m / t` at exit.
    pub duality_gap_bound: f64,
    pub barrier_rounds: usize,
    pub newton_steps: usize,
}
