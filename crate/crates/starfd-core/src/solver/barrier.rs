//! Damped-Newton log-barrier engine with structured Hessian factorization.
//!
//! The centering Hessian of a surface subproblem splits as `H = B + W W^T`:
//! per-element constraints (power balls, cone rows, boxes) produce small
//! independent blocks of `B`, while the handful of rate-bound rows that
//! couple every coordinate contribute low-rank columns `W` (one per
//! embedded rank term plus one gradient column per row). Newton systems are
//! then solved through the Woodbury identity at `O(n r^2)` cost. Small
//! problems and problems without this structure use a dense Cholesky path;
//! the choice is automatic.
//!
//! Line search follows the classical two-phase damped Newton scheme for
//! self-concordant barriers: a backtracked full step with an Armijo test
//! while the Newton decrement is large, and the guaranteed step
//! `1 / (1 + lambda)` as fallback. Near the central path (small decrement)
//! the full step is taken on feasibility alone, which avoids comparing
//! barrier values whose differences sit below double-precision resolution
//! once the barrier weight is large.

use super::{
    BoxBounds, ConvexProgram, QuadTerms, RealQuadForm, Solution, SolveStatus, SolverError,
    SolverSettings,
};
use nalgebra::{DMatrix, DVector};

/// Constraints touching at most this many coordinates are handled inside
/// diagonal blocks; wider ones become low-rank columns.
const MAX_LOCAL_SUPPORT: usize = 12;
/// Largest admissible diagonal block before falling back to dense solves.
const BLOCK_LIMIT: usize = 48;
/// Problems at or below this dimension always use the dense path.
const DENSE_DIM: usize = 48;
const MIN_STEP: f64 = 1e-18;
/// Newton decrement below which the full step is provably safe.
const QUADRATIC_PHASE: f64 = 0.25;

/// Outcome of the feasibility subproblem: the point that maximizes the
/// common constraint slack, and the slack achieved there. A positive slack
/// certifies strict feasibility of the original constraint set; the slack is
/// reported as found on the central path (it is capped from above for
/// unbounded relaxations, which does not affect the feasibility verdict).
#[derive(Debug, Clone)]
pub struct Phase1Result {
    pub point: DVector<f64>,
    pub max_slack: f64,
    pub status: SolveStatus,
}

struct Structure {
    use_dense: bool,
    blocks: Vec<Vec<usize>>,
    /// coordinate -> (block index, position within block)
    coord_pos: Vec<(usize, usize)>,
    /// inequality indices handled inside blocks, with their supports
    local: Vec<(usize, Vec<usize>)>,
    /// inequality indices handled as low-rank columns
    global: Vec<usize>,
}

fn uf_find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn uf_union(parent: &mut [usize], a: usize, b: usize) {
    let ra = uf_find(parent, a);
    let rb = uf_find(parent, b);
    if ra != rb {
        parent[ra] = rb;
    }
}

/// Decide between the structured and dense Newton paths and, for the
/// structured one, partition coordinates into independent blocks.
fn classify(prog: &ConvexProgram) -> Structure {
    let n = prog.dim;
    let mut use_dense = n <= DENSE_DIM;
    if matches!(prog.objective.quad(), QuadTerms::Dense(_)) {
        use_dense = true;
    }

    let mut parent: Vec<usize> = (0..n).collect();
    let mut local = Vec::new();
    let mut global = Vec::new();
    // Coordinates whose block diagonal is guaranteed positive (curvature
    // from a block constraint or a finite box side). Anything uncovered
    // would leave a near-singular diagonal, so such problems go dense.
    let mut covered = vec![false; n];

    for (i, g) in prog.ineq.iter().enumerate() {
        if matches!(g.quad(), QuadTerms::Dense(_)) {
            use_dense = true;
        }
        match g.support() {
            Some(sup) if sup.len() <= MAX_LOCAL_SUPPORT => {
                for pair in sup.windows(2) {
                    uf_union(&mut parent, pair[0], pair[1]);
                }
                if matches!(g.quad(), QuadTerms::Diag(_)) {
                    for &c in &sup {
                        covered[c] = true;
                    }
                }
                local.push((i, sup));
            }
            _ => global.push(i),
        }
    }
    for cone in &prog.soc {
        let mut coords = cone.norm_coords.clone();
        coords.push(cone.bound_coord);
        if coords.len() > MAX_LOCAL_SUPPORT {
            use_dense = true;
        }
        for pair in coords.windows(2) {
            uf_union(&mut parent, pair[0], pair[1]);
        }
        for &c in &coords {
            covered[c] = true;
        }
    }
    if let Some(b) = &prog.bounds {
        for i in 0..n {
            if b.lower[i].is_finite() || b.upper[i].is_finite() {
                covered[i] = true;
            }
        }
    }
    if covered.iter().any(|c| !c) {
        use_dense = true;
    }

    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut coord_pos = vec![(0usize, 0usize); n];
    if !use_dense {
        let mut root_to_block: std::collections::HashMap<usize, usize> =
            std::collections::HashMap::new();
        for i in 0..n {
            let r = uf_find(&mut parent, i);
            let b = *root_to_block.entry(r).or_insert_with(|| {
                blocks.push(Vec::new());
                blocks.len() - 1
            });
            coord_pos[i] = (b, blocks[b].len());
            blocks[b].push(i);
        }
        if blocks.iter().any(|b| b.len() > BLOCK_LIMIT) {
            use_dense = true;
        }
    }

    Structure { use_dense, blocks, coord_pos, local, global }
}

struct Engine<'a> {
    prog: &'a ConvexProgram,
    settings: &'a SolverSettings,
    st: Structure,
}

impl<'a> Engine<'a> {
    fn new(prog: &'a ConvexProgram, settings: &'a SolverSettings, force_dense: bool) -> Self {
        let mut st = classify(prog);
        if force_dense {
            st.use_dense = true;
        }
        Engine { prog, settings, st }
    }

    /// Barrier potential `t * (-objective) - sum ln(-g) - ...`, or `None`
    /// outside the strictly feasible domain.
    fn eval_phi(&self, x: &DVector<f64>, t: f64) -> Option<f64> {
        let mut val = -t * self.prog.objective.eval(x);
        for g in &self.prog.ineq {
            let v = g.eval(x);
            if v >= 0.0 {
                return None;
            }
            val -= (-v).ln();
        }
        for cone in &self.prog.soc {
            if x[cone.bound_coord] <= 0.0 {
                return None;
            }
            let c = cone.residual(x);
            if c <= 0.0 {
                return None;
            }
            val -= c.ln();
        }
        if let Some(b) = &self.prog.bounds {
            for i in 0..self.prog.dim {
                if b.lower[i].is_finite() {
                    let d = x[i] - b.lower[i];
                    if d <= 0.0 {
                        return None;
                    }
                    val -= d.ln();
                }
                if b.upper[i].is_finite() {
                    let d = b.upper[i] - x[i];
                    if d <= 0.0 {
                        return None;
                    }
                    val -= d.ln();
                }
            }
        }
        Some(val)
    }

    /// Gradient of the barrier potential at a strictly feasible `x`.
    fn eval_grad(&self, x: &DVector<f64>, t: f64, gvals: &[f64]) -> DVector<f64> {
        let n = self.prog.dim;
        let mut grad = DVector::zeros(n);
        self.prog.objective.add_grad_scaled(x, -t, &mut grad);
        for (i, g) in self.prog.ineq.iter().enumerate() {
            g.add_grad_scaled(x, -1.0 / gvals[i], &mut grad);
        }
        for cone in &self.prog.soc {
            let a = 1.0 / cone.residual(x);
            for &i in &cone.norm_coords {
                grad[i] += 2.0 * a * x[i];
            }
            grad[cone.bound_coord] -= 2.0 * a * x[cone.bound_coord];
        }
        if let Some(b) = &self.prog.bounds {
            for i in 0..n {
                if b.lower[i].is_finite() {
                    grad[i] -= 1.0 / (x[i] - b.lower[i]);
                }
                if b.upper[i].is_finite() {
                    grad[i] += 1.0 / (b.upper[i] - x[i]);
                }
            }
        }
        grad
    }

    /// Newton direction and squared decrement via the dense Cholesky path.
    fn direction_dense(
        &self,
        x: &DVector<f64>,
        t: f64,
        gvals: &[f64],
    ) -> Result<(DVector<f64>, f64), SolverError> {
        let n = self.prog.dim;
        let mut h = DMatrix::zeros(n, n);
        add_quad_matrix(&mut h, self.prog.objective.quad(), -2.0 * t);
        let mut gi = DVector::zeros(n);
        for (i, g) in self.prog.ineq.iter().enumerate() {
            let a = -1.0 / gvals[i];
            add_quad_matrix(&mut h, g.quad(), 2.0 * a);
            gi.fill(0.0);
            g.add_grad_scaled(x, 1.0, &mut gi);
            h.ger(a * a, &gi, &gi, 1.0);
        }
        for cone in &self.prog.soc {
            let a = 1.0 / cone.residual(x);
            let mut gc = DVector::zeros(n);
            for &i in &cone.norm_coords {
                gc[i] = -2.0 * x[i];
                h[(i, i)] += 2.0 * a;
            }
            gc[cone.bound_coord] = 2.0 * x[cone.bound_coord];
            h[(cone.bound_coord, cone.bound_coord)] -= 2.0 * a;
            h.ger(a * a, &gc, &gc, 1.0);
        }
        if let Some(b) = &self.prog.bounds {
            for i in 0..n {
                if b.lower[i].is_finite() {
                    let d = x[i] - b.lower[i];
                    h[(i, i)] += 1.0 / (d * d);
                }
                if b.upper[i].is_finite() {
                    let d = b.upper[i] - x[i];
                    h[(i, i)] += 1.0 / (d * d);
                }
            }
        }

        let grad = self.eval_grad(x, t, gvals);
        let rhs = -&grad;
        let max_diag = (0..n).fold(0.0f64, |m, i| m.max(h[(i, i)].abs()));
        let mut ridge = 1e-14 * (1.0 + max_diag);
        for _ in 0..6 {
            let mut hr = h.clone();
            for i in 0..n {
                hr[(i, i)] += ridge;
            }
            if let Some(chol) = hr.cholesky() {
                let delta = chol.solve(&rhs);
                let lam2 = rhs.dot(&delta).max(0.0);
                return Ok((delta, lam2));
            }
            ridge *= 100.0;
        }
        Err(SolverError::Factorization)
    }

    /// Newton direction via block factorization plus Woodbury correction.
    fn direction_structured(
        &self,
        x: &DVector<f64>,
        t: f64,
        gvals: &[f64],
    ) -> Result<(DVector<f64>, f64), SolverError> {
        let n = self.prog.dim;
        let st = &self.st;

        // Diagonal contributions shared by all blocks.
        let mut diag = DVector::<f64>::zeros(n);
        match self.prog.objective.quad() {
            QuadTerms::Diag(d) => {
                for &(i, v) in d {
                    diag[i] += -2.0 * t * v;
                }
            }
            QuadTerms::Zero | QuadTerms::Rank(_) => {}
            QuadTerms::Dense(_) => unreachable!("dense objective forces the dense path"),
        }
        if let Some(b) = &self.prog.bounds {
            for i in 0..n {
                if b.lower[i].is_finite() {
                    let d = x[i] - b.lower[i];
                    diag[i] += 1.0 / (d * d);
                }
                if b.upper[i].is_finite() {
                    let d = b.upper[i] - x[i];
                    diag[i] += 1.0 / (d * d);
                }
            }
        }

        // Low-rank columns from the objective and from wide constraints.
        let mut cols: Vec<DVector<f64>> = Vec::new();
        if let QuadTerms::Rank(terms) = self.prog.objective.quad() {
            for (c, u) in terms {
                let coef = -2.0 * t * c;
                if coef > 0.0 {
                    cols.push(u * coef.sqrt());
                }
            }
        }
        for &i in &st.global {
            let a = -1.0 / gvals[i];
            match self.prog.ineq[i].quad() {
                QuadTerms::Zero => {}
                QuadTerms::Diag(d) => {
                    for &(j, v) in d {
                        diag[j] += 2.0 * a * v;
                    }
                }
                QuadTerms::Rank(terms) => {
                    for (c, u) in terms {
                        let coef = 2.0 * a * c;
                        if coef > 0.0 {
                            cols.push(u * coef.sqrt());
                        }
                    }
                }
                QuadTerms::Dense(_) => unreachable!("dense constraint forces the dense path"),
            }
            let mut gi = DVector::zeros(n);
            self.prog.ineq[i].add_grad_scaled(x, 1.0, &mut gi);
            cols.push(gi * a);
        }

        // Assemble the blocks.
        let mut mats: Vec<DMatrix<f64>> =
            st.blocks.iter().map(|b| DMatrix::zeros(b.len(), b.len())).collect();
        for (bi, coords) in st.blocks.iter().enumerate() {
            for (pos, &c) in coords.iter().enumerate() {
                mats[bi][(pos, pos)] = diag[c];
            }
        }
        let mut glocal = [0.0f64; MAX_LOCAL_SUPPORT];
        for (i, sup) in &st.local {
            let g = &self.prog.ineq[*i];
            let a = -1.0 / gvals[*i];
            let bi = st.coord_pos[sup[0]].0;
            let mat = &mut mats[bi];
            for (k, &c) in sup.iter().enumerate() {
                glocal[k] = g.lin()[c];
            }
            if let QuadTerms::Diag(d) = g.quad() {
                for &(c, v) in d {
                    let pos = st.coord_pos[c].1;
                    mat[(pos, pos)] += 2.0 * a * v;
                    let k = sup.iter().position(|&s| s == c).expect("diag coord in support");
                    glocal[k] += 2.0 * v * x[c];
                }
            }
            for (k1, &c1) in sup.iter().enumerate() {
                let p1 = st.coord_pos[c1].1;
                for (k2, &c2) in sup.iter().enumerate() {
                    let p2 = st.coord_pos[c2].1;
                    mat[(p1, p2)] += a * a * glocal[k1] * glocal[k2];
                }
            }
        }
        for cone in &self.prog.soc {
            let a = 1.0 / cone.residual(x);
            let bi = st.coord_pos[cone.bound_coord].0;
            let mat = &mut mats[bi];
            let mut coords: Vec<usize> = cone.norm_coords.clone();
            coords.push(cone.bound_coord);
            for &c in &coords {
                let p = st.coord_pos[c].1;
                if c == cone.bound_coord {
                    mat[(p, p)] -= 2.0 * a;
                } else {
                    mat[(p, p)] += 2.0 * a;
                }
            }
            for &c1 in &coords {
                let p1 = st.coord_pos[c1].1;
                let g1 = if c1 == cone.bound_coord { 2.0 * x[c1] } else { -2.0 * x[c1] };
                for &c2 in &coords {
                    let p2 = st.coord_pos[c2].1;
                    let g2 = if c2 == cone.bound_coord { 2.0 * x[c2] } else { -2.0 * x[c2] };
                    mat[(p1, p2)] += a * a * g1 * g2;
                }
            }
        }

        let max_diag = mats
            .iter()
            .fold(0.0f64, |m, mat| (0..mat.nrows()).fold(m, |mm, i| mm.max(mat[(i, i)].abs())));
        let mut ridge = 1e-12 * (1.0 + max_diag);
        let chols = loop {
            let mut attempt = Vec::with_capacity(mats.len());
            let mut ok = true;
            for mat in &mats {
                let mut m = mat.clone();
                for i in 0..m.nrows() {
                    m[(i, i)] += ridge;
                }
                match m.cholesky() {
                    Some(c) => attempt.push(c),
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                break attempt;
            }
            ridge *= 1e4;
            if ridge > 1.0 + max_diag {
                return Err(SolverError::Factorization);
            }
        };

        let bsolve = |v: &DVector<f64>| -> DVector<f64> {
            let mut out = DVector::zeros(n);
            for (bi, coords) in st.blocks.iter().enumerate() {
                let mut small = DVector::zeros(coords.len());
                for (p, &c) in coords.iter().enumerate() {
                    small[p] = v[c];
                }
                chols[bi].solve_mut(&mut small);
                for (p, &c) in coords.iter().enumerate() {
                    out[c] = small[p];
                }
            }
            out
        };

        let grad = self.eval_grad(x, t, gvals);
        let rhs = -&grad;
        let u0 = bsolve(&rhs);
        let delta = if cols.is_empty() {
            u0
        } else {
            let r = cols.len();
            let ys: Vec<DVector<f64>> = cols.iter().map(|c| bsolve(c)).collect();
            let mut gm = DMatrix::identity(r, r);
            for i in 0..r {
                for j in i..r {
                    let v = cols[i].dot(&ys[j]);
                    gm[(i, j)] += v;
                    gm[(j, i)] = gm[(i, j)];
                }
            }
            let chol = gm.cholesky().ok_or(SolverError::Factorization)?;
            let z = DVector::from_iterator(r, cols.iter().map(|c| c.dot(&u0)));
            let s = chol.solve(&z);
            let mut delta = u0;
            for j in 0..r {
                delta.axpy(-s[j], &ys[j], 1.0);
            }
            delta
        };
        let lam2 = rhs.dot(&delta).max(0.0);
        Ok((delta, lam2))
    }

    fn direction(
        &self,
        x: &DVector<f64>,
        t: f64,
        gvals: &[f64],
    ) -> Result<(DVector<f64>, f64), SolverError> {
        if self.st.use_dense {
            self.direction_dense(x, t, gvals)
        } else {
            self.direction_structured(x, t, gvals)
        }
    }

    /// Pick a step along `delta`. In the quadratic phase (small decrement)
    /// the full step is taken on feasibility alone; otherwise an Armijo
    /// backtrack runs first with the damped step `1/(1+lambda)` as the
    /// provable fallback.
    fn line_search(
        &self,
        x: &DVector<f64>,
        delta: &DVector<f64>,
        t: f64,
        lam2: f64,
    ) -> Option<DVector<f64>> {
        let lambda = lam2.sqrt();
        let beta = self.settings.backtrack_beta;

        let feasible_step = |mut s: f64| -> Option<DVector<f64>> {
            while s >= MIN_STEP {
                let xt = x + delta * s;
                if self.prog.strictly_feasible(&xt) {
                    return Some(xt);
                }
                s *= beta;
            }
            None
        };

        if lambda <= QUADRATIC_PHASE {
            return feasible_step(1.0);
        }

        let phi_x = self.eval_phi(x, t).expect("iterate must stay strictly feasible");
        // Barrier values scale with t; differences below this are noise.
        let slack = 1e-12 * (1.0 + phi_x.abs());
        let damped = 1.0 / (1.0 + lambda);
        let mut s = 1.0;
        while s > damped {
            let xt = x + delta * s;
            if let Some(phi_t) = self.eval_phi(&xt, t) {
                if phi_t <= phi_x - self.settings.armijo_alpha * s * lam2 + slack {
                    return Some(xt);
                }
            }
            s *= beta;
        }
        feasible_step(damped)
    }

    /// Newton iterations at fixed barrier weight. Returns the last squared
    /// decrement over two, the step count, and whether the tolerance was met.
    fn center(
        &self,
        x: &mut DVector<f64>,
        t: f64,
    ) -> Result<(f64, usize, bool), SolverError> {
        let mut last = f64::INFINITY;
        for step in 0..self.settings.max_newton_steps {
            let gvals: Vec<f64> = self.prog.ineq.iter().map(|g| g.eval(x)).collect();
            let (delta, lam2) = self.direction(x, t, &gvals)?;
            last = 0.5 * lam2;
            if last <= self.settings.newton_tol {
                return Ok((last, step, true));
            }
            match self.line_search(x, &delta, t, lam2) {
                Some(xt) => *x = xt,
                None => return Ok((last, step, false)),
            }
        }
        Ok((last, self.settings.max_newton_steps, false))
    }
}

fn add_quad_matrix(h: &mut DMatrix<f64>, quad: &QuadTerms, scale: f64) {
    match quad {
        QuadTerms::Zero => {}
        QuadTerms::Diag(d) => {
            for &(i, v) in d {
                h[(i, i)] += scale * v;
            }
        }
        QuadTerms::Rank(terms) => {
            for (c, u) in terms {
                h.ger(scale * c, u, u, 1.0);
            }
        }
        QuadTerms::Dense(a) => {
            *h += a * scale;
        }
    }
}

/// Run the barrier method from a strictly feasible start.
fn barrier_solve(
    prog: &ConvexProgram,
    settings: &SolverSettings,
    mut x: DVector<f64>,
    force_dense: bool,
) -> Result<Solution, SolverError> {
    debug_assert!(prog.strictly_feasible(&x), "barrier start must be strictly feasible");
    let engine = Engine::new(prog, settings, force_dense);
    let m = prog.barrier_parameter();
    let mut t = if settings.barrier_t0 > 0.0 { settings.barrier_t0 } else { m.max(1.0) };
    let mut rounds = 0;
    let mut steps_total = 0;
    let mut last_res;
    let status;
    loop {
        let (res, steps, converged) = engine.center(&mut x, t)?;
        rounds += 1;
        steps_total += steps;
        last_res = res;
        let gap = m / t;
        if !converged && res > settings.kkt_tol {
            // In the last barrier rounds the weight has grown to where the
            // KKT conditioning (which scales like t^2) meets the
            // double-precision floor, and centering can stall a small
            // factor above the stationarity tolerance. An iterate already
            // centered to within a couple of orders of the gap target is
            // still far more accurate than anything downstream consumes,
            // so keep it rather than discarding the round.
            status = if gap <= 100.0 * settings.gap_target && res <= 1e3 * settings.kkt_tol {
                SolveStatus::Optimal
            } else {
                SolveStatus::MaxIter
            };
            break;
        }
        if gap <= settings.gap_target {
            status = SolveStatus::Optimal;
            break;
        }
        if rounds >= settings.max_barrier_rounds {
            status = SolveStatus::MaxIter;
            break;
        }
        t *= settings.barrier_mu;
    }
    Ok(Solution {
        objective: prog.objective.eval(&x),
        x,
        status,
        kkt_residual: last_res,
        duality_gap_bound: m / t,
        barrier_rounds: rounds,
        newton_steps: steps_total,
    })
}

/// Maximize the common slack `t` over `g_i(x) + t <= 0` plus the box, from
/// an automatically constructed strictly feasible start. `max_slack > 0`
/// certifies the constraint set has a strict interior; the returned point
/// is then strictly feasible with margin about `max_slack`.
pub fn phase1_feasible_point(
    dim: usize,
    ineq: &[RealQuadForm],
    bounds: Option<&BoxBounds>,
    settings: &SolverSettings,
) -> Result<Phase1Result, SolverError> {
    for g in ineq {
        if g.dim() != dim {
            return Err(SolverError::DimensionMismatch { expected: dim, got: g.dim() });
        }
    }
    let mut x0 = DVector::zeros(dim);
    if let Some(b) = bounds {
        for i in 0..dim {
            let (l, u) = (b.lower[i], b.upper[i]);
            x0[i] = match (l.is_finite(), u.is_finite()) {
                (true, true) => {
                    if l >= u {
                        return Ok(Phase1Result {
                            point: x0,
                            max_slack: f64::NEG_INFINITY,
                            status: SolveStatus::Infeasible,
                        });
                    }
                    0.5 * (l + u)
                }
                (true, false) => l + 1.0,
                (false, true) => u - 1.0,
                (false, false) => 0.0,
            };
        }
    }

    let g0max = ineq.iter().map(|g| g.eval(&x0)).fold(-1.0f64, f64::max);
    let t_start = -g0max - 1.0;
    let span = 2.0 * (1.0 + g0max.abs());
    let dim1 = dim + 1;

    let mut lower = DVector::from_element(dim1, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(dim1, f64::INFINITY);
    if let Some(b) = bounds {
        lower.rows_mut(0, dim).copy_from(&b.lower);
        upper.rows_mut(0, dim).copy_from(&b.upper);
    }
    lower[dim] = t_start - span;
    upper[dim] = (-g0max).max(0.0) + span;

    let mut slack_dir = DVector::zeros(dim1);
    slack_dir[dim] = 1.0;
    let prog1 = ConvexProgram {
        dim: dim1,
        objective: RealQuadForm::linear(dim1, slack_dir, 0.0)?,
        ineq: ineq
            .iter()
            .map(|g| g.clone().lifted(dim1, 0).with_linear_added(dim, 1.0))
            .collect(),
        soc: Vec::new(),
        bounds: Some(BoxBounds { lower, upper }),
    };
    let mut start = DVector::zeros(dim1);
    start.rows_mut(0, dim).copy_from(&x0);
    start[dim] = t_start;

    let sol = barrier_solve(&prog1, settings, start, false)?;
    Ok(Phase1Result {
        point: sol.x.rows(0, dim).into_owned(),
        max_slack: sol.x[dim],
        status: sol.status,
    })
}

/// Maximize `prog.objective` over the feasible set of `prog`.
///
/// A strictly feasible `warm` start is used when provided; otherwise a
/// feasibility subproblem constructs one, and a non-positive slack there
/// yields an `Infeasible` solution. Cone-constrained programs require the
/// warm start (the feasibility subproblem covers quadratics and boxes only;
/// every cone caller can lift one constructively).
pub fn solve(
    prog: &ConvexProgram,
    settings: &SolverSettings,
    warm: Option<&DVector<f64>>,
) -> Result<Solution, SolverError> {
    solve_inner(prog, settings, warm, false)
}

pub(crate) fn solve_inner(
    prog: &ConvexProgram,
    settings: &SolverSettings,
    warm: Option<&DVector<f64>>,
    force_dense: bool,
) -> Result<Solution, SolverError> {
    prog.validate()?;
    if let Some(w) = warm {
        if w.len() == prog.dim && prog.strictly_feasible(w) {
            return barrier_solve(prog, settings, w.clone(), force_dense);
        }
    }
    if !prog.soc.is_empty() {
        return Err(SolverError::NeedFeasibleStart);
    }
    let ph = phase1_feasible_point(prog.dim, &prog.ineq, prog.bounds.as_ref(), settings)?;
    if ph.max_slack <= settings.feasibility_tol {
        return Ok(Solution {
            objective: prog.objective.eval(&ph.point),
            x: ph.point,
            status: SolveStatus::Infeasible,
            kkt_residual: f64::INFINITY,
            duality_gap_bound: f64::INFINITY,
            barrier_rounds: 0,
            newton_steps: 0,
        });
    }
    barrier_solve(prog, settings, ph.point, force_dense)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn settings() -> SolverSettings {
        SolverSettings::default()
    }

    #[test]
    fn unconstrained_quadratic_peaks_at_stationary_point() {
        // maximize -(x - a)^T (x - a) + 3
        let a = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let obj = RealQuadForm::from_dense(
            -DMatrix::identity(3, 3),
            2.0 * &a,
            3.0 - a.dot(&a),
        )
        .unwrap();
        let prog =
            ConvexProgram { dim: 3, objective: obj, ineq: vec![], soc: vec![], bounds: None };
        let sol = solve(&prog, &settings(), Some(&DVector::zeros(3))).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((&sol.x - &a).norm() <= 1e-6, "x = {:?}", sol.x);
        assert!((sol.objective - 3.0).abs() <= 1e-9);
    }

    #[test]
    fn linear_constraint_becomes_active() {
        // maximize 2x - x^2 subject to x <= 1/2; optimum at the boundary.
        let obj = RealQuadForm::diagonal(1, vec![(0, -1.0)], DVector::from_vec(vec![2.0]), 0.0)
            .unwrap();
        let g = RealQuadForm::linear(1, DVector::from_vec(vec![1.0]), -0.5).unwrap();
        let prog =
            ConvexProgram { dim: 1, objective: obj, ineq: vec![g], soc: vec![], bounds: None };
        let sol = solve(&prog, &settings(), Some(&DVector::from_vec(vec![0.0]))).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 0.5).abs() <= 1e-6);
        assert!((sol.objective - 0.75).abs() <= 1e-6);
    }

    #[test]
    fn phase1_reports_unit_slack_for_unit_ball() {
        let ball = RealQuadForm::diagonal(
            3,
            vec![(0, 1.0), (1, 1.0), (2, 1.0)],
            DVector::zeros(3),
            -1.0,
        )
        .unwrap();
        let ph = phase1_feasible_point(3, &[ball], None, &settings()).unwrap();
        assert!((ph.max_slack - 1.0).abs() <= 1e-6, "slack {}", ph.max_slack);
        assert!(ph.point.norm() <= 1e-3);
    }

    #[test]
    fn phase1_certifies_contradictory_constraints() {
        // x >= 1 and x <= -1: best common slack is exactly -1.
        let g1 = RealQuadForm::linear(1, DVector::from_vec(vec![-1.0]), 1.0).unwrap();
        let g2 = RealQuadForm::linear(1, DVector::from_vec(vec![1.0]), 1.0).unwrap();
        let ph = phase1_feasible_point(1, &[g1.clone(), g2.clone()], None, &settings()).unwrap();
        assert!(ph.max_slack <= -1.0 + 1e-6, "slack {}", ph.max_slack);

        let obj = RealQuadForm::linear(1, DVector::from_vec(vec![1.0]), 0.0).unwrap();
        let prog =
            ConvexProgram { dim: 1, objective: obj, ineq: vec![g1, g2], soc: vec![], bounds: None };
        let sol = solve(&prog, &settings(), None).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn box_corner_is_reached() {
        let obj = RealQuadForm::linear(2, DVector::from_vec(vec![1.0, 1.0]), 0.0).unwrap();
        let bounds = BoxBounds {
            lower: DVector::from_vec(vec![0.0, 0.0]),
            upper: DVector::from_vec(vec![1.0, 1.0]),
        };
        let prog = ConvexProgram {
            dim: 2,
            objective: obj,
            ineq: vec![],
            soc: vec![],
            bounds: Some(bounds),
        };
        let sol =
            solve(&prog, &settings(), Some(&DVector::from_vec(vec![0.5, 0.5]))).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 2.0).abs() <= 1e-6);
    }

    #[test]
    fn cone_bound_limits_the_norm_coordinate() {
        // maximize x subject to ||(x, y)|| <= z and z in [0, 1.5].
        let obj = RealQuadForm::linear(3, DVector::from_vec(vec![1.0, 0.0, 0.0]), 0.0).unwrap();
        let cone = crate::solver::SocCone { norm_coords: vec![0, 1], bound_coord: 2 };
        let bounds = BoxBounds {
            lower: DVector::from_vec(vec![f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0]),
            upper: DVector::from_vec(vec![f64::INFINITY, f64::INFINITY, 1.5]),
        };
        let prog = ConvexProgram {
            dim: 3,
            objective: obj,
            ineq: vec![],
            soc: vec![cone],
            bounds: Some(bounds),
        };
        let warm = DVector::from_vec(vec![0.0, 0.0, 0.5]);
        let dense = solve_inner(&prog, &settings(), Some(&warm), true).unwrap();
        let structured = solve_inner(&prog, &settings(), Some(&warm), false).unwrap();
        for sol in [&dense, &structured] {
            assert_eq!(sol.status, SolveStatus::Optimal);
            assert!((sol.x[0] - 1.5).abs() <= 1e-5, "x = {:?}", sol.x);
        }
        assert!((dense.objective - structured.objective).abs() <= 1e-8);
    }

    #[test]
    fn cone_without_warm_start_is_rejected() {
        let obj = RealQuadForm::linear(3, DVector::from_vec(vec![1.0, 0.0, 0.0]), 0.0).unwrap();
        let cone = crate::solver::SocCone { norm_coords: vec![0, 1], bound_coord: 2 };
        let prog =
            ConvexProgram { dim: 3, objective: obj, ineq: vec![], soc: vec![cone], bounds: None };
        assert!(matches!(
            solve(&prog, &settings(), None),
            Err(SolverError::NeedFeasibleStart)
        ));
    }

    /// Random two-dimensional concave QCQPs cross-checked against a grid.
    #[test]
    fn random_qcqp_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9c9);
        for trial in 0..30 {
            let m = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
            let a = -(m.transpose() * &m) - DMatrix::identity(2, 2) * 0.1;
            let lin = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let obj = RealQuadForm::from_dense(a, lin, 0.0).unwrap();

            let mut ineq = Vec::new();
            for _ in 0..2 {
                let c = DVector::from_fn(2, |_, _| rng.gen_range(-0.5..0.5));
                let r: f64 = rng.gen_range(0.8..1.5);
                ineq.push(
                    RealQuadForm::diagonal(
                        2,
                        vec![(0, 1.0), (1, 1.0)],
                        -2.0 * &c,
                        c.dot(&c) - r * r,
                    )
                    .unwrap(),
                );
            }
            let prog = ConvexProgram {
                dim: 2,
                objective: obj,
                ineq,
                soc: vec![],
                bounds: None,
            };
            let sol = solve(&prog, &settings(), Some(&DVector::zeros(2))).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal, "trial {trial}");

            let mut best = f64::NEG_INFINITY;
            let steps = 801;
            for i in 0..steps {
                for j in 0..steps {
                    let x = DVector::from_vec(vec![
                        -2.0 + 4.0 * i as f64 / (steps - 1) as f64,
                        -2.0 + 4.0 * j as f64 / (steps - 1) as f64,
                    ]);
                    if prog.ineq.iter().all(|g| g.eval(&x) <= 0.0) {
                        best = best.max(prog.objective.eval(&x));
                    }
                }
            }
            assert!(
                sol.objective + 1e-6 >= best,
                "trial {trial}: solver {} below grid {best}",
                sol.objective
            );
            assert!(
                sol.objective <= best + 1e-2,
                "trial {trial}: solver {} implausibly above grid {best}",
                sol.objective
            );
        }
    }

    /// A surface-shaped problem large enough to engage the structured path,
    /// checked against the dense path.
    #[test]
    fn structured_path_agrees_with_dense() {
        let m_elems = 20;
        let n = 4 * m_elems + 2;
        let mut rng = ChaCha8Rng::seed_from_u64(77);

        let mut lin = DVector::zeros(n);
        lin[n - 2] = 1.0;
        lin[n - 1] = 0.5;
        let objective = RealQuadForm::linear(n, lin, 0.0).unwrap();

        let mut ineq = Vec::new();
        for e in 0..m_elems {
            ineq.push(
                RealQuadForm::diagonal(
                    n,
                    vec![
                        (e, 1.0),
                        (m_elems + e, 1.0),
                        (2 * m_elems + e, 1.0),
                        (3 * m_elems + e, 1.0),
                    ],
                    DVector::zeros(n),
                    -1.0,
                )
                .unwrap(),
            );
        }
        // Two wide rows that couple an auxiliary coordinate to all elements,
        // mimicking the rate-bound rows of the surface subproblem.
        for aux in [n - 2, n - 1] {
            let mut terms = Vec::new();
            for _ in 0..2 {
                let u = DVector::from_fn(n, |i, _| {
                    if i < 4 * m_elems { rng.gen_range(-0.3..0.3) } else { 0.0 }
                });
                terms.push((0.5, u));
            }
            let mut lin = DVector::zeros(n);
            lin[aux] = 1.0;
            ineq.push(RealQuadForm::from_rank_terms(n, terms, lin, -4.0).unwrap());
        }
        let mut lower = DVector::from_element(n, f64::NEG_INFINITY);
        let mut upper = DVector::from_element(n, f64::INFINITY);
        for aux in [n - 2, n - 1] {
            lower[aux] = -10.0;
            upper[aux] = 10.0;
        }
        let prog = ConvexProgram {
            dim: n,
            objective,
            ineq,
            soc: vec![],
            bounds: Some(BoxBounds { lower, upper }),
        };
        let warm = DVector::zeros(n);
        let structured = solve_inner(&prog, &settings(), Some(&warm), false).unwrap();
        let dense = solve_inner(&prog, &settings(), Some(&warm), true).unwrap();
        assert_eq!(structured.status, SolveStatus::Optimal);
        assert_eq!(dense.status, SolveStatus::Optimal);
        assert!(
            (structured.objective - dense.objective).abs() <= 1e-6,
            "structured {} vs dense {}",
            structured.objective,
            dense.objective
        );
        assert!((&structured.x - &dense.x).norm() <= 1e-4);
    }

    #[test]
    fn warm_start_outside_the_domain_falls_back_to_phase1() {
        let ball =
            RealQuadForm::diagonal(2, vec![(0, 1.0), (1, 1.0)], DVector::zeros(2), -1.0).unwrap();
        let obj = RealQuadForm::linear(2, DVector::from_vec(vec![1.0, 0.0]), 0.0).unwrap();
        let prog =
            ConvexProgram { dim: 2, objective: obj, ineq: vec![ball], soc: vec![], bounds: None };
        let bad = DVector::from_vec(vec![5.0, 5.0]);
        let sol = solve(&prog, &settings(), Some(&bad)).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() <= 1e-4);
    }
}
