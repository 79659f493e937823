//! Dense primal-dual interior-point solver for the convex normal form
//! shared by the follower, relaxation and push-up subproblems:
//!
//! ```text
//!     min/max  x' Q x + c' x + c0
//!     s.t.     Aeq x  = beq
//!              Ain x <= bin
//!              lb <= x <= ub          (+/- infinity allowed)
//!              || x_S - z ||^2 <= r2  (at most one ball constraint)
//! ```
//!
//! The algorithm is a Mehrotra-style predictor-corrector method over the
//! slack form `h_k(x) + s_k = 0, s_k > 0`, where each `h_k` is a linear
//! row or the single convex quadratic ball. Maximization is handled by
//! negating a linear objective. Infeasibility is certified by a phase-1
//! subproblem (minimize the worst constraint violation `t`) whose
//! optimal slack exceeds a small threshold.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Feasibility tolerance quoted in reported solutions (scaled).
pub const FEAS_TOL: f64 = 1e-6;
/// Scaled KKT residual bound guaranteed on `Optimal` results.
pub const KKT_TOL: f64 = 1e-8;
/// Phase-1 optimal slack above which a program is declared infeasible.
pub const PHASE1_TOL: f64 = 1e-7;

const CONVERGE_TOL: f64 = 1e-9;
const STATIC_REG: f64 = 1e-9;
const RETRY_REG: f64 = 1e-7;
const DEFAULT_MAX_ITERS: usize = 200;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid program: {0}")]
    InvalidProgram(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// The optional convex quadratic constraint ||x_S - center||^2 <= radius_sq.
#[derive(Debug, Clone)]
pub struct BallConstraint {
    /// Variable subset S, as indices into the program's variables.
    pub indices: Vec<usize>,
    pub center: DVector<f64>,
    pub radius_sq: f64,
}

/// Solver-facing normal form. The objective value is
/// `x' Q x + c' x + c0` (no implicit 1/2 on the quadratic term).
#[derive(Debug, Clone)]
pub struct ConvexProgram {
    pub n: usize,
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub c0: f64,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
    pub ball: Option<BallConstraint>,
    pub sense: Sense,
}

impl ConvexProgram {
    /// An unconstrained minimization with zero objective over n variables.
    pub fn new(n: usize) -> Self {
        Self {
            n,
            q: DMatrix::zeros(n, n),
            c: DVector::zeros(n),
            c0: 0.0,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
            ball: None,
            sense: Sense::Minimize,
        }
    }

    /// Objective value at a point, in the program's own sense.
    pub fn objective_at(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.q * x)[(0, 0)] + self.c.dot(x) + self.c0
    }

    fn validate(&self) -> Result<(), SolverError> {
        let n = self.n;
        if self.q.nrows() != n || self.q.ncols() != n {
            return Err(SolverError::InvalidProgram(format!(
                "Q is {}x{}, expected {n}x{n}",
                self.q.nrows(),
                self.q.ncols()
            )));
        }
        if self.c.len() != n || self.lb.len() != n || self.ub.len() != n {
            return Err(SolverError::InvalidProgram(
                "objective/bound vectors must have length n".into(),
            ));
        }
        if self.a_eq.ncols() != n || self.a_in.ncols() != n {
            return Err(SolverError::InvalidProgram(
                "constraint matrices must have n columns".into(),
            ));
        }
        if self.a_eq.nrows() != self.b_eq.len() || self.a_in.nrows() != self.b_in.len() {
            return Err(SolverError::InvalidProgram(
                "constraint right-hand sides do not match row counts".into(),
            ));
        }
        let scale = 1.0 + self.q.amax();
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.q[(i, j)] - self.q[(j, i)]).abs() > 1e-12 * scale {
                    return Err(SolverError::InvalidProgram("Q is not symmetric".into()));
                }
            }
        }
        if self.q.amax() > 0.0 {
            if self.sense == Sense::Maximize {
                return Err(SolverError::InvalidProgram(
                    "maximization requires a linear objective".into(),
                ));
            }
            // PSD check by attempted factorization with a small shift.
            let mut shifted = self.q.clone();
            let eps = 1e-10 * scale;
            for i in 0..n {
                shifted[(i, i)] += eps;
            }
            if shifted.cholesky().is_none() {
                return Err(SolverError::InvalidProgram(
                    "Q is not positive semidefinite".into(),
                ));
            }
        }
        if let Some(ball) = &self.ball {
            if ball.indices.len() != ball.center.len() {
                return Err(SolverError::InvalidProgram(
                    "ball center length does not match index set".into(),
                ));
            }
            if ball.indices.iter().any(|&i| i >= n) {
                return Err(SolverError::InvalidProgram("ball index out of range".into()));
            }
            if !(ball.radius_sq > 0.0 && ball.radius_sq.is_finite()) {
                return Err(SolverError::InvalidProgram(format!(
                    "ball radius_sq must be positive, got {}",
                    ball.radius_sq
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
    NumericFailure,
}

#[derive(Debug, Clone)]
pub struct ProgramSolution {
    pub x: DVector<f64>,
    /// Objective in the program's own sense; NaN unless the status says
    /// the iterate is meaningful (`Optimal`, `IterLimit`).
    pub objective: f64,
    pub status: SolveStatus,
    /// Multipliers for the equality rows of the minimized canonical form.
    pub eq_duals: DVector<f64>,
    /// Multipliers for the `Ain x <= bin` rows (nonnegative).
    pub in_duals: DVector<f64>,
    pub iterations: usize,
    /// Scaled KKT residual at the final iterate.
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feasibility {
    Feasible,
    Infeasible,
    NumericFailure,
}

/// Solve the program to KKT tolerance.
pub fn solve(p: &ConvexProgram) -> Result<ProgramSolution, SolverError> {
    p.validate()?;
    let canon = Canon::from_program(p);
    let mut raw = canon.run();
    if raw.status != SolveStatus::Optimal {
        // Classify the failure: certified infeasibility wins over the
        // raw iteration outcome.
        match canon.phase1_slack() {
            Phase1Outcome::Slack(t) if t > PHASE1_TOL => {
                raw.status = SolveStatus::Infeasible;
            }
            Phase1Outcome::Slack(_) => {}
            Phase1Outcome::Failed => {
                if raw.status != SolveStatus::Unbounded {
                    raw.status = SolveStatus::NumericFailure;
                }
            }
        }
    }
    Ok(finish(p, raw))
}

/// Phase-1 feasibility check only; no optimality claim.
pub fn check_feasible(p: &ConvexProgram) -> Result<Feasibility, SolverError> {
    p.validate()?;
    let canon = Canon::from_program(p);
    Ok(match canon.phase1_slack() {
        Phase1Outcome::Slack(t) if t > PHASE1_TOL => Feasibility::Infeasible,
        Phase1Outcome::Slack(_) => Feasibility::Feasible,
        Phase1Outcome::Failed => Feasibility::NumericFailure,
    })
}

fn finish(p: &ConvexProgram, raw: RawSolution) -> ProgramSolution {
    let objective = match raw.status {
        SolveStatus::Optimal | SolveStatus::IterLimit => {
            let v = p.objective_at(&raw.x);
            if v.is_finite() {
                v
            } else {
                f64::NAN
            }
        }
        _ => f64::NAN,
    };
    let mi = p.a_in.nrows();
    let in_duals = DVector::from_fn(mi, |k, _| raw.lambda.get(k).copied().unwrap_or(0.0));
    ProgramSolution {
        x: raw.x,
        objective,
        status: raw.status,
        eq_duals: raw.y,
        in_duals,
        iterations: raw.iterations,
        kkt_residual: raw.kkt_residual,
    }
}

/// One inequality h(x) <= 0 of the canonical form. In phase-1 form a
/// relaxation variable `t` is subtracted from every constraint.
#[derive(Debug, Clone)]
enum Ineq {
    /// row . x - rhs <= 0
    Lin { row: DVector<f64>, rhs: f64 },
    /// sum_j (x[idx[j]] - center[j])^2 - r2 <= 0
    Ball {
        idx: Vec<usize>,
        center: DVector<f64>,
        r2: f64,
    },
}

impl Ineq {
    fn value(&self, x: &DVector<f64>, t_index: Option<usize>) -> f64 {
        match self {
            Ineq::Lin { row, rhs } => row.dot(x) - rhs,
            Ineq::Ball { idx, center, r2 } => {
                let base = idx
                    .iter()
                    .zip(center.iter())
                    .map(|(&i, z)| (x[i] - z) * (x[i] - z))
                    .sum::<f64>()
                    - r2;
                match t_index {
                    Some(t) => base - x[t],
                    None => base,
                }
            }
        }
    }

    fn gradient(&self, x: &DVector<f64>, t_index: Option<usize>, out: &mut DVector<f64>) {
        out.fill(0.0);
        match self {
            Ineq::Lin { row, .. } => out.copy_from(row),
            Ineq::Ball { idx, center, .. } => {
                for (&i, z) in idx.iter().zip(center.iter()) {
                    out[i] = 2.0 * (x[i] - z);
                }
                if let Some(t) = t_index {
                    out[t] = -1.0;
                }
            }
        }
    }

    /// Add lambda * Hessian(h) onto the KKT x-block.
    fn add_hessian(&self, lambda: f64, h: &mut DMatrix<f64>) {
        if let Ineq::Ball { idx, .. } = self {
            for &i in idx {
                h[(i, i)] += 2.0 * lambda;
            }
        }
    }
}

/// Canonical minimization: min 1/2 x' P x + g' x s.t. A x = b, h(x) <= 0.
struct Canon {
    n: usize,
    p: DMatrix<f64>,
    g: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    ineq: Vec<Ineq>,
    x0: DVector<f64>,
    max_iters: usize,
    /// Phase-1 relaxation variable, when this canon is a phase-1 program.
    t_index: Option<usize>,
}

struct RawSolution {
    x: DVector<f64>,
    y: DVector<f64>,
    lambda: Vec<f64>,
    status: SolveStatus,
    iterations: usize,
    kkt_residual: f64,
}

enum Phase1Outcome {
    Slack(f64),
    Failed,
}

impl Canon {
    fn from_program(p: &ConvexProgram) -> Self {
        let n = p.n;
        let flip = if p.sense == Sense::Maximize { -1.0 } else { 1.0 };
        let quad = &p.q * (2.0 * flip);
        let g = &p.c * flip;

        let mut ineq = Vec::new();
        for k in 0..p.a_in.nrows() {
            ineq.push(Ineq::Lin {
                row: p.a_in.row(k).transpose(),
                rhs: p.b_in[k],
            });
        }
        for i in 0..n {
            if p.lb[i].is_finite() {
                let mut row = DVector::zeros(n);
                row[i] = -1.0;
                ineq.push(Ineq::Lin { row, rhs: -p.lb[i] });
            }
            if p.ub[i].is_finite() {
                let mut row = DVector::zeros(n);
                row[i] = 1.0;
                ineq.push(Ineq::Lin { row, rhs: p.ub[i] });
            }
        }
        if let Some(ball) = &p.ball {
            ineq.push(Ineq::Ball {
                idx: ball.indices.clone(),
                center: ball.center.clone(),
                r2: ball.radius_sq,
            });
        }

        let x0 = DVector::from_fn(n, |i, _| {
            let (lo, hi) = (p.lb[i], p.ub[i]);
            match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo + 1.0,
                (false, true) => hi - 1.0,
                (false, false) => 0.0,
            }
        });

        Canon {
            n,
            p: quad,
            g,
            a: p.a_eq.clone(),
            b: p.b_eq.clone(),
            ineq,
            x0,
            max_iters: DEFAULT_MAX_ITERS,
            t_index: None,
        }
    }

    fn equalities_consistent(&self) -> bool {
        if self.a.nrows() == 0 {
            return true;
        }
        let svd = self.a.clone().svd(true, true);
        match svd.solve(&self.b, 1e-12) {
            Ok(x_ls) => {
                let resid = &self.a * &x_ls - &self.b;
                resid.amax() <= 1e-8 * (1.0 + self.b.amax())
            }
            Err(_) => false,
        }
    }

    /// Optimal worst-violation slack of the phase-1 program
    /// `min t s.t. A x = b, h_k(x) <= t, t >= -1`.
    fn phase1_slack(&self) -> Phase1Outcome {
        if !self.equalities_consistent() {
            return Phase1Outcome::Slack(f64::INFINITY);
        }
        if self.ineq.is_empty() {
            return Phase1Outcome::Slack(-1.0);
        }
        let n1 = self.n + 1;
        let t = self.n;
        let mut g = DVector::zeros(n1);
        g[t] = 1.0;
        let mut a = DMatrix::zeros(self.a.nrows(), n1);
        a.view_mut((0, 0), (self.a.nrows(), self.n)).copy_from(&self.a);

        let mut ineq: Vec<Ineq> = Vec::with_capacity(self.ineq.len() + 1);
        for item in &self.ineq {
            match item {
                Ineq::Lin { row, rhs } => {
                    let mut r = DVector::zeros(n1);
                    r.rows_mut(0, self.n).copy_from(row);
                    r[t] = -1.0;
                    ineq.push(Ineq::Lin { row: r, rhs: *rhs });
                }
                // Quadratic rows keep their shape; the relaxation term
                // -t is applied through `t_index` in value/gradient.
                Ineq::Ball { idx, center, r2 } => ineq.push(Ineq::Ball {
                    idx: idx.clone(),
                    center: center.clone(),
                    r2: *r2,
                }),
            }
        }
        let mut t_low = DVector::zeros(n1);
        t_low[t] = -1.0;
        ineq.push(Ineq::Lin {
            row: t_low,
            rhs: 1.0,
        });

        let mut x0 = DVector::zeros(n1);
        x0.rows_mut(0, self.n).copy_from(&self.x0);
        let worst = self
            .ineq
            .iter()
            .map(|h| h.value(&self.x0, None))
            .fold(f64::NEG_INFINITY, f64::max);
        x0[t] = worst.max(0.0) + 1.0;

        let phase1 = Canon {
            n: n1,
            p: DMatrix::zeros(n1, n1),
            g,
            a,
            b: self.b.clone(),
            ineq,
            x0,
            max_iters: DEFAULT_MAX_ITERS,
            t_index: Some(t),
        };
        let raw = phase1.run();
        match raw.status {
            SolveStatus::Optimal => Phase1Outcome::Slack(raw.x[t]),
            _ => Phase1Outcome::Failed,
        }
    }

    /// Core predictor-corrector loop.
    fn run(&self) -> RawSolution {
        let n = self.n;
        let me = self.a.nrows();
        let m = self.ineq.len();

        if m == 0 {
            return self.solve_equality_only();
        }

        let mut x = self.x0.clone();
        let mut y = DVector::zeros(me);
        let mut s: Vec<f64> = self
            .ineq
            .iter()
            .map(|h| (-h.value(&x, self.t_index)).max(1.0))
            .collect();
        let mut lambda: Vec<f64> = vec![1.0; m];

        let mut grad_k = DVector::zeros(n);
        let mut kkt_residual = f64::INFINITY;
        let mut stall = 0usize;
        let mut iterations = 0usize;

        for iter in 0..=self.max_iters {
            iterations = iter;

            // Residuals of the perturbed KKT system.
            let mut r_dual = &self.p * &x + &self.g;
            if me > 0 {
                r_dual += self.a.transpose() * &y;
            }
            let mut jrows: Vec<DVector<f64>> = Vec::with_capacity(m);
            let mut r_in: Vec<f64> = Vec::with_capacity(m);
            for (k, h) in self.ineq.iter().enumerate() {
                h.gradient(&x, self.t_index, &mut grad_k);
                r_dual += &grad_k * lambda[k];
                jrows.push(grad_k.clone());
                r_in.push(h.value(&x, self.t_index) + s[k]);
            }
            let r_eq = if me > 0 {
                &self.a * &x - &self.b
            } else {
                DVector::zeros(0)
            };
            let gap: f64 = (0..m).map(|k| s[k] * lambda[k]).sum();
            let mu = gap / m as f64;

            let obj = 0.5 * (x.transpose() * &self.p * &x)[(0, 0)] + self.g.dot(&x);
            let prim_scale = 1.0 + x.amax() + if me > 0 { self.b.amax() } else { 0.0 };
            let dual_scale =
                1.0 + self.g.amax() + lambda.iter().cloned().fold(0.0, f64::max) + y.amax();
            let r_in_max = r_in.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            kkt_residual = (r_dual.amax() / dual_scale)
                .max(if me > 0 { r_eq.amax() / prim_scale } else { 0.0 })
                .max(r_in_max / prim_scale)
                .max(gap / (1.0 + obj.abs()));

            if kkt_residual <= CONVERGE_TOL {
                return RawSolution {
                    x,
                    y,
                    lambda,
                    status: SolveStatus::Optimal,
                    iterations: iter,
                    kkt_residual,
                };
            }
            if x.amax() > 1e10 || obj < -1e14 {
                return RawSolution {
                    x,
                    y,
                    lambda,
                    status: SolveStatus::Unbounded,
                    iterations: iter,
                    kkt_residual,
                };
            }
            if iter == self.max_iters {
                break;
            }

            // Condensed KKT matrix with static regularization; one
            // refactorization retry at a larger shift.
            let assemble = |reg: f64| -> DMatrix<f64> {
                let mut big = DMatrix::zeros(n + me, n + me);
                let mut hx = self.p.clone();
                for (k, h) in self.ineq.iter().enumerate() {
                    h.add_hessian(lambda[k], &mut hx);
                    let w = lambda[k] / s[k];
                    let jr = &jrows[k];
                    for i in 0..n {
                        let ji = jr[i];
                        if ji == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            let jj = jr[j];
                            if jj != 0.0 {
                                hx[(i, j)] += w * ji * jj;
                            }
                        }
                    }
                }
                for i in 0..n {
                    hx[(i, i)] += reg;
                }
                big.view_mut((0, 0), (n, n)).copy_from(&hx);
                if me > 0 {
                    big.view_mut((0, n), (n, me)).copy_from(&self.a.transpose());
                    big.view_mut((n, 0), (me, n)).copy_from(&self.a);
                    for i in 0..me {
                        big[(n + i, n + i)] = -reg;
                    }
                }
                big
            };

            // Directions for a given complementarity target.
            let direction = |lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
                             r_comp: &[f64]|
             -> Option<(DVector<f64>, DVector<f64>, Vec<f64>, Vec<f64>)> {
                let mut rhs = DVector::zeros(n + me);
                let mut top = -&r_dual;
                for k in 0..m {
                    let coef = (lambda[k] * r_in[k] - r_comp[k]) / s[k];
                    top -= &jrows[k] * coef;
                }
                rhs.rows_mut(0, n).copy_from(&top);
                if me > 0 {
                    rhs.rows_mut(n, me).copy_from(&(-&r_eq));
                }
                let sol = lu.solve(&rhs)?;
                if sol.iter().any(|v| !v.is_finite()) {
                    return None;
                }
                let dx = sol.rows(0, n).into_owned();
                let dy = if me > 0 {
                    sol.rows(n, me).into_owned()
                } else {
                    DVector::zeros(0)
                };
                let mut dl = vec![0.0; m];
                let mut ds = vec![0.0; m];
                for k in 0..m {
                    let jdx = jrows[k].dot(&dx);
                    dl[k] = (lambda[k] * (jdx + r_in[k]) - r_comp[k]) / s[k];
                    ds[k] = -(r_comp[k] + s[k] * dl[k]) / lambda[k];
                }
                Some((dx, dy, dl, ds))
            };

            // Predictor (affine scaling) direction.
            let r_comp_aff: Vec<f64> = (0..m).map(|k| lambda[k] * s[k]).collect();
            let mut lu = assemble(STATIC_REG).lu();
            let mut aff = direction(&lu, &r_comp_aff);
            if aff.is_none() {
                lu = assemble(RETRY_REG).lu();
                aff = direction(&lu, &r_comp_aff);
            }
            let Some((_, _, dl_a, ds_a)) = aff else {
                return RawSolution {
                    x,
                    y,
                    lambda,
                    status: SolveStatus::NumericFailure,
                    iterations: iter,
                    kkt_residual,
                };
            };

            let max_step = |v: &[f64], dv: &[f64]| -> f64 {
                let mut a = f64::INFINITY;
                for k in 0..m {
                    if dv[k] < 0.0 {
                        a = a.min(-v[k] / dv[k]);
                    }
                }
                a
            };

            let ap_aff = max_step(&s, &ds_a).min(1.0);
            let ad_aff = max_step(&lambda, &dl_a).min(1.0);
            let mu_aff: f64 = (0..m)
                .map(|k| (s[k] + ap_aff * ds_a[k]) * (lambda[k] + ad_aff * dl_a[k]))
                .sum::<f64>()
                / m as f64;
            let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

            // Corrector with centering and second-order term.
            let r_comp_cc: Vec<f64> = (0..m)
                .map(|k| lambda[k] * s[k] + dl_a[k] * ds_a[k] - sigma * mu)
                .collect();
            let Some((dx, dy, dl, ds)) = direction(&lu, &r_comp_cc) else {
                return RawSolution {
                    x,
                    y,
                    lambda,
                    status: SolveStatus::NumericFailure,
                    iterations: iter,
                    kkt_residual,
                };
            };

            let tau = 0.99;
            let ap = (tau * max_step(&s, &ds)).min(1.0);
            let ad = (tau * max_step(&lambda, &dl)).min(1.0);

            x += &dx * ap;
            if me > 0 {
                y += &dy * ad;
            }
            for k in 0..m {
                s[k] = (s[k] + ap * ds[k]).max(1e-300);
                lambda[k] = (lambda[k] + ad * dl[k]).max(1e-300);
            }

            if ap < 1e-11 && ad < 1e-11 {
                stall += 1;
                if stall >= 3 {
                    return RawSolution {
                        x,
                        y,
                        lambda,
                        status: SolveStatus::NumericFailure,
                        iterations: iter,
                        kkt_residual,
                    };
                }
            } else {
                stall = 0;
            }
        }

        // Iteration cap reached; accept the iterate when it already
        // meets the documented tolerance.
        let status = if kkt_residual <= KKT_TOL {
            SolveStatus::Optimal
        } else {
            SolveStatus::IterLimit
        };
        RawSolution {
            x,
            y,
            lambda,
            status,
            iterations,
            kkt_residual,
        }
    }

    /// Direct KKT solve for programs without inequalities.
    fn solve_equality_only(&self) -> RawSolution {
        let n = self.n;
        let me = self.a.nrows();
        let mut exact = DMatrix::zeros(n + me, n + me);
        exact.view_mut((0, 0), (n, n)).copy_from(&self.p);
        if me > 0 {
            exact
                .view_mut((0, n), (n, me))
                .copy_from(&self.a.transpose());
            exact.view_mut((n, 0), (me, n)).copy_from(&self.a);
        }
        let mut big = exact.clone();
        for i in 0..n {
            big[(i, i)] += STATIC_REG;
        }
        for i in 0..me {
            big[(n + i, n + i)] = -STATIC_REG;
        }
        let mut rhs = DVector::zeros(n + me);
        rhs.rows_mut(0, n).copy_from(&(-&self.g));
        if me > 0 {
            rhs.rows_mut(n, me).copy_from(&self.b);
        }
        let lu = big.lu();
        let Some(mut sol) = lu.solve(&rhs) else {
            return RawSolution {
                x: self.x0.clone(),
                y: DVector::zeros(me),
                lambda: Vec::new(),
                status: SolveStatus::NumericFailure,
                iterations: 0,
                kkt_residual: f64::INFINITY,
            };
        };
        // The shift biases the solution by reg * ||sol||; iterative
        // refinement against the exact matrix removes it.
        for _ in 0..3 {
            let resid = &rhs - &exact * &sol;
            if resid.amax() <= 1e-14 * (1.0 + rhs.amax()) {
                break;
            }
            match lu.solve(&resid) {
                Some(corr) if corr.iter().all(|v| v.is_finite()) => sol += corr,
                _ => break,
            }
        }
        let x = sol.rows(0, n).into_owned();
        let y = if me > 0 {
            sol.rows(n, me).into_owned()
        } else {
            DVector::zeros(0)
        };
        let r_dual = (&self.p * &x + &self.g + self.a.transpose() * &y).amax();
        let r_eq = if me > 0 { (&self.a * &x - &self.b).amax() } else { 0.0 };
        // Scales deliberately exclude ||x||: a residual absorbed only by
        // a huge iterate means the objective is unbounded below.
        let dual_scale = 1.0 + self.g.amax() + self.p.amax();
        let prim_scale = 1.0 + if me > 0 { self.b.amax() } else { 0.0 };
        let kkt_residual = (r_dual / dual_scale).max(r_eq / prim_scale);
        let status = if kkt_residual <= 1e-7 && x.amax() <= 1e10 {
            SolveStatus::Optimal
        } else if r_eq / prim_scale > 1e-7 {
            // Equalities did not close; let phase-1 decide feasibility.
            SolveStatus::NumericFailure
        } else {
            SolveStatus::Unbounded
        };
        RawSolution {
            x,
            y,
            lambda: Vec::new(),
            status,
            iterations: 1,
            kkt_residual,
        }
    }
}

/// Write a plain-text dump of the program: one row per constraint,
/// space-separated, with a section tag in column one.
pub fn dump_program(p: &ConvexProgram, out: &mut dyn std::io::Write) -> std::io::Result<()> {
    writeln!(out, "n {}", p.n)?;
    writeln!(
        out,
        "sense {}",
        if p.sense == Sense::Maximize { "max" } else { "min" }
    )?;
    write!(out, "obj")?;
    for v in p.c.iter() {
        write!(out, " {v}")?;
    }
    writeln!(out, " {}", p.c0)?;
    if p.q.amax() > 0.0 {
        for i in 0..p.n {
            write!(out, "qrow")?;
            for j in 0..p.n {
                write!(out, " {}", p.q[(i, j)])?;
            }
            writeln!(out)?;
        }
    }
    for k in 0..p.a_eq.nrows() {
        write!(out, "eq")?;
        for j in 0..p.n {
            write!(out, " {}", p.a_eq[(k, j)])?;
        }
        writeln!(out, " {}", p.b_eq[k])?;
    }
    for k in 0..p.a_in.nrows() {
        write!(out, "le")?;
        for j in 0..p.n {
            write!(out, " {}", p.a_in[(k, j)])?;
        }
        writeln!(out, " {}", p.b_in[k])?;
    }
    write!(out, "lb")?;
    for v in p.lb.iter() {
        write!(out, " {v}")?;
    }
    writeln!(out)?;
    write!(out, "ub")?;
    for v in p.ub.iter() {
        write!(out, " {v}")?;
    }
    writeln!(out)?;
    if let Some(ball) = &p.ball {
        write!(out, "ball {}", ball.radius_sq)?;
        for (&i, z) in ball.indices.iter().zip(ball.center.iter()) {
            write!(out, " {i} {z}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn active_bound_quadratic() {
        // min x^2 s.t. x >= 1
        let mut p = ConvexProgram::new(1);
        p.q[(0, 0)] = 1.0;
        p.lb[0] = 1.0;
        let sol = solve(&p).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_close(sol.x[0], 1.0, 1e-6);
        assert_close(sol.objective, 1.0, 1e-6);
    }

    #[test]
    fn cheapest_variable_at_capacity() {
        // min x1 + 2 x2 s.t. x1 + x2 = 1, 0 <= x1 <= 0.6, x2 >= 0
        let mut p = ConvexProgram::new(2);
        p.c[0] = 1.0;
        p.c[1] = 2.0;
        p.a_eq = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        p.b_eq = DVector::from_element(1, 1.0);
        p.lb[0] = 0.0;
        p.ub[0] = 0.6;
        p.lb[1] = 0.0;
        let sol = solve(&p).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_close(sol.x[0], 0.6, 1e-6);
        assert_close(sol.x[1], 0.4, 1e-6);
        assert_close(sol.objective, 1.4, 1e-6);
    }

    #[test]
    fn ball_boundary_maximum() {
        // max x s.t. x^2 <= 4
        let mut p = ConvexProgram::new(1);
        p.c[0] = 1.0;
        p.sense = Sense::Maximize;
        p.ball = Some(BallConstraint {
            indices: vec![0],
            center: DVector::zeros(1),
            radius_sq: 4.0,
        });
        let sol = solve(&p).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_close(sol.x[0], 2.0, 1e-6);
        assert_close(sol.objective, 2.0, 1e-6);
    }

    #[test]
    fn empty_feasible_set() {
        // min (x-3)^2 s.t. x <= 1 and x >= 2
        let mut p = ConvexProgram::new(1);
        p.q[(0, 0)] = 1.0;
        p.c[0] = -6.0;
        p.c0 = 9.0;
        p.ub[0] = 1.0;
        p.lb[0] = 2.0;
        let sol = solve(&p).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn feasibility_probe_cases() {
        // box with equality inside
        let mut p = ConvexProgram::new(1);
        p.lb[0] = 0.0;
        p.ub[0] = 1.0;
        p.a_eq = DMatrix::from_row_slice(1, 1, &[1.0]);
        p.b_eq = DVector::from_element(1, 0.5);
        assert_eq!(check_feasible(&p).unwrap(), Feasibility::Feasible);

        let mut p = ConvexProgram::new(1);
        p.ub[0] = 0.0;
        p.lb[0] = 1.0;
        assert_eq!(check_feasible(&p).unwrap(), Feasibility::Infeasible);

        let p = ConvexProgram::new(1);
        assert_eq!(check_feasible(&p).unwrap(), Feasibility::Feasible);
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let mut p = ConvexProgram::new(1);
        p.a_eq = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        p.b_eq = DVector::from_vec(vec![0.0, 1.0]);
        assert_eq!(check_feasible(&p).unwrap(), Feasibility::Infeasible);
        assert_eq!(solve(&p).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn ball_closed_form_direction() {
        // max c'x s.t. ||x - z||^2 <= r2 has solution z + sqrt(r2) c/||c||.
        let mut p = ConvexProgram::new(3);
        p.sense = Sense::Maximize;
        p.c = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let z = DVector::from_vec(vec![0.3, 0.7, -0.2]);
        let r2 = 0.25;
        p.ball = Some(BallConstraint {
            indices: vec![0, 1, 2],
            center: z.clone(),
            radius_sq: r2,
        });
        let sol = solve(&p).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let cn = p.c.norm();
        for i in 0..3 {
            assert_close(sol.x[i], z[i] + r2.sqrt() * p.c[i] / cn, 1e-6);
        }
    }

    #[test]
    fn unbounded_direction_detected() {
        // min -x with x >= 0 only
        let mut p = ConvexProgram::new(1);
        p.c[0] = -1.0;
        p.lb[0] = 0.0;
        let sol = solve(&p).unwrap();
        assert_eq!(sol.status, SolveStatus::Unbounded);
    }

    #[test]
    fn maximize_requires_linear_objective() {
        let mut p = ConvexProgram::new(1);
        p.q[(0, 0)] = 1.0;
        p.sense = Sense::Maximize;
        assert!(solve(&p).is_err());
    }

    #[test]
    fn rejects_indefinite_q() {
        let mut p = ConvexProgram::new(2);
        p.q[(0, 0)] = 1.0;
        p.q[(1, 1)] = -1.0;
        assert!(solve(&p).is_err());
    }

    #[test]
    fn equality_constrained_qp_matches_kkt() {
        // min (x1-1)^2 + (x2+2)^2 s.t. x1 + x2 = 0 -> x = (1.5, -1.5)
        let mut p = ConvexProgram::new(2);
        p.q[(0, 0)] = 1.0;
        p.q[(1, 1)] = 1.0;
        p.c = DVector::from_vec(vec![-2.0, 4.0]);
        p.c0 = 5.0;
        p.a_eq = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        p.b_eq = DVector::from_element(1, 0.0);
        let sol = solve(&p).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_close(sol.x[0], 1.5, 1e-7);
        assert_close(sol.x[1], -1.5, 1e-7);
    }

    #[test]
    fn optimal_results_satisfy_reported_tolerances() {
        let mut p = ConvexProgram::new(2);
        p.c = DVector::from_vec(vec![1.0, 2.0]);
        p.a_eq = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        p.b_eq = DVector::from_element(1, 1.0);
        p.lb = DVector::from_vec(vec![0.0, 0.0]);
        p.ub = DVector::from_vec(vec![0.6, f64::INFINITY]);
        let sol = solve(&p).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.kkt_residual <= KKT_TOL);
        for (k, lam) in sol.in_duals.iter().enumerate() {
            assert!(*lam >= 0.0, "dual {k} negative");
        }
        // Primal feasibility of the reported point.
        assert!((sol.x[0] + sol.x[1] - 1.0).abs() <= FEAS_TOL);
        assert!(sol.x[0] >= -FEAS_TOL && sol.x[0] <= 0.6 + FEAS_TOL);
    }

    #[test]
    fn dump_program_round_readable() {
        let mut p = ConvexProgram::new(2);
        p.c = DVector::from_vec(vec![1.0, 2.0]);
        p.a_in = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        p.b_in = DVector::from_element(1, 1.0);
        let mut buf = Vec::new();
        dump_program(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("n 2"));
        assert!(text.contains("le 1 1 1"));
    }
}
