//! The averaged nonexpansive operator `T_cLiGME` and its fixed-point iteration.
//!
//! The iterate lives in `H = X x Z x Z_c` with `Z_c = Z x Zc`, where `Zc` is the
//! range space of the stacked restraint map. A fixed point `(x, v, w)` of the
//! operator yields a global minimizer `x` of
//! `1/2 ||y - A x||^2 + mu Psi_B(L x)` subject to `c x in C`.

use std::ops::Sub;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::gme::{self, ConvexityCertificate, GmeRegularizer, DENSE_CAP};
use crate::linop::{self, Operator, Vector};
use crate::prox::{ConvexSet, Penalty, ProductConstraint, ProductSet, MEMBERSHIP_TOL};

/// Default tolerance of the convexity certificate checked by [`CLigmeProblem::new`].
pub const CERTIFICATE_TOL: f64 = 1e-9;

const NORM_TOL: f64 = 1e-13;
const NORM_MAX_ITERS: usize = 200_000;

/// A convexly constrained LiGME problem.
#[derive(Debug, Clone)]
pub struct CLigmeProblem {
    a: Operator,
    y: Vector,
    mu: f64,
    penalty: Arc<dyn Penalty>,
    l: Operator,
    b: Operator,
    constraints: ProductConstraint,
    // derived
    l_c: Operator,
    b_gram: Operator,
    constraint_set: ProductSet,
    at_y: Vector,
}

impl CLigmeProblem {
    /// Builds the problem and rejects it unless the overall convexity
    /// certificate passes at [`CERTIFICATE_TOL`].
    pub fn new(
        a: Operator,
        y: Vector,
        mu: f64,
        penalty: Arc<dyn Penalty>,
        l: Operator,
        b: Operator,
        constraints: ProductConstraint,
    ) -> Result<Self> {
        let problem = Self::new_unchecked(a, y, mu, penalty, l, b, constraints)?;
        let cert = problem.certificate(CERTIFICATE_TOL)?;
        if !cert.passed {
            return Err(Error::CertificateFailed {
                lambda_min: cert.lambda_min,
                threshold: cert.tolerance,
            });
        }
        Ok(problem)
    }

    /// Builds the problem checking dimensions only.
    pub fn new_unchecked(
        a: Operator,
        y: Vector,
        mu: f64,
        penalty: Arc<dyn Penalty>,
        l: Operator,
        b: Operator,
        constraints: ProductConstraint,
    ) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
        }
        check_dim("observation length vs A codomain", a.codomain_dim(), y.len())?;
        check_dim("L domain vs A domain", a.domain_dim(), l.domain_dim())?;
        check_dim("penalty dimension vs L codomain", l.codomain_dim(), penalty.dim())?;
        check_dim("B domain vs L codomain", l.codomain_dim(), b.domain_dim())?;
        let l_c = match constraints.restraint() {
            Some(c) => {
                check_dim("restraint domain vs A domain", a.domain_dim(), c.domain_dim())?;
                linop::stack(l.clone(), c)?
            }
            None => l.clone(),
        };
        let b_gram = linop::gram(&b);
        let constraint_set = constraints.set();
        let at_y = a.apply_adjoint(&y);
        Ok(Self {
            a,
            y,
            mu,
            penalty,
            l,
            b,
            constraints,
            l_c,
            b_gram,
            constraint_set,
            at_y,
        })
    }

    /// Same operators and constraints with a different observation.
    pub fn with_observation(&self, y: Vector) -> Result<Self> {
        check_dim("observation length vs A codomain", self.a.codomain_dim(), y.len())?;
        let at_y = self.a.apply_adjoint(&y);
        Ok(Self {
            y,
            at_y,
            ..self.clone()
        })
    }

    pub fn a(&self) -> &Operator {
        &self.a
    }

    pub fn y(&self) -> &Vector {
        &self.y
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn penalty(&self) -> &Arc<dyn Penalty> {
        &self.penalty
    }

    pub fn l(&self) -> &Operator {
        &self.l
    }

    pub fn b(&self) -> &Operator {
        &self.b
    }

    pub fn constraints(&self) -> &ProductConstraint {
        &self.constraints
    }

    /// `L_c = (L, c)`.
    pub fn l_c(&self) -> &Operator {
        &self.l_c
    }

    /// `B_c = B (+) O` on `Z x Zc`.
    pub fn b_c(&self) -> Operator {
        let k = self.constraints.dim();
        if k == 0 {
            return self.b.clone();
        }
        linop::direct_sum(self.b.clone(), linop::zero(k, k))
    }

    /// `dim X`.
    pub fn x_dim(&self) -> usize {
        self.a.domain_dim()
    }

    /// `dim Z`.
    pub fn z_dim(&self) -> usize {
        self.l.codomain_dim()
    }

    /// `dim Z_c = dim Z + dim Zc`.
    pub fn zc_dim(&self) -> usize {
        self.l_c.codomain_dim()
    }

    pub fn certificate(&self, tol: f64) -> Result<ConvexityCertificate> {
        gme::check_overall_convexity(self.a.as_ref(), self.l.as_ref(), self.b.as_ref(), self.mu, tol)
    }

    pub fn regularizer(&self) -> GmeRegularizer {
        GmeRegularizer {
            penalty: self.penalty.clone(),
            enhancement: self.b.clone(),
            weight: self.mu,
        }
    }

    /// `(kappa/2) A*A + mu L_c* L_c`.
    fn sigma_operator(&self, kappa: f64) -> Operator {
        linop::linear_combination(vec![
            (0.5 * kappa, linop::gram(&self.a)),
            (self.mu, linop::gram(&self.l_c)),
        ])
        .expect("A and L_c share the domain X")
    }

    fn enhancement_norm(&self) -> f64 {
        linop::operator_norm(self.b.as_ref(), NORM_TOL, NORM_MAX_ITERS).value
    }
}

/// Step sizes and stopping rule of the fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    pub kappa: f64,
    pub sigma: f64,
    pub tau: f64,
    pub max_iters: usize,
    /// Threshold on `||state_{k+1} - state_k||_P / max(1, ||state_{k+1}||_P)`.
    pub stop_tol: f64,
    /// Record the objective after every iteration (expensive).
    pub track_objective: bool,
    pub objective_inner_tol: f64,
}

impl SolverParams {
    pub const DEFAULT_MAX_ITERS: usize = 5000;
    pub const DEFAULT_STOP_TOL: f64 = 1e-10;

    /// Step sizes from [`compute_step_sizes`] with default stopping settings.
    pub fn from_kappa(kappa: f64, problem: &CLigmeProblem) -> Result<Self> {
        let (sigma, tau) = compute_step_sizes(kappa, problem)?;
        Ok(Self {
            kappa,
            sigma,
            tau,
            max_iters: Self::DEFAULT_MAX_ITERS,
            stop_tol: Self::DEFAULT_STOP_TOL,
            track_objective: false,
            objective_inner_tol: 1e-12,
        })
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_stop_tol(mut self, stop_tol: f64) -> Self {
        self.stop_tol = stop_tol;
        self
    }

    pub fn with_objective_tracking(mut self, on: bool) -> Self {
        self.track_objective = on;
        self
    }
}

/// `(sigma, tau)` from the standard choice
/// `sigma = ||(kappa/2) A*A + mu L_c* L_c|| + (kappa - 1)` and
/// `tau = (kappa/2 + 2/kappa) mu ||B||^2 + (kappa - 1)`.
pub fn compute_step_sizes(kappa: f64, problem: &CLigmeProblem) -> Result<(f64, f64)> {
    if !(kappa > 1.0) {
        return Err(Error::InvalidArgument(format!("kappa must exceed 1, got {kappa}")));
    }
    let s = linop::operator_norm(problem.sigma_operator(kappa).as_ref(), NORM_TOL, NORM_MAX_ITERS);
    if !s.converged {
        log::warn!("step sizes: norm of the sigma operator did not converge");
    }
    // symmetric PSD, so the operator norm is its largest eigenvalue
    let sigma = s.value + (kappa - 1.0);
    let b_norm = problem.enhancement_norm();
    let tau = (0.5 * kappa + 2.0 / kappa) * problem.mu * b_norm * b_norm + (kappa - 1.0);
    Ok((sigma, tau))
}

/// Checks `sigma Id - (kappa/2) A*A - mu L_c* L_c > 0` and
/// `tau >= (kappa/2 + 2/kappa) mu ||B||^2`.
pub fn verify_step_condition(params: &SolverParams, problem: &CLigmeProblem) -> bool {
    let kappa = params.kappa;
    if !(kappa > 1.0) || !(params.sigma > 0.0) || !(params.tau > 0.0) {
        return false;
    }
    let op = problem.sigma_operator(kappa);
    let first = if op.domain_dim() <= DENSE_CAP {
        let m = linop::densify(op.as_ref());
        let shifted = DMatrix::identity(m.nrows(), m.ncols()) * params.sigma - m;
        gme::eigen_range(&shifted).0 > 0.0
    } else {
        params.sigma > linop::operator_norm(op.as_ref(), NORM_TOL, NORM_MAX_ITERS).value
    };
    let b_norm = problem.enhancement_norm();
    let second = params.tau >= (0.5 * kappa + 2.0 / kappa) * problem.mu * b_norm * b_norm - 1e-12;
    first && second
}

/// A point `(x, v, w)` of `X x Z x Z_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x: Vector,
    pub v: Vector,
    pub w: Vector,
}

impl SolverState {
    /// All-zero state of the right dimensions.
    pub fn zeros(problem: &CLigmeProblem) -> Self {
        Self {
            x: Vector::zeros(problem.x_dim()),
            v: Vector::zeros(problem.z_dim()),
            w: Vector::zeros(problem.zc_dim()),
        }
    }

    fn check(&self, problem: &CLigmeProblem) -> Result<()> {
        check_dim("state x", problem.x_dim(), self.x.len())?;
        check_dim("state v", problem.z_dim(), self.v.len())?;
        check_dim("state w", problem.zc_dim(), self.w.len())
    }
}

impl Sub for &SolverState {
    type Output = SolverState;

    fn sub(self, rhs: &SolverState) -> SolverState {
        SolverState {
            x: &self.x - &rhs.x,
            v: &self.v - &rhs.v,
            w: &self.w - &rhs.w,
        }
    }
}

/// Products of the current state reused by the next step.
#[derive(Debug, Clone)]
struct StepCache {
    /// `L_c x`
    lcx: Vector,
    /// `B*B L x`
    glx: Vector,
    /// `B*B v`
    gv: Vector,
}

impl StepCache {
    fn new(state: &SolverState, problem: &CLigmeProblem) -> Self {
        let lcx = problem.l_c.apply(&state.x);
        let z = problem.z_dim();
        let (glx, gv) = if problem.b_gram.is_zero() {
            (Vector::zeros(z), Vector::zeros(z))
        } else {
            (
                problem.b_gram.apply(&lcx.rows(0, z).into_owned()),
                problem.b_gram.apply(&state.v),
            )
        };
        Self { lcx, glx, gv }
    }
}

/// Quadratic form `<d, P d>` given the products `L_c dx` and `B*B dv`.
fn p_quadratic(
    d: &SolverState,
    lc_dx: &Vector,
    g_dv: &Vector,
    z: usize,
    mu: f64,
    params: &SolverParams,
) -> (f64, f64) {
    let diag = params.sigma * d.x.norm_squared()
        + params.tau * d.v.norm_squared()
        + mu * d.w.norm_squared();
    let cross = 2.0 * mu * lc_dx.rows(0, z).dot(g_dv) + 2.0 * mu * lc_dx.dot(&d.w);
    (diag - cross, diag)
}

fn p_norm_from_parts(
    d: &SolverState,
    lc_dx: &Vector,
    g_dv: &Vector,
    problem: &CLigmeProblem,
    params: &SolverParams,
    floor: f64,
) -> Result<f64> {
    let (q, diag) = p_quadratic(d, lc_dx, g_dv, problem.z_dim(), problem.mu, params);
    if q < -1e-10 * diag - floor {
        return Err(Error::StepCondition(format!(
            "P quadratic form is negative ({q:e})"
        )));
    }
    Ok(q.max(0.0).sqrt())
}

/// `||d||_P` for the block operator
/// `P = [[sigma Id, -mu L*B*B, -mu L_c*], [-mu B*B L, tau Id, O], [-mu L_c, O, mu Id]]`.
pub fn p_norm(delta: &SolverState, problem: &CLigmeProblem, params: &SolverParams) -> Result<f64> {
    delta.check(problem)?;
    let lc_dx = problem.l_c.apply(&delta.x);
    let g_dv = problem.b_gram.apply(&delta.v);
    p_norm_from_parts(delta, &lc_dx, &g_dv, problem, params, 0.0)
}

/// Densifies `P` as an `(n + l + k) x (n + l + k)` matrix.
pub fn p_matrix(problem: &CLigmeProblem, params: &SolverParams) -> Result<DMatrix<f64>> {
    let (n, z, zc) = (problem.x_dim(), problem.z_dim(), problem.zc_dim());
    let total = n + z + zc;
    if total > 4 * DENSE_CAP {
        return Err(Error::TooLarge {
            dim: total,
            cap: 4 * DENSE_CAP,
        });
    }
    let mu = problem.mu;
    let l = linop::densify(problem.l.as_ref());
    let g = linop::densify(problem.b_gram.as_ref());
    let lc = linop::densify(problem.l_c.as_ref());
    let glt = &g * &l; // B*B L
    let mut p = DMatrix::zeros(total, total);
    p.view_mut((0, 0), (n, n)).fill_with_identity();
    p.view_mut((0, 0), (n, n)).scale_mut(params.sigma);
    p.view_mut((n, n), (z, z)).fill_with_identity();
    p.view_mut((n, n), (z, z)).scale_mut(params.tau);
    p.view_mut((n + z, n + z), (zc, zc)).fill_with_identity();
    p.view_mut((n + z, n + z), (zc, zc)).scale_mut(mu);
    p.view_mut((n, 0), (z, n)).copy_from(&(&glt * -mu));
    p.view_mut((0, n), (n, z)).copy_from(&(glt.transpose() * -mu));
    p.view_mut((n + z, 0), (zc, n)).copy_from(&(&lc * -mu));
    p.view_mut((0, n + z), (n, zc)).copy_from(&(lc.transpose() * -mu));
    Ok(p)
}

fn step_cached(
    state: &SolverState,
    cache: &StepCache,
    problem: &CLigmeProblem,
    params: &SolverParams,
) -> (SolverState, StepCache) {
    let (mu, sigma, tau) = (problem.mu, params.sigma, params.tau);
    let z = problem.z_dim();
    let enhanced = !problem.b_gram.is_zero();

    // xi = x - (1/sigma) [A*(Ax - y) + mu L*(B*B v - B*B L x) + mu L_c* w]
    let mut t = state.w.clone();
    if enhanced {
        let mut head = t.rows_mut(0, z);
        head += &cache.gv;
        head -= &cache.glx;
    }
    let mut grad = problem.a.apply_adjoint(&problem.a.apply(&state.x));
    grad -= &problem.at_y;
    grad.axpy(mu, &problem.l_c.apply_adjoint(&t), 1.0);
    let xi = &state.x - grad / sigma;

    let lcxi = problem.l_c.apply(&xi);
    let glxi = if enhanced {
        problem.b_gram.apply(&lcxi.rows(0, z).into_owned())
    } else {
        Vector::zeros(z)
    };

    // zeta = Prox_{(mu/tau) Psi}[v + (mu/tau)(2 B*B L xi - B*B L x - B*B v)]
    let zeta = if enhanced {
        let arg = &state.v + (&glxi * 2.0 - &cache.glx - &cache.gv) * (mu / tau);
        problem.penalty.prox(mu / tau, &arg)
    } else {
        problem.penalty.prox(mu / tau, &state.v)
    };
    let gzeta = if enhanced {
        problem.b_gram.apply(&zeta)
    } else {
        Vector::zeros(z)
    };

    // eta = (Id - Prox_{Psi (+) iota_C})(2 L_c xi - L_c x + w)
    let u = &lcxi * 2.0 - &cache.lcx + &state.w;
    let mut eta = u.clone();
    {
        let head = u.rows(0, z).into_owned();
        let mut out = eta.rows_mut(0, z);
        out -= problem.penalty.prox(1.0, &head);
    }
    let k = problem.zc_dim() - z;
    if k > 0 {
        let tail = u.rows(z, k).into_owned();
        let mut out = eta.rows_mut(z, k);
        out -= problem.constraint_set.project(&tail);
    }

    (
        SolverState {
            x: xi,
            v: zeta,
            w: eta,
        },
        StepCache {
            lcx: lcxi,
            glx: glxi,
            gv: gzeta,
        },
    )
}

/// One application of `T_cLiGME`.
pub fn t_cligme_step(
    state: &SolverState,
    problem: &CLigmeProblem,
    params: &SolverParams,
) -> Result<SolverState> {
    state.check(problem)?;
    let cache = StepCache::new(state, problem);
    Ok(step_cached(state, &cache, problem, params).0)
}

/// Diagnostics of a [`solve`] run.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: Vector,
    pub state: SolverState,
    pub iterations: usize,
    /// `||state_{k+1} - state_k||_P` for every iteration.
    pub residuals: Vec<f64>,
    /// Objective after every iteration, when tracking is enabled.
    pub objectives: Option<Vec<f64>>,
    pub converged: bool,
}

/// Runs the fixed-point iteration from `init`.
pub fn solve(
    problem: &CLigmeProblem,
    params: &SolverParams,
    init: SolverState,
) -> Result<SolveReport> {
    solve_with(problem, params, init, |_, _| {})
}

/// Like [`solve`], calling `observer(k, state_k)` after every iteration
/// `k = 1, 2, ...`.
pub fn solve_with(
    problem: &CLigmeProblem,
    params: &SolverParams,
    init: SolverState,
    mut observer: impl FnMut(usize, &SolverState),
) -> Result<SolveReport> {
    init.check(problem)?;
    if !(params.kappa > 1.0 && params.sigma > 0.0 && params.tau > 0.0) {
        return Err(Error::StepCondition(format!(
            "need kappa > 1 and positive step sizes, got {params:?}"
        )));
    }
    let mut state = init;
    let mut cache = StepCache::new(&state, problem);
    let mut residuals = Vec::with_capacity(params.max_iters.min(1 << 20));
    let mut objectives = params.track_objective.then(Vec::new);
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=params.max_iters {
        let (next, next_cache) = step_cached(&state, &cache, problem, params);
        let delta = &next - &state;
        let lc_dx = &next_cache.lcx - &cache.lcx;
        let g_dv = &next_cache.gv - &cache.gv;
        let scale = p_norm_from_parts(&next, &next_cache.lcx, &next_cache.gv, problem, params, 0.0)?;
        // the differenced products carry rounding error relative to the
        // state, not to the (possibly tiny) step
        let residual =
            p_norm_from_parts(&delta, &lc_dx, &g_dv, problem, params, 1e-13 * scale * scale)?;
        residuals.push(residual);
        state = next;
        cache = next_cache;
        iterations = k;
        observer(k, &state);
        if let Some(objs) = objectives.as_mut() {
            objs.push(objective(problem, &state.x, params.objective_inner_tol));
        }
        if residual / scale.max(1.0) < params.stop_tol {
            converged = true;
            break;
        }
    }
    Ok(SolveReport {
        x: state.x.clone(),
        state,
        iterations,
        residuals,
        objectives,
        converged,
    })
}

/// `1/2 ||y - Ax||^2 + mu Psi_B(Lx)` when `c x in C`, `+inf` otherwise.
pub fn objective(problem: &CLigmeProblem, x: &Vector, inner_tol: f64) -> f64 {
    if !problem.constraints.is_satisfied(x, MEMBERSHIP_TOL) {
        return f64::INFINITY;
    }
    let fit = 0.5 * (&problem.y - problem.a.apply(x)).norm_squared();
    let lx = problem.l.apply(x);
    fit + problem.mu * gme::eval_gme_penalty(&problem.regularizer(), &lx, inner_tol).value
}

/// Heuristic check that the constraints admit a common point: 50 projected
/// Landweber steps on `x -> 1/2 dist(c x, C)^2` from the origin must reach
/// membership within `tol`.
pub fn feasibility_probe(problem: &CLigmeProblem, tol: f64) -> bool {
    let Some(c) = problem.constraints.restraint() else {
        return true;
    };
    let set = problem.constraints.set();
    let norm = linop::operator_norm(c.as_ref(), 1e-10, 10_000).value;
    if norm == 0.0 {
        return set.contains(&Vector::zeros(set.dim()), tol);
    }
    let step = 1.0 / (norm * norm);
    let mut x = Vector::zeros(problem.x_dim());
    for _ in 0..50 {
        let cx = c.apply(&x);
        let r = &cx - set.project(&cx);
        x -= c.apply_adjoint(&r) * step;
    }
    let ok = problem.constraints.is_satisfied(&x, tol);
    if !ok {
        log::warn!("feasibility probe: no common point found; constraints may be inconsistent");
    }
    ok
}
