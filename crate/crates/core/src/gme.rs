//! Generalized Moreau enhanced (GME) penalties.
//!
//! `Psi_B(z) = Psi(z) - min_v [ Psi(v) + 1/2 ||B (z - v)||^2 ]`. Choosing `B`
//! so that `A^T A - mu L^T B^T B L` stays positive semidefinite keeps the whole
//! regularized least-squares objective convex even though `Psi_B o L` is not.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{check_dim, Error, Result};
use crate::linop::{self, LinearMap, Operator, Vector};
use crate::prox::Penalty;

/// Largest domain dimension the dense certificate will densify.
pub const DENSE_CAP: usize = 1024;

/// Relative eigenvalue cutoff for the pseudoinverse and for clipping.
const EIG_CUTOFF: f64 = 1e-12;

/// Negative eigenvalues of the design matrix beyond `-NEG_EIG_TOL * ||A||^2`
/// are treated as a numerical failure rather than round-off.
const NEG_EIG_TOL: f64 = 1e-8;

/// Iteration cap of the inner problem in [`eval_gme_penalty`].
pub const INNER_ITER_CAP: usize = 100_000;

/// A base penalty `Psi`, its enhancement matrix `B` and the weight `mu`.
#[derive(Debug, Clone)]
pub struct GmeRegularizer {
    pub penalty: Arc<dyn Penalty>,
    pub enhancement: Operator,
    pub weight: f64,
}

/// Outcome of [`eval_gme_penalty`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmeValue {
    pub value: f64,
    pub inner_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexityCertificate {
    /// Smallest eigenvalue of `A^T A - mu L^T B^T B L`.
    pub lambda_min: f64,
    pub passed: bool,
    /// Absolute threshold: `passed` iff `lambda_min >= -tolerance`.
    pub tolerance: f64,
}

fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen()
}

/// Smallest and largest eigenvalues of a symmetric matrix.
pub fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    if m.is_empty() {
        return (0.0, 0.0);
    }
    let eig = sym_eigen(m);
    (eig.eigenvalues.min(), eig.eigenvalues.max())
}

fn spectral_norm_sq(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let s = a.singular_values().max();
    s * s
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let tol = sv.max() * m.nrows().max(m.ncols()) as f64 * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Completes a full-row-rank `l x n` matrix to a nonsingular `n x n` matrix.
///
/// The last `l` rows are `L` itself; the first `n - l` rows are an
/// orthonormal basis of the orthogonal complement of its row space, so
/// `[O I] L~ = L`.
pub fn complete_to_nonsingular(l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, n) = l.shape();
    let rank = numerical_rank(l);
    if rank < rows || rows > n {
        return Err(Error::RankDeficient {
            rank,
            required: rows,
        });
    }
    let k = n - rows;
    let mut out = DMatrix::zeros(n, n);
    out.rows_mut(k, rows).copy_from(l);
    if k == 0 {
        return Ok(out);
    }
    // null space of L = eigenvectors of L^T L with the k smallest eigenvalues
    let eig = sym_eigen(&l.tr_mul(l));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    for (r, &idx) in order.iter().take(k).enumerate() {
        let mut u = eig.eigenvectors.column(idx).into_owned();
        // sign convention: largest-magnitude entry positive
        let pivot = u.iamax();
        if u[pivot] < 0.0 {
            u.neg_mut();
        }
        out.row_mut(r).copy_from(&u.transpose());
    }
    Ok(out)
}

/// Moore-Penrose pseudoinverse of a symmetric PSD matrix.
fn psd_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = sym_eigen(m);
    let cutoff = EIG_CUTOFF * eig.eigenvalues.amax();
    let inv = eig
        .eigenvalues
        .map(|lam| if lam > cutoff { 1.0 / lam } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Designs `B_theta = sqrt(theta / mu) Lambda^{1/2} U^T` (size `l x l`) so that
/// `A^T A - mu L^T B^T B L` is positive semidefinite for every `theta` in `[0, 1]`.
pub fn design_b_theta(
    a: &DMatrix<f64>,
    l: &DMatrix<f64>,
    mu: f64,
    theta: f64,
) -> Result<DMatrix<f64>> {
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::InvalidArgument(format!(
            "theta must lie in [0, 1], got {theta}"
        )));
    }
    check_dim("design_b_theta: A columns vs L columns", l.ncols(), a.ncols())?;
    let (rows, n) = l.shape();
    let completed = complete_to_nonsingular(l)?;
    if theta == 0.0 {
        return Ok(DMatrix::zeros(rows, rows));
    }

    // A L~^{-1}, via L~^T X^T = A^T
    let a_tilde_t = completed
        .transpose()
        .lu()
        .solve(&a.transpose())
        .ok_or_else(|| Error::NumericalFailure("completed L is singular".into()))?;
    let a_tilde = a_tilde_t.transpose();
    let k = n - rows;
    let a1 = a_tilde.columns(0, k).into_owned();
    let a2 = a_tilde.columns(k, rows).into_owned();

    let mut schur = a2.tr_mul(&a2);
    if k > 0 {
        let cross = a1.tr_mul(&a2);
        schur -= cross.tr_mul(&psd_pinv(&a1.tr_mul(&a1))) * &cross;
    }

    let eig = sym_eigen(&schur);
    let norm_a = spectral_norm_sq(a);
    let lam_min = eig.eigenvalues.min();
    if lam_min < -NEG_EIG_TOL * norm_a {
        return Err(Error::NumericalFailure(format!(
            "design matrix has eigenvalue {lam_min:e} below -{:e}",
            NEG_EIG_TOL * norm_a
        )));
    }
    let clip = EIG_CUTOFF * eig.eigenvalues.max().max(0.0);
    let root = eig
        .eigenvalues
        .map(|lam| if lam > clip { lam.sqrt() } else { 0.0 });
    let scale = (theta / mu).sqrt();
    Ok(DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose() * scale)
}

/// One penalty block for [`design_b_multi`].
#[derive(Debug, Clone)]
pub struct PenaltyBlock {
    pub l: DMatrix<f64>,
    /// Block weight `mu_i` inside `Psi = (+)_i mu_i Psi_i`.
    pub weight: f64,
    pub theta: f64,
    /// Share `omega_i` of `A^T A` granted to this block; shares sum to one.
    pub omega: f64,
}

/// Designs the block-diagonal enhancement for a sum of penalties.
///
/// Each block gets `B_i` from [`design_b_theta`] applied to
/// `(sqrt(omega_i / mu) A, L_i, mu_i)`, and the returned operator acts as
/// `(z_1, ..., z_M) -> (sqrt(mu_1) B_1 z_1, ..., sqrt(mu_M) B_M z_M)`.
pub fn design_b_multi(a: &DMatrix<f64>, blocks: &[PenaltyBlock], mu: f64) -> Result<Operator> {
    if blocks.is_empty() {
        return Err(Error::InvalidArgument("no penalty blocks".into()));
    }
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
    }
    if let Some(b) = blocks.iter().find(|b| !(b.omega > 0.0) || !(b.weight > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "block weights and shares must be positive (mu_i = {}, omega_i = {})",
            b.weight, b.omega
        )));
    }
    let total: f64 = blocks.iter().map(|b| b.omega).sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "block shares must sum to 1, got {total}"
        )));
    }
    let mut ops = Vec::with_capacity(blocks.len());
    for b in blocks {
        let scaled_a = a * (b.omega / mu).sqrt();
        let bi = design_b_theta(&scaled_a, &b.l, b.weight, b.theta)?;
        let dim = bi.nrows();
        ops.push(if b.theta == 0.0 {
            linop::zero(dim, dim)
        } else {
            linop::dense(bi * b.weight.sqrt())
        });
    }
    Ok(linop::direct_sum_all(ops))
}

/// Evaluates `Psi_B(z)`; the inner minimum is found by proximal gradient.
///
/// This is a reporting utility. It starts the inner iteration at `v = z`,
/// so the result always lies in `[0, Psi(z)]` for nonnegative penalties.
pub fn eval_gme_penalty(reg: &GmeRegularizer, z: &Vector, inner_tol: f64) -> GmeValue {
    let psi_z = reg.penalty.eval(z);
    let b = &reg.enhancement;
    if b.is_zero() {
        return GmeValue {
            value: psi_z,
            inner_iterations: 0,
            converged: true,
        };
    }
    let lip = linop::operator_norm(b.as_ref(), 1e-12, 10_000).value.powi(2);
    if lip == 0.0 {
        return GmeValue {
            value: psi_z,
            inner_iterations: 0,
            converged: true,
        };
    }
    let step = 1.0 / lip;
    let inner = |v: &Vector| reg.penalty.eval(v) + 0.5 * b.apply(&(z - v)).norm_squared();

    let mut v = z.clone();
    let mut value = psi_z;
    for it in 1..=INNER_ITER_CAP {
        let grad = b.apply_adjoint(&b.apply(&(&v - z)));
        let next = reg.penalty.prox(step, &(&v - grad * step));
        let next_value = inner(&next);
        let decrease = value - next_value;
        if next_value <= value {
            v = next;
            value = next_value;
        }
        if decrease < inner_tol {
            return GmeValue {
                value: psi_z - value,
                inner_iterations: it,
                converged: true,
            };
        }
    }
    log::warn!("eval_gme_penalty: inner iteration hit the cap of {INNER_ITER_CAP}");
    GmeValue {
        value: psi_z - value,
        inner_iterations: INNER_ITER_CAP,
        converged: false,
    }
}

/// Densifies `A^T A - mu L^T B^T B L`.
pub fn certificate_matrix(
    a: &dyn LinearMap,
    l: &dyn LinearMap,
    b: &dyn LinearMap,
    mu: f64,
) -> Result<DMatrix<f64>> {
    let n = a.domain_dim();
    check_dim("certificate: L domain", n, l.domain_dim())?;
    check_dim("certificate: B domain", l.codomain_dim(), b.domain_dim())?;
    if n > DENSE_CAP {
        return Err(Error::TooLarge {
            dim: n,
            cap: DENSE_CAP,
        });
    }
    let ad = linop::densify(a);
    let mut m = ad.tr_mul(&ad);
    if !b.is_zero() {
        let bl = &linop::densify(b) * &linop::densify(l);
        m -= bl.tr_mul(&bl) * mu;
    }
    Ok((&m + m.transpose()) * 0.5)
}

/// Numerically checks `A^T A - mu L^T B^T B L >= 0`.
///
/// Passes when the smallest eigenvalue is at least `-tol * (1 + ||A||^2)`.
pub fn check_overall_convexity(
    a: &dyn LinearMap,
    l: &dyn LinearMap,
    b: &dyn LinearMap,
    mu: f64,
    tol: f64,
) -> Result<ConvexityCertificate> {
    let m = certificate_matrix(a, l, b, mu)?;
    let ad = linop::densify(a);
    let norm_a = spectral_norm_sq(&ad);
    let (lambda_min, _) = eigen_range(&m);
    let tolerance = tol * (1.0 + norm_a);
    Ok(ConvexityCertificate {
        lambda_min,
        passed: lambda_min >= -tolerance,
        tolerance,
    })
}
