//! Linear operators with adjoints.
//!
//! Every operator is an immutable [`Operator`] (`Arc<dyn LinearMap>`), so the
//! same block can be shared between a stack, a direct sum and a Gram product
//! without copying. Images are vectorized column-major: pixel `(i, j)` of an
//! `N x N` image lives at index `i + j * N`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};

pub type Vector = DVector<f64>;

/// Shared handle to a linear operator.
pub type Operator = Arc<dyn LinearMap>;

/// Seed of the start vector used by [`operator_norm`].
pub const POWER_ITERATION_SEED: u64 = 0x0c11_67e5;

/// A real linear map `R^domain_dim -> R^codomain_dim` together with its adjoint.
pub trait LinearMap: Send + Sync + fmt::Debug {
    fn domain_dim(&self) -> usize;

    fn codomain_dim(&self) -> usize;

    /// Forward action `x -> Lx`. `x.len()` must equal `domain_dim`.
    fn apply(&self, x: &Vector) -> Vector;

    /// Adjoint action `y -> L*y`. `y.len()` must equal `codomain_dim`.
    fn apply_adjoint(&self, y: &Vector) -> Vector;

    /// True when the map is known to be identically zero.
    fn is_zero(&self) -> bool {
        false
    }

    /// A cheaper representation of `L*L`, when the operator knows one.
    fn gram(&self) -> Option<Operator> {
        None
    }
}

/// Returns `L*L` as an operator, using a structured form when available.
pub fn gram(op: &Operator) -> Operator {
    op.gram().unwrap_or_else(|| {
        Arc::new(Compose {
            outer: adjoint(op),
            inner: op.clone(),
        })
    })
}

/// Dense matrix operator.
#[derive(Debug, Clone)]
pub struct DenseMap {
    matrix: DMatrix<f64>,
}

impl DenseMap {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl LinearMap for DenseMap {
    fn domain_dim(&self) -> usize {
        self.matrix.ncols()
    }

    fn codomain_dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, x: &Vector) -> Vector {
        &self.matrix * x
    }

    fn apply_adjoint(&self, y: &Vector) -> Vector {
        self.matrix.tr_mul(y)
    }

    fn is_zero(&self) -> bool {
        self.matrix.iter().all(|&v| v == 0.0)
    }

    fn gram(&self) -> Option<Operator> {
        if self.is_zero() {
            return Some(zero(self.domain_dim(), self.domain_dim()));
        }
        Some(Arc::new(DenseMap::new(self.matrix.tr_mul(&self.matrix))))
    }
}

pub fn dense(matrix: DMatrix<f64>) -> Operator {
    Arc::new(DenseMap::new(matrix))
}

/// `diag(d)` as a dense operator.
pub fn diagonal(d: &[f64]) -> Operator {
    dense(DMatrix::from_diagonal(&Vector::from_column_slice(d)))
}

#[derive(Debug, Clone, Copy)]
pub struct Identity {
    dim: usize,
}

impl LinearMap for Identity {
    fn domain_dim(&self) -> usize {
        self.dim
    }

    fn codomain_dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &Vector) -> Vector {
        x.clone()
    }

    fn apply_adjoint(&self, y: &Vector) -> Vector {
        y.clone()
    }

    fn gram(&self) -> Option<Operator> {
        Some(identity(self.dim))
    }
}

pub fn identity(dim: usize) -> Operator {
    Arc::new(Identity { dim })
}

/// The zero map `R^domain -> R^codomain`.
#[derive(Debug, Clone, Copy)]
pub struct Zero {
    domain: usize,
    codomain: usize,
}

impl LinearMap for Zero {
    fn domain_dim(&self) -> usize {
        self.domain
    }

    fn codomain_dim(&self) -> usize {
        self.codomain
    }

    fn apply(&self, _x: &Vector) -> Vector {
        Vector::zeros(self.codomain)
    }

    fn apply_adjoint(&self, _y: &Vector) -> Vector {
        Vector::zeros(self.domain)
    }

    fn is_zero(&self) -> bool {
        true
    }

    fn gram(&self) -> Option<Operator> {
        Some(zero(self.domain, self.domain))
    }
}

pub fn zero(domain_dim: usize, codomain_dim: usize) -> Operator {
    Arc::new(Zero {
        domain: domain_dim,
        codomain: codomain_dim,
    })
}

/// `alpha * L`.
#[derive(Debug, Clone)]
pub struct Scaled {
    alpha: f64,
    inner: Operator,
}

impl LinearMap for Scaled {
    fn domain_dim(&self) -> usize {
        self.inner.domain_dim()
    }

    fn codomain_dim(&self) -> usize {
        self.inner.codomain_dim()
    }

    fn apply(&self, x: &Vector) -> Vector {
        self.inner.apply(x) * self.alpha
    }

    fn apply_adjoint(&self, y: &Vector) -> Vector {
        self.inner.apply_adjoint(y) * self.alpha
    }

    fn is_zero(&self) -> bool {
        self.alpha == 0.0 || self.inner.is_zero()
    }

    fn gram(&self) -> Option<Operator> {
        Some(scaled(self.alpha * self.alpha, gram(&self.inner)))
    }
}

pub fn scaled(alpha: f64, inner: Operator) -> Operator {
    if alpha == 0.0 || inner.is_zero() {
        return zero(inner.domain_dim(), inner.codomain_dim());
    }
    Arc::new(Scaled { alpha, inner })
}

/// Adjoint of another operator.
#[derive(Debug, Clone)]
pub struct Adjoint {
    inner: Operator,
}

impl LinearMap for Adjoint {
    fn domain_dim(&self) -> usize {
        self.inner.codomain_dim()
    }

    fn codomain_dim(&self) -> usize {
        self.inner.domain_dim()
    }

    fn apply(&self, x: &Vector) -> Vector {
        self.inner.apply_adjoint(x)
    }

    fn apply_adjoint(&self, y: &Vector) -> Vector {
        self.inner.apply(y)
    }

    fn is_zero(&self) -> bool {
        self.inner.is_zero()
    }
}

pub fn adjoint(op: &Operator) -> Operator {
    Arc::new(Adjoint { inner: op.clone() })
}

/// `outer ∘ inner`.
#[derive(Debug, Clone)]
pub struct Compose {
    outer: Operator,
    inner: Operator,
}

impl LinearMap for Compose {
    fn domain_dim(&self) -> usize {
        self.inner.domain_dim()
    }

    fn codomain_dim(&self) -> usize {
        self.outer.codomain_dim()
    }

    fn apply(&self, x: &Vector) -> Vector {
        self.outer.apply(&self.inner.apply(x))
    }

    fn apply_adjoint(&self, y: &Vector) -> Vector {
        self.inner.apply_adjoint(&self.outer.apply_adjoint(y))
    }

    fn is_zero(&self) -> bool {
        self.outer.is_zero() || self.inner.is_zero()
    }
}

pub fn compose(outer: Operator, inner: Operator) -> Result<Operator> {
    check_dim("compose", outer.domain_dim(), inner.codomain_dim())?;
    Ok(Arc::new(Compose { outer, inner }))
}

/// `sum_k c_k L_k` over operators sharing domain and codomain.
#[derive(Debug, Clone)]
pub struct LinearCombination {
    terms: Vec<(f64, Operator)>,
    domain: usize,
    codomain: usize,
}

impl LinearMap for LinearCombination {
    fn domain_dim(&self) -> usize {
        self.domain
    }

    fn codomain_dim(&self) -> usize {
        self.codomain
    }

    fn apply(&self, x: &Vector) -> Vector {
        let mut out = Vector::zeros(self.codomain);
        for (c, op) in &self.terms {
            out.axpy(*c, &op.apply(x), 1.0);
        }
        out
    }

    fn apply_adjoint(&self, y: &Vector) -> Vector {
        let mut out = Vector::zeros(self.domain);
        for (c, op) in &self.terms {
            out.axpy(*c, &op.apply_adjoint(y), 1.0);
        }
        out
    }

    fn is_zero(&self) -> bool {
        self.terms.iter().all(|(c, op)| *c == 0.0 || op.is_zero())
    }
}

pub fn linear_combination(terms: Vec<(f64, Operator)>) -> Result<Operator> {
    let first = terms
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty linear combination".into()))?;
    let (domain, codomain) = (first.1.domain_dim(), first.1.codomain_dim());
    for (_, op) in &terms {
        check_dim("linear combination domain", domain, op.domain_dim())?;
        check_dim("linear combination codomain", codomain, op.codomain_dim())?;
    }
    let terms: Vec<_> = terms
        .into_iter()
        .filter(|(c, op)| *c != 0.0 && !op.is_zero())
        .collect();
    Ok(Arc::new(LinearCombination {
        terms,
        domain,
        codomain,
    }))
}

/// Vertical concatenation `x -> (L_1 x, ..., L_k x)`.
#[derive(Debug, Clone)]
pub struct Stack {
    blocks: Vec<Operator>,
    domain: usize,
    codomain: usize,
}

impl Stack {
    pub fn blocks(&self) -> &[Operator] {
        &self.blocks
    }
}

impl LinearMap for Stack {
    fn domain_dim(&self) -> usize {
        self.domain
    }

    fn codomain_dim(&self) -> usize {
        self.codomain
    }

    fn apply(&self, x: &Vector) -> Vector {
        let mut out = Vector::zeros(self.codomain);
        let mut offset = 0;
        for block in &self.blocks {
            let part = block.apply(x);
            out.rows_mut(offset, part.len()).copy_from(&part);
            offset += part.len();
        }
        out
    }

    fn apply_adjoint(&self, y: &Vector) -> Vector {
        let mut out = Vector::zeros(self.domain);
        let mut offset = 0;
        for block in &self.blocks {
            let m = block.codomain_dim();
            let part = y.rows(offset, m).into_owned();
            out += block.apply_adjoint(&part);
            offset += m;
        }
        out
    }

    fn is_zero(&self) -> bool {
        self.blocks.iter().all(|b| b.is_zero())
    }
}

/// Stacks two operators sharing a domain.
pub fn stack(upper: Operator, lower: Operator) -> Result<Operator> {
    stack_all(vec![upper, lower])
}

pub fn stack_all(blocks: Vec<Operator>) -> Result<Operator> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot stack zero operators".into()))?;
    let domain = first.domain_dim();
    for b in &blocks {
        check_dim("stack (blocks must share a domain)", domain, b.domain_dim())?;
    }
    let codomain = blocks.iter().map(|b| b.codomain_dim()).sum();
    Ok(Arc::new(Stack {
        blocks,
        domain,
        codomain,
    }))
}

/// Block-diagonal operator `(z_1, ..., z_k) -> (F_1 z_1, ..., F_k z_k)`.
#[derive(Debug, Clone)]
pub struct DirectSum {
    blocks: Vec<Operator>,
    domain: usize,
    codomain: usize,
}

impl DirectSum {
    pub fn blocks(&self) -> &[Operator] {
        &self.blocks
    }
}

impl LinearMap for DirectSum {
    fn domain_dim(&self) -> usize {
        self.domain
    }

    fn codomain_dim(&self) -> usize {
        self.codomain
    }

    fn apply(&self, x: &Vector) -> Vector {
        let mut out = Vector::zeros(self.codomain);
        let (mut i, mut o) = (0, 0);
        for b in &self.blocks {
            let (n, m) = (b.domain_dim(), b.codomain_dim());
            if !b.is_zero() {
                let part = b.apply(&x.rows(i, n).into_owned());
                out.rows_mut(o, m).copy_from(&part);
            }
            i += n;
            o += m;
        }
        out
    }

    fn apply_adjoint(&self, y: &Vector) -> Vector {
        let mut out = Vector::zeros(self.domain);
        let (mut i, mut o) = (0, 0);
        for b in &self.blocks {
            let (n, m) = (b.domain_dim(), b.codomain_dim());
            if !b.is_zero() {
                let part = b.apply_adjoint(&y.rows(o, m).into_owned());
                out.rows_mut(i, n).copy_from(&part);
            }
            i += n;
            o += m;
        }
        out
    }

    fn is_zero(&self) -> bool {
        self.blocks.iter().all(|b| b.is_zero())
    }

    fn gram(&self) -> Option<Operator> {
        Some(direct_sum_all(self.blocks.iter().map(gram).collect()))
    }
}

pub fn direct_sum(first: Operator, second: Operator) -> Operator {
    direct_sum_all(vec![first, second])
}

pub fn direct_sum_all(blocks: Vec<Operator>) -> Operator {
    let domain = blocks.iter().map(|b| b.domain_dim()).sum();
    let codomain = blocks.iter().map(|b| b.codomain_dim()).sum();
    Arc::new(DirectSum {
        blocks,
        domain,
        codomain,
    })
}

/// Direction of a first-difference operator on a column-major image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// `X[i+1, j] - X[i, j]`
    Vertical,
    /// `X[i, j+1] - X[i, j]`
    Horizontal,
}

/// Forward first differences of an `N x N` image along one axis.
#[derive(Debug, Clone, Copy)]
pub struct Difference2d {
    side: usize,
    axis: Axis,
}

impl Difference2d {
    // (output index, plus index, minus index) for every difference
    fn pairs(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let n = self.side;
        let axis = self.axis;
        let (rows, cols) = match axis {
            Axis::Vertical => (n - 1, n),
            Axis::Horizontal => (n, n - 1),
        };
        (0..cols).flat_map(move |j| {
            (0..rows).map(move |i| {
                let out = i + j * rows;
                let minus = i + j * n;
                let plus = match axis {
                    Axis::Vertical => minus + 1,
                    Axis::Horizontal => minus + n,
                };
                (out, plus, minus)
            })
        })
    }
}

impl LinearMap for Difference2d {
    fn domain_dim(&self) -> usize {
        self.side * self.side
    }

    fn codomain_dim(&self) -> usize {
        self.side * (self.side - 1)
    }

    fn apply(&self, x: &Vector) -> Vector {
        let mut out = Vector::zeros(self.codomain_dim());
        for (o, p, m) in self.pairs() {
            out[o] = x[p] - x[m];
        }
        out
    }

    fn apply_adjoint(&self, y: &Vector) -> Vector {
        let mut out = Vector::zeros(self.domain_dim());
        for (o, p, m) in self.pairs() {
            out[p] += y[o];
            out[m] -= y[o];
        }
        out
    }
}

/// Returns `(D_V, D_H)` for `N x N` images.
pub fn make_difference_operators(side: usize) -> Result<(Operator, Operator)> {
    if side < 2 {
        return Err(Error::InvalidArgument(format!(
            "difference operators need N >= 2, got {side}"
        )));
    }
    Ok((
        Arc::new(Difference2d {
            side,
            axis: Axis::Vertical,
        }),
        Arc::new(Difference2d {
            side,
            axis: Axis::Horizontal,
        }),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Half-sample symmetric extension: index -1 maps to 0, N maps to N-1.
    #[default]
    Reflect,
    Zero,
}

impl std::str::FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reflect" => Ok(Boundary::Reflect),
            "zero" => Ok(Boundary::Zero),
            other => Err(Error::InvalidArgument(format!("unknown boundary `{other}`"))),
        }
    }
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Reflect => "reflect",
            Boundary::Zero => "zero",
        })
    }
}

/// 2-D convolution of an `N x N` image with a small normalized stencil.
///
/// The forward map gathers `sum_{a,b} K[a][b] X[i - a + ca, j - b + cb]` with
/// out-of-range indices resolved by the boundary rule; the adjoint scatters
/// through the same index map, so it is the exact transpose for both rules.
#[derive(Debug, Clone)]
pub struct Convolution2d {
    side: usize,
    // (row offset, col offset, weight), offsets already flipped
    taps: Vec<(isize, isize, f64)>,
    boundary: Boundary,
}

impl Convolution2d {
    fn resolve(&self, k: isize) -> Option<usize> {
        let n = self.side as isize;
        match self.boundary {
            Boundary::Zero => (0..n).contains(&k).then_some(k as usize),
            Boundary::Reflect => {
                let period = 2 * n;
                let mut r = k.rem_euclid(period);
                if r >= n {
                    r = period - 1 - r;
                }
                Some(r as usize)
            }
        }
    }

    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, f64)) {
        let n = self.side;
        for j in 0..n {
            for i in 0..n {
                let out = i + j * n;
                for &(di, dj, w) in &self.taps {
                    let si = self.resolve(i as isize + di);
                    let sj = self.resolve(j as isize + dj);
                    if let (Some(si), Some(sj)) = (si, sj) {
                        f(out, si + sj * n, w);
                    }
                }
            }
        }
    }
}

impl LinearMap for Convolution2d {
    fn domain_dim(&self) -> usize {
        self.side * self.side
    }

    fn codomain_dim(&self) -> usize {
        self.side * self.side
    }

    fn apply(&self, x: &Vector) -> Vector {
        let mut out = Vector::zeros(self.codomain_dim());
        self.for_each_tap(|o, s, w| out[o] += w * x[s]);
        out
    }

    fn apply_adjoint(&self, y: &Vector) -> Vector {
        let mut out = Vector::zeros(self.domain_dim());
        self.for_each_tap(|o, s, w| out[s] += w * y[o]);
        out
    }
}

/// Builds the blur operator for `N x N` images from a row-major stencil.
///
/// The stencil must have odd side lengths, nonnegative entries and unit sum.
pub fn make_blur(side: usize, kernel: &[Vec<f64>], boundary: Boundary) -> Result<Operator> {
    if side == 0 {
        return Err(Error::InvalidArgument("image side must be positive".into()));
    }
    let kh = kernel.len();
    let kw = kernel.first().map_or(0, Vec::len);
    if kh == 0 || kw == 0 || kh.is_multiple_of(2) || kw.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "stencil must be non-empty with odd sides, got {kh}x{kw}"
        )));
    }
    if kernel.iter().any(|row| row.len() != kw) {
        return Err(Error::InvalidArgument("stencil rows differ in length".into()));
    }
    if kernel.iter().flatten().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(
            "stencil entries must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = kernel.iter().flatten().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "stencil must sum to 1, sums to {total}"
        )));
    }
    let (ci, cj) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut taps = Vec::new();
    for (a, row) in kernel.iter().enumerate() {
        for (b, &w) in row.iter().enumerate() {
            if w != 0.0 {
                taps.push((ci - a as isize, cj - b as isize, w));
            }
        }
    }
    Ok(Arc::new(Convolution2d {
        side,
        taps,
        boundary,
    }))
}

/// The `k x k` uniform averaging stencil.
pub fn uniform_stencil(k: usize) -> Vec<Vec<f64>> {
    let w = 1.0 / (k * k) as f64;
    vec![vec![w; k]; k]
}

/// Materializes an operator by applying it to the standard basis vectors.
pub fn densify(op: &dyn LinearMap) -> DMatrix<f64> {
    let n = op.domain_dim();
    let mut out = DMatrix::zeros(op.codomain_dim(), n);
    let mut e = Vector::zeros(n);
    for j in 0..n {
        e[j] = 1.0;
        out.set_column(j, &op.apply(&e));
        e[j] = 0.0;
    }
    out
}

/// Result of a power-iteration norm estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub iterations: usize,
    /// False when `max_iters` ran out before the Rayleigh quotient settled.
    pub converged: bool,
}

/// Estimates `||L||_op` by power iteration on `L*L`.
///
/// Stops when successive Rayleigh quotients differ by less than `tol`
/// relatively. The start vector is drawn from a fixed seed.
pub fn operator_norm(op: &dyn LinearMap, tol: f64, max_iters: usize) -> NormEstimate {
    let n = op.domain_dim();
    if n == 0 || op.codomain_dim() == 0 || op.is_zero() {
        return NormEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_ITERATION_SEED);
    let mut v = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    v /= v.norm();
    let mut rho_prev = f64::NAN;
    let mut rho = 0.0;
    for it in 1..=max_iters.max(1) {
        let w = op.apply_adjoint(&op.apply(&v));
        rho = v.dot(&w);
        let wn = w.norm();
        if wn == 0.0 {
            return NormEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        if (rho - rho_prev).abs() <= tol * rho.abs() {
            return NormEstimate {
                value: rho.max(0.0).sqrt(),
                iterations: it,
                converged: true,
            };
        }
        rho_prev = rho;
        v = w / wn;
    }
    log::warn!("operator_norm: no convergence after {max_iters} iterations");
    NormEstimate {
        value: rho.max(0.0).sqrt(),
        iterations: max_iters,
        converged: false,
    }
}
