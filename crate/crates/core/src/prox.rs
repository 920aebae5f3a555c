//! Proximable penalties, projectable convex sets and their product-space
//! combinations.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::linop::{self, Operator, Vector};

/// Absolute tolerance used by the membership tests of the shipped sets.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// A proper lower semicontinuous convex function with a closed-form prox.
pub trait Penalty: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn eval(&self, z: &Vector) -> f64;

    /// `Prox_{gamma Psi}(z) = argmin_v gamma Psi(v) + 1/2 ||z - v||^2`.
    fn prox(&self, gamma: f64, z: &Vector) -> Vector;
}

/// A nonempty closed convex set with an exact metric projection.
pub trait ConvexSet: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn project(&self, z: &Vector) -> Vector;

    fn contains(&self, z: &Vector, tol: f64) -> bool;

    /// `iota_C(z)`: zero on the set (within `tol`), `+inf` outside.
    fn indicator(&self, z: &Vector, tol: f64) -> f64 {
        if self.contains(z, tol) {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Soft thresholding, the prox of `gamma * ||.||_1`.
pub fn prox_l1(z: &Vector, gamma: f64) -> Vector {
    debug_assert!(gamma >= 0.0);
    z.map(|v| soft_threshold(v, gamma))
}

#[inline]
fn soft_threshold(v: f64, gamma: f64) -> f64 {
    if v.abs() <= gamma {
        0.0
    } else {
        (v.abs() - gamma) * v.signum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct L1Norm {
    pub dim: usize,
}

impl Penalty for L1Norm {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, z: &Vector) -> f64 {
        z.lp_norm(1)
    }

    fn prox(&self, gamma: f64, z: &Vector) -> Vector {
        prox_l1(z, gamma)
    }
}

/// `1/2 ||z||^2`.
#[derive(Debug, Clone, Copy)]
pub struct HalfSquaredNorm {
    pub dim: usize,
}

impl Penalty for HalfSquaredNorm {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, z: &Vector) -> f64 {
        0.5 * z.norm_squared()
    }

    fn prox(&self, gamma: f64, z: &Vector) -> Vector {
        z / (1.0 + gamma)
    }
}

/// Separable sum `(z_1, ..., z_M) -> sum_i mu_i Psi_i(z_i)`.
#[derive(Debug, Clone)]
pub struct SeparableSum {
    blocks: Vec<(f64, Arc<dyn Penalty>)>,
    dim: usize,
}

impl SeparableSum {
    pub fn new(blocks: Vec<(f64, Arc<dyn Penalty>)>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument("separable sum needs a block".into()));
        }
        if let Some((w, _)) = blocks.iter().find(|(w, _)| !(*w > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "block weights must be positive, got {w}"
            )));
        }
        let dim = blocks.iter().map(|(_, p)| p.dim()).sum();
        Ok(Self { blocks, dim })
    }

    pub fn blocks(&self) -> &[(f64, Arc<dyn Penalty>)] {
        &self.blocks
    }
}

impl Penalty for SeparableSum {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, z: &Vector) -> f64 {
        let mut offset = 0;
        let mut total = 0.0;
        for (w, p) in &self.blocks {
            let n = p.dim();
            total += w * p.eval(&z.rows(offset, n).into_owned());
            offset += n;
        }
        total
    }

    fn prox(&self, gamma: f64, z: &Vector) -> Vector {
        let mut out = Vector::zeros(self.dim);
        let mut offset = 0;
        for (w, p) in &self.blocks {
            let n = p.dim();
            let part = p.prox(gamma * w, &z.rows(offset, n).into_owned());
            out.rows_mut(offset, n).copy_from(&part);
            offset += n;
        }
        out
    }
}

/// Blockwise `Prox_{gamma mu_i Psi_i}` on a stacked vector.
pub fn separable_sum_prox(
    penalties: &[(f64, Arc<dyn Penalty>)],
    gamma: f64,
    z: &Vector,
) -> Result<Vector> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    let sum = SeparableSum::new(penalties.to_vec())?;
    check_dim("separable_sum_prox", sum.dim(), z.len())?;
    Ok(sum.prox(gamma, z))
}

/// `R^dim` itself.
#[derive(Debug, Clone, Copy)]
pub struct WholeSpace {
    pub dim: usize,
}

impl ConvexSet for WholeSpace {
    fn dim(&self) -> usize {
        self.dim
    }

    fn project(&self, z: &Vector) -> Vector {
        z.clone()
    }

    fn contains(&self, _z: &Vector, _tol: f64) -> bool {
        true
    }
}

/// `{ z : lo <= z_i <= hi }`.
#[derive(Debug, Clone, Copy)]
pub struct BoxSet {
    dim: usize,
    lo: f64,
    hi: f64,
}

impl BoxSet {
    pub fn new(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::InvalidArgument(format!(
                "box bounds must satisfy lo <= hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { dim, lo, hi })
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
}

impl ConvexSet for BoxSet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn project(&self, z: &Vector) -> Vector {
        z.map(|v| v.clamp(self.lo, self.hi))
    }

    fn contains(&self, z: &Vector, tol: f64) -> bool {
        z.iter().all(|&v| v >= self.lo - tol && v <= self.hi + tol)
    }
}

/// Componentwise clamp onto `[lo, hi]`.
pub fn project_box(z: &Vector, lo: f64, hi: f64) -> Result<Vector> {
    Ok(BoxSet::new(z.len(), lo, hi)?.project(z))
}

/// Vectors whose entries on a fixed index set are all equal.
#[derive(Debug, Clone)]
pub struct EqualOnIndices {
    dim: usize,
    indices: Vec<usize>,
}

impl EqualOnIndices {
    pub fn new(dim: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let indices: Vec<usize> = indices
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if indices.is_empty() {
            return Err(Error::InvalidArgument("background index set is empty".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= dim) {
            return Err(Error::InvalidArgument(format!(
                "background index {bad} out of range for dimension {dim}"
            )));
        }
        Ok(Self { dim, indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

impl ConvexSet for EqualOnIndices {
    fn dim(&self) -> usize {
        self.dim
    }

    fn project(&self, z: &Vector) -> Vector {
        let mean =
            self.indices.iter().map(|&i| z[i]).sum::<f64>() / self.indices.len() as f64;
        let mut out = z.clone();
        for &i in &self.indices {
            out[i] = mean;
        }
        out
    }

    fn contains(&self, z: &Vector, tol: f64) -> bool {
        let (lo, hi) = self
            .indices
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                (lo.min(z[i]), hi.max(z[i]))
            });
        hi - lo <= tol
    }
}

/// Replaces the entries indexed by `background` with their mean.
pub fn project_background_mean(z: &Vector, background: &[usize]) -> Result<Vector> {
    Ok(EqualOnIndices::new(z.len(), background.iter().copied())?.project(z))
}

/// Cartesian product of convex sets.
#[derive(Debug, Clone)]
pub struct ProductSet {
    sets: Vec<Arc<dyn ConvexSet>>,
    dim: usize,
}

impl ProductSet {
    pub fn new(sets: Vec<Arc<dyn ConvexSet>>) -> Self {
        let dim = sets.iter().map(|s| s.dim()).sum();
        Self { sets, dim }
    }

    pub fn sets(&self) -> &[Arc<dyn ConvexSet>] {
        &self.sets
    }
}

impl ConvexSet for ProductSet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn project(&self, z: &Vector) -> Vector {
        let mut out = Vector::zeros(self.dim);
        let mut offset = 0;
        for s in &self.sets {
            let n = s.dim();
            out.rows_mut(offset, n)
                .copy_from(&s.project(&z.rows(offset, n).into_owned()));
            offset += n;
        }
        out
    }

    fn contains(&self, z: &Vector, tol: f64) -> bool {
        let mut offset = 0;
        self.sets.iter().all(|s| {
            let n = s.dim();
            let inside = s.contains(&z.rows(offset, n).into_owned(), tol);
            offset += n;
            inside
        })
    }
}

/// `(Prox_Psi(w1), P_C(w2))`: the prox of `Psi (+) iota_C` at unit scale.
pub fn prox_product(
    penalty: &dyn Penalty,
    constraint_set: &dyn ConvexSet,
    w1: &Vector,
    w2: &Vector,
) -> Result<(Vector, Vector)> {
    check_dim("prox_product penalty block", penalty.dim(), w1.len())?;
    check_dim("prox_product constraint block", constraint_set.dim(), w2.len())?;
    Ok((penalty.prox(1.0, w1), constraint_set.project(w2)))
}

/// Hard constraints `c_i x in C_i`, assembled as `c x in C_1 x ... x C_k`.
#[derive(Debug, Clone, Default)]
pub struct ProductConstraint {
    parts: Vec<(Operator, Arc<dyn ConvexSet>)>,
}

impl ProductConstraint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `map x in set`.
    pub fn with(mut self, map: Operator, set: Arc<dyn ConvexSet>) -> Result<Self> {
        check_dim("constraint set vs restraint codomain", map.codomain_dim(), set.dim())?;
        if let Some((first, _)) = self.parts.first() {
            check_dim("constraint restraint domain", first.domain_dim(), map.domain_dim())?;
        }
        self.parts.push((map, set));
        Ok(self)
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn parts(&self) -> &[(Operator, Arc<dyn ConvexSet>)] {
        &self.parts
    }

    /// Total dimension of the constraint space.
    pub fn dim(&self) -> usize {
        self.parts.iter().map(|(_, s)| s.dim()).sum()
    }

    /// The stacked restraint map, or `None` without constraints.
    pub fn restraint(&self) -> Option<Operator> {
        if self.parts.is_empty() {
            return None;
        }
        Some(
            linop::stack_all(self.parts.iter().map(|(m, _)| m.clone()).collect())
                .expect("domains checked on insertion"),
        )
    }

    pub fn set(&self) -> ProductSet {
        ProductSet::new(self.parts.iter().map(|(_, s)| s.clone()).collect())
    }

    /// Whether `x` satisfies every constraint within `tol`.
    pub fn is_satisfied(&self, x: &Vector, tol: f64) -> bool {
        self.parts
            .iter()
            .all(|(m, s)| s.contains(&m.apply(x), tol))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    /// Grid search followed by golden-section refinement of a 1-D convex function.
    fn scalar_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let steps = 2000;
        let h = (hi - lo) / steps as f64;
        let best = (0..=steps)
            .map(|k| lo + k as f64 * h)
            .min_by(|a, b| f(*a).total_cmp(&f(*b)))
            .unwrap();
        let (mut a, mut b) = (best - h, best + h);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(prox_l1(&v(&[2.0, -0.5, 1.0]), 1.0).as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(prox_l1(&Vector::zeros(3), 0.7).amax(), 0.0);
        let out = prox_l1(&v(&[0.3, -2.2]), 0.25);
        for (k, &z) in [0.3, -2.2].iter().enumerate() {
            let oracle = scalar_argmin(|t| 0.25 * t.abs() + 0.5 * (t - z) * (t - z), -3.0, 3.0);
            assert_abs_diff_eq!(out[k], oracle, epsilon = 1e-7);
        }
        assert_abs_diff_eq!(out[0], 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], -1.95, epsilon = 1e-15);
    }

    #[test]
    fn box_examples() {
        let out = project_box(&v(&[0.9, 0.5, 0.1]), 0.25, 0.75).unwrap();
        assert_eq!(out.as_slice(), &[0.75, 0.5, 0.25]);
        let inside = v(&[0.3, 0.7]);
        assert_eq!(project_box(&inside, 0.25, 0.75).unwrap(), inside);
        assert!(matches!(
            project_box(&inside, 1.0, 0.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn box_projection_beats_sampled_points() {
        let mut rng = StdRng::seed_from_u64(11);
        let z = Vector::from_fn(3, |_, _| rng.random_range(-1.0..2.0));
        let p = project_box(&z, 0.0, 1.0).unwrap();
        let d = (&z - &p).norm();
        for _ in 0..100_000 {
            let c = Vector::from_fn(3, |_, _| rng.random_range(0.0..1.0));
            assert!(d <= (&z - c).norm() + 1e-15);
        }
    }

    #[test]
    fn background_mean_examples() {
        let out = project_background_mean(&v(&[1.0, 3.0, 10.0]), &[0, 1]).unwrap();
        assert_eq!(out.as_slice(), &[2.0, 2.0, 10.0]);
        let flat = v(&[4.0, 4.0, -1.0]);
        assert_eq!(project_background_mean(&flat, &[0, 1]).unwrap(), flat);
        assert!(project_background_mean(&flat, &[]).is_err());
        assert!(project_background_mean(&flat, &[3]).is_err());
    }

    #[test]
    fn background_mean_is_scalar_minimizer() {
        // distance to {t on the background} is sum_i (z_i - t)^2, minimized at the mean
        let z = v(&[0.1, 1.7, -0.4, 2.0, 5.0]);
        let idx = [0, 2, 3];
        let t = scalar_argmin(
            |t| idx.iter().map(|&i| (z[i] - t).powi(2)).sum(),
            -5.0,
            5.0,
        );
        let out = project_background_mean(&z, &idx).unwrap();
        for &i in &idx {
            assert_abs_diff_eq!(out[i], t, epsilon = 1e-7);
        }
        assert_eq!(out[1], 1.7);
        assert_eq!(out[4], 5.0);
    }

    #[test]
    fn prox_product_examples() {
        let l1 = L1Norm { dim: 1 };
        let unit = BoxSet::new(1, 0.0, 1.0).unwrap();
        let (a, b) = prox_product(&l1, &unit, &v(&[2.0]), &v(&[1.5])).unwrap();
        assert_eq!((a[0], b[0]), (1.0, 1.0));
        let (a, b) = prox_product(&l1, &unit, &v(&[0.0]), &v(&[0.0])).unwrap();
        assert_eq!((a[0], b[0]), (0.0, 0.0));
        assert!(prox_product(&l1, &unit, &v(&[0.0, 1.0]), &v(&[0.0])).is_err());

        let mut rng = StdRng::seed_from_u64(5);
        let l1 = L1Norm { dim: 4 };
        let bx = BoxSet::new(3, -0.5, 0.5).unwrap();
        let w1 = Vector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
        let w2 = Vector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
        let (a, b) = prox_product(&l1, &bx, &w1, &w2).unwrap();
        assert_eq!(a, prox_l1(&w1, 1.0));
        assert_eq!(b, project_box(&w2, -0.5, 0.5).unwrap());
    }

    #[test]
    fn separable_sum_examples() {
        let blocks: Vec<(f64, Arc<dyn Penalty>)> = vec![
            (1.0, Arc::new(L1Norm { dim: 2 })),
            (1.0, Arc::new(L1Norm { dim: 3 })),
        ];
        let z = v(&[0.3, -1.2, 2.0, -0.1, 0.8]);
        assert_eq!(separable_sum_prox(&blocks, 0.5, &z).unwrap(), prox_l1(&z, 0.5));
        assert!(separable_sum_prox(&blocks, 0.5, &v(&[1.0])).is_err());

        // Prox_{gamma (mu Psi)} = Prox_{(gamma mu) Psi}
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..20 {
            let gamma = rng.random_range(0.1..2.0);
            let mu = rng.random_range(0.1..2.0);
            let z = Vector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
            let one: Vec<(f64, Arc<dyn Penalty>)> = vec![(mu, Arc::new(L1Norm { dim: 4 }))];
            let lhs = separable_sum_prox(&one, gamma, &z).unwrap();
            assert!((lhs - prox_l1(&z, gamma * mu)).amax() < 1e-15);
        }
    }

    #[test]
    fn separable_prox_matches_grid_minimization() {
        let blocks: Vec<(f64, Arc<dyn Penalty>)> = vec![
            (0.5, Arc::new(L1Norm { dim: 2 })),
            (2.0, Arc::new(HalfSquaredNorm { dim: 2 })),
        ];
        let sum = SeparableSum::new(blocks.clone()).unwrap();
        let gamma = 0.8;
        let z = v(&[1.0, -0.2, 0.9, -1.1]);
        let objective = |p: &Vector| gamma * sum.eval(p) + 0.5 * (&z - p).norm_squared();
        // coarse grid over [-1.5, 1.5]^4 then a local grid refinement
        let mut best = Vector::zeros(4);
        let mut best_val = f64::INFINITY;
        let grid: Vec<f64> = (0..=30).map(|k| -1.5 + 0.1 * k as f64).collect();
        for &a in &grid {
            for &b in &grid {
                for &c in &grid {
                    for &d in &grid {
                        let p = v(&[a, b, c, d]);
                        let val = objective(&p);
                        if val < best_val {
                            best_val = val;
                            best = p;
                        }
                    }
                }
            }
        }
        let mut h = 0.05;
        while h > 1e-7 {
            let mut improved = true;
            while improved {
                improved = false;
                for k in 0..4 {
                    for s in [-h, h] {
                        let mut p = best.clone();
                        p[k] += s;
                        let val = objective(&p);
                        if val < best_val {
                            best_val = val;
                            best = p;
                            improved = true;
                        }
                    }
                }
            }
            h *= 0.5;
        }
        let prox = separable_sum_prox(&blocks, gamma, &z).unwrap();
        assert!((prox - best).amax() < 1e-5);
    }

    #[test]
    fn product_constraint_assembly() {
        let pc = ProductConstraint::new()
            .with(linop::identity(3), Arc::new(BoxSet::new(3, 0.0, 1.0).unwrap()))
            .unwrap()
            .with(linop::identity(3), Arc::new(WholeSpace { dim: 3 }))
            .unwrap();
        assert_eq!(pc.dim(), 6);
        assert_eq!(pc.restraint().unwrap().codomain_dim(), 6);
        let z = v(&[2.0, 0.5, -1.0, 2.0, 0.5, -1.0]);
        assert_eq!(pc.set().project(&z).as_slice(), &[1.0, 0.5, 0.0, 2.0, 0.5, -1.0]);
        assert!(!pc.is_satisfied(&v(&[2.0, 0.5, -1.0]), MEMBERSHIP_TOL));
        assert!(ProductConstraint::new()
            .with(linop::identity(3), Arc::new(WholeSpace { dim: 2 }))
            .is_err());
        assert!(ProductConstraint::new().restraint().is_none());
    }
}
