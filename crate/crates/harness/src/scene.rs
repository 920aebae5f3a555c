//! Test image, noisy observations and the prior-knowledge constraint sets.

use std::sync::Arc;

use cligme::linop::{self, LinearMap};
use cligme::prox::{
    project_background_mean, project_box, BoxSet, ConvexSet, EqualOnIndices, WholeSpace,
};
use cligme::{ProductConstraint, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::ConstraintCase;
use crate::error::{HarnessError, Result};

/// Width of the constant border band.
pub const BORDER: usize = 3;
pub const BACKGROUND_LEVEL: f64 = 0.25;
pub const BRIGHT_LEVEL: f64 = 0.75;
pub const MID_LEVEL: f64 = 0.5;
/// Pixel range imposed by the box constraint.
pub const PIXEL_RANGE: (f64, f64) = (0.25, 0.75);

/// Column-major indices of the border band of width [`BORDER`].
pub fn background_indices(side: usize) -> Vec<usize> {
    let inside = |k: usize| k >= BORDER && k + BORDER < side;
    (0..side)
        .flat_map(|j| (0..side).map(move |i| (i, j)))
        .filter(|&(i, j)| !(inside(i) && inside(j)))
        .map(|(i, j)| i + j * side)
        .collect()
}

/// Axis-aligned rectangle `rows x cols` of half-open ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub rows: (usize, usize),
    pub cols: (usize, usize),
}

/// The two interior regions of the phantom: `(bright square, mid bar)`.
///
/// With `N = 16` the square is rows 3..9, cols 5..11 and the bar is rows
/// 9..13, cols 4..12.
pub fn phantom_regions(side: usize) -> (Rect, Rect) {
    let interior = side - 2 * BORDER;
    let sq = ((0.6 * interior as f64).round() as usize).clamp(1, interior - 1);
    let off = (interior - sq) / 2;
    let square = Rect {
        rows: (BORDER, BORDER + sq),
        cols: (BORDER + off, BORDER + off + sq),
    };
    let inset = interior / 10;
    let bar = Rect {
        rows: (BORDER + sq, side - BORDER),
        cols: (BORDER + inset, side - BORDER - inset),
    };
    (square, bar)
}

/// Piecewise constant `N x N` test image (column-major).
///
/// The border band and the remaining interior are 0.25, a square is 0.75 and
/// a bar below it is 0.5.
pub fn make_phantom(side: usize) -> Result<Vector> {
    if side < 8 {
        return Err(HarnessError::Config(format!(
            "phantom needs N >= 8, got {side}"
        )));
    }
    let mut img = Vector::from_element(side * side, BACKGROUND_LEVEL);
    let (square, bar) = phantom_regions(side);
    for (rect, level) in [(square, BRIGHT_LEVEL), (bar, MID_LEVEL)] {
        for j in rect.cols.0..rect.cols.1 {
            for i in rect.rows.0..rect.rows.1 {
                img[i + j * side] = level;
            }
        }
    }
    Ok(img)
}

/// White Gaussian noise of length `len` with `||eps||^2 = energy * 10^(-snr_db / 10)`.
pub fn noise_vector(len: usize, energy: f64, snr_db: f64, seed: u64) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = Vector::from_fn(len, |_, _| StandardNormal.sample(&mut rng));
    let target = (energy * 10f64.powf(-snr_db / 10.0)).sqrt();
    let n = raw.norm();
    if n == 0.0 {
        return raw;
    }
    raw * (target / n)
}

/// Adds noise at exactly `snr_db` relative to the energy of `clean`.
pub fn add_noise(clean: &Vector, snr_db: f64, seed: u64) -> Result<Vector> {
    let energy = clean.norm_squared();
    if energy == 0.0 {
        return Err(HarnessError::Config("cannot set an SNR for a zero signal".into()));
    }
    Ok(clean + noise_vector(clean.len(), energy, snr_db, seed))
}

/// `y = A x + eps`, with the noise energy set relative to `||x||^2`.
pub fn observe(a: &dyn LinearMap, x: &Vector, snr_db: f64, seed: u64) -> Result<Vector> {
    let energy = x.norm_squared();
    if energy == 0.0 {
        return Err(HarnessError::Config("cannot set an SNR for a zero signal".into()));
    }
    Ok(a.apply(x) + noise_vector(a.codomain_dim(), energy, snr_db, seed))
}

/// The two-block constraint `(x, x) in C_1 x C_2` for a case, where each
/// block is either its prior set or the whole space.
pub fn build_constraints(case: ConstraintCase, side: usize) -> Result<ProductConstraint> {
    let n = side * side;
    let first: Arc<dyn ConvexSet> = if case.uses_box() {
        Arc::new(BoxSet::new(n, PIXEL_RANGE.0, PIXEL_RANGE.1)?)
    } else {
        Arc::new(WholeSpace { dim: n })
    };
    let second: Arc<dyn ConvexSet> = if case.uses_background() {
        Arc::new(EqualOnIndices::new(n, background_indices(side))?)
    } else {
        Arc::new(WholeSpace { dim: n })
    };
    Ok(ProductConstraint::new()
        .with(linop::identity(n), first)?
        .with(linop::identity(n), second)?)
}

/// Exact projection onto the intersection of the case's sets.
///
/// The background mean of a point already lies in the pixel range whenever
/// the pixels it averages do, so projecting onto the background set first and
/// clamping afterwards lands in both sets, at the nearest such point.
pub fn project_feasible(case: ConstraintCase, side: usize, x: &Vector) -> Result<Vector> {
    let mut p = x.clone();
    if case.uses_background() {
        p = project_background_mean(&p, &background_indices(side))?;
    }
    if case.uses_box() {
        p = project_box(&p, PIXEL_RANGE.0, PIXEL_RANGE.1)?;
    }
    Ok(p)
}
