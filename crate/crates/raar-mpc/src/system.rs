//! Uncertain discrete-time LTI plant, constraint polytopes and the
//! non-stationary disturbance process.
//!
//! The plant is `x+ = A x + B u + G d` with the true `(A, B)` drawn from an
//! entry-wise relative interval box around the nominal pair, and `d` drawn
//! uniformly from an axis-aligned box whose half-widths are rescaled by a
//! piecewise-constant epoch schedule.

use crate::error::{Error, Result};
use crate::{Mat, Vec64};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Axis-aligned box `{ v : lower <= v <= upper }`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalBox {
    lower: Vec64,
    upper: Vec64,
}

impl IntervalBox {
    pub fn new(lower: Vec64, upper: Vec64) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.len() == 0 {
            return Err(Error::InvalidArgument("box must have dimension >= 1".into()));
        }
        for i in 0..lower.len() {
            if !lower[i].is_finite() || !upper[i].is_finite() {
                return Err(Error::InvalidArgument("box bounds must be finite".into()));
            }
            if lower[i] > upper[i] {
                return Err(Error::InvalidArgument(format!(
                    "box lower bound {} exceeds upper bound {} in component {i}",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(IntervalBox { lower, upper })
    }

    /// Symmetric box `[-half, half]^n`.
    pub fn symmetric(half_widths: Vec64) -> Result<Self> {
        let upper = half_widths.clone();
        IntervalBox::new(-half_widths, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &Vec64 {
        &self.lower
    }

    pub fn upper(&self) -> &Vec64 {
        &self.upper
    }

    pub fn contains_origin(&self) -> bool {
        (0..self.dim()).all(|i| self.lower[i] <= 0.0 && self.upper[i] >= 0.0)
    }

    pub fn contains(&self, v: &Vec64, tol: f64) -> bool {
        v.len() == self.dim()
            && (0..self.dim()).all(|i| v[i] >= self.lower[i] - tol && v[i] <= self.upper[i] + tol)
    }

    /// Box with both bounds multiplied by `factor >= 0`.
    pub fn scaled(&self, factor: f64) -> IntervalBox {
        IntervalBox {
            lower: &self.lower * factor,
            upper: &self.upper * factor,
        }
    }

    /// Uniform sample, component-wise. Degenerate components return the bound.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec64 {
        Vec64::from_fn(self.dim(), |i, _| {
            if self.upper[i] > self.lower[i] {
                rng.gen_range(self.lower[i]..self.upper[i])
            } else {
                self.lower[i]
            }
        })
    }
}

/// Nominal plant plus the description of its uncertainty.
#[derive(Debug, Clone)]
pub struct UncertainLinearSystem {
    a_nom: Mat,
    b_nom: Mat,
    g: Mat,
    delta_rel: f64,
    d_support: IntervalBox,
}

impl UncertainLinearSystem {
    pub fn new(a_nom: Mat, b_nom: Mat, g: Mat, delta_rel: f64, d_support: IntervalBox) -> Result<Self> {
        let n_x = a_nom.nrows();
        if n_x == 0 || a_nom.ncols() != n_x {
            return Err(Error::DimensionMismatch(format!(
                "A must be square and non-empty, got {}x{}",
                a_nom.nrows(),
                a_nom.ncols()
            )));
        }
        if b_nom.nrows() != n_x || b_nom.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "B must be {}x(n_u>=1), got {}x{}",
                n_x,
                b_nom.nrows(),
                b_nom.ncols()
            )));
        }
        if g.nrows() != n_x || g.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "G must be {}x(n_d>=1), got {}x{}",
                n_x,
                g.nrows(),
                g.ncols()
            )));
        }
        if !(0.0..1.0).contains(&delta_rel) {
            return Err(Error::InvalidArgument(format!(
                "delta_rel must lie in [0, 1), got {delta_rel}"
            )));
        }
        if d_support.dim() != g.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "disturbance support has dim {}, G has {} columns",
                d_support.dim(),
                g.ncols()
            )));
        }
        if !d_support.contains_origin() {
            return Err(Error::InvalidArgument(
                "disturbance support must contain the origin".into(),
            ));
        }
        Ok(UncertainLinearSystem {
            a_nom,
            b_nom,
            g,
            delta_rel,
            d_support,
        })
    }

    pub fn n_x(&self) -> usize {
        self.a_nom.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b_nom.ncols()
    }

    pub fn n_d(&self) -> usize {
        self.g.ncols()
    }

    pub fn a_nom(&self) -> &Mat {
        &self.a_nom
    }

    pub fn b_nom(&self) -> &Mat {
        &self.b_nom
    }

    pub fn g(&self) -> &Mat {
        &self.g
    }

    pub fn delta_rel(&self) -> f64 {
        self.delta_rel
    }

    pub fn d_support(&self) -> &IntervalBox {
        &self.d_support
    }

    /// Entry-wise half-width of the parametric interval for `A`.
    pub fn a_half_width(&self, i: usize, j: usize) -> f64 {
        self.delta_rel * self.a_nom[(i, j)].abs()
    }

    pub fn b_half_width(&self, i: usize, j: usize) -> f64 {
        self.delta_rel * self.b_nom[(i, j)].abs()
    }

    /// Whether `(a, b)` lies inside the interval uncertainty set.
    pub fn contains_realization(&self, a: &Mat, b: &Mat, tol: f64) -> bool {
        if a.shape() != self.a_nom.shape() || b.shape() != self.b_nom.shape() {
            return false;
        }
        for i in 0..self.n_x() {
            for j in 0..self.n_x() {
                if (a[(i, j)] - self.a_nom[(i, j)]).abs() > self.a_half_width(i, j) + tol {
                    return false;
                }
            }
            for j in 0..self.n_u() {
                if (b[(i, j)] - self.b_nom[(i, j)]).abs() > self.b_half_width(i, j) + tol {
                    return false;
                }
            }
        }
        true
    }
}

/// Polytope `{ v : C v <= c }` with the origin feasible.
///
/// Rows with a zero bound are allowed: the benchmark's chance-constrained row
/// puts the origin exactly on the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct PolytopeConstraint {
    c_mat: Mat,
    c_vec: Vec64,
}

impl PolytopeConstraint {
    pub fn new(c_mat: Mat, c_vec: Vec64) -> Result<Self> {
        if c_mat.nrows() != c_vec.len() {
            return Err(Error::DimensionMismatch(format!(
                "constraint matrix has {} rows, bound vector has {}",
                c_mat.nrows(),
                c_vec.len()
            )));
        }
        if c_mat.nrows() == 0 || c_mat.ncols() == 0 {
            return Err(Error::InvalidArgument("constraint polytope must be non-empty".into()));
        }
        if c_vec.iter().any(|&c| c < 0.0 || !c.is_finite()) {
            return Err(Error::InvalidArgument(
                "constraint bounds must be finite and non-negative (origin feasible)".into(),
            ));
        }
        Ok(PolytopeConstraint { c_mat, c_vec })
    }

    /// Symmetric box constraint `|v_i| <= half_i` written as 2n rows.
    pub fn symmetric_box(half_widths: &Vec64) -> Result<Self> {
        let n = half_widths.len();
        let mut c_mat = Mat::zeros(2 * n, n);
        let mut c_vec = Vec64::zeros(2 * n);
        for i in 0..n {
            c_mat[(2 * i, i)] = 1.0;
            c_mat[(2 * i + 1, i)] = -1.0;
            c_vec[2 * i] = half_widths[i];
            c_vec[2 * i + 1] = half_widths[i];
        }
        PolytopeConstraint::new(c_mat, c_vec)
    }

    pub fn n_rows(&self) -> usize {
        self.c_mat.nrows()
    }

    pub fn dim(&self) -> usize {
        self.c_mat.ncols()
    }

    pub fn c_mat(&self) -> &Mat {
        &self.c_mat
    }

    pub fn c_vec(&self) -> &Vec64 {
        &self.c_vec
    }

    pub fn row(&self, i: usize) -> Vec64 {
        self.c_mat.row(i).transpose()
    }

    pub fn contains(&self, v: &Vec64, tol: f64) -> bool {
        let img = &self.c_mat * v;
        (0..self.n_rows()).all(|i| img[i] <= self.c_vec[i] + tol)
    }

    /// Largest signed violation `max_i (C v - c)_i`; negative means interior.
    pub fn max_violation(&self, v: &Vec64) -> f64 {
        let img = &self.c_mat * v;
        (0..self.n_rows())
            .map(|i| img[i] - self.c_vec[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One disturbance-scaling epoch starting at `start_step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Epoch {
    pub start_step: u64,
    pub scale: f64,
}

/// Piecewise-constant rescaling of a base disturbance box.
#[derive(Debug, Clone)]
pub struct DisturbanceSchedule {
    epochs: Vec<Epoch>,
    base_support: IntervalBox,
}

impl DisturbanceSchedule {
    pub fn new(epochs: Vec<Epoch>, base_support: IntervalBox) -> Result<Self> {
        if epochs.is_empty() {
            return Err(Error::InvalidArgument("schedule needs at least one epoch".into()));
        }
        if epochs[0].start_step != 0 {
            return Err(Error::InvalidArgument("first epoch must start at step 0".into()));
        }
        for w in epochs.windows(2) {
            if w[1].start_step <= w[0].start_step {
                return Err(Error::InvalidArgument(
                    "epoch start steps must be strictly increasing".into(),
                ));
            }
        }
        // A zero scale is a degenerate support, allowed for tests.
        if epochs.iter().any(|e| e.scale < 0.0 || !e.scale.is_finite()) {
            return Err(Error::InvalidArgument("epoch scales must be >= 0".into()));
        }
        Ok(DisturbanceSchedule { epochs, base_support })
    }

    /// Single-epoch schedule with unit scale.
    pub fn stationary(base_support: IntervalBox) -> Self {
        DisturbanceSchedule {
            epochs: vec![Epoch { start_step: 0, scale: 1.0 }],
            base_support,
        }
    }

    pub fn epochs(&self) -> &[Epoch] {
        &self.epochs
    }

    pub fn base_support(&self) -> &IntervalBox {
        &self.base_support
    }

    pub fn active_scale(&self, k: u64) -> f64 {
        let mut scale = self.epochs[0].scale;
        for e in &self.epochs {
            if e.start_step <= k {
                scale = e.scale;
            } else {
                break;
            }
        }
        scale
    }

    /// Effective support at step `k`.
    pub fn support_at(&self, k: u64) -> IntervalBox {
        self.base_support.scaled(self.active_scale(k))
    }

    pub fn max_scale(&self) -> f64 {
        self.epochs.iter().map(|e| e.scale).fold(0.0, f64::max)
    }
}

/// A fixed draw of the true plant matrices from the interval set.
#[derive(Debug, Clone)]
pub struct TrueRealization {
    pub a_true: Mat,
    pub b_true: Mat,
    pub rng_seed: u64,
}

/// One step of the true plant: `A_true x + B_true u + G d`.
pub fn step_true_plant(
    real: &TrueRealization,
    sys: &UncertainLinearSystem,
    x: &Vec64,
    u: &Vec64,
    d: &Vec64,
) -> Result<Vec64> {
    if x.len() != sys.n_x() || u.len() != sys.n_u() || d.len() != sys.n_d() {
        return Err(Error::DimensionMismatch(format!(
            "step_true_plant got x:{} u:{} d:{} for plant ({}, {}, {})",
            x.len(),
            u.len(),
            d.len(),
            sys.n_x(),
            sys.n_u(),
            sys.n_d()
        )));
    }
    if real.a_true.shape() != sys.a_nom().shape() || real.b_true.shape() != sys.b_nom().shape() {
        return Err(Error::DimensionMismatch("realization does not match plant".into()));
    }
    Ok(&real.a_true * x + &real.b_true * u + sys.g() * d)
}

/// Uniform disturbance draw from the epoch-scaled support at step `k`.
pub fn sample_disturbance(sched: &DisturbanceSchedule, k: u64, rng: &mut impl Rng) -> Vec64 {
    sched.support_at(k).sample(rng)
}

/// Draw the true `(A, B)` entry-wise uniformly within the relative interval.
///
/// The draw is reproducible from `seed` alone.
pub fn sample_true_realization(sys: &UncertainLinearSystem, seed: u64) -> TrueRealization {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let (a_true, b_true) = sample_matrices_uniform(sys, &mut rng);
    TrueRealization { a_true, b_true, rng_seed: seed }
}

/// One uniform draw of `(A, B)` inside the interval box, from the given stream.
pub fn sample_matrices_uniform(sys: &UncertainLinearSystem, rng: &mut impl Rng) -> (Mat, Mat) {
    let mut a = sys.a_nom().clone();
    let mut b = sys.b_nom().clone();
    for i in 0..sys.n_x() {
        for j in 0..sys.n_x() {
            let h = sys.a_half_width(i, j);
            if h > 0.0 {
                a[(i, j)] += rng.gen_range(-h..h);
            }
        }
        for j in 0..sys.n_u() {
            let h = sys.b_half_width(i, j);
            if h > 0.0 {
                b[(i, j)] += rng.gen_range(-h..h);
            }
        }
    }
    (a, b)
}

/// One draw of `(A, B)` at a random vertex of the interval box.
pub fn sample_matrices_vertex(sys: &UncertainLinearSystem, rng: &mut impl Rng) -> (Mat, Mat) {
    let mut a = sys.a_nom().clone();
    let mut b = sys.b_nom().clone();
    for i in 0..sys.n_x() {
        for j in 0..sys.n_x() {
            let h = sys.a_half_width(i, j);
            a[(i, j)] += if rng.gen::<bool>() { h } else { -h };
        }
        for j in 0..sys.n_u() {
            let h = sys.b_half_width(i, j);
            b[(i, j)] += if rng.gen::<bool>() { h } else { -h };
        }
    }
    (a, b)
}
