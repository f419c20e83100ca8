//! Natural cubic spline basis over the date index.
//!
//! The basis is built from cubic B-splines on quantile-placed interior
//! knots, then projected onto the subspace with zero second derivative at
//! both boundary knots (the natural condition, which makes every basis
//! function linear outside the boundary). One column of the projected
//! basis is dropped so that the model intercept can be supplied
//! separately without rank deficiency; any basis spanning the natural
//! spline space is equivalent up to an invertible recombination.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

const ORDER: usize = 4; // cubic

#[derive(Debug, Clone)]
pub struct SplineBasis {
    df: usize,
    interior_knots: Vec<f64>,
    boundary_knots: (f64, f64),
    /// Basis matrix evaluated at the construction points, one row per t.
    matrix: DMatrix<f64>,
    /// Augmented knot vector (boundary knots repeated `ORDER` times).
    augmented: Vec<f64>,
    /// Maps raw B-spline coefficients to the natural, intercept-free
    /// basis: `(df + 3) x df`.
    transform: DMatrix<f64>,
}

/// Builds the natural cubic spline basis `ns(t, df)`.
///
/// Interior knots sit at the `j/df` quantiles (`j = 1..df-1`) of the
/// observed `t_values`; boundary knots at the extremes.
pub fn make_basis(t_values: &[f64], df: usize) -> Result<SplineBasis> {
    if df < 2 {
        return Err(Error::Argument(format!("spline df must be >= 2, got {df}")));
    }
    if t_values.iter().any(|t| !t.is_finite()) {
        return Err(Error::Argument("non-finite t value in basis input".into()));
    }
    let mut sorted = t_values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < df + 1 {
        return Err(Error::Argument(format!(
            "df={df} too large: need at least {} distinct t values, got {}",
            df + 1,
            distinct.len()
        )));
    }
    let boundary = (sorted[0], sorted[sorted.len() - 1]);
    let interior: Vec<f64> = (1..df)
        .map(|j| quantile_sorted(&sorted, j as f64 / df as f64))
        .collect();
    let mut all = Vec::with_capacity(df + 1);
    all.push(boundary.0);
    all.extend_from_slice(&interior);
    all.push(boundary.1);
    if all.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument(format!(
            "df={df} too large for the data: quantile knots are not strictly increasing"
        )));
    }

    let mut augmented = Vec::with_capacity(df + 7);
    augmented.extend(std::iter::repeat_n(boundary.0, ORDER));
    augmented.extend_from_slice(&interior);
    augmented.extend(std::iter::repeat_n(boundary.1, ORDER));
    let n_raw = augmented.len() - ORDER; // df + 3

    // Natural condition: zero second derivative at both boundary knots.
    let c0 = bspline_row(&augmented, boundary.0, 2);
    let c1 = bspline_row(&augmented, boundary.1, 2);
    let null_basis = null_space_basis(&[c0, c1], n_raw);
    debug_assert_eq!(null_basis.ncols(), df + 1);

    // Raw design at the observed points, then project onto the natural
    // subspace; pick a column to drop so [1 | B] keeps full rank.
    let n = t_values.len();
    let mut raw = DMatrix::zeros(n, n_raw);
    for (r, &t) in t_values.iter().enumerate() {
        let row = bspline_row(&augmented, t, 0);
        for (c, v) in row.iter().enumerate() {
            raw[(r, c)] = *v;
        }
    }
    let natural = &raw * &null_basis; // n x (df + 1)

    let drop = (0..=df)
        .find(|&j| full_rank_with_intercept(&natural, j))
        .ok_or_else(|| {
            Error::Argument("natural spline basis is rank deficient on this input".into())
        })?;
    let transform = drop_column(&null_basis, drop);
    let matrix = drop_column(&natural, drop);

    Ok(SplineBasis {
        df,
        interior_knots: interior,
        boundary_knots: boundary,
        matrix,
        augmented,
        transform,
    })
}

impl SplineBasis {
    pub fn df(&self) -> usize {
        self.df
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    pub fn boundary_knots(&self) -> (f64, f64) {
        self.boundary_knots
    }

    /// Basis matrix at the construction points (n x df).
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Evaluates the df basis functions at an arbitrary point,
    /// extrapolating linearly beyond the boundary knots.
    pub fn evaluate(&self, t_new: f64) -> Result<DVector<f64>> {
        if !t_new.is_finite() {
            return Err(Error::Argument("non-finite t in basis evaluation".into()));
        }
        let (lo, hi) = self.boundary_knots;
        if t_new >= lo && t_new <= hi {
            Ok(self.project(t_new, 0))
        } else {
            let b = if t_new < lo { lo } else { hi };
            let value = self.project(b, 0);
            let slope = self.project(b, 1);
            Ok(value + (t_new - b) * slope)
        }
    }

    fn project(&self, t: f64, deriv: usize) -> DVector<f64> {
        let raw = bspline_row(&self.augmented, t, deriv);
        let raw = DVector::from_vec(raw);
        self.transform.tr_mul(&raw)
    }

    pub fn write_csv<W: Write>(&self, writer: W, t_values: &[f64]) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.df).map(|j| format!("ns_{j}")));
        w.write_record(&header)?;
        for (r, &t) in t_values.iter().enumerate() {
            let mut row = vec![format!("{t}")];
            for c in 0..self.df {
                row.push(format!("{}", self.matrix[(r, c)]));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Values (or `deriv`-th derivatives) of every cubic B-spline on the
/// augmented knot vector at `x`, by the Cox-de Boor recursion and the
/// standard derivative recurrence. `x` must lie inside the knot range.
fn bspline_row(knots: &[f64], x: f64, deriv: usize) -> Vec<f64> {
    let len = knots.len();
    let n_funcs = len - ORDER;
    if deriv >= ORDER {
        return vec![0.0; n_funcs];
    }
    let t_min = knots[0];
    let t_max = knots[len - 1];
    debug_assert!(x >= t_min && x <= t_max, "bspline evaluation out of range");

    // Order-1 indicators, closing the last non-empty interval on the right.
    let base_order = ORDER - deriv;
    let mut vals = vec![0.0; len - 1];
    for i in 0..len - 1 {
        let in_interval = knots[i] <= x && x < knots[i + 1];
        let at_right_end = x == t_max && knots[i] < knots[i + 1] && knots[i + 1] == t_max;
        if in_interval || at_right_end {
            vals[i] = 1.0;
        }
    }
    for ord in 2..=base_order {
        for i in 0..len - ord {
            let d1 = knots[i + ord - 1] - knots[i];
            let d2 = knots[i + ord] - knots[i + 1];
            let left = if d1 > 0.0 { (x - knots[i]) / d1 * vals[i] } else { 0.0 };
            let right = if d2 > 0.0 {
                (knots[i + ord] - x) / d2 * vals[i + 1]
            } else {
                0.0
            };
            vals[i] = left + right;
        }
    }
    for step in 1..=deriv {
        let ord = base_order + step;
        for i in 0..len - ord {
            let d1 = knots[i + ord - 1] - knots[i];
            let d2 = knots[i + ord] - knots[i + 1];
            let left = if d1 > 0.0 { vals[i] / d1 } else { 0.0 };
            let right = if d2 > 0.0 { vals[i + 1] / d2 } else { 0.0 };
            vals[i] = (ord as f64 - 1.0) * (left - right);
        }
    }
    vals.truncate(n_funcs);
    vals
}

/// Orthonormal basis of the null space of the given constraint rows,
/// built by Gram-Schmidt over the standard basis (deterministic).
fn null_space_basis(constraints: &[Vec<f64>], dim: usize) -> DMatrix<f64> {
    let mut ortho_constraints: Vec<DVector<f64>> = Vec::new();
    for c in constraints {
        let mut v = DVector::from_vec(c.clone());
        for e in &ortho_constraints {
            let proj = e.dot(&v);
            v -= e * proj;
        }
        let norm = v.norm();
        if norm > 1e-12 {
            ortho_constraints.push(v / norm);
        }
    }
    let target = dim - ortho_constraints.len();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(target);
    for j in 0..dim {
        if basis.len() == target {
            break;
        }
        let mut v = DVector::zeros(dim);
        v[j] = 1.0;
        for e in ortho_constraints.iter().chain(basis.iter()) {
            let proj = e.dot(&v);
            v -= e * proj;
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
    }
    let mut m = DMatrix::zeros(dim, basis.len());
    for (c, v) in basis.iter().enumerate() {
        m.set_column(c, v);
    }
    m
}

fn drop_column(m: &DMatrix<f64>, col: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols() - 1);
    let mut target = 0;
    for c in 0..m.ncols() {
        if c == col {
            continue;
        }
        out.set_column(target, &m.column(c));
        target += 1;
    }
    out
}

fn full_rank_with_intercept(natural: &DMatrix<f64>, drop: usize) -> bool {
    let n = natural.nrows();
    let k = natural.ncols(); // df + 1
    let mut design = DMatrix::zeros(n, k);
    design.column_mut(0).fill(1.0);
    let mut target = 1;
    for c in 0..k {
        if c == drop {
            continue;
        }
        design.set_column(target, &natural.column(c));
        target += 1;
    }
    let svd = design.svd(false, false);
    let max_sv = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * max_sv)
        .count();
    rank == k
}
