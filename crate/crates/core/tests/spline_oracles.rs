//! Finite-difference and least-squares oracles for the natural cubic
//! spline basis. Within one cubic piece, central differences recover
//! derivatives exactly, so one-sided second-derivative limits at a knot
//! can be reconstructed from points strictly inside each adjacent piece.

use bymscan::spline::{make_basis, SplineBasis};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn col_at(basis: &SplineBasis, col: usize, x: f64) -> f64 {
    basis.evaluate(x).unwrap()[col]
}

/// One-sided second derivative at `knot` reconstructed from four points
/// inside the adjacent piece (exact for cubics up to rounding):
/// f''(knot) = f''(center) +/- 2h f''' with both terms from differences.
fn one_sided_d2(basis: &SplineBasis, col: usize, knot: f64, h: f64, left: bool) -> f64 {
    let sign = if left { -1.0 } else { 1.0 };
    let p: Vec<f64> = (1..=4).map(|j| knot + sign * h * j as f64).collect();
    let f: Vec<f64> = p.iter().map(|&x| col_at(basis, col, x)).collect();
    // Second difference centred at p[1] (distance 2h from the knot).
    let d2 = (f[2] - 2.0 * f[1] + f[0]) / (h * h);
    // Third difference over step (sign * h): equals sign * f''' exactly
    // within the piece, so the Taylor step back to the knot is
    // f''(knot) = d2 - sign * 2h * (sign * d3) = d2 - 2h * d3.
    let d3 = (f[3] - 3.0 * f[2] + 3.0 * f[1] - f[0]) / (h * h * h);
    d2 - 2.0 * h * d3
}

#[test]
fn basis_columns_are_c2_at_interior_knots() {
    let t: Vec<f64> = (1..=192).map(|v| v as f64).collect();
    let h = 1e-3;
    for df in [4, 10, 16] {
        let basis = make_basis(&t, df).unwrap();
        for &knot in basis.interior_knots() {
            for col in 0..df {
                let from_left = one_sided_d2(&basis, col, knot, h, true);
                let from_right = one_sided_d2(&basis, col, knot, h, false);
                let jump = (from_left - from_right).abs();
                let scale = from_left.abs().max(from_right.abs()).max(1.0);
                assert!(
                    jump / scale < 1e-6,
                    "df={df} col={col} knot={knot}: d2 jump {jump:.3e} (scale {scale:.3e})"
                );
            }
        }
    }
}

#[test]
fn second_derivative_vanishes_at_and_beyond_boundaries() {
    let t: Vec<f64> = (1..=100).map(|v| v as f64).collect();
    for df in [3, 8, 16] {
        let basis = make_basis(&t, df).unwrap();
        let (lo, hi) = basis.boundary_knots();
        // One-sided limits at the boundary knots themselves.
        for col in 0..df {
            let at_lo = one_sided_d2(&basis, col, lo, 1e-3, false);
            let at_hi = one_sided_d2(&basis, col, hi, 1e-3, true);
            assert!(at_lo.abs() < 1e-6, "df={df} col={col} d2({lo})={at_lo:.3e}");
            assert!(at_hi.abs() < 1e-6, "df={df} col={col} d2({hi})={at_hi:.3e}");
        }
        // Plain second differences on extrapolated evaluations.
        for col in 0..df {
            for &(center, h) in &[(hi + 6.0, 2.0), (lo - 6.0, 2.0), (hi + 20.0, 5.0)] {
                let d2 = (col_at(&basis, col, center + h) - 2.0 * col_at(&basis, col, center)
                    + col_at(&basis, col, center - h))
                    / (h * h);
                assert!(
                    d2.abs() < 1e-8,
                    "df={df} col={col} at {center}: extrapolated d2 = {d2:.3e}"
                );
            }
        }
    }
}

/// Fits a cubic through four (x, y) points and evaluates it at `at`
/// (coordinates shifted by `at` for conditioning).
fn cubic_extrapolate(xs: &[f64], ys: &[f64], at: f64) -> f64 {
    let mut a = DMatrix::zeros(4, 4);
    for r in 0..4 {
        let d = xs[r] - at;
        for c in 0..4 {
            a[(r, c)] = d.powi(c as i32);
        }
    }
    let y = DVector::from_row_slice(ys);
    let coef = a.lu().solve(&y).expect("cubic fit");
    coef[0]
}

#[test]
fn interior_knot_value_matches_one_sided_limits() {
    let t: Vec<f64> = (1..=60).map(|v| v as f64).collect();
    let basis = make_basis(&t, 5).unwrap();
    for &knot in basis.interior_knots() {
        for col in 0..5 {
            let value = col_at(&basis, col, knot);
            let step = 0.2;
            let left_x: Vec<f64> = (1..=4).map(|j| knot - step * j as f64).collect();
            let right_x: Vec<f64> = (1..=4).map(|j| knot + step * j as f64).collect();
            let left_y: Vec<f64> = left_x.iter().map(|&x| col_at(&basis, col, x)).collect();
            let right_y: Vec<f64> = right_x.iter().map(|&x| col_at(&basis, col, x)).collect();
            let from_left = cubic_extrapolate(&left_x, &left_y, knot);
            let from_right = cubic_extrapolate(&right_x, &right_y, knot);
            assert!(
                (from_left - value).abs() < 1e-8 && (from_right - value).abs() < 1e-8,
                "col={col} knot={knot}: {from_left} / {value} / {from_right}"
            );
        }
    }
}

#[test]
fn least_squares_reproduces_exact_natural_spline() {
    let t: Vec<f64> = (1..=192).map(|v| v as f64).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(901);
    for df in [6, 10, 16] {
        let basis = make_basis(&t, df).unwrap();
        let n = t.len();
        let coef = DVector::from_fn(df, |_, _| rng.gen_range(-2.0..2.0));
        let intercept = 1.7;
        let y = basis.matrix() * coef + DVector::from_element(n, intercept);

        let mut design = DMatrix::zeros(n, df + 1);
        design.column_mut(0).fill(1.0);
        design.columns_mut(1, df).copy_from(basis.matrix());
        let solution = design
            .clone()
            .svd(true, true)
            .solve(&y, 1e-14)
            .expect("least squares");
        let fitted = design * solution;
        let rel = (&fitted - &y).norm() / y.norm();
        assert!(rel < 1e-8, "df={df}: relative reproduction error {rel:.3e}");
    }
}

#[test]
fn extrapolation_is_linear_continuation() {
    let t: Vec<f64> = (1..=50).map(|v| v as f64).collect();
    let basis = make_basis(&t, 4).unwrap();
    let (lo, hi) = basis.boundary_knots();
    for col in 0..4 {
        // Slope just inside must continue outside.
        let h = 1e-4;
        let inner_slope = (col_at(&basis, col, hi) - col_at(&basis, col, hi - h)) / h;
        let outer = col_at(&basis, col, hi + 10.0);
        let expected = col_at(&basis, col, hi) + 10.0 * inner_slope;
        assert!(
            (outer - expected).abs() < 1e-5,
            "col={col}: outer {outer} vs linear {expected}"
        );
        let inner_slope_lo = (col_at(&basis, col, lo + h) - col_at(&basis, col, lo)) / h;
        let outer_lo = col_at(&basis, col, lo - 5.0);
        let expected_lo = col_at(&basis, col, lo) - 5.0 * inner_slope_lo;
        assert!((outer_lo - expected_lo).abs() < 1e-5);
    }
}

#[test]
fn span_is_invariant_under_affine_rescaling() {
    let t: Vec<f64> = (1..=120).map(|v| v as f64).collect();
    let rescaled: Vec<f64> = t.iter().map(|&x| -3.0 + 0.25 * x).collect();
    for df in [4, 9] {
        let b1 = make_basis(&t, df).unwrap();
        let b2 = make_basis(&rescaled, df).unwrap();
        let proj = |m: &DMatrix<f64>| -> DMatrix<f64> {
            let n = m.nrows();
            let mut design = DMatrix::zeros(n, df + 1);
            design.column_mut(0).fill(1.0);
            design.columns_mut(1, df).copy_from(m);
            let svd = design.svd(true, false);
            let u = svd.u.unwrap();
            &u * u.transpose()
        };
        let p1 = proj(b1.matrix());
        let p2 = proj(b2.matrix());
        let max_diff = (&p1 - &p2).abs().max();
        assert!(max_diff < 1e-10, "df={df}: projection gap {max_diff:.3e}");
    }
}
