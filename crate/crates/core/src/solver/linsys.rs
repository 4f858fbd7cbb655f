//! Dense linear solve used by the cross-check evaluation route.

use crate::error::SolverError;

/// Solves `A x = b` in place via LU with partial pivoting. `a` is row-major
/// `n × n`. Intended for the small policy-evaluation systems (hundreds of
/// unknowns at most).
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, SolverError> {
    let n = b.len();
    assert!(a.len() == n && a.iter().all(|row| row.len() == n));
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .expect("non-empty column");
        if !pivot.is_finite() || pivot < 1e-300 {
            return Err(SolverError::NumericFailure(format!(
                "zero pivot in column {col} (|pivot| = {pivot:.3e})"
            )));
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                let v = a[col][k];
                a[row][k] -= factor * v;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn solves_small_system() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let x = solve_dense(a, vec![5.0, 10.0]).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_singular_system() {
        let a = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(solve_dense(a, vec![1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn residual_small_on_diagonally_dominant_systems(
            seed_vals in proptest::collection::vec(-1.0f64..1.0, 9),
            rhs in proptest::collection::vec(-10.0f64..10.0, 3),
        ) {
            let n = 3;
            let mut a = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    a[i][j] = seed_vals[i * n + j];
                }
                a[i][i] = 4.0 + seed_vals[i * n + i];
            }
            let x = solve_dense(a.clone(), rhs.clone()).unwrap();
            for i in 0..n {
                let lhs: f64 = (0..n).map(|j| a[i][j] * x[j]).sum();
                prop_assert!((lhs - rhs[i]).abs() < 1e-10);
            }
        }
    }
}
