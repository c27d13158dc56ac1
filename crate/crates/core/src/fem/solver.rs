use super::{CsrMatrix, ScalarField, SparseSystem};
use crate::error::{Error, Result};

pub const DEFAULT_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

#[derive(Debug, Clone)]
pub struct MeanConstrainedSolution {
    pub field: ScalarField,
    /// Lagrange multiplier of the mean-value row: `K y + multiplier * m = b`.
    pub multiplier: f64,
    pub stats: SolveStats,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned conjugate gradients. Stops when the true residual
/// satisfies `|b - Ax| <= rtol |b|`.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    rtol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.dim();
    assert_eq!(b.len(), n);
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut ax = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let tol = rtol * bnorm;
    let mut iterations = 0;
    // a few restarts from the true residual guard against drift of the
    // recursively updated one
    for _restart in 0..8 {
        a.matvec(&x, &mut ax);
        for i in 0..n {
            r[i] = b[i] - ax[i];
        }
        let true_res = norm(&r);
        if true_res <= tol {
            return Ok((
                x,
                SolveStats {
                    iterations,
                    relative_residual: true_res / bnorm,
                },
            ));
        }
        for i in 0..n {
            z[i] = inv_diag[i] * r[i];
            p[i] = z[i];
        }
        let mut rz = dot(&r, &z);
        while iterations < max_iter {
            iterations += 1;
            a.matvec(&p, &mut q);
            let pq = dot(&p, &q);
            if pq <= 0.0 {
                break;
            }
            let alpha = rz / pq;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            if norm(&r) <= 0.5 * tol {
                break;
            }
            for i in 0..n {
                z[i] = inv_diag[i] * r[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        if iterations >= max_iter {
            break;
        }
    }
    a.matvec(&x, &mut ax);
    let res = norm(&b.iter().zip(&ax).map(|(u, v)| u - v).collect::<Vec<_>>()) / bnorm;
    if res <= rtol {
        return Ok((
            x,
            SolveStats {
                iterations,
                relative_residual: res,
            },
        ));
    }
    Err(Error::SolverDivergence {
        iterations,
        residual: res,
    })
}

fn default_max_iter(n: usize) -> usize {
    (20 * n).max(1000)
}

/// Solve an SPD system (after Dirichlet elimination).
pub fn solve_spd(system: &SparseSystem, rtol: f64) -> Result<(Vec<f64>, SolveStats)> {
    pcg(
        &system.matrix,
        &system.rhs,
        None,
        rtol,
        default_max_iter(system.matrix.dim()),
    )
}

/// Pure Neumann solve with the discrete mean `sum_i m_i y_i = 0`.
///
/// The saddle system `[K m; m^T 0] [y; l] = [b; 0]` is solved by eliminating
/// the multiplier `l = 1^T b / 1^T m` (constants span the kernel of `K`),
/// running CG on the compatible system, and removing the constant component.
pub fn solve_mean_constrained(system: &SparseSystem, rtol: f64) -> Result<MeanConstrainedSolution> {
    let m = system
        .mean_weights
        .as_ref()
        .expect("mean-constrained solve needs mean weights");
    let n = system.matrix.dim();
    let total_weight: f64 = m.iter().sum();
    let multiplier = system.rhs.iter().sum::<f64>() / total_weight;
    let rhs: Vec<f64> = system
        .rhs
        .iter()
        .zip(m)
        .map(|(b, w)| b - multiplier * w)
        .collect();
    let (mut y, stats) = pcg(&system.matrix, &rhs, None, rtol, default_max_iter(n))?;
    let shift = dot(m, &y) / total_weight;
    for v in &mut y {
        *v -= shift;
    }
    Ok(MeanConstrainedSolution {
        field: ScalarField::new(y),
        multiplier,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_returns_rhs() {
        let sys = SparseSystem {
            matrix: CsrMatrix::identity(4),
            rhs: vec![1.0, -2.0, 3.5, 0.25],
            mean_weights: None,
        };
        let (x, _) = solve_spd(&sys, 1e-12).unwrap();
        assert_eq!(x, sys.rhs);
    }

    #[test]
    fn two_by_two_spd() {
        let sys = SparseSystem {
            matrix: CsrMatrix::from_dense(&[vec![2.0, 1.0], vec![1.0, 2.0]]),
            rhs: vec![1.0, 1.0],
            mean_weights: None,
        };
        let (x, _) = solve_spd(&sys, 1e-14).unwrap();
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-14);
        assert!((x[1] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let sys = SparseSystem {
            matrix: CsrMatrix::from_dense(&[vec![1.0, -1.0], vec![-1.0, 1.0]]),
            rhs: vec![0.0, 0.0],
            mean_weights: Some(vec![0.5, 0.5]),
        };
        let sol = solve_mean_constrained(&sys, 1e-10).unwrap();
        assert_eq!(sol.field.values(), &[0.0, 0.0]);
        assert_eq!(sol.multiplier, 0.0);
    }

    #[test]
    fn divergence_is_reported() {
        // indefinite matrix: CG breaks down and cannot reach the tolerance
        let sys = SparseSystem {
            matrix: CsrMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, -1.0]]),
            rhs: vec![1.0, 1.0],
            mean_weights: None,
        };
        assert!(matches!(
            solve_spd(&sys, 1e-10),
            Err(Error::SolverDivergence { .. })
        ));
    }
}
