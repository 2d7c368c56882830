//! Small dense helpers. Everything here works on row-major `Vec<f64>` matrices of
//! dimension at most a handful, so no external linear algebra crate is pulled in.

/// Eigen-decomposition of a real symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues sorted in descending order.
    pub values: Vec<f64>,
    /// Column `j` of this row-major `n x n` matrix is the eigenvector for `values[j]`.
    pub vectors: Vec<f64>,
    pub sweeps: usize,
}

impl SymEigen {
    pub fn vector(&self, j: usize) -> Vec<f64> {
        let n = self.values.len();
        (0..n).map(|i| self.vectors[i * n + j]).collect()
    }
}

pub const JACOBI_TOL: f64 = 1e-13;
pub const JACOBI_MAX_SWEEPS: usize = 50;

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below
/// `JACOBI_TOL` times the full norm, or `JACOBI_MAX_SWEEPS` sweeps.
pub fn sym_eigen(a: &[f64], n: usize) -> SymEigen {
    assert_eq!(a.len(), n * n, "matrix must be n x n");
    let mut a = a.to_vec();
    // symmetrize to guard against rounding in callers
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = s;
            a[j * n + i] = s;
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut sweeps = 0;
    while sweeps < JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * a[i * n + j] * a[i * n + j];
            }
        }
        if off.sqrt() <= JACOBI_TOL * total || total == 0.0 {
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + col] = v[row * n + src];
        }
    }
    SymEigen {
        values,
        vectors,
        sweeps,
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Orthonormalize `v` against `basis` (two passes of Gram-Schmidt). Returns the
/// residual before normalization together with its norm.
pub fn orthogonalize(v: &[f64], basis: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let mut r = v.to_vec();
    for _ in 0..2 {
        for b in basis {
            let c = dot(&r, b);
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri -= c * bi;
            }
        }
    }
    let n = norm(&r);
    (r, n)
}

/// Complete an orthonormal family to an orthonormal basis of R^n, trying the
/// coordinate vectors in order.
pub fn complete_basis(partial: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = partial.to_vec();
    let mut a = 0;
    while basis.len() < n && a < n {
        let mut e = vec![0.0; n];
        e[a] = 1.0;
        let (r, rn) = orthogonalize(&e, &basis);
        if rn > 1e-6 {
            basis.push(r.iter().map(|x| x / rn).collect());
        }
        a += 1;
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_diagonalizes_known_matrix() {
        // eigenvalues of [[2,1,0],[1,2,0],[0,0,5]] are 5, 3, 1
        let a = [2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0];
        let e = sym_eigen(&a, 3);
        assert!((e.values[0] - 5.0).abs() < 1e-12);
        assert!((e.values[1] - 3.0).abs() < 1e-12);
        assert!((e.values[2] - 1.0).abs() < 1e-12);
        let v = e.vector(1);
        assert!((v[0].abs() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((v[0] - v[1]).abs() < 1e-12);
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let a = [
            4.0, -2.0, 0.5, 1.0, -2.0, 3.0, 0.25, 0.0, 0.5, 0.25, 1.0, -0.7, 1.0, 0.0, -0.7, 2.0,
        ];
        let e = sym_eigen(&a, 4);
        for i in 0..4 {
            for j in 0..4 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += e.vectors[i * 4 + k] * e.values[k] * e.vectors[j * 4 + k];
                }
                assert!((s - a[i * 4 + j]).abs() < 1e-12, "entry {i},{j}");
            }
        }
    }

    #[test]
    fn completes_basis_orthonormally() {
        let v = vec![vec![0.6, 0.8, 0.0]];
        let b = complete_basis(&v, 3);
        assert_eq!(b.len(), 3);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot(&b[i], &b[j]) - expect).abs() < 1e-12);
            }
        }
    }
}
