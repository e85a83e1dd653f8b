//! Small dense helpers on row-major `D x D` blocks.

use nalgebra::{DMatrix, DMatrixView};

/// Row-major slice → owned matrix.
pub fn to_matrix(a: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, a)
}

/// Owned matrix → row-major vector.
pub fn from_matrix(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// `a * b` for row-major `a`, `b`.
pub fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    // A row-major buffer read column-major is A^T, and (AB)^T = B^T A^T.
    let at = DMatrixView::from_slice(a, d, d);
    let bt = DMatrixView::from_slice(b, d, d);
    let ct = bt * at;
    ct.as_slice().to_vec()
}

/// `a * b * c` for row-major inputs.
pub fn matmul3(a: &[f64], b: &[f64], c: &[f64], d: usize) -> Vec<f64> {
    let at = DMatrixView::from_slice(a, d, d);
    let bt = DMatrixView::from_slice(b, d, d);
    let ct = DMatrixView::from_slice(c, d, d);
    (ct * bt * at).as_slice().to_vec()
}

/// Inverse of a symmetric positive-definite block, or `None` when the
/// Cholesky factorization fails.
pub fn invert_spd(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let m = to_matrix(a, d);
    let chol = m.cholesky()?;
    let mut inv = chol.inverse();
    // exact symmetry
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = avg;
            inv[(j, i)] = avg;
        }
    }
    Some(from_matrix(&inv))
}

/// True when the symmetric block admits a Cholesky factorization.
pub fn is_spd(a: &[f64], d: usize) -> bool {
    to_matrix(a, d).cholesky().is_some()
}

/// Eigenvalues of a symmetric block, ascending.
pub fn sym_eigenvalues(a: &[f64], d: usize) -> Vec<f64> {
    let mut ev: Vec<f64> = to_matrix(a, d).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

pub fn trace(a: &[f64], d: usize) -> f64 {
    (0..d).map(|i| a[i * d + i]).sum()
}

/// `sum_ij a_ij b_ij`.
pub fn frobenius_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Applies `m` (row-major, `d x d`) along axis `axis` of a rank-`rank` array.
pub fn mode_product(t: &[f64], m: &[f64], d: usize, rank: usize, axis: usize) -> Vec<f64> {
    let pre = d.pow(axis as u32);
    let post = d.pow((rank - axis - 1) as u32);
    let mut out = vec![0.0; t.len()];
    for a in 0..pre {
        for i in 0..d {
            let dst = &mut out[(a * d + i) * post..(a * d + i + 1) * post];
            for j in 0..d {
                let mij = m[i * d + j];
                if mij == 0.0 {
                    continue;
                }
                let src = &t[(a * d + j) * post..(a * d + j + 1) * post];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += mij * s;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_row_major() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [0.0, 1.0, 1.0, 0.0];
        assert_eq!(matmul(&a, &b, 2), vec![2.0, 1.0, 4.0, 3.0]);
        assert_eq!(matmul3(&b, &a, &b, 2), vec![4.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn spd_inverse() {
        let a = [4.0, 1.0, 1.0, 3.0];
        let inv = invert_spd(&a, 2).unwrap();
        let id = matmul(&a, &inv, 2);
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id[i * 2 + j] - e).abs() < 1e-14);
            }
        }
        assert!(invert_spd(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }

    #[test]
    fn mode_product_matches_matmul() {
        let t = [1.0, 2.0, 3.0, 4.0];
        let m = [0.0, 1.0, 2.0, 0.0];
        // axis 0: M T ; axis 1: T M^T
        assert_eq!(mode_product(&t, &m, 2, 2, 0), matmul(&m, &t, 2));
        let mt = [0.0, 2.0, 1.0, 0.0];
        assert_eq!(mode_product(&t, &m, 2, 2, 1), matmul(&t, &mt, 2));
    }
}
