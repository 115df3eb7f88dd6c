use super::matrix::{CMatrix, C64};
use super::{LinalgError, Result};

/// LU factorization with partial pivoting, in place. Returns the row
/// permutation parity and the pivot order.
fn lu_in_place(a: &mut CMatrix) -> Result<(f64, Vec<usize>)> {
    let n = a.rows();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[(i, k)].norm().total_cmp(&a[(j, k)].norm()))
            .unwrap_or(k);
        if a[(p, k)].norm() == 0.0 {
            return Err(LinalgError::Singular);
        }
        if p != k {
            for j in 0..n {
                let t = a[(k, j)];
                a[(k, j)] = a[(p, j)];
                a[(p, j)] = t;
            }
            perm.swap(k, p);
            sign = -sign;
        }
        let pivot = a[(k, k)];
        for i in k + 1..n {
            let f = a[(i, k)] / pivot;
            a[(i, k)] = f;
            for j in k + 1..n {
                let akj = a[(k, j)];
                a[(i, j)] -= f * akj;
            }
        }
    }
    Ok((sign, perm))
}

/// Solves `A X = B` for square `A`.
pub fn lu_solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if !a.is_square() || a.rows() != b.rows() {
        return Err(LinalgError::DimensionMismatch(format!("solve {:?} \\ {:?}", a.shape(), b.shape())));
    }
    let n = a.rows();
    let mut lu = a.clone();
    let (_, perm) = lu_in_place(&mut lu)?;
    let mut x = CMatrix::zeros(n, b.cols());
    for c in 0..b.cols() {
        let mut y: Vec<C64> = perm.iter().map(|&p| b[(p, c)]).collect();
        for i in 0..n {
            for j in 0..i {
                let l = lu[(i, j)];
                y[i] = y[i] - l * y[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let u = lu[(i, j)];
                y[i] = y[i] - u * y[j];
            }
            y[i] /= lu[(i, i)];
        }
        x.set_col(c, &y);
    }
    Ok(x)
}

pub fn lu_determinant(a: &CMatrix) -> C64 {
    let mut lu = a.clone();
    match lu_in_place(&mut lu) {
        Ok((sign, _)) => lu.diag().into_iter().fold(C64::new(sign, 0.0), |acc, d| acc * d),
        Err(_) => C64::new(0.0, 0.0),
    }
}
