//! Cyclic Jacobi eigen-decomposition for 3×3 symmetric matrices.

use crate::scalar::Scalar;

/// Eigenpairs of a symmetric 3×3 matrix, sorted by descending eigenvalue.
/// `vectors[k]` is the unit eigenvector for `values[k]`.
#[derive(Debug, Clone, Copy)]
pub struct SymEigen3<T> {
    pub values: [T; 3],
    pub vectors: [[T; 3]; 3],
}

pub fn sym_eigen3<T: Scalar>(m: &[[T; 3]; 3]) -> SymEigen3<T> {
    let mut a = *m;
    // columns of `v` accumulate the rotations
    let mut v = [[T::zero(); 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = T::one();
    }

    for _sweep in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        let diag = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
        if off <= T::epsilon() * T::epsilon() * diag || off == T::zero() {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q] == T::zero() {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (T::lit(2.0) * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
            let c = T::one() / (t * t + T::one()).sqrt();
            let s = t * c;
            rotate(&mut a, &mut v, p, q, c, s);
        }
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| crate::scalar::total_cmp(a[j][j], a[i][i]));
    let values = order.map(|k| a[k][k]);
    let vectors = order.map(|k| [v[0][k], v[1][k], v[2][k]]);
    SymEigen3 { values, vectors }
}

fn rotate<T: Scalar>(a: &mut [[T; 3]; 3], v: &mut [[T; 3]; 3], p: usize, q: usize, c: T, s: T) {
    // A' = Jᵀ A J with J the Givens rotation in the (p, q) plane
    for k in 0..3 {
        let akp = a[k][p];
        let akq = a[k][q];
        a[k][p] = c * akp - s * akq;
        a[k][q] = s * akp + c * akq;
    }
    for k in 0..3 {
        let apk = a[p][k];
        let aqk = a[q][k];
        a[p][k] = c * apk - s * aqk;
        a[q][k] = s * apk + c * aqk;
    }
    for row in v.iter_mut() {
        let vp = row[p];
        let vq = row[q];
        row[p] = c * vp - s * vq;
        row[q] = s * vp + c * vq;
    }
}
