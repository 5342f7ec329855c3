//! Dense kernels for the tiny (n ≤ 4) symmetric matrices that live at each node.

use crate::scalar::Real;

pub const MAX_DIM: usize = 4;

pub type Mat<S> = [[S; MAX_DIM]; MAX_DIM];

pub fn zeros<S: Real>() -> Mat<S> {
    [[S::zero(); MAX_DIM]; MAX_DIM]
}

pub fn identity<S: Real>(n: usize) -> Mat<S> {
    let mut m = zeros();
    for (i, row) in m.iter_mut().enumerate().take(n) {
        row[i] = S::one();
    }
    m
}

pub fn matmul<S: Real>(a: &Mat<S>, b: &Mat<S>, n: usize) -> Mat<S> {
    let mut c = zeros();
    for i in 0..n {
        for j in 0..n {
            let mut acc = S::zero();
            for k in 0..n {
                acc = acc + a[i][k] * b[k][j];
            }
            c[i][j] = acc;
        }
    }
    c
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det<S: Real>(m: &Mat<S>, n: usize) -> S {
    match n {
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        3 => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
        _ => {
            let mut a = *m;
            let mut d = S::one();
            for col in 0..n {
                let mut piv = col;
                for r in col + 1..n {
                    if a[r][col].abs() > a[piv][col].abs() {
                        piv = r;
                    }
                }
                if a[piv][col] == S::zero() {
                    return S::zero();
                }
                if piv != col {
                    a.swap(piv, col);
                    d = -d;
                }
                d = d * a[col][col];
                for r in col + 1..n {
                    let f = a[r][col] / a[col][col];
                    for c in col..n {
                        a[r][c] = a[r][c] - f * a[col][c];
                    }
                }
            }
            d
        }
    }
}

/// Inverse by Gauss-Jordan elimination; `None` for a singular matrix.
pub fn inverse<S: Real>(m: &Mat<S>, n: usize) -> Option<Mat<S>> {
    if n == 2 {
        let d = det(m, 2);
        if d == S::zero() {
            return None;
        }
        let mut inv = zeros();
        inv[0][0] = m[1][1] / d;
        inv[1][1] = m[0][0] / d;
        inv[0][1] = -m[0][1] / d;
        inv[1][0] = -m[1][0] / d;
        return Some(inv);
    }
    let mut a = *m;
    let mut inv = identity(n);
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col] == S::zero() {
            return None;
        }
        a.swap(piv, col);
        inv.swap(piv, col);
        let p = a[col][col];
        for c in 0..n {
            a[col][c] = a[col][c] / p;
            inv[col][c] = inv[col][c] / p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != S::zero() {
                    for c in 0..n {
                        a[r][c] = a[r][c] - f * a[col][c];
                        inv[r][c] = inv[r][c] - f * inv[col][c];
                    }
                }
            }
        }
    }
    // symmetric input gives a symmetric inverse; remove round-off asymmetry
    for i in 0..n {
        for j in i + 1..n {
            if m[i][j] == m[j][i] {
                let avg = (inv[i][j] + inv[j][i]) * S::lit(0.5);
                inv[i][j] = avg;
                inv[j][i] = avg;
            }
        }
    }
    Some(inv)
}

/// Lower Cholesky factor of an SPD matrix.
pub fn cholesky<S: Real>(m: &Mat<S>, n: usize) -> Option<Mat<S>> {
    let mut l = zeros();
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[i][j];
            for k in 0..j {
                s = s - l[i][k] * l[j][k];
            }
            if i == j {
                if s <= S::zero() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Inverse of a lower-triangular matrix.
pub fn lower_inverse<S: Real>(l: &Mat<S>, n: usize) -> Mat<S> {
    let mut inv = zeros();
    for i in 0..n {
        inv[i][i] = S::one() / l[i][i];
        for j in 0..i {
            let mut s = S::zero();
            for k in j..i {
                s = s + l[i][k] * inv[k][j];
            }
            inv[i][j] = -s / l[i][i];
        }
    }
    inv
}

/// Eigenvalues of a symmetric matrix (cyclic Jacobi), sorted ascending.
pub fn sym_eigenvalues<S: Real>(m: &Mat<S>, n: usize) -> [S; MAX_DIM] {
    let mut out = [S::zero(); MAX_DIM];
    if n == 1 {
        out[0] = m[0][0];
        return out;
    }
    if n == 2 {
        let (a, b, c) = (m[0][0], m[0][1], m[1][1]);
        let mean = (a + c) * S::lit(0.5);
        let half = (a - c) * S::lit(0.5);
        let r = (half * half + b * b).sqrt();
        out[0] = mean - r;
        out[1] = mean + r;
        return out;
    }
    let mut a = *m;
    for _sweep in 0..50 {
        let mut off = S::zero();
        for i in 0..n {
            for j in i + 1..n {
                off = off + a[i][j] * a[i][j];
            }
        }
        if off <= S::epsilon() * S::epsilon() * S::min_positive_value().max(S::one()) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == S::zero() {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (S::lit(2.0) * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                let t = if theta == S::zero() { S::one() } else { t };
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    for i in 0..n {
        out[i] = a[i][i];
    }
    out[..n].sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    out
}

/// Eigenvalues of the pencil h⁻¹g (both symmetric, h SPD), sorted ascending.
pub fn relative_eigenvalues<S: Real>(g: &Mat<S>, h: &Mat<S>, n: usize) -> Option<[S; MAX_DIM]> {
    let l = cholesky(h, n)?;
    let li = lower_inverse(&l, n);
    // li * g * liᵀ
    let mut tmp = zeros();
    for i in 0..n {
        for j in 0..n {
            let mut s = S::zero();
            for k in 0..n {
                s = s + li[i][k] * g[k][j];
            }
            tmp[i][j] = s;
        }
    }
    let mut c = zeros();
    for i in 0..n {
        for j in 0..n {
            let mut s = S::zero();
            for k in 0..n {
                s = s + tmp[i][k] * li[j][k];
            }
            c[i][j] = s;
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let avg = (c[i][j] + c[j][i]) * S::lit(0.5);
            c[i][j] = avg;
            c[j][i] = avg;
        }
    }
    Some(sym_eigenvalues(&c, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_rows(rows: &[&[f64]]) -> Mat<f64> {
        let mut m = zeros();
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                m[i][j] = *v;
            }
        }
        m
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        for n in 2..=4 {
            let mut m = identity::<f64>(n);
            for i in 0..n {
                for j in 0..n {
                    m[i][j] += 0.1 * ((i + 2 * j) as f64).sin() + 0.1 * ((j + 2 * i) as f64).sin();
                }
                m[i][i] += 1.0;
            }
            let inv = inverse(&m, n).unwrap();
            let p = matmul(&m, &inv, n);
            for i in 0..n {
                for j in 0..n {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((p[i][j] - e).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn determinant_agrees_with_eigenvalue_product() {
        let m = from_rows(&[&[4.0, 1.0, 0.5, 0.0], &[1.0, 3.0, 0.2, 0.1], &[0.5, 0.2, 2.0, 0.3], &[0.0, 0.1, 0.3, 1.5]]);
        let ev = sym_eigenvalues(&m, 4);
        let prod: f64 = ev.iter().product();
        assert!((det(&m, 4) - prod).abs() < 1e-10);
        let m3 = from_rows(&[&[2.0, 0.3, 0.1], &[0.3, 1.0, -0.2], &[0.1, -0.2, 3.0]]);
        let ev3 = sym_eigenvalues(&m3, 3);
        assert!((det(&m3, 3) - ev3[0] * ev3[1] * ev3[2]).abs() < 1e-12);
    }

    #[test]
    fn relative_eigenvalues_of_diagonal_pencil() {
        let g = from_rows(&[&[2.0, 0.0], &[0.0, 0.8]]);
        let h = identity(2);
        let ev = relative_eigenvalues(&g, &h, 2).unwrap();
        assert!((ev[0] - 0.8).abs() < 1e-15 && (ev[1] - 2.0).abs() < 1e-15);
        let h2 = from_rows(&[&[2.0, 0.0], &[0.0, 2.0]]);
        let ev2 = relative_eigenvalues(&g, &h2, 2).unwrap();
        assert!((ev2[0] - 0.4).abs() < 1e-15 && (ev2[1] - 1.0).abs() < 1e-15);
    }
}
