//! Dense row-major linear algebra for the small matrices an HMM needs.

use crate::scalar::Real;

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
///
/// Returns `None` when a pivot falls below `tol` times the largest absolute
/// entry of `a`.
pub fn solve<F: Real>(n: usize, a: &[F], b: &[F], tol: F) -> Option<Vec<F>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let scale = a.iter().fold(F::zero(), |s, v| s.max(v.abs()));
    if !(scale > F::zero()) {
        return None;
    }
    for col in 0..n {
        let (piv, pval) = (col..n)
            .map(|r| (r, m[r * n + col].abs()))
            .fold((col, F::neg_infinity()), |best, cur| if cur.1 > best.1 { cur } else { best });
        if !(pval > tol * scale) {
            return None;
        }
        if piv != col {
            for c in 0..n {
                m.swap(col * n + c, piv * n + c);
            }
            x.swap(col, piv);
        }
        let d = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / d;
            if f == F::zero() {
                continue;
            }
            for c in col..n {
                m[r * n + c] = m[r * n + c] - f * m[col * n + c];
            }
            x[r] = x[r] - f * x[col];
        }
    }
    for r in (0..n).rev() {
        let mut s = x[r];
        for c in r + 1..n {
            s = s - m[r * n + c] * x[c];
        }
        x[r] = s / m[r * n + r];
    }
    Some(x)
}

/// Row vector times matrix: `out = v a`.
#[inline]
pub fn vec_mat<F: Real>(n: usize, v: &[F], a: &[F], out: &mut [F]) {
    for o in out.iter_mut() {
        *o = F::zero();
    }
    for (i, &vi) in v.iter().enumerate() {
        if vi == F::zero() {
            continue;
        }
        let row = &a[i * n..(i + 1) * n];
        for (o, &g) in out.iter_mut().zip(row) {
            *o = *o + vi * g;
        }
    }
}

/// Matrix times column vector: `out = a v`.
#[inline]
pub fn mat_vec<F: Real>(n: usize, a: &[F], v: &[F], out: &mut [F]) {
    for (i, o) in out.iter_mut().enumerate() {
        let row = &a[i * n..(i + 1) * n];
        *o = row.iter().zip(v).map(|(&g, &x)| g * x).sum();
    }
}

pub fn mat_mul<F: Real>(n: usize, a: &[F], b: &[F]) -> Vec<F> {
    let mut out = vec![F::zero(); n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                out[i * n + j] = out[i * n + j] + aik * b[k * n + j];
            }
        }
    }
    out
}

pub fn identity<F: Real>(n: usize) -> Vec<F> {
    let mut m = vec![F::zero(); n * n];
    for i in 0..n {
        m[i * n + i] = F::one();
    }
    m
}

pub fn transpose<F: Real>(n: usize, a: &[F]) -> Vec<F> {
    let mut t = vec![F::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = a[i * n + j];
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = [2.0_f64, 1.0, 1.0, 1.0, 3.0, 2.0, 1.0, 0.0, 0.0];
        let b = [4.0, 5.0, 6.0];
        let x = solve(3, &a, &b, 1e-14).unwrap();
        let mut ax = [0.0; 3];
        mat_vec(3, &a, &x, &mut ax);
        for (u, v) in ax.iter().zip(b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn detects_singular() {
        let a = [1.0, 2.0, 2.0, 4.0];
        assert!(solve(2, &a, &[1.0, 1.0], 1e-12).is_none());
    }
}
