//! Fixed-size vector and matrix helpers, generic over [`Real`] so they run on
//! dual numbers as well as `f64`.

use crate::ad::Real;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];
/// A point of six-dimensional phase space.
pub type State = [f64; 6];
pub type Mat6 = [[f64; 6]; 6];

#[inline]
pub fn dot<T: Real, const N: usize>(a: &[T; N], b: &[T; N]) -> T {
    let mut s = T::zero();
    for i in 0..N {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn norm<T: Real, const N: usize>(a: &[T; N]) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub fn cross<T: Real>(a: &[T; 3], b: &[T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn add<T: Real, const N: usize>(a: &[T; N], b: &[T; N]) -> [T; N] {
    std::array::from_fn(|i| a[i] + b[i])
}

#[inline]
pub fn sub<T: Real, const N: usize>(a: &[T; N], b: &[T; N]) -> [T; N] {
    std::array::from_fn(|i| a[i] - b[i])
}

#[inline]
pub fn scale<T: Real, const N: usize>(a: &[T; N], s: T) -> [T; N] {
    std::array::from_fn(|i| a[i] * s)
}

/// `a + s b`
#[inline]
pub fn axpy<T: Real, const N: usize>(a: &[T; N], s: T, b: &[T; N]) -> [T; N] {
    std::array::from_fn(|i| a[i] + s * b[i])
}

pub fn lift<T: Real, const N: usize>(a: &[f64; N]) -> [T; N] {
    a.map(T::cst)
}

pub fn values<T: Real, const N: usize>(a: &[T; N]) -> [f64; N] {
    a.map(|x| x.value())
}

pub fn mat_values<T: Real, const N: usize, const M: usize>(a: &[[T; N]; M]) -> [[f64; N]; M] {
    a.map(|row| values(&row))
}

pub fn matvec<T: Real, const N: usize, const M: usize>(a: &[[T; N]; M], x: &[T; N]) -> [T; M] {
    std::array::from_fn(|i| dot(&a[i], x))
}

pub fn matmul<T: Real, const N: usize, const K: usize, const M: usize>(
    a: &[[T; K]; N],
    b: &[[T; M]; K],
) -> [[T; M]; N] {
    std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let mut s = T::zero();
            for k in 0..K {
                s += a[i][k] * b[k][j];
            }
            s
        })
    })
}

pub fn transpose<T: Real, const N: usize, const M: usize>(a: &[[T; M]; N]) -> [[T; N]; M] {
    std::array::from_fn(|i| std::array::from_fn(|j| a[j][i]))
}

pub fn identity<T: Real, const N: usize>() -> [[T; N]; N] {
    std::array::from_fn(|i| std::array::from_fn(|j| if i == j { T::one() } else { T::zero() }))
}

/// `J P J^T`
pub fn congruence<T: Real, const N: usize>(j: &[[T; N]; N], p: &[[T; N]; N]) -> [[T; N]; N] {
    matmul(&matmul(j, p), &transpose(j))
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff<const N: usize, const M: usize>(a: &[[f64; N]; M], b: &[[f64; N]; M]) -> f64 {
    let mut m = 0.0f64;
    for i in 0..M {
        for j in 0..N {
            m = m.max((a[i][j] - b[i][j]).abs());
        }
    }
    m
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting. Returns
/// `None` when a pivot falls below `1e-300` in magnitude.
pub fn solve<T: Real, const N: usize>(a: &[[T; N]; N], b: &[T; N]) -> Option<[T; N]> {
    let mut m = *a;
    let mut x = *b;
    for col in 0..N {
        let mut piv = col;
        for r in col + 1..N {
            if m[r][col].value().abs() > m[piv][col].value().abs() {
                piv = r;
            }
        }
        if m[piv][col].value().abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        x.swap(col, piv);
        let inv = m[col][col].recip();
        for r in col + 1..N {
            let f = m[r][col] * inv;
            if f.value() == 0.0 {
                continue;
            }
            for c in col..N {
                let t = m[col][c];
                m[r][c] -= f * t;
            }
            let t = x[col];
            x[r] -= f * t;
        }
    }
    for col in (0..N).rev() {
        let mut s = x[col];
        for c in col + 1..N {
            s -= m[col][c] * x[c];
        }
        x[col] = s / m[col][col];
    }
    Some(x)
}

/// Matrix inverse via column-wise [`solve`].
pub fn inverse<T: Real, const N: usize>(a: &[[T; N]; N]) -> Option<[[T; N]; N]> {
    let mut cols = [[T::zero(); N]; N];
    for (j, col) in cols.iter_mut().enumerate() {
        let mut e = [T::zero(); N];
        e[j] = T::one();
        *col = solve(a, &e)?;
    }
    Some(transpose(&cols))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_is_right_handed() {
        assert_eq!(cross(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn inverse_round_trip() {
        let a = [
            [4.0, 1.0, 0.0, 2.0],
            [0.0, 3.0, 1.0, 0.0],
            [1.0, 0.0, 0.0, 5.0],
            [0.0, 2.0, 7.0, 1.0],
        ];
        let inv = inverse(&a).unwrap();
        let id: [[f64; 4]; 4] = identity();
        assert!(max_abs_diff(&matmul(&a, &inv), &id) < 1e-14);
    }

    #[test]
    fn singular_matrix_rejected() {
        let a = [[1.0, 2.0], [2.0, 4.0]];
        assert!(solve(&a, &[1.0, 1.0]).is_none());
    }
}
