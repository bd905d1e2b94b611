//! Small dense-matrix helpers for loop-filter state-space work.
//!
//! Modulator orders are at most 8, so everything here is sized for tiny
//! matrices; no attempt is made at cache blocking or pivot strategies beyond
//! partial pivoting.

use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mat<T> {
    n: usize,
    m: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(n: usize, m: usize) -> Self {
        Mat {
            n,
            m,
            data: vec![T::zero(); n * m],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut a = Self::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = T::one();
        }
        a
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.m
    }

    pub fn matmul(&self, rhs: &Mat<T>) -> Mat<T> {
        assert_eq!(self.m, rhs.n);
        let mut out = Mat::zeros(self.n, rhs.m);
        for i in 0..self.n {
            for k in 0..self.m {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..rhs.m {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.m, v.len());
        let mut out = vec![T::zero(); self.n];
        for i in 0..self.n {
            let mut acc = T::zero();
            for j in 0..self.m {
                acc += self[(i, j)] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn add_assign(&mut self, rhs: &Mat<T>) {
        assert_eq!((self.n, self.m), (rhs.n, rhs.m));
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += *b;
        }
    }

    pub fn scale(&self, s: T) -> Mat<T> {
        Mat {
            n: self.n,
            m: self.m,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn trace(&self) -> T {
        (0..self.n.min(self.m)).fold(T::zero(), |acc, i| acc + self[(i, i)])
    }

    pub fn norm_inf(&self) -> T {
        let mut best = T::zero();
        for i in 0..self.n {
            let mut row = T::zero();
            for j in 0..self.m {
                row += self[(i, j)].abs();
            }
            if row > best {
                best = row;
            }
        }
        best
    }

    /// Copy `block` into self with its top-left corner at `(r, c)`.
    pub fn set_block(&mut self, r: usize, c: usize, block: &Mat<T>) {
        for i in 0..block.n {
            for j in 0..block.m {
                self[(r + i, c + j)] = block[(i, j)];
            }
        }
    }
}

impl<T: Scalar> std::ops::Index<(usize, usize)> for Mat<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.m + j]
    }
}

impl<T: Scalar> std::ops::IndexMut<(usize, usize)> for Mat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.m + j]
    }
}

/// Solve the dense system `A x = b` by Gaussian elimination with partial
/// pivoting. Returns `None` when the pivot collapses (singular system).
pub(crate) fn solve<T: Scalar>(a: &Mat<T>, b: &[T]) -> Option<Vec<T>> {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    assert_eq!(b.len(), n);
    let mut aug = a.clone();
    let mut rhs = b.to_vec();

    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if aug[(row, col)].abs() > aug[(pivot, col)].abs() {
                pivot = row;
            }
        }
        if aug[(pivot, col)].abs() < T::of(1e-300) {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                let tmp = aug[(col, j)];
                aug[(col, j)] = aug[(pivot, j)];
                aug[(pivot, j)] = tmp;
            }
            rhs.swap(col, pivot);
        }
        let d = aug[(col, col)];
        for row in col + 1..n {
            let f = aug[(row, col)] / d;
            if f == T::zero() {
                continue;
            }
            for j in col..n {
                let v = aug[(col, j)];
                aug[(row, j)] -= f * v;
            }
            let r = rhs[col];
            rhs[row] -= f * r;
        }
    }
    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for j in row + 1..n {
            acc -= aug[(row, j)] * x[j];
        }
        x[row] = acc / aug[(row, row)];
    }
    Some(x)
}

/// Faddeev–LeVerrier: characteristic polynomial and adjugate expansion.
///
/// Returns `(c, m)` where `char(z) = z^n + c[n-1] z^{n-1} + ... + c[0]` and
/// `adj(zI - A) = sum_{k=1..n} z^{n-k} m[k-1]`.
pub(crate) fn faddeev_leverrier<T: Scalar>(a: &Mat<T>) -> (Vec<T>, Vec<Mat<T>>) {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    let mut coeffs = vec![T::zero(); n];
    let mut mats = Vec::with_capacity(n);

    let mut m = Mat::identity(n);
    for k in 1..=n {
        let am = a.matmul(&m);
        let c = -am.trace() / T::from_usize(k).unwrap();
        coeffs[n - k] = c;
        mats.push(m.clone());
        if k < n {
            m = am;
            let mut eye = Mat::identity(n);
            eye = eye.scale(c);
            m.add_assign(&eye);
        }
    }
    (coeffs, mats)
}
