//! Minimal dense row-major matrix generic over [`Real`].

use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Real> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    pub fn from_diag(d: &[S]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds from row-major data; panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }
    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }
    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }
    #[inline]
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn col(&self, j: usize) -> Vec<S> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, k: S) -> Self {
        self.map(|x| x * k)
    }

    pub fn add(&self, o: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&o.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.cols, "matvec shape");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `self^T x` without materialising the transpose.
    pub fn tmatvec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.rows, "tmatvec shape");
        let mut out = vec![S::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi.value() == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn matmul(&self, o: &Self) -> Self {
        assert_eq!(self.cols, o.rows, "matmul shape");
        let mut out = Self::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a.value() == 0.0 {
                    continue;
                }
                let orow = o.row(k);
                let dst = out.row_mut(i);
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// Row sums of absolute values, i.e. `|M| 1`.
    pub fn abs_row_sums(&self) -> Vec<S> {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|x| x.abs()).sum())
            .collect()
    }

    /// Columns `[start, start + len)` as a new matrix.
    pub fn cols_slice(&self, start: usize, len: usize) -> Self {
        let mut m = Self::zeros(self.rows, len);
        for i in 0..self.rows {
            m.row_mut(i)
                .copy_from_slice(&self.row(i)[start..start + len]);
        }
        m
    }

    /// Horizontal concatenation `[self | o]`.
    pub fn hcat(&self, o: &Self) -> Self {
        assert_eq!(self.rows, o.rows, "hcat rows");
        let mut m = Self::zeros(self.rows, self.cols + o.cols);
        for i in 0..self.rows {
            let r = m.row_mut(i);
            r[..self.cols].copy_from_slice(self.row(i));
            r[self.cols..].copy_from_slice(o.row(i));
        }
        m
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn to_f64(&self) -> Mat<f64> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x.value()).collect(),
        }
    }
}

impl Mat<f64> {
    pub fn lift<S: Real>(&self) -> Mat<S> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| S::from_f64(x)).collect(),
        }
    }
}

impl<S> std::ops::Index<(usize, usize)> for Mat<S> {
    type Output = S;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &S {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<S> std::ops::IndexMut<(usize, usize)> for Mat<S> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
/// Square orthonormal frame whose leading columns span the dominant columns
/// of `g`: modified Gram-Schmidt over the columns in descending norm order,
/// completed with coordinate axes. Pivot choices use primal values only.
pub fn orthonormal_frame<S: Real>(g: &Mat<S>) -> Mat<S> {
    let n = g.rows();
    let mut cols: Vec<Vec<S>> = (0..g.cols()).map(|j| g.col(j)).collect();
    let norm = |v: &[S]| dot(v, v).sqrt();
    let scale = cols.iter().map(|c| norm(c).value()).fold(0.0, f64::max);
    cols.sort_by(|a, b| norm(b).value().total_cmp(&norm(a).value()));
    cols.extend((0..n).map(|k| {
        let mut e = vec![S::zero(); n];
        e[k] = S::one();
        e
    }));
    let mut basis: Vec<Vec<S>> = Vec::with_capacity(n);
    for (idx, mut v) in cols.into_iter().enumerate() {
        if basis.len() == n {
            break;
        }
        let before = norm(&v).value();
        if before == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for q in &basis {
                let p = dot(q, &v);
                for (vi, &qi) in v.iter_mut().zip(q) {
                    *vi -= qi * p;
                }
            }
        }
        let nv = norm(&v);
        let floor = if idx < g.cols() { 1e-10 * scale.max(before) } else { 1e-8 };
        if nv.value() <= floor {
            continue;
        }
        let inv = nv.recip();
        basis.push(v.into_iter().map(|x| x * inv).collect());
    }
    let mut q = Mat::zeros(n, n);
    for (j, b) in basis.iter().enumerate() {
        for i in 0..n {
            q[(i, j)] = b[i];
        }
    }
    q
}

pub fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    let mut s = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub fn lift_vec<S: Real>(v: &[f64]) -> Vec<S> {
    v.iter().map(|&x| S::from_f64(x)).collect()
}

pub fn values<S: Real>(v: &[S]) -> Vec<f64> {
    v.iter().map(|x| x.value()).collect()
}
