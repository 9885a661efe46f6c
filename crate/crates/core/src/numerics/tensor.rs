use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Tensor2<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor2<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor2({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            f.debug_list()
                .entries(self.data.chunks(self.cols.max(1)))
                .finish()?;
        }
        Ok(())
    }
}

impl<T: Scalar> Tensor2<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "from_vec",
                lhs: (rows, cols),
                rhs: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds from `f64` rows; panics on ragged input (test and fixture helper).
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend(r.iter().map(|&v| T::of(v)));
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t[(i, i)] = T::one();
        }
        t
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn row_vector(values: Vec<T>) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values,
        }
    }

    pub fn column_vector(values: Vec<T>) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values,
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn check_same(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same(other, op)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// `self += other`, shapes must agree.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::Dimension {
                op: "matmul_t",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::Dimension {
                op: "t_matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Self::zeros(self.cols, other.cols);
        let n = other.cols;
        for k in 0..self.rows {
            let b = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &bv) in out.data[i * n..(i + 1) * n].iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        Ok(out)
    }

    /// Row-wise softmax. `NEG_INFINITY` entries map to exactly zero.
    pub fn row_softmax(&self) -> Result<Self> {
        let mut out = self.clone();
        for i in 0..self.rows {
            let row = out.row_mut(i);
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            if max == T::neg_infinity() {
                return Err(Error::DegenerateRow { row: i });
            }
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = if *v == T::neg_infinity() {
                    T::zero()
                } else {
                    (*v - max).exp()
                };
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Ok(out)
    }

    /// Row-wise layer normalization with per-column gain and bias.
    pub fn layer_norm(&self, gain: &[T], bias: &[T], eps: T) -> Result<Self> {
        if gain.len() != self.cols || bias.len() != self.cols {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: self.shape(),
                rhs: (gain.len(), bias.len()),
            });
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            let row = out.row_mut(i);
            let (mean, inv_std) = row_stats(row, eps);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv_std * gain[j] + bias[j];
            }
        }
        Ok(out)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Self {
        Self::from_fn(self.rows, end - start, |i, j| self[(i, start + j)])
    }

    pub fn concat_cols(parts: &[&Self]) -> Result<Self> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if let Some(bad) = parts.iter().find(|p| p.rows != rows) {
            return Err(Error::Dimension {
                op: "concat_cols",
                lhs: (rows, 0),
                rhs: bad.shape(),
            });
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(Self { rows, cols, data })
    }
}

impl Tensor2<f64> {
    /// Converts to another precision.
    pub fn cast<U: Scalar>(&self) -> Tensor2<U> {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| U::of(v)).collect(),
        }
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// Mean and `1/sqrt(var + eps)` of a row (population variance).
pub(crate) fn row_stats<T: Scalar>(row: &[T], eps: T) -> (T, T) {
    let n = T::from_usize(row.len()).unwrap();
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + eps).sqrt())
}

impl<T> std::ops::Index<(usize, usize)> for Tensor2<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Tensor2<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type T = Tensor2<f64>;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> T {
        T::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn matmul_identity() {
        let a = T::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(T::identity(2).matmul(&a).unwrap(), a);
    }

    #[test]
    fn matmul_hand_checked() {
        let a = T::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let b = T::from_rows(&[&[2.0], &[3.0]]);
        assert_eq!(
            a.matmul(&b).unwrap(),
            T::from_rows(&[&[2.0], &[3.0], &[5.0]])
        );
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&mut rng, 5, 4);
        let b = random(&mut rng, 4, 3);
        let mut oracle = T::zeros(5, 3);
        for i in 0..5 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += a[(i, k)] * b[(k, j)];
                }
                oracle[(i, j)] = s;
            }
        }
        assert_eq!(a.matmul(&b).unwrap(), oracle);
        assert_eq!(a.matmul_t(&b.transpose()).unwrap(), oracle);
        assert_eq!(a.transpose().t_matmul(&b).unwrap(), oracle);
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let err = T::zeros(2, 3).matmul(&T::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn matmul_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random(&mut rng, 4, 5);
            let b = random(&mut rng, 5, 3);
            let c = random(&mut rng, 3, 6);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.max_abs().max(1e-300);
            assert!(left.sub(&right).unwrap().max_abs() / scale < 1e-9);
        }
    }

    #[test]
    fn softmax_cases() {
        let s = T::from_rows(&[&[0.0, 0.0]]).row_softmax().unwrap();
        assert_eq!(s, T::from_rows(&[&[0.5, 0.5]]));
        let s = T::from_rows(&[&[2f64.ln(), 0.0]]).row_softmax().unwrap();
        assert!((s[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s[(0, 1)] - 1.0 / 3.0).abs() < 1e-15);
        let s = T::from_rows(&[&[5.0, f64::NEG_INFINITY, 5.0]])
            .row_softmax()
            .unwrap();
        assert_eq!(s, T::from_rows(&[&[0.5, 0.0, 0.5]]));
    }

    #[test]
    fn softmax_all_masked_row_errors() {
        let x = T::from_rows(&[&[0.0, 1.0], &[f64::NEG_INFINITY, f64::NEG_INFINITY]]);
        assert!(matches!(
            x.row_softmax(),
            Err(Error::DegenerateRow { row: 1 })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&mut rng, 6, 9).scale(30.0);
        let s = x.row_softmax().unwrap();
        for i in 0..6 {
            let total: f64 = s.row(i).iter().sum();
            assert!((total - 1.0).abs() <= 1e-12);
            assert!(s.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn layer_norm_cases() {
        let one = [1.0, 1.0];
        let zero = [0.0, 0.0];
        let c = T::from_rows(&[&[3.0, 3.0]])
            .layer_norm(&one, &zero, 1e-5)
            .unwrap();
        assert_eq!(c, T::zeros(1, 2));
        let r = T::from_rows(&[&[1.0, -1.0]])
            .layer_norm(&one, &zero, 1e-300)
            .unwrap();
        assert!((r[(0, 0)] - 1.0).abs() < 1e-12 && (r[(0, 1)] + 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&mut rng, 4, 8);
        let y = x.layer_norm(&[1.0; 8], &[0.0; 8], 1e-12).unwrap();
        for i in 0..4 {
            let m: f64 = y.row(i).iter().sum::<f64>() / 8.0;
            let v: f64 = y.row(i).iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 8.0;
            assert!(m.abs() < 1e-10 && (v - 1.0).abs() < 1e-10);
        }
    }
}
