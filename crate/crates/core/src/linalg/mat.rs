use std::fmt;
use std::ops::{Index, IndexMut, Range};

use super::memtrack;
use super::Real;
use crate::{Error, Result};

/// Dense column-major matrix with at least one row and one column.
///
/// Element `(i, j)` lives at `data[i + j * rows]`, so each column is a
/// contiguous slice. Datasets store one datapoint per column.
pub struct Mat<T: Real = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    fn from_parts(rows: usize, cols: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        memtrack::track_alloc(byte_len::<T>(data.len()));
        Self { rows, cols, data }
    }

    /// Panics if either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be >= 1");
        Self::from_parts(rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::one())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be >= 1");
        Self::from_parts(rows, cols, vec![value; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn diag(values: &[T]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |i, j| if i == j { values[i] } else { T::zero() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be >= 1");
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self::from_parts(rows, cols, data)
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        check_shape(rows, cols)?;
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self::from_parts(rows, cols, data))
    }

    pub fn from_row_major(rows: usize, cols: usize, data: &[T]) -> Result<Self> {
        check_shape(rows, cols)?;
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self::from_fn(rows, cols, |i, j| data[i * cols + j]))
    }

    /// Builds a matrix from nested rows; handy for literals in tests.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        check_shape(r, c)?;
        if rows.iter().any(|row| row.as_ref().len() != c) {
            return Err(Error::shape("ragged rows"));
        }
        Ok(Self::from_fn(r, c, |i, j| rows[i].as_ref()[j]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn col(&self, j: usize) -> &[T] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [T] {
        let r = self.rows;
        &mut self.data[j * r..(j + 1) * r]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i + j * self.rows]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let r = self.rows;
        self.data[i + j * r] = v;
    }

    pub fn row(&self, i: usize) -> Vec<T> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    pub fn into_data(mut self) -> Vec<T> {
        let data = std::mem::take(&mut self.data);
        memtrack::track_free(byte_len::<T>(data.len()));
        data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        let data = self.data.iter().map(|&x| f(x)).collect();
        Self::from_parts(self.rows, self.cols, data)
    }

    pub fn scaled(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn cast<U: Real>(&self) -> Mat<U> {
        let data = self
            .data
            .iter()
            .map(|&x| U::from(x).expect("finite cast"))
            .collect();
        Mat::from_parts(self.rows, self.cols, data)
    }

    /// Columns `range` as a new matrix.
    pub fn select_cols(&self, range: Range<usize>) -> Self {
        assert!(range.start < range.end && range.end <= self.cols);
        let data = self.data[range.start * self.rows..range.end * self.rows].to_vec();
        Self::from_parts(self.rows, range.len(), data)
    }

    /// Submatrix of rows `r` and columns `c`.
    pub fn slice(&self, r: Range<usize>, c: Range<usize>) -> Self {
        assert!(r.start < r.end && r.end <= self.rows);
        assert!(c.start < c.end && c.end <= self.cols);
        Self::from_fn(r.len(), c.len(), |i, j| self.get(r.start + i, c.start + j))
    }

    /// Columns of `self` followed by columns of `other`.
    pub fn hcat(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::shape(format!(
                "hcat of {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut data = Vec::with_capacity(self.len() + other.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Self::from_parts(self.rows, self.cols + other.cols, data))
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other, "add")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Ok(Self::from_parts(self.rows, self.cols, data))
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// `max |a_ij - a_ji|`; infinite for non-square matrices.
    pub fn max_abs_asymmetry(&self) -> T {
        if !self.is_square() {
            return T::infinity();
        }
        let mut worst = T::zero();
        for j in 0..self.cols {
            for i in 0..j {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn is_exactly_symmetric(&self) -> bool {
        self.is_square() && self.max_abs_asymmetry() == T::zero()
    }

    /// `‖self − other‖_F / max(‖self‖_F, ‖other‖_F)`, zero when both vanish.
    pub fn rel_diff(&self, other: &Self) -> Result<T> {
        let d = self.sub(other)?.frobenius_norm();
        let scale = self.frobenius_norm().max(other.frobenius_norm());
        Ok(if scale == T::zero() { d } else { d / scale })
    }

    fn check_same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "{op}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

fn check_shape(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 || rows.checked_mul(cols).is_none() {
        return Err(Error::ShapeOverflow {
            rows: rows as u64,
            cols: cols as u64,
        });
    }
    Ok(())
}

fn byte_len<T>(len: usize) -> u64 {
    (len * std::mem::size_of::<T>()) as u64
}

impl<T: Real> Drop for Mat<T> {
    fn drop(&mut self) {
        memtrack::track_free(byte_len::<T>(self.data.len()));
    }
}

impl<T: Real> Clone for Mat<T> {
    fn clone(&self) -> Self {
        Self::from_parts(self.rows, self.cols, self.data.clone())
    }
}

impl<T: Real> PartialEq for Mat<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape() == other.shape() && self.data == other.data
    }
}

impl<T: Real> Index<(usize, usize)> for Mat<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        assert!(i < self.rows && j < self.cols, "index out of bounds");
        &self.data[i + j * self.rows]
    }
}

impl<T: Real> IndexMut<(usize, usize)> for Mat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        assert!(i < self.rows && j < self.cols, "index out of bounds");
        let r = self.rows;
        &mut self.data[i + j * r]
    }
}

impl<T: Real> fmt::Debug for Mat<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        let shown = self.rows.min(8);
        for i in 0..shown {
            let row: Vec<String> = (0..self.cols.min(8))
                .map(|j| format!("{:?}", self.get(i, j)))
                .collect();
            writeln!(f, "  {}{}", row.join(", "), if self.cols > 8 { ", …" } else { "" })?;
        }
        if self.rows > shown {
            writeln!(f, "  …")?;
        }
        write!(f, "]")
    }
}
