//! Gridded observations on the regular design `x_i = i/n`.
//!
//! Row index `i1` is the first coordinate (`x = (i1+1)/n1` for the 0-based
//! index), column index `i2` the second (`y = (i2+1)/n2`). Jump curves are
//! functions `y = φ(x)`, so they cross every row once.

mod io;
mod scene;

pub use io::{load_image, write_csv, ImageFormat};
pub use scene::{
    generate, scenarios, Curve, JumpCurve, NoiseFamily, NoiseSpec, SceneSpec, SeparationReport,
};

use crate::error::{EdgeError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid<T> {
    n1: usize,
    n2: usize,
    values: Vec<T>,
}

impl<T: Scalar> ImageGrid<T> {
    /// Build from row-major values (`values[i1 * n2 + i2]`).
    pub fn from_vec(n1: usize, n2: usize, values: Vec<T>) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return Err(EdgeError::Argument("image must be non-empty".into()));
        }
        if values.len() != n1 * n2 {
            return Err(EdgeError::Argument(format!(
                "expected {} values for a {n1}x{n2} grid, got {}",
                n1 * n2,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(EdgeError::Validation(format!(
                "non-finite value at row {}, column {}",
                k / n2,
                k % n2
            )));
        }
        Ok(ImageGrid { n1, n2, values })
    }

    pub fn from_fn(n1: usize, n2: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut values = Vec::with_capacity(n1 * n2);
        for i1 in 0..n1 {
            for i2 in 0..n2 {
                values.push(f(i1, i2));
            }
        }
        Self::from_vec(n1, n2, values)
    }

    pub fn zeros(n: usize) -> Self {
        ImageGrid {
            n1: n,
            n2: n,
            values: vec![T::zero(); n * n],
        }
    }

    /// Side length of a square grid; for rectangular grids the first axis.
    pub fn n(&self) -> usize {
        self.n1
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    pub fn is_square(&self) -> bool {
        self.n1 == self.n2
    }

    #[inline]
    pub fn get(&self, i1: usize, i2: usize) -> T {
        self.values[i1 * self.n2 + i2]
    }

    pub fn row(&self, i1: usize) -> &[T] {
        &self.values[i1 * self.n2..(i1 + 1) * self.n2]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Coordinate of 0-based row index `i1`.
    #[inline]
    pub fn x_coord(&self, i1: usize) -> T {
        T::from_usize_lossy(i1 + 1) / T::from_usize_lossy(self.n1)
    }

    /// Coordinate of 0-based column index `i2`.
    #[inline]
    pub fn y_coord(&self, i2: usize) -> T {
        T::from_usize_lossy(i2 + 1) / T::from_usize_lossy(self.n2)
    }

    /// Pointwise map, e.g. for scaling or adding images in tests.
    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Self::from_vec(self.n1, self.n2, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.dims() != other.dims() {
            return Err(EdgeError::Argument("image dimensions differ".into()));
        }
        Self::from_vec(
            self.n1,
            self.n2,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn convert<U: Scalar>(&self) -> ImageGrid<U> {
        ImageGrid {
            n1: self.n1,
            n2: self.n2,
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}
