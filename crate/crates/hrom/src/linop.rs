//! Abstract real linear operators: the randomized SVD only needs forward and
//! transpose block products.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A real linear operator known through its action on column blocks.
pub trait LinOp: Sync {
    /// Row count of the represented matrix.
    fn nrows(&self) -> usize;

    /// Column count of the represented matrix.
    fn ncols(&self) -> usize;

    /// Forward product: returns `self · x` for an `ncols×k` block.
    fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>>;

    /// Transpose product: returns `selfᵀ · y` for an `nrows×k` block.
    fn apply_transpose(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

/// A dense matrix viewed as a [`LinOp`]; reference implementation and test
/// harness for operator-generic code.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    mat: DMatrix<f64>,
}

impl DenseOperator {
    pub fn new(mat: DMatrix<f64>) -> Self {
        Self { mat }
    }

    /// The wrapped matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }
}

impl LinOp for DenseOperator {
    fn nrows(&self) -> usize {
        self.mat.nrows()
    }

    fn ncols(&self) -> usize {
        self.mat.ncols()
    }

    fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "apply expects {} rows, got {}",
                self.ncols(),
                x.nrows()
            )));
        }
        Ok(&self.mat * x)
    }

    fn apply_transpose(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if y.nrows() != self.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "apply_transpose expects {} rows, got {}",
                self.nrows(),
                y.nrows()
            )));
        }
        Ok(self.mat.tr_mul(y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_forward_and_transpose() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let op = DenseOperator::new(a.clone());
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, -1.0]);
        let y = op.apply(&x).unwrap();
        assert_eq!(y, &a * &x);
        let z = op.apply_transpose(&y).unwrap();
        assert_eq!(z, a.transpose() * y);
        assert!(op.apply(&DMatrix::zeros(2, 1)).is_err());
    }
}
