//! Rotation of an estimated `(Gamma, F)` pair to the identified representative with
//! `Gamma'Gamma = I_K` and `F F' / T` diagonal.
//!
//! `R1` is the upper Cholesky factor of `Gamma'Gamma`, `R2` the eigenvectors of
//! `R1 F F' R1'` and `R = R1^{-1} R2`. The normalized pair is `(Gamma R, R^{-1} F)`, which leaves
//! every product `X Gamma F'` unchanged. Factors are ordered by decreasing `F F' / T` and each
//! column of `R2` is signed so that its largest-magnitude entry is positive; neither convention
//! is forced by the constraints themselves.

use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::ipca::{FactorPath, IpcaParams};
use crate::linalg::fix_column_signs;

/// Invertible K x K matrix taking a fitted pair to its normalized representative.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationMatrix(DMatrix<f64>);

impl RotationMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        self.0.clone().try_inverse().ok_or(Error::NotPositiveDefinite)
    }
}

pub fn rotation_matrix(gamma: &DMatrix<f64>, factors: &DMatrix<f64>) -> Result<RotationMatrix> {
    let k = gamma.ncols();
    if factors.nrows() != k {
        return Err(Error::DimensionMismatch { what: "factor rows", expected: k, actual: factors.nrows() });
    }
    if factors.ncols() == 0 || factors.iter().all(|v| *v == 0.0) {
        return Err(Error::Empty("factor path for normalization"));
    }
    let gtg = gamma.transpose() * gamma;
    let chol = gtg.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let r1 = chol.l().transpose();
    let ff = factors * factors.transpose();
    let m = &r1 * ff * r1.transpose();
    let eig = SymmetricEigen::new((&m + m.transpose()) * 0.5);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut r2 = DMatrix::from_fn(k, k, |i, j| eig.eigenvectors[(i, order[j])]);
    fix_column_signs(&mut r2);
    let r1_inv = r1.solve_upper_triangular(&DMatrix::identity(k, k)).ok_or(Error::NotPositiveDefinite)?;
    Ok(RotationMatrix(r1_inv * r2))
}

/// Applies the normalizing rotation to a fitted pair.
pub fn normalize(params: &IpcaParams) -> Result<IpcaParams> {
    let r = rotation_matrix(&params.gamma, params.factors.values())?;
    rotate(params, &r)
}

/// `(Gamma R, R^{-1} F)` for an arbitrary invertible `R`.
pub fn rotate(params: &IpcaParams, r: &RotationMatrix) -> Result<IpcaParams> {
    let r_inv = r.inverse()?;
    let gamma = &params.gamma * r.matrix();
    let factors = FactorPath::new(r_inv * params.factors.values(), params.factors.periods().to_vec())?;
    IpcaParams::new(gamma, factors)
}
