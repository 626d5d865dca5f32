//! Differentiable forward models `G: R^d -> R^m`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result};
use crate::prior::{GaussianPrior, NoiseModel};

/// A differentiable map with forward evaluation and Jacobian actions.
///
/// Implementations must be shareable read-only across threads.
pub trait Model: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// `∇G(x) u`.
    fn tangent(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;

    /// `∇G(x)^T v`.
    fn adjoint(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>>;

    /// `∇G(x) U` for a block of directions. Override when one linearization
    /// can be reused across columns.
    fn tangent_many(&self, x: &DVector<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.output_dim(), u.ncols());
        for (j, col) in u.column_iter().enumerate() {
            out.set_column(j, &self.tangent(x, &col.into_owned())?);
        }
        Ok(out)
    }

    /// `∇G(x)^T V` for a block of directions.
    fn adjoint_many(&self, x: &DVector<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.input_dim(), v.ncols());
        for (j, col) in v.column_iter().enumerate() {
            out.set_column(j, &self.adjoint(x, &col.into_owned())?);
        }
        Ok(out)
    }

    /// Dense `m × d` Jacobian.
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = self.input_dim();
        self.tangent_many(x, &DMatrix::identity(d, d))
    }

    /// `(a, M)` when the model is known to be `G(x) = a + M x`.
    fn affine_parts(&self) -> Option<(&DVector<f64>, &DMatrix<f64>)> {
        None
    }
}

impl<T: Model + ?Sized> Model for Arc<T> {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).forward(x)
    }
    fn tangent(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).tangent(x, u)
    }
    fn adjoint(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).adjoint(x, v)
    }
    fn tangent_many(&self, x: &DVector<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        (**self).tangent_many(x, u)
    }
    fn adjoint_many(&self, x: &DVector<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        (**self).adjoint_many(x, v)
    }
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        (**self).jacobian(x)
    }
    fn affine_parts(&self) -> Option<(&DVector<f64>, &DMatrix<f64>)> {
        (**self).affine_parts()
    }
}

/// `G(x) = a + M x`.
#[derive(Debug, Clone)]
pub struct AffineModel {
    offset: DVector<f64>,
    matrix: DMatrix<f64>,
}

impl AffineModel {
    pub fn new(offset: DVector<f64>, matrix: DMatrix<f64>) -> Result<Self> {
        check_dim("affine offset length", matrix.nrows(), offset.len())?;
        Ok(Self { offset, matrix })
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl Model for AffineModel {
    fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }
    fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("affine input", self.input_dim(), x.len())?;
        Ok(&self.offset + &self.matrix * x)
    }
    fn tangent(&self, _x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("affine tangent", self.input_dim(), u.len())?;
        Ok(&self.matrix * u)
    }
    fn adjoint(&self, _x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("affine adjoint", self.output_dim(), v.len())?;
        Ok(self.matrix.tr_mul(v))
    }
    fn tangent_many(&self, _x: &DVector<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("affine tangent", self.input_dim(), u.nrows())?;
        Ok(&self.matrix * u)
    }
    fn adjoint_many(&self, _x: &DVector<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("affine adjoint", self.output_dim(), v.nrows())?;
        Ok(self.matrix.tr_mul(v))
    }
    fn jacobian(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.matrix.clone())
    }
    fn affine_parts(&self) -> Option<(&DVector<f64>, &DMatrix<f64>)> {
        Some((&self.offset, &self.matrix))
    }
}

/// Affine model checked against a prior and a noise model, so that the
/// linear-Gaussian closed forms apply.
pub fn build_linear_gaussian(
    offset: DVector<f64>,
    matrix: DMatrix<f64>,
    prior: &GaussianPrior,
    noise: &NoiseModel,
) -> Result<AffineModel> {
    check_dim("linear-Gaussian input vs prior", prior.dim(), matrix.ncols())?;
    check_dim("linear-Gaussian output vs noise", noise.dim(), matrix.nrows())?;
    AffineModel::new(offset, matrix)
}

type ForwardFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type JacobianFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Model built from a forward closure and a dense-Jacobian closure.
/// Convenient for small analytic test functions.
#[derive(Clone)]
pub struct FnModel {
    input_dim: usize,
    output_dim: usize,
    forward: Arc<ForwardFn>,
    jacobian: Arc<JacobianFn>,
}

impl FnModel {
    pub fn new<F, J>(input_dim: usize, output_dim: usize, forward: F, jacobian: J) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            input_dim,
            output_dim,
            forward: Arc::new(forward),
            jacobian: Arc::new(jacobian),
        }
    }
}

impl std::fmt::Debug for FnModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnModel")
            .field("input_dim", &self.input_dim)
            .field("output_dim", &self.output_dim)
            .finish()
    }
}

impl Model for FnModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dim(&self) -> usize {
        self.output_dim
    }
    fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("model input", self.input_dim, x.len())?;
        Ok((self.forward)(x))
    }
    fn tangent(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.jacobian(x)? * u)
    }
    fn adjoint(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.jacobian(x)?.tr_mul(v))
    }
    fn tangent_many(&self, x: &DVector<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.jacobian(x)? * u)
    }
    fn adjoint_many(&self, x: &DVector<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.jacobian(x)?.tr_mul(v))
    }
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("model input", self.input_dim, x.len())?;
        let j = (self.jacobian)(x);
        check_dim("jacobian rows", self.output_dim, j.nrows())?;
        check_dim("jacobian cols", self.input_dim, j.ncols())?;
        Ok(j)
    }
}

/// `x̄ ↦ G(L x̄ + μ)` for a prior `N(μ, L L^T)`.
#[derive(Clone)]
pub struct PreconditionedModel<M> {
    inner: M,
    factor: DMatrix<f64>,
    mean: DVector<f64>,
    identity: bool,
    affine: Option<(DVector<f64>, DMatrix<f64>)>,
}

impl<M: Model> PreconditionedModel<M> {
    pub fn inner(&self) -> &M {
        &self.inner
    }

    fn to_physical(&self, z: &DVector<f64>) -> DVector<f64> {
        if self.identity {
            z.clone()
        } else {
            &self.factor * z + &self.mean
        }
    }
}

impl<M: Model> Model for PreconditionedModel<M> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }
    fn forward(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("preconditioned input", self.input_dim(), z.len())?;
        self.inner.forward(&self.to_physical(z))
    }
    fn tangent(&self, z: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let x = self.to_physical(z);
        if self.identity {
            return self.inner.tangent(&x, u);
        }
        self.inner.tangent(&x, &(&self.factor * u))
    }
    fn adjoint(&self, z: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        let x = self.to_physical(z);
        let w = self.inner.adjoint(&x, v)?;
        if self.identity {
            return Ok(w);
        }
        Ok(self.factor.tr_mul(&w))
    }
    fn tangent_many(&self, z: &DVector<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let x = self.to_physical(z);
        if self.identity {
            return self.inner.tangent_many(&x, u);
        }
        self.inner.tangent_many(&x, &(&self.factor * u))
    }
    fn adjoint_many(&self, z: &DVector<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let x = self.to_physical(z);
        let w = self.inner.adjoint_many(&x, v)?;
        if self.identity {
            return Ok(w);
        }
        Ok(self.factor.tr_mul(&w))
    }
    fn jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let x = self.to_physical(z);
        let j = self.inner.jacobian(&x)?;
        if self.identity {
            return Ok(j);
        }
        Ok(j * &self.factor)
    }
    fn affine_parts(&self) -> Option<(&DVector<f64>, &DMatrix<f64>)> {
        self.affine.as_ref().map(|(a, m)| (a, m))
    }
}

/// Whitening change of variables: returns the wrapped model
/// `x̄ ↦ G(L x̄ + μ)` and the standard-normal prior it should be paired with.
pub fn precondition<M: Model>(
    model: M,
    prior: &GaussianPrior,
) -> Result<(PreconditionedModel<M>, GaussianPrior)> {
    check_dim("model input vs prior", prior.dim(), model.input_dim())?;
    let identity = prior.is_standard();
    let affine = model.affine_parts().map(|(a, m)| {
        if identity {
            (a.clone(), m.clone())
        } else {
            (a + m * prior.mean(), m * prior.factor())
        }
    });
    let wrapped = PreconditionedModel {
        inner: model,
        factor: prior.factor().clone(),
        mean: prior.mean().clone(),
        identity,
        affine,
    };
    Ok((wrapped, GaussianPrior::standard(prior.dim())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_gaussian_examples() {
        let prior = GaussianPrior::standard(2);
        let noise = NoiseModel::new(1.0, 2).unwrap();
        let id = build_linear_gaussian(DVector::zeros(2), DMatrix::identity(2, 2), &prior, &noise).unwrap();
        let x = DVector::from_vec(vec![0.3, -1.2]);
        assert_eq!(id.forward(&x).unwrap(), x);

        let constant =
            build_linear_gaussian(DVector::from_vec(vec![1.0, 1.0]), DMatrix::zeros(2, 2), &prior, &noise).unwrap();
        assert_eq!(constant.forward(&x).unwrap(), DVector::from_vec(vec![1.0, 1.0]));
        assert_eq!(constant.jacobian(&x).unwrap(), DMatrix::zeros(2, 2));

        let a = DVector::from_vec(vec![0.5, -0.5]);
        let diag = build_linear_gaussian(
            a.clone(),
            DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0])),
            &prior,
            &noise,
        )
        .unwrap();
        let y = diag.forward(&DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(y, a + DVector::from_vec(vec![3.0, 2.0]));
    }

    #[test]
    fn linear_gaussian_rejects_mismatch() {
        let prior = GaussianPrior::standard(3);
        let noise = NoiseModel::new(1.0, 2).unwrap();
        assert!(build_linear_gaussian(DVector::zeros(2), DMatrix::zeros(2, 2), &prior, &noise).is_err());
    }

    #[test]
    fn identity_whitening_is_transparent() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let model = AffineModel::new(DVector::zeros(2), m.clone()).unwrap();
        let (wrapped, std) = precondition(model, &GaussianPrior::standard(3)).unwrap();
        assert_eq!(std.poincare_constant(), 1.0);
        assert_eq!(wrapped.jacobian(&DVector::zeros(3)).unwrap(), m);
    }

    #[test]
    fn scalar_covariance_scales_jacobian() {
        let model = AffineModel::new(DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
        let prior = GaussianPrior::new(
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
            DMatrix::identity(3, 3) * 4.0,
        )
        .unwrap();
        let (wrapped, std) = precondition(model, &prior).unwrap();
        assert_eq!(std.cramer_rao_constant(), 1.0);
        let j = wrapped.jacobian(&DVector::from_vec(vec![0.1, 0.2, 0.3])).unwrap();
        assert!((j - DMatrix::identity(3, 3) * 2.0).norm() < 1e-14);
    }
}
