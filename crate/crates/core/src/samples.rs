//! Monte Carlo Jacobian samples at i.i.d. prior draws.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::model::Model;
use crate::prior::GaussianPrior;

/// Seeded generator for an independent stream of a given seed.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream identifiers so that different consumers of one seed never overlap.
pub mod streams {
    pub const JACOBIAN_INPUTS: u64 = 1;
    pub const OUTPUT_SAMPLES: u64 = 2;
    pub const INIT_BASIS: u64 = 3;
    pub const PICK_FREEZE: u64 = 4;
    pub const NORMALIZER: u64 = 5;
    pub const EIG_OUTER: u64 = 6;
    pub const EIG_MARGINAL: u64 = 7;
    pub const EIG_CONDITIONAL: u64 = 8;
    pub const EIG_NOISE: u64 = 9;
    pub const RANDOM_DESIGNS: u64 = 10;
    pub const LANCZOS: u64 = 11;
}

/// Storage of the Jacobian samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StorageMode {
    /// Each `∇G(x_i)` stored as an `m × d` matrix.
    Dense,
    /// Only `x_i` stored; tangent and adjoint actions re-applied on demand.
    Operator,
}

#[derive(Clone)]
enum Storage {
    Dense(Vec<DMatrix<f64>>),
    Operator(Arc<dyn Model>),
}

/// `M` Jacobian samples sharing dimensions `(m, d)`.
#[derive(Clone)]
pub struct JacobianSampleSet {
    inputs: Vec<DVector<f64>>,
    storage: Storage,
    seed: u64,
    input_dim: usize,
    output_dim: usize,
}

impl std::fmt::Debug for JacobianSampleSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JacobianSampleSet")
            .field("len", &self.len())
            .field("mode", &self.mode())
            .field("seed", &self.seed)
            .field("input_dim", &self.input_dim)
            .field("output_dim", &self.output_dim)
            .finish()
    }
}

/// Draws `count` i.i.d. prior samples from `seed` in index order and
/// evaluates the Jacobian at each. Evaluation may run concurrently; the
/// result does not depend on scheduling.
pub fn sample_jacobians(
    model: Arc<dyn Model>,
    prior: &GaussianPrior,
    count: usize,
    seed: u64,
    mode: StorageMode,
) -> Result<JacobianSampleSet> {
    if count == 0 {
        return Err(Error::EmptySamples);
    }
    check_dim("model input vs prior", prior.dim(), model.input_dim())?;
    let mut rng = seeded_rng(seed, streams::JACOBIAN_INPUTS);
    let inputs: Vec<DVector<f64>> = (0..count).map(|_| prior.sample(&mut rng)).collect();
    let (input_dim, output_dim) = (model.input_dim(), model.output_dim());
    let storage = match mode {
        StorageMode::Dense => {
            let jacobians = inputs
                .par_iter()
                .enumerate()
                .map(|(index, x)| {
                    let j = model.jacobian(x).map_err(|e| Error::ModelEvaluation {
                        index,
                        message: e.to_string(),
                    })?;
                    if j.shape() != (output_dim, input_dim) {
                        return Err(Error::ModelEvaluation {
                            index,
                            message: format!("Jacobian has shape {:?}", j.shape()),
                        });
                    }
                    Ok(j)
                })
                .collect::<Vec<_>>()
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            Storage::Dense(jacobians)
        }
        StorageMode::Operator => Storage::Operator(model),
    };
    Ok(JacobianSampleSet {
        inputs,
        storage,
        seed,
        input_dim,
        output_dim,
    })
}

/// Forward evaluations at `count` prior draws, returned as rows of an
/// `count × m` matrix together with the inputs as rows of a `count × d` matrix.
pub fn sample_outputs(
    model: &dyn Model,
    prior: &GaussianPrior,
    count: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if count == 0 {
        return Err(Error::EmptySamples);
    }
    check_dim("model input vs prior", prior.dim(), model.input_dim())?;
    let mut rng = seeded_rng(seed, streams::OUTPUT_SAMPLES);
    let inputs: Vec<DVector<f64>> = (0..count).map(|_| prior.sample(&mut rng)).collect();
    let outputs = forward_batch(model, &inputs)?;
    let x = DMatrix::from_fn(count, model.input_dim(), |i, j| inputs[i][j]);
    let y = DMatrix::from_fn(count, model.output_dim(), |i, j| outputs[i][j]);
    Ok((x, y))
}

/// Forward model over a batch, in order, tagging failures with their index.
/// The lowest failing index is reported regardless of scheduling.
pub fn forward_batch(model: &dyn Model, inputs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    inputs
        .par_iter()
        .enumerate()
        .map(|(index, x)| {
            model.forward(x).map_err(|e| Error::ModelEvaluation {
                index,
                message: e.to_string(),
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

impl JacobianSampleSet {
    /// Wraps precomputed dense Jacobians (inputs unknown, recorded as empty).
    pub fn from_dense(jacobians: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = jacobians.first().ok_or(Error::EmptySamples)?;
        let (m, d) = first.shape();
        for j in &jacobians {
            check_dim("sample rows", m, j.nrows())?;
            check_dim("sample cols", d, j.ncols())?;
        }
        Ok(Self {
            inputs: Vec::new(),
            storage: Storage::Dense(jacobians),
            seed: 0,
            input_dim: d,
            output_dim: m,
        })
    }

    pub fn len(&self) -> usize {
        match &self.storage {
            Storage::Dense(js) => js.len(),
            Storage::Operator(_) => self.inputs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self) -> StorageMode {
        match self.storage {
            Storage::Dense(_) => StorageMode::Dense,
            Storage::Operator(_) => StorageMode::Operator,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn dense(&self, i: usize) -> Option<&DMatrix<f64>> {
        match &self.storage {
            Storage::Dense(js) => js.get(i),
            Storage::Operator(_) => None,
        }
    }

    pub fn dense_all(&self) -> Option<&[DMatrix<f64>]> {
        match &self.storage {
            Storage::Dense(js) => Some(js),
            Storage::Operator(_) => None,
        }
    }

    /// The same samples with Jacobians materialized densely.
    pub fn to_dense(&self) -> Result<Self> {
        match &self.storage {
            Storage::Dense(_) => Ok(self.clone()),
            Storage::Operator(model) => {
                let js = self
                    .inputs
                    .par_iter()
                    .enumerate()
                    .map(|(index, x)| {
                        model.jacobian(x).map_err(|e| Error::ModelEvaluation {
                            index,
                            message: e.to_string(),
                        })
                    })
                    .collect::<Vec<_>>()
                    .into_iter()
                    .collect::<Result<Vec<_>>>()?;
                Ok(Self {
                    inputs: self.inputs.clone(),
                    storage: Storage::Dense(js),
                    seed: self.seed,
                    input_dim: self.input_dim,
                    output_dim: self.output_dim,
                })
            }
        }
    }

    /// `J_i U` (`m × k`).
    pub fn apply(&self, i: usize, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("tangent directions", self.input_dim, u.nrows())?;
        match &self.storage {
            Storage::Dense(js) => Ok(&js[i] * u),
            Storage::Operator(model) => model
                .tangent_many(&self.inputs[i], u)
                .map_err(|e| Error::ModelEvaluation {
                    index: i,
                    message: e.to_string(),
                }),
        }
    }

    /// `J_i^T V` (`d × k`).
    pub fn apply_adjoint(&self, i: usize, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("adjoint directions", self.output_dim, v.nrows())?;
        match &self.storage {
            Storage::Dense(js) => Ok(js[i].tr_mul(v)),
            Storage::Operator(model) => model
                .adjoint_many(&self.inputs[i], v)
                .map_err(|e| Error::ModelEvaluation {
                    index: i,
                    message: e.to_string(),
                }),
        }
    }

    /// `J_i u` for a single vector.
    pub fn apply_vec(&self, i: usize, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("tangent direction", self.input_dim, u.len())?;
        match &self.storage {
            Storage::Dense(js) => Ok(&js[i] * u),
            Storage::Operator(model) => model.tangent(&self.inputs[i], u).map_err(|e| Error::ModelEvaluation {
                index: i,
                message: e.to_string(),
            }),
        }
    }

    /// `J_i^T v` for a single vector.
    pub fn apply_adjoint_vec(&self, i: usize, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("adjoint direction", self.output_dim, v.len())?;
        match &self.storage {
            Storage::Dense(js) => Ok(js[i].tr_mul(v)),
            Storage::Operator(model) => model.adjoint(&self.inputs[i], v).map_err(|e| Error::ModelEvaluation {
                index: i,
                message: e.to_string(),
            }),
        }
    }

    /// Sample-mean Jacobian `J̄ = (1/M) Σ J_i`, summed in index order.
    pub fn mean_jacobian(&self) -> Result<DMatrix<f64>> {
        let mut acc = DMatrix::zeros(self.output_dim, self.input_dim);
        match &self.storage {
            Storage::Dense(js) => {
                for j in js {
                    acc += j;
                }
            }
            Storage::Operator(_) => {
                let id = DMatrix::identity(self.input_dim, self.input_dim);
                for i in 0..self.len() {
                    acc += self.apply(i, &id)?;
                }
            }
        }
        Ok(acc / self.len() as f64)
    }

    /// `E‖J‖_F²` estimated as `(1/M) Σ ‖J_i‖_F²`.
    pub fn total_gradient_energy(&self) -> Result<f64> {
        let mut acc = 0.0;
        match &self.storage {
            Storage::Dense(js) => {
                for j in js {
                    acc += j.norm_squared();
                }
            }
            Storage::Operator(_) => {
                let id = DMatrix::identity(self.input_dim, self.input_dim);
                for i in 0..self.len() {
                    acc += self.apply(i, &id)?.norm_squared();
                }
            }
        }
        Ok(acc / self.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AffineModel;

    #[test]
    fn identity_model_gives_identity_samples() {
        let model: Arc<dyn Model> = Arc::new(AffineModel::new(DVector::zeros(3), DMatrix::identity(3, 3)).unwrap());
        let set = sample_jacobians(model, &GaussianPrior::standard(3), 3, 7, StorageMode::Dense).unwrap();
        assert_eq!(set.len(), 3);
        for i in 0..3 {
            assert_eq!(set.dense(i).unwrap(), &DMatrix::<f64>::identity(3, 3));
        }
    }

    #[test]
    fn affine_model_gives_constant_jacobian() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let model: Arc<dyn Model> = Arc::new(AffineModel::new(DVector::from_vec(vec![1.0, 1.0]), m.clone()).unwrap());
        let prior = GaussianPrior::new(DVector::from_vec(vec![1.0, 0.0, -1.0]), DMatrix::identity(3, 3) * 2.0).unwrap();
        let set = sample_jacobians(model, &prior, 5, 1, StorageMode::Dense).unwrap();
        for i in 0..5 {
            assert_eq!(set.dense(i).unwrap(), &m);
        }
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        let model: Arc<dyn Model> = Arc::new(AffineModel::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap());
        assert!(matches!(
            sample_jacobians(model.clone(), &GaussianPrior::standard(2), 0, 1, StorageMode::Dense),
            Err(Error::EmptySamples)
        ));
        assert!(matches!(
            sample_jacobians(model, &GaussianPrior::standard(3), 2, 1, StorageMode::Dense),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    struct Failing;
    impl Model for Failing {
        fn input_dim(&self) -> usize {
            1
        }
        fn output_dim(&self) -> usize {
            1
        }
        fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(x.clone())
        }
        fn tangent(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
            if x[0] > 0.0 {
                return Err(Error::InvalidArgument("positive input".into()));
            }
            Ok(u.clone())
        }
        fn adjoint(&self, _x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(v.clone())
        }
    }

    #[test]
    fn evaluation_failure_reports_sample_index() {
        let err = sample_jacobians(Arc::new(Failing), &GaussianPrior::standard(1), 20, 3, StorageMode::Dense)
            .unwrap_err();
        let set = sample_jacobians(Arc::new(Failing), &GaussianPrior::standard(1), 20, 3, StorageMode::Operator)
            .unwrap();
        let first_bad = set.inputs().iter().position(|x| x[0] > 0.0).unwrap();
        match err {
            Error::ModelEvaluation { index, .. } => assert_eq!(index, first_bad),
            other => panic!("unexpected {other:?}"),
        }
    }
}
