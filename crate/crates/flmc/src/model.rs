//! Bayesian linear regression: synthetic data, exact conjugate posterior,
//! local cost gradients, and entrywise gradient clipping.
//!
//! The model is `v = theta' u + w` with `u ~ N(0, I_m)`, unit-variance label
//! noise, and a standard normal prior on `theta`. The posterior is Gaussian
//! with precision `U U' + I`, which stays symmetric positive definite for
//! every dataset, so all solves go through a Cholesky factorization.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Synthetic-problem description: dimension, ground truth, sample count,
/// and the per-device partition of the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Parameter dimension (also the uplink block length).
    pub m: usize,
    /// Ground-truth parameter vector, length `m`.
    pub theta_star: Vec<f64>,
    /// Total number of samples.
    pub n_total: usize,
    /// Number of edge devices.
    pub k_devices: usize,
    /// Samples owned by each device; must sum to `n_total`.
    pub partition_sizes: Vec<usize>,
}

impl ModelSpec {
    /// Spec with an even split of `n_total` over `k_devices`; any remainder
    /// goes to the first devices one sample each.
    pub fn even(m: usize, theta_star: Vec<f64>, n_total: usize, k_devices: usize) -> Result<Self> {
        if k_devices == 0 {
            return Err(Error::Config("k_devices must be at least 1".into()));
        }
        let spec = ModelSpec {
            m,
            theta_star,
            n_total,
            k_devices,
            partition_sizes: even_partition(n_total, k_devices),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("model dimension m must be at least 1".into()));
        }
        if self.k_devices == 0 {
            return Err(Error::Config("k_devices must be at least 1".into()));
        }
        if self.theta_star.len() != self.m {
            return Err(Error::Config(format!(
                "theta_star has length {} but m = {}",
                self.theta_star.len(),
                self.m
            )));
        }
        if self.partition_sizes.len() != self.k_devices {
            return Err(Error::Config(format!(
                "partition_sizes has {} entries but k_devices = {}",
                self.partition_sizes.len(),
                self.k_devices
            )));
        }
        let sum: usize = self.partition_sizes.iter().sum();
        if sum != self.n_total {
            return Err(Error::Config(format!(
                "partition_sizes sum to {sum} but n_total = {}",
                self.n_total
            )));
        }
        Ok(())
    }
}

/// Even split helper; first `n % k` devices receive one extra sample.
pub fn even_partition(n: usize, k: usize) -> Vec<usize> {
    let base = n / k;
    let extra = n % k;
    (0..k).map(|i| base + usize::from(i < extra)).collect()
}

/// A generated dataset: inputs as columns, labels, and column ownership.
#[derive(Debug, Clone)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    labels: DVector<f64>,
    ownership: Vec<usize>,
    device_columns: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        inputs: DMatrix<f64>,
        labels: DVector<f64>,
        ownership: Vec<usize>,
        k_devices: usize,
    ) -> Result<Self> {
        if inputs.ncols() != labels.len() {
            return Err(Error::Config(format!(
                "inputs have {} columns but labels have length {}",
                inputs.ncols(),
                labels.len()
            )));
        }
        if ownership.len() != inputs.ncols() {
            return Err(Error::Config(format!(
                "ownership has {} entries but inputs have {} columns",
                ownership.len(),
                inputs.ncols()
            )));
        }
        let mut device_columns = vec![Vec::new(); k_devices];
        for (col, &dev) in ownership.iter().enumerate() {
            if dev >= k_devices {
                return Err(Error::Config(format!(
                    "column {col} is owned by device {dev}, but only {k_devices} devices exist"
                )));
            }
            device_columns[dev].push(col);
        }
        Ok(Dataset {
            inputs,
            labels,
            ownership,
            device_columns,
        })
    }

    pub fn dim(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn device_count(&self) -> usize {
        self.device_columns.len()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    pub fn ownership(&self) -> &[usize] {
        &self.ownership
    }

    /// Column indices owned by one device.
    pub fn columns_of(&self, device: usize) -> Result<&[usize]> {
        self.device_columns
            .get(device)
            .map(Vec::as_slice)
            .ok_or_else(|| {
                Error::Config(format!(
                    "device index {device} out of range (have {})",
                    self.device_count()
                ))
            })
    }
}

/// A multivariate Gaussian given by mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianDist {
    /// Validates symmetry (to 1e-12) and positive definiteness.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() || cov.nrows() != mean.len() {
            return Err(Error::Config(format!(
                "covariance is {}x{} but mean has length {}",
                cov.nrows(),
                cov.ncols(),
                mean.len()
            )));
        }
        for i in 0..cov.nrows() {
            for j in (i + 1)..cov.ncols() {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Config(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if Cholesky::new(cov.clone()).is_none() {
            return Err(Error::Config(
                "covariance is not positive definite".into(),
            ));
        }
        Ok(GaussianDist { mean, cov })
    }
}

/// Positive entrywise bound on local gradient entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradientBound(f64);

impl GradientBound {
    pub fn new(ell: f64) -> Result<Self> {
        if ell <= 0.0 || !ell.is_finite() {
            return Err(Error::Config(format!(
                "gradient bound ell must be positive and finite, got {ell}"
            )));
        }
        Ok(GradientBound(ell))
    }

    pub fn get(&self) -> f64 {
        self.0
    }
}

/// Draws a synthetic dataset: inputs `u_n ~ N(0, I_m)`, labels
/// `v_n = theta*' u_n + w_n` with unit-variance noise, columns assigned to
/// devices in partition order.
pub fn generate_dataset<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Dataset> {
    spec.validate()?;
    let theta_star = DVector::from_column_slice(&spec.theta_star);
    let mut inputs = DMatrix::zeros(spec.m, spec.n_total);
    let mut labels = DVector::zeros(spec.n_total);
    for n in 0..spec.n_total {
        let mut dot = 0.0;
        for i in 0..spec.m {
            let u: f64 = StandardNormal.sample(rng);
            inputs[(i, n)] = u;
            dot += theta_star[i] * u;
        }
        let w: f64 = StandardNormal.sample(rng);
        labels[n] = dot + w;
    }
    let mut ownership = Vec::with_capacity(spec.n_total);
    for (dev, &size) in spec.partition_sizes.iter().enumerate() {
        ownership.extend(std::iter::repeat_n(dev, size));
    }
    Dataset::new(inputs, labels, ownership, spec.k_devices)
}

/// Exact posterior `N((U U' + I)^{-1} U v, (U U' + I)^{-1})`.
///
/// The precision matrix is always positive definite, so the mean comes from
/// a Cholesky solve and the covariance from the factored inverse.
pub fn exact_posterior(data: &Dataset) -> GaussianDist {
    let m = data.dim();
    let u = data.inputs();
    let mut precision = u * u.transpose();
    for i in 0..m {
        precision[(i, i)] += 1.0;
    }
    let chol = Cholesky::new(precision).expect("U U' + I is positive definite");
    let rhs = u * data.labels();
    let mean = chol.solve(&rhs);
    let cov = chol.inverse();
    GaussianDist { mean, cov }
}

/// Gradient of the local cost at `theta` for one device:
/// data misfit over the device's samples plus `theta / K` from the prior
/// share. Summing over all devices gives the global cost gradient.
pub fn local_gradient(
    theta: &DVector<f64>,
    data: &Dataset,
    device: usize,
    k_devices: usize,
) -> Result<DVector<f64>> {
    if theta.len() != data.dim() {
        return Err(Error::Config(format!(
            "theta has length {} but data dimension is {}",
            theta.len(),
            data.dim()
        )));
    }
    if k_devices != data.device_count() {
        return Err(Error::Config(format!(
            "k_devices = {k_devices} does not match dataset device count {}",
            data.device_count()
        )));
    }
    let cols = data.columns_of(device)?;
    let mut g = theta / (k_devices as f64);
    for &c in cols {
        let u = data.inputs().column(c);
        let residual = u.dot(theta) - data.labels()[c];
        g.axpy(residual, &u, 1.0);
    }
    Ok(g)
}

/// Entrywise clip to `[-ell, ell]`; entries inside the bound pass through
/// unchanged and signs are preserved.
pub fn clip_gradient(g: &DVector<f64>, bound: &GradientBound) -> DVector<f64> {
    let ell = bound.get();
    g.map(|x| x.clamp(-ell, ell))
}
