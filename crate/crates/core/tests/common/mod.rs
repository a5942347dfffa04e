#![allow(dead_code)]

use drp_core::linops::{blur_operator, OperatorRef};
use drp_core::priors::{squared_exponential_covariance, GaussianPriorModel};
use drp_core::solver::DataFidelity;
use drp_core::tensor::{gaussian_kernel, standard_normal_vec, vecops, RngSeed, Shape};
use nalgebra::DMatrix;
use std::sync::Arc;

/// `B Bᵀ / n + ridge I` with Gaussian `B`.
pub fn random_spd(n: usize, ridge: f64, seed: u64) -> DMatrix<f64> {
    let b = DMatrix::from_vec(n, n, standard_normal_vec(n * n, RngSeed(seed)));
    let mut m = &b * b.transpose() / n as f64;
    for i in 0..n {
        m[(i, i)] += ridge;
    }
    m
}

pub fn squared_exponential(shape: Shape, variance: f64, length: f64, nugget: f64) -> DMatrix<f64> {
    squared_exponential_covariance(shape, variance, length, nugget)
}

pub fn blur(shape: Shape, size: usize, std: f64) -> OperatorRef {
    blur_operator(&gaussian_kernel(size, std).unwrap(), shape).unwrap()
}

pub struct Instance {
    pub model: Arc<GaussianPriorModel>,
    pub data: DataFidelity,
    pub truth: Vec<f64>,
    pub tau: f64,
}

/// 4×4 deblurring with a full-rank prior degradation, so every constant
/// in the convergence analysis is finite and positive.
pub fn gaussian_deblur_16(seed: u64) -> Instance {
    let shape = Shape::gray(4, 4);
    let a = blur(shape, 3, 1.0);
    let h = blur(shape, 3, 0.45);
    let sigma_prior = squared_exponential(shape, 0.05, 1.5, 0.01);
    let mean = vec![0.5; 16];
    let model = GaussianPriorModel::new(mean, Arc::new(sigma_prior), h, 0.2).unwrap();
    let truth: Vec<f64> = (0..16).map(|i| 0.5 + 0.3 * ((i as f64) * 0.7).sin()).collect();
    let mut y = a.apply(&truth);
    vecops::axpy(0.01, &standard_normal_vec(16, RngSeed(seed)), &mut y);
    Instance {
        model: Arc::new(model),
        data: DataFidelity::new(a, y).unwrap(),
        truth,
        tau: 1.0,
    }
}
