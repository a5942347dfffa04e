use super::{check_input, PriorError, Restorer};
use crate::dense::{self, SpdFactor};
use crate::linops::{materialize, OperatorRef};
use crate::tensor::{vecops, Shape};
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

/// Gaussian prior `x ~ N(mean, covariance)` observed through `s = Hx + n`,
/// `n ~ N(0, noise_std^2 I)`.
///
/// Construction validates the covariance (symmetric, Cholesky succeeds) and
/// factors the observation covariance `C_s = H Σ H^T + σ² I`. Everything the
/// solver and the theory checks need is then closed-form:
///
/// * `R(s) = μ + Σ H^T C_s^{-1} (s - Hμ)`
/// * `log p_s(s) = log N(s; Hμ, C_s)`
/// * `h(x) = -τ σ² log p_s(Hx)` and `∇h(x) = τ σ² H^T C_s^{-1} H (x - μ)`
#[derive(Clone)]
pub struct GaussianPriorModel {
    mean: Vec<f64>,
    covariance: Arc<DMatrix<f64>>,
    degradation: OperatorRef,
    noise_std: f64,
    /// `Σ H^T`, n × p.
    gain: DMatrix<f64>,
    obs_mean: Vec<f64>,
    obs_cov: SpdFactor,
}

impl fmt::Debug for GaussianPriorModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GaussianPriorModel")
            .field("n", &self.n())
            .field("p", &self.p())
            .field("noise_std", &self.noise_std)
            .field("degradation", &self.degradation)
            .finish()
    }
}

impl GaussianPriorModel {
    pub fn new(
        mean: Vec<f64>,
        covariance: Arc<DMatrix<f64>>,
        degradation: OperatorRef,
        noise_std: f64,
    ) -> Result<Self, PriorError> {
        let n = mean.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(PriorError::Dimension {
                what: "covariance",
                expected: n,
                found: covariance.nrows().max(covariance.ncols()),
            });
        }
        let scale = covariance.amax().max(1.0);
        let mut asym: f64 = 0.0;
        for c in 0..n {
            for r in c + 1..n {
                asym = asym.max((covariance[(r, c)] - covariance[(c, r)]).abs());
            }
        }
        if asym > 1e-12 * scale {
            return Err(PriorError::NotSymmetric(asym));
        }
        if dense::cholesky_lower((*covariance).clone()).is_none() {
            return Err(PriorError::NotPositiveDefinite("prior covariance"));
        }
        Self::assemble(mean, covariance, degradation, noise_std)
    }

    /// Same prior, different degradation and noise level. The covariance was
    /// validated when `self` was built and is shared, not copied.
    pub fn with_degradation(
        &self,
        degradation: OperatorRef,
        noise_std: f64,
    ) -> Result<Self, PriorError> {
        Self::assemble(
            self.mean.clone(),
            self.covariance.clone(),
            degradation,
            noise_std,
        )
    }

    fn assemble(
        mean: Vec<f64>,
        covariance: Arc<DMatrix<f64>>,
        degradation: OperatorRef,
        noise_std: f64,
    ) -> Result<Self, PriorError> {
        let n = mean.len();
        if degradation.domain_dim() != n {
            return Err(PriorError::Dimension {
                what: "degradation domain",
                expected: n,
                found: degradation.domain_dim(),
            });
        }
        if !(noise_std > 0.0) || !noise_std.is_finite() {
            return Err(PriorError::InvalidNoise(noise_std));
        }
        let p = degradation.range_dim();
        // Σ is symmetric, so (HΣ)^T = Σ H^T is assembled row by row from
        // H applied to the columns of Σ.
        let mut gain = DMatrix::zeros(n, p);
        let mut col = vec![0.0; p];
        for j in 0..n {
            degradation.apply_into(covariance.column(j).as_slice(), &mut col);
            for (i, v) in col.iter().enumerate() {
                gain[(j, i)] = *v;
            }
        }
        let mut obs = DMatrix::zeros(p, p);
        for i in 0..p {
            degradation.apply_into(gain.column(i).as_slice(), &mut col);
            obs.column_mut(i).copy_from_slice(&col);
        }
        for i in 0..p {
            obs[(i, i)] += noise_std * noise_std;
        }
        dense::symmetrize(&mut obs);
        let obs_cov =
            SpdFactor::new(obs).ok_or(PriorError::NotPositiveDefinite("observation covariance"))?;
        let obs_mean = degradation.apply(&mean);
        Ok(Self {
            mean,
            covariance,
            degradation,
            noise_std,
            gain,
            obs_mean,
            obs_cov,
        })
    }

    /// Signal dimension.
    pub fn n(&self) -> usize {
        self.mean.len()
    }

    /// Observation dimension.
    pub fn p(&self) -> usize {
        self.obs_mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn degradation(&self) -> &OperatorRef {
        &self.degradation
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Dense `C_s = H Σ H^T + σ² I`, reassembled from its factor.
    pub fn observation_covariance(&self) -> DMatrix<f64> {
        let l = self.obs_cov.lower();
        l * l.transpose()
    }

    /// Posterior mean `E[x | s]`.
    pub fn restore(&self, s: &[f64]) -> Result<Vec<f64>, PriorError> {
        check_input(self.p(), s)?;
        let innovation = vecops::sub(s, &self.obs_mean);
        let weights = self.obs_cov.solve(&innovation);
        let update = &self.gain * DVector::from_vec(weights);
        Ok(vecops::add(&self.mean, update.as_slice()))
    }

    /// `log p_s(s)` for the observation density `N(Hμ, C_s)`.
    pub fn log_observation_density(&self, s: &[f64]) -> Result<f64, PriorError> {
        check_input(self.p(), s)?;
        let innovation = vecops::sub(s, &self.obs_mean);
        let quad = vecops::dot(&innovation, &self.obs_cov.solve(&innovation));
        Ok(-0.5 * (quad + self.p() as f64 * (2.0 * PI).ln() + self.obs_cov.log_det()))
    }

    /// `h(x) = -τ σ² log p_s(Hx)`.
    pub fn implicit_regularizer(&self, tau: f64, x: &[f64]) -> Result<f64, PriorError> {
        check_input(self.n(), x)?;
        let s = self.degradation.apply(x);
        Ok(-tau * self.noise_std.powi(2) * self.log_observation_density(&s)?)
    }

    /// `∇h(x) = τ σ² H^T C_s^{-1} (Hx - Hμ)`.
    pub fn grad_implicit_regularizer(&self, tau: f64, x: &[f64]) -> Result<Vec<f64>, PriorError> {
        check_input(self.n(), x)?;
        let innovation = vecops::sub(&self.degradation.apply(x), &self.obs_mean);
        let back = self.degradation.adjoint(&self.obs_cov.solve(&innovation));
        Ok(vecops::scaled(tau * self.noise_std.powi(2), &back))
    }

    /// Infimum of `h`: the Gaussian density is largest at its mean.
    pub fn regularizer_lower_bound(&self, tau: f64) -> f64 {
        let log_peak = -0.5 * (self.p() as f64 * (2.0 * PI).ln() + self.obs_cov.log_det());
        -tau * self.noise_std.powi(2) * log_peak
    }

    /// Dense Hessian of `h`, `τ σ² H^T C_s^{-1} H` (constant, since `h` is
    /// quadratic).
    pub fn regularizer_hessian(&self, tau: f64) -> Result<DMatrix<f64>, PriorError> {
        let h = materialize(&*self.degradation)?;
        let mut solved = DMatrix::zeros(h.nrows(), h.ncols());
        for j in 0..h.ncols() {
            let col = self.obs_cov.solve(h.column(j).as_slice());
            solved.column_mut(j).copy_from_slice(&col);
        }
        let mut hess = h.tr_mul(&solved) * (tau * self.noise_std.powi(2));
        dense::symmetrize(&mut hess);
        Ok(hess)
    }

    /// Lipschitz constant of `∇h`: the top eigenvalue of its Hessian.
    pub fn lipschitz_constant(&self, tau: f64) -> Result<f64, PriorError> {
        let hess = self.regularizer_hessian(tau)?;
        Ok(dense::symmetric_extreme_eigenvalues(&hess).1.max(0.0))
    }

    /// Lipschitz constant together with the direction that attains it.
    pub fn lipschitz_eigenpair(&self, tau: f64) -> Result<(f64, Vec<f64>), PriorError> {
        let hess = self.regularizer_hessian(tau)?;
        Ok(dense::symmetric_top_eigenpair(&hess))
    }
}

/// [`Restorer`] adapter around a shared [`GaussianPriorModel`].
#[derive(Debug, Clone)]
pub struct GaussianRestorer {
    model: Arc<GaussianPriorModel>,
}

impl GaussianRestorer {
    pub fn new(model: Arc<GaussianPriorModel>) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &Arc<GaussianPriorModel> {
        &self.model
    }
}

impl Restorer for GaussianRestorer {
    fn input_shape(&self) -> Shape {
        self.model.degradation.range_shape()
    }
    fn output_shape(&self) -> Shape {
        self.model.degradation.domain_shape()
    }
    fn restore(&mut self, s: &[f64]) -> Result<Vec<f64>, PriorError> {
        self.model.restore(s)
    }
    fn gaussian_model(&self) -> Option<&GaussianPriorModel> {
        Some(&self.model)
    }
}

/// Stationary squared-exponential covariance over the pixels of a
/// single-channel grid, plus `nugget` on the diagonal.
pub fn squared_exponential_covariance(
    shape: Shape,
    variance: f64,
    length_scale: f64,
    nugget: f64,
) -> DMatrix<f64> {
    let n = shape.len();
    let w = shape.width;
    let scale = -0.5 / (length_scale * length_scale);
    DMatrix::from_fn(n, n, |a, b| {
        let dr = (a / w) as f64 - (b / w) as f64;
        let dc = (a % w) as f64 - (b % w) as f64;
        let k = variance * (scale * (dr * dr + dc * dc)).exp();
        if a == b {
            k + nugget
        } else {
            k
        }
    })
}
