//! Mean-squared estimation error propagation and error ellipsoids.
//!
//! Parameter MSEE is tracked per output block (the recursion never couples
//! blocks). Each adaptation step runs, per block `d` with updated gain `F`,
//! feature row `phi`, state MSEE entry `x` and drift estimate `delta`:
//!
//! ```text
//! E <- (I - F phi phi^T) E + delta
//! X <- F phi x phi^T F - X phi phi^T F - F phi phi^T X
//!      + E delta^T + delta E^T - delta delta^T + X
//! ```
//!
//! followed by symmetrisation and an eigenvalue clip to keep `X` PSD.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::rls::{symmetrize, RlsState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintyConfig {
    /// Number of recent parameter increments averaged into the drift estimate.
    pub window_size: usize,
    /// Number of recent a-priori errors used for the noise variance.
    pub noise_window: usize,
    /// Noise variance assumed until two residuals are available.
    pub noise_prior: f64,
    /// When false the drift estimate is held at zero (stationary parameters).
    pub drift_compensation: bool,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        Self {
            window_size: 10,
            noise_window: 50,
            noise_prior: 0.0,
            drift_compensation: true,
        }
    }
}

impl UncertaintyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 {
            return Err(Error::Config("window_size must be >= 1".into()));
        }
        if self.noise_window < 2 {
            return Err(Error::Config("noise_window must be >= 2".into()));
        }
        if !(self.noise_prior >= 0.0) || !self.noise_prior.is_finite() {
            return Err(Error::Config("noise_prior must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyState {
    config: UncertaintyConfig,
    x_theta_theta: Vec<DMatrix<f64>>,
    e_theta_tilde: Vec<DVector<f64>>,
    dtheta_window: VecDeque<DVector<f64>>,
    residuals: VecDeque<DVector<f64>>,
    noise_var: Vec<f64>,
    psd_clips: usize,
}

impl UncertaintyState {
    /// Zero parameter MSEE and bias for `n_blocks` blocks of length `block_len`.
    pub fn new(n_blocks: usize, block_len: usize, config: UncertaintyConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            x_theta_theta: vec![DMatrix::zeros(block_len, block_len); n_blocks],
            e_theta_tilde: vec![DVector::zeros(block_len); n_blocks],
            dtheta_window: VecDeque::with_capacity(config.window_size),
            residuals: VecDeque::with_capacity(config.noise_window),
            noise_var: vec![config.noise_prior; n_blocks],
            psd_clips: 0,
            config,
        })
    }

    pub fn config(&self) -> &UncertaintyConfig {
        &self.config
    }

    pub fn x_theta_theta(&self) -> &[DMatrix<f64>] {
        &self.x_theta_theta
    }

    pub fn x_theta_theta_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.x_theta_theta
    }

    pub fn e_theta_tilde(&self) -> &[DVector<f64>] {
        &self.e_theta_tilde
    }

    pub fn noise_var(&self) -> &[f64] {
        &self.noise_var
    }

    /// Override the noise variance (e.g. when it is known a priori).
    pub fn set_noise_var(&mut self, var: Vec<f64>) -> Result<()> {
        if var.len() != self.noise_var.len() {
            return Err(Error::dim(
                "noise variance",
                self.noise_var.len(),
                var.len(),
            ));
        }
        self.noise_var = var;
        Ok(())
    }

    pub fn dtheta_window(&self) -> &VecDeque<DVector<f64>> {
        &self.dtheta_window
    }

    /// Total number of eigenvalue clips applied so far.
    pub fn psd_clips(&self) -> usize {
        self.psd_clips
    }

    fn n_blocks(&self) -> usize {
        self.x_theta_theta.len()
    }

    fn block_len(&self) -> usize {
        self.e_theta_tilde.first().map_or(0, |e| e.len())
    }

    /// Mean of the increment window; zero while the window is empty.
    pub fn delta_theta(&self) -> DVector<f64> {
        let n = self.n_blocks() * self.block_len();
        if self.dtheta_window.is_empty() || !self.config.drift_compensation {
            return DVector::zeros(n);
        }
        let mut sum = DVector::zeros(n);
        for d in &self.dtheta_window {
            sum += d;
        }
        sum / self.dtheta_window.len() as f64
    }

    /// State MSEE `Phi X Phi^T + Var(w)`; diagonal because `Phi` and `X` are block-diagonal.
    pub fn propagate_state_msee(&self, features: &DVector<f64>) -> Result<DMatrix<f64>> {
        if features.len() != self.block_len() {
            return Err(Error::dim(
                "feature vector",
                self.block_len(),
                features.len(),
            ));
        }
        let mut out = DMatrix::zeros(self.n_blocks(), self.n_blocks());
        for (d, x) in self.x_theta_theta.iter().enumerate() {
            let quad = features.dot(&(x * features));
            out[(d, d)] = quad + self.noise_var[d];
        }
        Ok(out)
    }

    /// Bookkeeping after one RLS step that moved the parameters from
    /// `theta_before` to `after.theta_hat()`.
    ///
    /// `after`'s gain is the one that produced the parameter step. `x_msee`
    /// is the state MSEE for the same features.
    pub fn update_param_msee(
        &mut self,
        theta_before: &DVector<f64>,
        after: &RlsState,
        features: &DVector<f64>,
        x_msee: &DMatrix<f64>,
    ) -> Result<()> {
        let (nb, p) = (self.n_blocks(), self.block_len());
        if after.n_blocks() != nb {
            return Err(Error::dim("RLS blocks", nb, after.n_blocks()));
        }
        if after.block_len() != p {
            return Err(Error::dim("RLS block length", p, after.block_len()));
        }
        if theta_before.len() != nb * p {
            return Err(Error::dim(
                "previous parameters",
                nb * p,
                theta_before.len(),
            ));
        }
        if features.len() != p {
            return Err(Error::dim("feature vector", p, features.len()));
        }
        if x_msee.shape() != (nb, nb) {
            return Err(Error::dim("state MSEE rows", nb, x_msee.nrows()));
        }

        if self.dtheta_window.len() == self.config.window_size {
            self.dtheta_window.pop_front();
        }
        self.dtheta_window
            .push_back(after.theta_hat() - theta_before);
        let delta = self.delta_theta();
        let u = after.gain() * features; // F phi, shared by every block

        for d in 0..nb {
            let delta_d = delta.rows(d * p, p);
            let x = &self.x_theta_theta[d];
            let v = x * features; // X phi

            let e = &mut self.e_theta_tilde[d];
            let proj = features.dot(e);
            e.axpy(-proj, &u, 1.0);
            *e += &delta_d;

            let mut next = x.clone();
            next.ger(x_msee[(d, d)], &u, &u, 1.0);
            next.ger(-1.0, &v, &u, 1.0);
            next.ger(-1.0, &u, &v, 1.0);
            next.ger(1.0, e, &delta_d, 1.0);
            next.ger(1.0, &delta_d, e, 1.0);
            next.ger(-1.0, &delta_d, &delta_d, 1.0);
            symmetrize(&mut next);
            if project_psd(&mut next) {
                self.psd_clips += 1;
            }
            self.x_theta_theta[d] = next;
        }
        Ok(())
    }

    /// Append an a-priori error and refresh the noise variance estimate.
    pub fn record_residual(&mut self, residual: &DVector<f64>) -> Result<()> {
        if residual.len() != self.n_blocks() {
            return Err(Error::dim("residual", self.n_blocks(), residual.len()));
        }
        if self.residuals.len() == self.config.noise_window {
            self.residuals.pop_front();
        }
        self.residuals.push_back(residual.clone());
        let (a, b) = self.residuals.as_slices();
        let all: Vec<&DVector<f64>> = a.iter().chain(b).collect();
        self.noise_var = sample_variance(&all, self.n_blocks(), self.config.noise_prior);
        Ok(())
    }
}

/// Symmetric eigenvalue clip at zero. Returns true if anything was clipped.
///
/// A Cholesky probe with a relative jitter short-circuits matrices that are
/// already PSD up to rounding.
pub fn project_psd(m: &mut DMatrix<f64>) -> bool {
    let n = m.nrows();
    let scale = m.diagonal().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let jitter = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let probe = &*m + DMatrix::identity(n, n) * jitter;
    if probe.cholesky().is_some() {
        return false;
    }
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return false;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let q = &eig.eigenvectors;
    *m = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    symmetrize(m);
    true
}

/// Per-coordinate sample variance (n - 1 denominator) of the last `window`
/// residuals, or `prior` while fewer than two exist.
pub fn estimate_noise_variance(residuals: &[DVector<f64>], window: usize, prior: f64) -> Vec<f64> {
    let dim = residuals.first().map_or(0, |r| r.len());
    let start = residuals.len().saturating_sub(window.max(2));
    let recent: Vec<&DVector<f64>> = residuals[start..].iter().collect();
    sample_variance(&recent, dim, prior)
}

fn sample_variance(rs: &[&DVector<f64>], dim: usize, prior: f64) -> Vec<f64> {
    if rs.len() < 2 {
        return vec![prior; dim];
    }
    let n = rs.len() as f64;
    (0..dim)
        .map(|i| {
            let mean = rs.iter().map(|r| r[i]).sum::<f64>() / n;
            rs.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / (n - 1.0)
        })
        .collect()
}

/// Prediction mean, its MSEE and one ellipsoid per predicted position.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionWithUncertainty {
    pub mean: DVector<f64>,
    pub msee: DMatrix<f64>,
    pub ellipsoids: Vec<Ellipsoid>,
}

/// `{p : (p - center)^T shape^+ (p - center) <= 1}` where `shape = q * Sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    pub center: Vector3<f64>,
    pub shape: Matrix3<f64>,
    pub confidence: f64,
}

/// Eigenvalues below this fraction of the largest one are treated as exact directions.
const SINGULAR_RTOL: f64 = 1e-12;

impl Ellipsoid {
    /// Semi-axis lengths (descending) and the matching unit directions as columns.
    pub fn semi_axes(&self) -> (Vector3<f64>, Matrix3<f64>) {
        let eig = SymmetricEigen::new(self.shape);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let lengths = Vector3::from_fn(|i, _| eig.eigenvalues[order[i]].max(0.0).sqrt());
        let axes = Matrix3::from_fn(|r, c| eig.eigenvectors[(r, order[c])]);
        (lengths, axes)
    }

    /// Mahalanobis-style radius; `None` when the point leaves a zero-variance direction.
    pub fn normalized_distance(&self, point: &Vector3<f64>) -> Option<f64> {
        let eig = SymmetricEigen::new(self.shape);
        let top = eig.eigenvalues.iter().fold(0.0_f64, |a, &l| a.max(l));
        let offset = point - self.center;
        let tol = SINGULAR_RTOL * top.max(1.0);
        let mut r2 = 0.0;
        for i in 0..3 {
            let c = eig.eigenvectors.column(i).dot(&offset);
            let l = eig.eigenvalues[i];
            if l > SINGULAR_RTOL * top && l > 0.0 {
                r2 += c * c / l;
            } else if c.abs() > tol.sqrt() {
                return None;
            }
        }
        Some(r2.sqrt())
    }

    pub fn contains(&self, point: &Vector3<f64>) -> bool {
        self.normalized_distance(point).is_some_and(|r| r <= 1.0)
    }
}

/// Chi-square quantile with three degrees of freedom.
pub fn chi2_3_quantile(confidence: f64) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Config(format!(
            "confidence must be in (0, 1), got {confidence}"
        )));
    }
    let dist = ChiSquared::new(3.0).expect("3 dof is valid");
    Ok(dist.inverse_cdf(confidence))
}

/// One ellipsoid per consecutive 3-vector of `mean`, from the diagonal 3x3 blocks of `msee`.
pub fn error_ellipsoids(
    mean: &DVector<f64>,
    msee: &DMatrix<f64>,
    confidence: f64,
) -> Result<Vec<Ellipsoid>> {
    let q = chi2_3_quantile(confidence)?;
    let n = mean.len();
    if !n.is_multiple_of(3) {
        return Err(Error::Input(format!(
            "mean length {n} is not a multiple of 3"
        )));
    }
    if msee.shape() != (n, n) {
        return Err(Error::dim("MSEE size", n, msee.nrows()));
    }
    Ok((0..n / 3)
        .map(|m| {
            let sigma: Matrix3<f64> = msee.fixed_view::<3, 3>(3 * m, 3 * m).into_owned();
            Ellipsoid {
                center: mean.fixed_rows::<3>(3 * m).into_owned(),
                shape: sigma * q,
                confidence,
            }
        })
        .collect())
}
