//! Recursive least-squares adaptation of the network's output layer.
//!
//! The flattened parameter vector stacks one block per output coordinate,
//! `[w_d; b_d]` of length `n_h + 1`. The regressor is block-diagonal with the
//! same feature row in every block, so the matrix recursion splits into one
//! scalar-measurement recursion per block:
//!
//! ```text
//! F_d <- (F_d - l2 F_d phi phi^T F_d / (l1 + l2 phi^T F_d phi)) / l1
//! theta_d <- theta_d + F_d phi e_d
//! ```
//!
//! where `e_d` is the a-priori error and the updated gain is used in the
//! parameter step. Every block starts from the same gain and sees the same
//! `phi`, so the `F_d` never differ: one gain matrix is stored and updated
//! once per step, which makes an update cost `O(p^2)` rather than
//! `O(outputs * p^2)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{push_number, push_row, MlpModel};

/// Gain diagonals below this are reported as degenerate.
pub const DEGENERACY_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlsConfig {
    /// Forgetting factor in `(0, 1]`.
    pub lambda1: f64,
    /// Gain weighting in `[0, 2]`; 0 freezes the gain.
    pub lambda2: f64,
    /// Initial gain is `f_init_scale * I` per block.
    pub f_init_scale: f64,
}

impl Default for RlsConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.998,
            lambda2: 1.0,
            f_init_scale: 1000.0,
        }
    }
}

impl RlsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 > 0.0 && self.lambda1 <= 1.0) {
            return Err(Error::Config(format!(
                "lambda1 must be in (0, 1], got {}",
                self.lambda1
            )));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2 <= 2.0) {
            return Err(Error::Config(format!(
                "lambda2 must be in [0, 2], got {}",
                self.lambda2
            )));
        }
        if !(self.f_init_scale > 0.0) || !self.f_init_scale.is_finite() {
            return Err(Error::Config("f_init_scale must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlsState {
    theta_hat: DVector<f64>,
    gain: DMatrix<f64>,
    n_blocks: usize,
    config: RlsConfig,
}

/// Outcome of one [`RlsState::update`].
#[derive(Debug, Clone, PartialEq)]
pub struct RlsStep {
    pub apriori_error: DVector<f64>,
    /// Set when a gain diagonal entry fell below [`DEGENERACY_THRESHOLD`].
    pub degenerate: bool,
}

/// Start adaptation from the trained output layer with `f_init_scale * I` gains.
pub fn init_rls(model: &MlpModel, config: RlsConfig) -> Result<RlsState> {
    let aug = model.output_layer_augmented();
    let blocks: Vec<DVector<f64>> = aug.row_iter().map(|r| r.transpose()).collect();
    RlsState::from_blocks(&blocks, config)
}

impl RlsState {
    /// Start from explicit parameter blocks (one per output coordinate).
    pub fn from_blocks(blocks: &[DVector<f64>], config: RlsConfig) -> Result<Self> {
        config.validate()?;
        let p = blocks.first().map(|b| b.len()).unwrap_or(0);
        if p == 0 {
            return Err(Error::Config(
                "need at least one non-empty parameter block".into(),
            ));
        }
        if let Some(b) = blocks.iter().find(|b| b.len() != p) {
            return Err(Error::dim("parameter block", p, b.len()));
        }
        let mut theta_hat = DVector::zeros(p * blocks.len());
        for (d, b) in blocks.iter().enumerate() {
            theta_hat.rows_mut(d * p, p).copy_from(b);
        }
        if theta_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("initial parameters must be finite".into()));
        }
        Ok(Self {
            theta_hat,
            gain: DMatrix::identity(p, p) * config.f_init_scale,
            n_blocks: blocks.len(),
            config,
        })
    }

    pub fn config(&self) -> &RlsConfig {
        &self.config
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    /// The adaptation gain shared by every block.
    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn gain_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.gain
    }

    /// Gain of output block `d`; every block shares [`gain`](Self::gain).
    pub fn gain_block(&self, d: usize) -> Option<&DMatrix<f64>> {
        (d < self.n_blocks).then_some(&self.gain)
    }

    /// Number of output coordinates.
    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    /// Length of each parameter block (`n_h + 1`).
    pub fn block_len(&self) -> usize {
        self.gain.nrows()
    }

    pub fn block(&self, d: usize) -> nalgebra::DVectorView<'_, f64> {
        let p = self.block_len();
        self.theta_hat.rows(d * p, p)
    }

    /// Parameters back in `[W | b]` form, one row per output.
    pub fn output_layer(&self) -> DMatrix<f64> {
        let p = self.block_len();
        DMatrix::from_fn(self.n_blocks(), p, |d, j| self.theta_hat[d * p + j])
    }

    fn check_features(&self, features: &DVector<f64>) -> Result<()> {
        if features.len() != self.block_len() {
            return Err(Error::dim(
                "feature vector",
                self.block_len(),
                features.len(),
            ));
        }
        Ok(())
    }

    /// A-priori prediction: output `d` is `phi . theta_d`.
    pub fn predict(&self, features: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_features(features)?;
        Ok(DVector::from_fn(self.n_blocks(), |d, _| {
            self.block(d).dot(features)
        }))
    }

    /// Gain update followed by parameter update for one measurement.
    pub fn update(
        &mut self,
        features: &DVector<f64>,
        measurement: &DVector<f64>,
    ) -> Result<RlsStep> {
        self.check_features(features)?;
        if measurement.len() != self.n_blocks() {
            return Err(Error::dim(
                "measurement",
                self.n_blocks(),
                measurement.len(),
            ));
        }
        if features
            .iter()
            .chain(measurement.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Input("non-finite feature or measurement".into()));
        }
        let apriori_error = measurement - self.predict(features)?;
        let RlsConfig {
            lambda1, lambda2, ..
        } = self.config;
        let p = self.block_len();
        let f_phi = &self.gain * features;
        let denom = lambda1 + lambda2 * features.dot(&f_phi);
        if !(denom > 0.0) || !denom.is_finite() {
            return Err(Error::Numerical(format!("gain denominator {denom}")));
        }
        // F <- (F - l2 F phi phi^T F / denom) / l1, computed on the upper
        // triangle and mirrored so F stays exactly symmetric
        let c = lambda2 / denom;
        let inv_l1 = 1.0 / lambda1;
        let f = f_phi.as_slice();
        let g = self.gain.as_mut_slice();
        for j in 0..p {
            let cfj = c * f[j];
            for i in 0..=j {
                let v = (g[j * p + i] - cfj * f[i]) * inv_l1;
                g[j * p + i] = v;
                g[i * p + j] = v;
            }
        }
        // F_new phi == F_old phi / denom
        let u = f_phi / denom;
        for d in 0..self.n_blocks {
            let mut block = self.theta_hat.rows_mut(d * p, p);
            block.axpy(apriori_error[d], &u, 1.0);
        }
        let degenerate = self
            .gain
            .diagonal()
            .iter()
            .any(|&v| v < DEGENERACY_THRESHOLD);
        if self.theta_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "parameter estimate became non-finite".into(),
            ));
        }
        Ok(RlsStep {
            apriori_error,
            degenerate,
        })
    }
}

impl RlsState {
    /// Snapshot in the model-file number format.
    pub fn to_json(&self) -> String {
        let c = &self.config;
        let mut out = String::from("{\"config\":{\"lambda1\":");
        push_number(&mut out, c.lambda1);
        out.push_str(",\"lambda2\":");
        push_number(&mut out, c.lambda2);
        out.push_str(",\"f_init_scale\":");
        push_number(&mut out, c.f_init_scale);
        out.push_str(&format!("}},\"n_blocks\":{},\"theta_hat\":", self.n_blocks));
        push_row(&mut out, self.theta_hat.iter().copied());
        out.push_str(",\"gain\":[");
        for r in 0..self.gain.nrows() {
            if r > 0 {
                out.push(',');
            }
            push_row(&mut out, self.gain.row(r).iter().copied());
        }
        out.push_str("]}\n");
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawState = serde_json::from_str(text)?;
        raw.config
            .validate()
            .map_err(|e| Error::parse("config", e.to_string()))?;
        let p = raw.gain.len();
        if p == 0 || raw.n_blocks == 0 {
            return Err(Error::parse("gain", "empty state"));
        }
        if let Some((r, row)) = raw.gain.iter().enumerate().find(|(_, row)| row.len() != p) {
            return Err(Error::parse(
                format!("gain[{r}]"),
                format!("expected {p} columns, found {}", row.len()),
            ));
        }
        if raw.theta_hat.len() != raw.n_blocks * p {
            return Err(Error::parse(
                "theta_hat",
                format!(
                    "expected {} entries, found {}",
                    raw.n_blocks * p,
                    raw.theta_hat.len()
                ),
            ));
        }
        Ok(Self {
            theta_hat: DVector::from_vec(raw.theta_hat),
            gain: DMatrix::from_fn(p, p, |r, c| raw.gain[r][c]),
            n_blocks: raw.n_blocks,
            config: raw.config,
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawState {
    config: RlsConfig,
    n_blocks: usize,
    theta_hat: Vec<f64>,
    gain: Vec<Vec<f64>>,
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}
