//! The online predict/adapt loop.
//!
//! Measurements arrive one at a time. Once `N` positions are buffered each
//! new measurement produces an M-step prediction with its MSEE. The full
//! target of the prediction made at step `k` is only known at step `k + M`,
//! so adaptation on that sample runs then, before the prediction for the
//! new step is formed. A [`StepResult`] is emitted for every prediction whose
//! target has completed.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::baseline::{identifier_step, IdentifierConfig};
use crate::datagen::{stack_history, Sample};
use crate::error::{Error, Result};
use crate::mlp::MlpModel;
use crate::rls::{init_rls, RlsConfig, RlsState};
use crate::uncertainty::{
    error_ellipsoids, PredictionWithUncertainty, UncertaintyConfig, UncertaintyState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    RlsPaa,
    Identifier,
    None,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::RlsPaa => "rls-paa",
            Method::Identifier => "identifier",
            Method::None => "none",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rls-paa" | "rls" => Ok(Method::RlsPaa),
            "identifier" | "id" => Ok(Method::Identifier),
            "none" => Ok(Method::None),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Past positions per input (N).
    pub history: usize,
    /// Future positions per prediction (M).
    pub horizon: usize,
    pub include_action: bool,
    pub method: Method,
    pub rls: RlsConfig,
    pub uncertainty: UncertaintyConfig,
    pub identifier: IdentifierConfig,
    /// Ellipsoid confidence level.
    pub confidence: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            history: 3,
            horizon: 3,
            include_action: false,
            method: Method::RlsPaa,
            rls: RlsConfig::default(),
            uncertainty: UncertaintyConfig::default(),
            identifier: IdentifierConfig::default(),
            confidence: 0.95,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history == 0 || self.horizon == 0 {
            return Err(Error::Config("history and horizon must be >= 1".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Config("confidence must be in (0, 1)".into()));
        }
        self.rls.validate()?;
        self.uncertainty.validate()?;
        self.identifier.validate()
    }

    pub fn network_input_dim(&self) -> usize {
        3 * self.history + usize::from(self.include_action)
    }

    pub fn output_dim(&self) -> usize {
        3 * self.horizon
    }

    /// Fail with both sizes named when the model does not fit the windowing.
    pub fn check_model(&self, model: &MlpModel) -> Result<()> {
        if model.input_dim() != self.network_input_dim() {
            return Err(Error::Config(format!(
                "model input dimension {} does not match stream input dimension {} (N={}, action={})",
                model.input_dim(),
                self.network_input_dim(),
                self.history,
                self.include_action
            )));
        }
        if model.output_dim() != self.output_dim() {
            return Err(Error::Config(format!(
                "model output dimension {} does not match stream output dimension {} (M={})",
                model.output_dim(),
                self.output_dim(),
                self.horizon
            )));
        }
        Ok(())
    }
}

/// One incoming measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub t: f64,
    pub position: [f64; 3],
    pub action: i64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepDiagnostics {
    /// Eigenvalue clips applied during this step's bookkeeping.
    pub psd_clips: usize,
    pub degenerate_gain: bool,
    /// Wall time of the parameter adaptation (RLS gain+parameter update or identifier step).
    pub adapt_nanos: u64,
    /// Wall time of the MSEE bookkeeping (RLS only).
    pub uncertainty_nanos: u64,
}

/// A prediction made at step `k` together with how it turned out.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub k: usize,
    pub t: f64,
    pub prediction: PredictionWithUncertainty,
    pub truth: DVector<f64>,
    /// `truth - prediction.mean`.
    pub apriori_error: DVector<f64>,
    pub diagnostics: StepDiagnostics,
}

impl StepResult {
    /// Fraction of predicted positions whose ground truth lies inside its ellipsoid.
    pub fn inside_flags(&self) -> Vec<bool> {
        self.prediction
            .ellipsoids
            .iter()
            .enumerate()
            .map(|(m, e)| e.contains(&self.truth.fixed_rows::<3>(3 * m).into_owned()))
            .collect()
    }

    pub fn to_json(&self) -> Value {
        let ellipsoids: Vec<Value> = self
            .prediction
            .ellipsoids
            .iter()
            .map(|e| {
                json!({
                    "center": e.center.as_slice(),
                    "shape": row_major(&DMatrix::from_column_slice(3, 3, e.shape.as_slice())),
                    "confidence": e.confidence,
                })
            })
            .collect();
        json!({
            "k": self.k,
            "t": self.t,
            "mean": self.prediction.mean.as_slice(),
            "msee": row_major(&self.prediction.msee),
            "ellipsoids": ellipsoids,
            "apriori_error": self.apriori_error.as_slice(),
            "diagnostics": {
                "psd_clips": self.diagnostics.psd_clips,
                "degenerate_gain": self.diagnostics.degenerate_gain,
                "adapt_nanos": self.diagnostics.adapt_nanos,
                "uncertainty_nanos": self.diagnostics.uncertainty_nanos,
            }
        })
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub measurements: usize,
    pub rejected: usize,
    pub predictions: usize,
    pub adaptations: usize,
    pub emitted: usize,
}

#[derive(Debug, Clone)]
struct Pending {
    k: usize,
    t: f64,
    network_input: Vec<f64>,
    features: Option<DVector<f64>>,
    prediction: PredictionWithUncertainty,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: PipelineConfig,
    model: MlpModel,
    rls: Option<RlsState>,
    uncertainty: UncertaintyState,
    positions: VecDeque<[f64; 3]>,
    pending: VecDeque<Pending>,
    next_k: usize,
    last_t: Option<f64>,
    counters: Counters,
}

impl Pipeline {
    pub fn new(model: MlpModel, cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        cfg.check_model(&model)?;
        let rls = match cfg.method {
            Method::RlsPaa => Some(init_rls(&model, cfg.rls)?),
            _ => None,
        };
        let uncertainty = UncertaintyState::new(
            model.output_dim(),
            model.feature_dim(),
            cfg.uncertainty.clone(),
        )?;
        Ok(Self {
            cfg,
            model,
            rls,
            uncertainty,
            positions: VecDeque::new(),
            pending: VecDeque::new(),
            next_k: 0,
            last_t: None,
            counters: Counters::default(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    /// The network as currently adapted (only changes under the identifier method).
    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn rls(&self) -> Option<&RlsState> {
        self.rls.as_ref()
    }

    pub fn uncertainty(&self) -> &UncertaintyState {
        &self.uncertainty
    }

    pub fn uncertainty_mut(&mut self) -> &mut UncertaintyState {
        &mut self.uncertainty
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    /// Start a new trial: drop the position window and unfinished predictions,
    /// keep everything that was adapted.
    pub fn begin_trial(&mut self) {
        self.positions.clear();
        self.pending.clear();
        self.last_t = None;
    }

    /// Feed one measurement; returns the result of the prediction it completes, if any.
    pub fn push(&mut self, m: Measurement) -> Result<Option<StepResult>> {
        if !m.t.is_finite() || m.position.iter().any(|v| !v.is_finite()) {
            self.counters.rejected += 1;
            return Ok(None);
        }
        if let Some(last) = self.last_t {
            if !(m.t > last) {
                return Err(Error::Stream(format!(
                    "timestamp {} does not follow {}",
                    m.t, last
                )));
            }
        }
        self.last_t = Some(m.t);
        let k = self.next_k;
        self.next_k += 1;
        self.counters.measurements += 1;

        let (n, horizon) = (self.cfg.history, self.cfg.horizon);
        self.positions.push_back(m.position);
        while self.positions.len() > n.max(horizon) {
            self.positions.pop_front();
        }

        let completed = match self.pending.front() {
            Some(p) if p.k + horizon == k => {
                let p = self.pending.pop_front().expect("front exists");
                Some(self.complete(p)?)
            }
            _ => None,
        };

        if self.positions.len() >= n {
            let action = self.cfg.include_action.then_some(m.action);
            let input = stack_history(self.positions.iter().rev().take(n), action);
            let pending = self.predict(k, m.t, input)?;
            self.pending.push_back(pending);
            self.counters.predictions += 1;
        }
        Ok(completed)
    }

    fn predict(&self, k: usize, t: f64, network_input: Vec<f64>) -> Result<Pending> {
        let (mean, msee, features) = match &self.rls {
            Some(rls) => {
                let phi = self.model.hidden_features(&network_input)?;
                let mean = rls.predict(&phi)?;
                let msee = self.uncertainty.propagate_state_msee(&phi)?;
                (mean, msee, Some(phi))
            }
            None => {
                let mean = self.model.forward(&network_input)?;
                let var = DVector::from_column_slice(self.uncertainty.noise_var());
                (mean, DMatrix::from_diagonal(&var), None)
            }
        };
        let ellipsoids = error_ellipsoids(&mean, &msee, self.cfg.confidence)?;
        Ok(Pending {
            k,
            t,
            network_input,
            features,
            prediction: PredictionWithUncertainty {
                mean,
                msee,
                ellipsoids,
            },
        })
    }

    fn complete(&mut self, p: Pending) -> Result<StepResult> {
        let truth = DVector::from_iterator(
            3 * self.cfg.horizon,
            self.positions
                .iter()
                .rev()
                .take(self.cfg.horizon)
                .rev()
                .flat_map(|q| q.iter().copied()),
        );
        let mut diagnostics = StepDiagnostics::default();
        match self.cfg.method {
            Method::RlsPaa => {
                let rls = self.rls.as_mut().expect("rls state for rls-paa");
                let phi = p.features.as_ref().expect("features for rls-paa");
                let theta_before = rls.theta_hat().clone();
                let started = Instant::now();
                let step = rls.update(phi, &truth)?;
                diagnostics.adapt_nanos = started.elapsed().as_nanos() as u64;
                diagnostics.degenerate_gain = step.degenerate;

                let started = Instant::now();
                let clips_before = self.uncertainty.psd_clips();
                let x_msee = self.uncertainty.propagate_state_msee(phi)?;
                self.uncertainty
                    .update_param_msee(&theta_before, rls, phi, &x_msee)?;
                self.uncertainty.record_residual(&step.apriori_error)?;
                diagnostics.uncertainty_nanos = started.elapsed().as_nanos() as u64;
                diagnostics.psd_clips = self.uncertainty.psd_clips() - clips_before;
                self.counters.adaptations += 1;
            }
            Method::Identifier => {
                let sample = Sample::from_network_input(
                    p.network_input.clone(),
                    truth.as_slice().to_vec(),
                    p.k,
                );
                let started = Instant::now();
                let pred = identifier_step(&mut self.model, &sample, &self.cfg.identifier)?;
                diagnostics.adapt_nanos = started.elapsed().as_nanos() as u64;
                self.uncertainty.record_residual(&(&truth - pred))?;
                self.counters.adaptations += 1;
            }
            Method::None => {
                let pred = self.model.forward(&p.network_input)?;
                self.uncertainty.record_residual(&(&truth - pred))?;
            }
        }
        self.counters.emitted += 1;
        let apriori_error = &truth - &p.prediction.mean;
        Ok(StepResult {
            k: p.k,
            t: p.t,
            prediction: p.prediction,
            truth,
            apriori_error,
            diagnostics,
        })
    }
}

/// Run a whole stream and collect every completed step.
pub fn run_stream(
    model: &MlpModel,
    measurements: impl IntoIterator<Item = Measurement>,
    cfg: &PipelineConfig,
) -> Result<Vec<StepResult>> {
    let mut pipeline = Pipeline::new(model.clone(), cfg.clone())?;
    let mut out = Vec::new();
    for m in measurements {
        if let Some(r) = pipeline.push(m)? {
            out.push(r);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{init_mlp, MlpConfig};

    fn ramp(len: usize) -> Vec<Measurement> {
        (0..len)
            .map(|i| {
                let x = i as f64 * 0.1;
                Measurement {
                    t: i as f64 * 0.05,
                    position: [x, x.sin(), 1.0 - x],
                    action: 0,
                }
            })
            .collect()
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::RlsPaa, Method::Identifier, Method::None] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("sgd".parse::<Method>().is_err());
    }

    #[test]
    fn dimension_mismatch_names_both_sizes() {
        let model = init_mlp(&MlpConfig::standard(0)).unwrap();
        let cfg = PipelineConfig {
            history: 2,
            ..PipelineConfig::default()
        };
        let err = Pipeline::new(model, cfg).unwrap_err().to_string();
        assert!(err.contains('9') && err.contains('6'), "{err}");
    }

    #[test]
    fn emits_one_result_per_complete_window() {
        let model = init_mlp(&MlpConfig::standard(0)).unwrap();
        let out = run_stream(&model, ramp(20), &PipelineConfig::default()).unwrap();
        assert_eq!(out.len(), 20 - 3 - 3 + 1);
        assert_eq!(out[0].k, 2);
        assert_eq!(out.last().unwrap().k, 16);
        for r in &out {
            assert_eq!(r.prediction.ellipsoids.len(), 3);
            assert_eq!(r.prediction.msee.shape(), (9, 9));
        }
    }

    #[test]
    fn no_adaptation_matches_forward() {
        let model = init_mlp(&MlpConfig::standard(1)).unwrap();
        let cfg = PipelineConfig {
            method: Method::None,
            ..PipelineConfig::default()
        };
        let stream = ramp(15);
        let out = run_stream(&model, stream.clone(), &cfg).unwrap();
        for r in out {
            let input = stack_history(
                stream[r.k - 2..=r.k].iter().rev().map(|m| &m.position),
                None,
            );
            assert_eq!(r.prediction.mean, model.forward(&input).unwrap());
        }
    }

    #[test]
    fn rejects_time_reversal_and_skips_nan() {
        let model = init_mlp(&MlpConfig::standard(1)).unwrap();
        let mut p = Pipeline::new(model, PipelineConfig::default()).unwrap();
        let mut m = ramp(3);
        p.push(m[0]).unwrap();
        m[1].position[0] = f64::NAN;
        assert!(p.push(m[1]).unwrap().is_none());
        assert_eq!(p.counters().rejected, 1);
        assert!(matches!(p.push(m[0]), Err(Error::Stream(_))));
    }

    #[test]
    fn begin_trial_resets_window_only() {
        let model = init_mlp(&MlpConfig::standard(2)).unwrap();
        let mut p = Pipeline::new(model, PipelineConfig::default()).unwrap();
        for m in ramp(10) {
            p.push(m).unwrap();
        }
        let adapted = p.rls().unwrap().theta_hat().clone();
        p.begin_trial();
        let mut emitted = 0;
        for m in ramp(6) {
            emitted += usize::from(p.push(m).unwrap().is_some());
        }
        assert_eq!(emitted, 1);
        assert_eq!(p.counters().adaptations, 5 + 1);
        assert_ne!(p.rls().unwrap().theta_hat(), &adapted);
    }

    #[test]
    fn step_result_json_layout() {
        let model = init_mlp(&MlpConfig::standard(3)).unwrap();
        let out = run_stream(&model, ramp(7), &PipelineConfig::default()).unwrap();
        let v = out[0].to_json();
        assert_eq!(v["mean"].as_array().unwrap().len(), 9);
        assert_eq!(v["msee"].as_array().unwrap().len(), 81);
        assert_eq!(v["ellipsoids"].as_array().unwrap().len(), 3);
        assert_eq!(v["apriori_error"].as_array().unwrap().len(), 9);
    }
}
