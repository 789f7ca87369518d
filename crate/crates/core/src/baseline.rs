//! Identifier-style comparison method: every network weight follows the
//! gradient of the instantaneous squared prediction error.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::mlp::MlpModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifierConfig {
    pub step_size: f64,
    pub steps_per_sample: usize,
}

impl Default for IdentifierConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-3,
            steps_per_sample: 1,
        }
    }
}

impl IdentifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size >= 0.0) || !self.step_size.is_finite() {
            return Err(Error::Config("step_size must be >= 0".into()));
        }
        if self.steps_per_sample == 0 {
            return Err(Error::Config("steps_per_sample must be >= 1".into()));
        }
        Ok(())
    }
}

/// Predict with the current weights, then take `steps_per_sample` gradient
/// steps on this sample's squared error. Returns the a-priori prediction.
pub fn identifier_step(
    model: &mut MlpModel,
    sample: &Sample,
    cfg: &IdentifierConfig,
) -> Result<DVector<f64>> {
    cfg.validate()?;
    model.check_sample(sample)?;
    let prediction = model.forward(sample.network_input())?;
    if cfg.step_size == 0.0 {
        return Ok(prediction);
    }
    let batch = std::slice::from_ref(sample);
    for i in 0..cfg.steps_per_sample {
        let (_, grads) = model.loss_and_gradients(batch)?;
        let g = grads.max_abs();
        if !g.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite gradient at inner step {i} of sample k={}",
                sample.k
            )));
        }
        if g == 0.0 {
            break;
        }
        model.apply_gradients(&grads, cfg.step_size);
    }
    Ok(prediction)
}

/// Pick the grid point with the lowest mean a-priori squared error when the
/// identifier is run sequentially over `samples`.
pub fn tune_identifier(
    model: &MlpModel,
    samples: &[Sample],
    grid: &[IdentifierConfig],
) -> Result<(IdentifierConfig, f64)> {
    if samples.is_empty() || grid.is_empty() {
        return Err(Error::Input(
            "tuning needs samples and a non-empty grid".into(),
        ));
    }
    let mut best: Option<(IdentifierConfig, f64)> = None;
    for cfg in grid {
        let mut m = model.clone();
        let mut total = 0.0;
        let mut ok = true;
        for s in samples {
            match identifier_step(&mut m, s, cfg) {
                Ok(pred) => {
                    total += (pred - DVector::from_column_slice(&s.target)).norm_squared();
                }
                Err(Error::Numerical(_)) => {
                    ok = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let score = total / samples.len() as f64;
        if ok && score.is_finite() && best.is_none_or(|(_, b)| score < b) {
            best = Some((*cfg, score));
        }
    }
    best.ok_or_else(|| Error::Numerical("every tuning candidate diverged".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{init_mlp, MlpConfig};

    fn probe(target: Vec<f64>) -> Sample {
        let x: Vec<f64> = (0..9).map(|i| 0.2 * i as f64 - 0.5).collect();
        Sample::from_network_input(x, target, 0)
    }

    #[test]
    fn exact_target_leaves_model_unchanged() {
        let mut m = init_mlp(&MlpConfig::standard(1)).unwrap();
        let s0 = probe(vec![0.0; 9]);
        let y = m.forward(s0.network_input()).unwrap().as_slice().to_vec();
        let s = probe(y.clone());
        let before = m.clone();
        let pred = identifier_step(&mut m, &s, &IdentifierConfig::default()).unwrap();
        assert_eq!(m, before);
        assert_eq!(pred.as_slice(), &y[..]);
    }

    #[test]
    fn zero_step_is_identity() {
        let mut m = init_mlp(&MlpConfig::standard(2)).unwrap();
        let s = probe(vec![1.0; 9]);
        let before = m.clone();
        let cfg = IdentifierConfig {
            step_size: 0.0,
            steps_per_sample: 3,
        };
        let pred = identifier_step(&mut m, &s, &cfg).unwrap();
        assert_eq!(m, before);
        assert_eq!(pred, before.forward(s.network_input()).unwrap());
    }

    #[test]
    fn small_step_descends() {
        let mut m = init_mlp(&MlpConfig::standard(3)).unwrap();
        let s = probe(vec![1.0; 9]);
        let (before, _) = m.loss_and_gradients(std::slice::from_ref(&s)).unwrap();
        identifier_step(
            &mut m,
            &s,
            &IdentifierConfig {
                step_size: 1e-3,
                steps_per_sample: 1,
            },
        )
        .unwrap();
        let (after, _) = m.loss_and_gradients(std::slice::from_ref(&s)).unwrap();
        assert!(after < before);
    }

    #[test]
    fn invalid_config() {
        let mut m = init_mlp(&MlpConfig::standard(3)).unwrap();
        let s = probe(vec![1.0; 9]);
        let cfg = IdentifierConfig {
            step_size: 1e-3,
            steps_per_sample: 0,
        };
        assert!(matches!(
            identifier_step(&mut m, &s, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn tuning_prefers_learning_on_a_learnable_stream() {
        let m = init_mlp(&MlpConfig::standard(4)).unwrap();
        let samples: Vec<Sample> = (0..40).map(|_| probe(vec![0.7; 9])).collect();
        let grid = [
            IdentifierConfig {
                step_size: 0.0,
                steps_per_sample: 1,
            },
            IdentifierConfig {
                step_size: 1e-2,
                steps_per_sample: 1,
            },
        ];
        let (best, _) = tune_identifier(&m, &samples, &grid).unwrap();
        assert_eq!(best.step_size, 1e-2);
    }
}
