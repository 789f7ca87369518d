//! Synthetic trajectory generators, smoothing and supervised windowing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficient sets `[a_x, b_x, a_y, b_y, a_z, b_z]` for the two time-varying
/// motion classes (meters, curve parameterised by time).
pub const TV_MOTIONS: [[f64; 6]; 2] = [
    [0.4, -2.0, 0.0, 0.9, 0.0, 1.05],
    [0.41, -1.9, 1.0, 0.9, 0.0, 0.95],
];

/// Coefficient sets for the two time-invariant quadratic-map motion classes (decimeters).
pub const TI_MOTIONS: [[f64; 6]; 2] = [
    [0.06, 0.92, 0.0, 0.9, 0.0, 1.05],
    [0.061, 0.93, 0.0, 1.05, 0.0, 0.96],
];

pub const SAMPLE_PERIOD: f64 = 0.05;

/// A single-joint trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub timestamps: Vec<f64>,
    pub positions: Vec<[f64; 3]>,
    pub action_label: i64,
    /// Set by [`gen_ti`] when the divergence guard cut the trial short.
    pub truncated: bool,
}

impl Trajectory {
    pub fn new(timestamps: Vec<f64>, positions: Vec<[f64; 3]>, action_label: i64) -> Result<Self> {
        let t = Self {
            timestamps,
            positions,
            action_label,
            truncated: false,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.timestamps.len() != self.positions.len() {
            return Err(Error::dim(
                "trajectory timestamps",
                self.positions.len(),
                self.timestamps.len(),
            ));
        }
        if let Some(i) = self.timestamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Input(format!(
                "timestamps not strictly increasing at row {}",
                i + 1
            )));
        }
        if let Some(i) = self
            .positions
            .iter()
            .position(|p| p.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Input(format!("non-finite position at row {i}")));
        }
        Ok(())
    }
}

/// Time-varying system: `p(t) = a (t + w)^2 + b (t + w)` per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TvParams {
    pub coeffs: [f64; 6],
    pub noise_halfwidth: f64,
    pub dt: f64,
    pub duration: f64,
    pub trials: usize,
    pub seed: u64,
    pub action_label: i64,
}

impl Default for TvParams {
    fn default() -> Self {
        Self {
            coeffs: TV_MOTIONS[0],
            // in seconds of time jitter; ±1 s makes consecutive samples
            // nearly independent, so the default is 10 ms
            noise_halfwidth: 0.01,
            dt: SAMPLE_PERIOD,
            duration: 5.0,
            trials: 50,
            seed: 0,
            action_label: 0,
        }
    }
}

impl TvParams {
    pub fn motion(class: usize, seed: u64) -> Self {
        Self {
            coeffs: TV_MOTIONS[class],
            seed,
            action_label: class as i64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_common(self.dt, self.noise_halfwidth, &self.coeffs)?;
        if !(self.duration >= 0.0) {
            return Err(Error::Config("duration must be >= 0".into()));
        }
        Ok(())
    }
}

/// Time-invariant system: `p(k+1) = a p(k)^2 + b p(k) + w` per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TiParams {
    pub coeffs: [f64; 6],
    pub noise_halfwidth: f64,
    pub dt: f64,
    /// Number of map iterations; trials have `steps + 1` positions.
    pub steps: usize,
    pub trials: usize,
    pub seed: u64,
    pub action_label: i64,
    /// Initial positions are uniform in `[init_low, init_high]^3`.
    pub init_low: f64,
    pub init_high: f64,
    pub divergence_bound: f64,
    /// One noise draw per step shared by all axes instead of one per axis.
    pub shared_noise: bool,
}

impl Default for TiParams {
    fn default() -> Self {
        Self {
            coeffs: TI_MOTIONS[0],
            // 1 mm per axis per step
            noise_halfwidth: 0.01,
            dt: SAMPLE_PERIOD,
            // the growing axis multiplies by ~1.05 per step: ~11x over 50 steps
            steps: 50,
            trials: 50,
            seed: 0,
            action_label: 0,
            init_low: 0.0,
            init_high: 1.0,
            divergence_bound: 1e3,
            shared_noise: false,
        }
    }
}

impl TiParams {
    pub fn motion(class: usize, seed: u64) -> Self {
        Self {
            coeffs: TI_MOTIONS[class],
            seed,
            action_label: class as i64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_common(self.dt, self.noise_halfwidth, &self.coeffs)?;
        if !(self.init_low <= self.init_high) {
            return Err(Error::Config("init_low must be <= init_high".into()));
        }
        if !(self.divergence_bound > 0.0) {
            return Err(Error::Config("divergence_bound must be > 0".into()));
        }
        Ok(())
    }
}

fn validate_common(dt: f64, noise: f64, coeffs: &[f64; 6]) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config("dt must be > 0".into()));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::Config("noise_halfwidth must be >= 0".into()));
    }
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::Config("coefficients must be finite".into()));
    }
    Ok(())
}

/// Trial `i` is generated from its own stream seeded with `seed + i`.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64))
}

fn uniform(rng: &mut ChaCha8Rng, halfwidth: f64) -> f64 {
    if halfwidth > 0.0 {
        rng.random_range(-halfwidth..=halfwidth)
    } else {
        0.0
    }
}

pub fn gen_tv(params: &TvParams) -> Result<Vec<Trajectory>> {
    params.validate()?;
    let n = (params.duration / params.dt).round() as usize + 1;
    let c = &params.coeffs;
    let trajectories = (0..params.trials)
        .map(|trial| {
            let mut rng = trial_rng(params.seed, trial);
            let timestamps: Vec<f64> = (0..n).map(|j| j as f64 * params.dt).collect();
            let positions = timestamps
                .iter()
                .map(|&t| {
                    // one draw per timestamp, shared by the three axes
                    let tau = t + uniform(&mut rng, params.noise_halfwidth);
                    [
                        c[0] * tau * tau + c[1] * tau,
                        c[2] * tau * tau + c[3] * tau,
                        c[4] * tau * tau + c[5] * tau,
                    ]
                })
                .collect();
            Trajectory {
                timestamps,
                positions,
                action_label: params.action_label,
                truncated: false,
            }
        })
        .collect();
    Ok(trajectories)
}

pub fn gen_ti(params: &TiParams) -> Result<Vec<Trajectory>> {
    params.validate()?;
    let c = &params.coeffs;
    let trajectories = (0..params.trials)
        .map(|trial| {
            let mut rng = trial_rng(params.seed, trial);
            let mut p = [0.0; 3];
            for v in &mut p {
                *v = if params.init_high > params.init_low {
                    rng.random_range(params.init_low..=params.init_high)
                } else {
                    params.init_low
                };
            }
            let mut positions = Vec::with_capacity(params.steps + 1);
            let mut truncated = false;
            positions.push(p);
            for _ in 0..params.steps {
                let shared = if params.shared_noise {
                    uniform(&mut rng, params.noise_halfwidth)
                } else {
                    0.0
                };
                let mut next = [0.0; 3];
                for axis in 0..3 {
                    let w = if params.shared_noise {
                        shared
                    } else {
                        uniform(&mut rng, params.noise_halfwidth)
                    };
                    let x = p[axis];
                    next[axis] = c[2 * axis] * x * x + c[2 * axis + 1] * x + w;
                }
                if next
                    .iter()
                    .any(|v| !v.is_finite() || v.abs() > params.divergence_bound)
                {
                    truncated = true;
                    break;
                }
                positions.push(next);
                p = next;
            }
            let timestamps = (0..positions.len()).map(|j| j as f64 * params.dt).collect();
            Trajectory {
                timestamps,
                positions,
                action_label: params.action_label,
                truncated,
            }
        })
        .collect();
    Ok(trajectories)
}

/// Two-tap low-pass filter `0.6 p(k-1) + 0.4 p(k)` on raw measurements.
pub fn smooth(traj: &Trajectory) -> Trajectory {
    let raw = &traj.positions;
    let positions = raw
        .iter()
        .enumerate()
        .map(|(k, p)| {
            if k == 0 {
                *p
            } else {
                let q = &raw[k - 1];
                [
                    0.6 * q[0] + 0.4 * p[0],
                    0.6 * q[1] + 0.4 * p[1],
                    0.6 * q[2] + 0.4 * p[2],
                ]
            }
        })
        .collect();
    Trajectory {
        positions,
        ..traj.clone()
    }
}

/// One supervised pair. `input` is `[p(k), p(k-1), ..., p(k-N+1), (a), 1]`,
/// `target` is `[p(k+1), ..., p(k+M)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub k: usize,
}

impl Sample {
    /// Wrap a raw network input, appending the constant 1.
    pub fn from_network_input(mut input: Vec<f64>, target: Vec<f64>, k: usize) -> Self {
        input.push(1.0);
        Self { input, target, k }
    }

    /// The input without its trailing constant; what the network consumes.
    pub fn network_input(&self) -> &[f64] {
        &self.input[..self.input.len() - 1]
    }
}

/// Stack the past `history` positions (most recent first) plus the optional label.
pub fn stack_history<'a>(
    recent_first: impl Iterator<Item = &'a [f64; 3]>,
    action: Option<i64>,
) -> Vec<f64> {
    let mut v: Vec<f64> = recent_first.flat_map(|p| p.iter().copied()).collect();
    if let Some(a) = action {
        v.push(a as f64);
    }
    v
}

/// Window a trajectory into samples. Returns an empty list when it is shorter than `N + M`.
pub fn make_samples(traj: &Trajectory, n: usize, m: usize, include_action: bool) -> Vec<Sample> {
    let p = &traj.positions;
    if n == 0 || m == 0 || p.len() < n + m {
        return Vec::new();
    }
    let action = include_action.then_some(traj.action_label);
    (n - 1..p.len() - m)
        .map(|k| {
            let input = stack_history(p[k + 1 - n..=k].iter().rev(), action);
            let target = p[k + 1..=k + m]
                .iter()
                .flat_map(|q| q.iter().copied())
                .collect();
            Sample::from_network_input(input, target, k)
        })
        .collect()
}
