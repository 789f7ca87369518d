//! Multi-method comparison on trajectory datasets.
//!
//! Each dataset is a list of motion classes, each a list of trials. The first
//! `train_fraction` of every class trains the offline network; the remaining
//! trials are concatenated class by class into one validation stream. By
//! default every method adapts continuously across that stream (trial starts
//! only reset the position window); with `independent_trials` each trial
//! instead starts over from the offline network.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::baseline::{tune_identifier, IdentifierConfig};
use crate::datagen::{
    gen_ti, gen_tv, make_samples, smooth, Sample, TiParams, Trajectory, TvParams,
};
use crate::error::{Error, Result};
use crate::io::{measurements, read_trajectory_file};
use crate::mlp::{init_mlp, train, MlpConfig, MlpModel, TrainHyperparams};
use crate::pipeline::{Method, Pipeline, PipelineConfig, StepResult};
use crate::rls::RlsConfig;
use crate::uncertainty::UncertaintyConfig;

/// Where trajectories come from. One inner list per motion class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Tv {
        classes: Vec<TvParams>,
    },
    Ti {
        classes: Vec<TiParams>,
    },
    Csv {
        classes: Vec<Vec<PathBuf>>,
        /// Multiply native units by this to get centimeters.
        unit_to_cm: f64,
    },
}

impl DatasetSpec {
    /// Both time-varying motion classes, 50 trials each.
    pub fn tv_standard(seed: u64) -> Self {
        DatasetSpec::Tv {
            classes: (0..2)
                .map(|c| TvParams::motion(c, seed + 1000 * c as u64))
                .collect(),
        }
    }

    /// Both time-invariant motion classes, 50 trials each.
    pub fn ti_standard(seed: u64) -> Self {
        DatasetSpec::Ti {
            classes: (0..2)
                .map(|c| TiParams::motion(c, seed + 1000 * c as u64))
                .collect(),
        }
    }

    /// TV trajectories are in meters, TI in decimeters.
    pub fn unit_to_cm(&self) -> f64 {
        match self {
            DatasetSpec::Tv { .. } => 100.0,
            DatasetSpec::Ti { .. } => 10.0,
            DatasetSpec::Csv { unit_to_cm, .. } => *unit_to_cm,
        }
    }

    /// Load every class; generator seeds are shifted by `seed_shift`.
    pub fn load(&self, seed_shift: u64) -> Result<Vec<Vec<Trajectory>>> {
        match self {
            DatasetSpec::Tv { classes } => classes
                .iter()
                .map(|p| {
                    gen_tv(&TvParams {
                        seed: p.seed.wrapping_add(seed_shift),
                        ..p.clone()
                    })
                })
                .collect(),
            DatasetSpec::Ti { classes } => classes
                .iter()
                .map(|p| {
                    gen_ti(&TiParams {
                        seed: p.seed.wrapping_add(seed_shift),
                        ..p.clone()
                    })
                })
                .collect(),
            DatasetSpec::Csv { classes, .. } => classes
                .iter()
                .map(|paths| paths.iter().map(read_trajectory_file).collect())
                .collect(),
        }
    }
}

/// The four compared configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMethod {
    NnWithId,
    NnWithRlsPaa,
    NnWithoutId,
    NnWithoutRlsPaa,
}

impl EvalMethod {
    pub const ALL: [EvalMethod; 4] = [
        EvalMethod::NnWithId,
        EvalMethod::NnWithRlsPaa,
        EvalMethod::NnWithoutId,
        EvalMethod::NnWithoutRlsPaa,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EvalMethod::NnWithId => "NN w ID",
            EvalMethod::NnWithRlsPaa => "NN w RLS-PAA",
            EvalMethod::NnWithoutId => "NN w/o ID",
            EvalMethod::NnWithoutRlsPaa => "NN w/o RLS-PAA",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            EvalMethod::NnWithId => "nn-with-id",
            EvalMethod::NnWithRlsPaa => "nn-with-rls-paa",
            EvalMethod::NnWithoutId => "nn-without-id",
            EvalMethod::NnWithoutRlsPaa => "nn-without-rls-paa",
        }
    }

    pub fn pipeline_method(self) -> Method {
        match self {
            EvalMethod::NnWithId => Method::Identifier,
            EvalMethod::NnWithRlsPaa => Method::RlsPaa,
            EvalMethod::NnWithoutId | EvalMethod::NnWithoutRlsPaa => Method::None,
        }
    }

    /// Whether this method runs on the identifier's offline network.
    pub fn uses_identifier_network(self) -> bool {
        matches!(self, EvalMethod::NnWithId | EvalMethod::NnWithoutId)
    }

    /// Parse either the key or a short alias (`rls-paa`, `none`, `id`, `none-id`).
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nn-with-id" | "id" | "identifier" => Ok(EvalMethod::NnWithId),
            "nn-with-rls-paa" | "rls-paa" | "rls" => Ok(EvalMethod::NnWithRlsPaa),
            "nn-without-id" | "none-id" => Ok(EvalMethod::NnWithoutId),
            "nn-without-rls-paa" | "none" => Ok(EvalMethod::NnWithoutRlsPaa),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

impl fmt::Display for EvalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    pub train_fraction: f64,
    pub methods: Vec<EvalMethod>,
    /// Apply the two-tap low-pass filter to every trajectory before use.
    pub smoothing: bool,
    /// Restart adaptation from the offline network at every validation trial.
    pub independent_trials: bool,
    pub history: usize,
    pub horizon: usize,
    pub include_action: bool,
    pub hidden_dims: Vec<usize>,
    /// Hidden layout of the identifier's network; defaults to `hidden_dims`.
    pub identifier_hidden_dims: Option<Vec<usize>>,
    pub train: TrainHyperparams,
    pub rls: RlsConfig,
    pub uncertainty: UncertaintyConfig,
    pub identifier: IdentifierConfig,
    pub confidence: f64,
    pub seed: u64,
    pub repetitions: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "ti".into(),
            dataset: DatasetSpec::ti_standard(0),
            train_fraction: 0.8,
            methods: EvalMethod::ALL.to_vec(),
            smoothing: false,
            independent_trials: false,
            history: 3,
            horizon: 3,
            include_action: false,
            hidden_dims: vec![40],
            identifier_hidden_dims: None,
            train: TrainHyperparams::default(),
            rls: RlsConfig::default(),
            uncertainty: UncertaintyConfig::default(),
            identifier: IdentifierConfig {
                step_size: TUNED_IDENTIFIER_STEP,
                ..IdentifierConfig::default()
            },
            confidence: 0.95,
            seed: 0,
            repetitions: 1,
        }
    }
}

impl ExperimentConfig {
    /// Time-invariant comparison with default settings.
    pub fn ti(seed: u64) -> Self {
        Self {
            name: "ti".into(),
            dataset: DatasetSpec::ti_standard(seed),
            seed,
            ..Self::default()
        }
    }

    /// Time-varying comparison with default settings.
    pub fn tv(seed: u64) -> Self {
        Self {
            name: "tv".into(),
            dataset: DatasetSpec::tv_standard(seed),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must be in (0, 1)".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be >= 1".into()));
        }
        self.train.validate()?;
        self.pipeline_config(Method::None).validate()
    }

    fn pipeline_config(&self, method: Method) -> PipelineConfig {
        PipelineConfig {
            history: self.history,
            horizon: self.horizon,
            include_action: self.include_action,
            method,
            rls: self.rls,
            uncertainty: self.uncertainty.clone(),
            identifier: self.identifier,
            confidence: self.confidence,
        }
    }

    fn mlp_config(&self, hidden: &[usize], seed: u64) -> MlpConfig {
        MlpConfig {
            input_dim: 3 * self.history + usize::from(self.include_action),
            hidden_dims: hidden.to_vec(),
            output_dim: 3 * self.horizon,
            seed,
        }
    }
}

/// Squared-error statistics, indexed `[horizon step][axis]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseeSummary {
    pub samples: usize,
    pub per_axis_horizon: Vec<[f64; 3]>,
    pub pooled: f64,
    pub per_axis_horizon_cm2: Vec<[f64; 3]>,
    pub pooled_cm2: f64,
}

/// Mean squared error per axis and horizon step plus the pooled mean over
/// all coordinates; `unit_to_cm` converts native units for the cm² columns.
pub fn msee(
    predictions: &[DVector<f64>],
    truths: &[DVector<f64>],
    unit_to_cm: f64,
) -> Result<MseeSummary> {
    if predictions.len() != truths.len() {
        return Err(Error::dim("truths", predictions.len(), truths.len()));
    }
    if predictions.is_empty() {
        return Err(Error::Input("no predictions to score".into()));
    }
    let dim = predictions[0].len();
    if dim == 0 || !dim.is_multiple_of(3) {
        return Err(Error::Input(format!(
            "prediction length {dim} is not a multiple of 3"
        )));
    }
    let mut sums = vec![0.0; dim];
    for (p, t) in predictions.iter().zip(truths) {
        if p.len() != dim {
            return Err(Error::dim("prediction", dim, p.len()));
        }
        if t.len() != dim {
            return Err(Error::dim("truth", dim, t.len()));
        }
        for i in 0..dim {
            sums[i] += (p[i] - t[i]).powi(2);
        }
    }
    let n = predictions.len() as f64;
    let scale = unit_to_cm * unit_to_cm;
    let per: Vec<[f64; 3]> = sums
        .chunks(3)
        .map(|c| [c[0] / n, c[1] / n, c[2] / n])
        .collect();
    let pooled = sums.iter().sum::<f64>() / (n * dim as f64);
    Ok(MseeSummary {
        samples: predictions.len(),
        per_axis_horizon_cm2: per
            .iter()
            .map(|r| [r[0] * scale, r[1] * scale, r[2] * scale])
            .collect(),
        per_axis_horizon: per,
        pooled,
        pooled_cm2: pooled * scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub network: String,
    pub architecture: String,
    pub repetition: usize,
    pub samples: usize,
    pub first_epoch_loss: f64,
    pub final_epoch_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: EvalMethod,
    pub label: String,
    pub architecture: String,
    pub msee: MseeSummary,
    /// Pooled native-unit MSEE of each repetition.
    pub pooled_by_repetition: Vec<f64>,
    /// Fraction of predicted positions inside their ellipsoid.
    pub coverage: f64,
    pub adaptation_calls: usize,
    pub psd_clips: usize,
}

/// Wall-clock adaptation cost per sample. Not part of the serialized report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub method: EvalMethod,
    pub samples: usize,
    pub mean_ns: f64,
    pub median_ns: f64,
    pub p95_ns: f64,
    pub max_ns: f64,
    /// MSEE bookkeeping time per sample (RLS-PAA only).
    pub uncertainty_mean_ns: f64,
}

impl LatencyStats {
    fn from_samples(method: EvalMethod, adapt: &mut [u64], unc: &[u64]) -> Self {
        adapt.sort_unstable();
        let n = adapt.len();
        let pick = |q: f64| -> f64 {
            if n == 0 {
                0.0
            } else {
                adapt[((n - 1) as f64 * q).round() as usize] as f64
            }
        };
        let mean = |v: &[u64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64
            }
        };
        Self {
            method,
            samples: n,
            mean_ns: mean(adapt),
            median_ns: pick(0.5),
            p95_ns: pick(0.95),
            max_ns: pick(1.0),
            uncertainty_mean_ns: mean(unc),
        }
    }
}

/// One scored step of the validation stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub method: EvalMethod,
    pub repetition: usize,
    pub class: usize,
    pub trial: usize,
    pub k: usize,
    pub errors: Vec<f64>,
    pub inside: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub unit_to_cm: f64,
    pub horizon: usize,
    pub methods: Vec<MethodReport>,
    pub training: Vec<TrainingSummary>,
    /// Index into the scored step sequence of the first step of each class
    /// (first repetition).
    pub class_boundaries: Vec<usize>,
    /// Same, for each validation trial.
    pub trial_boundaries: Vec<usize>,
    #[serde(skip)]
    pub latency: Vec<LatencyStats>,
    #[serde(skip)]
    pub traces: Vec<TraceRow>,
}

impl EvalReport {
    pub fn method(&self, m: EvalMethod) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }

    pub fn latency(&self, m: EvalMethod) -> Option<&LatencyStats> {
        self.latency.iter().find(|r| r.method == m)
    }

    /// Deterministic JSON (timing and traces excluded).
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One row per (method, axis, horizon) plus one pooled row per method.
    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["method", "label", "axis", "horizon", "msee", "msee_cm2"])?;
        for m in &self.methods {
            for (h, (row, row_cm)) in m
                .msee
                .per_axis_horizon
                .iter()
                .zip(&m.msee.per_axis_horizon_cm2)
                .enumerate()
            {
                for (axis, name) in ["x", "y", "z"].iter().enumerate() {
                    w.write_record([
                        m.method.key().to_string(),
                        m.label.clone(),
                        name.to_string(),
                        format!("k+{}", h + 1),
                        row[axis].to_string(),
                        row_cm[axis].to_string(),
                    ])?;
                }
            }
            w.write_record([
                m.method.key().to_string(),
                m.label.clone(),
                "all".into(),
                "all".into(),
                m.msee.pooled.to_string(),
                m.msee.pooled_cm2.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-step squared errors, one row per (method, step, horizon).
    pub fn write_trace_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "method",
            "repetition",
            "class",
            "trial",
            "k",
            "horizon",
            "ex",
            "ey",
            "ez",
            "inside",
        ])?;
        for row in &self.traces {
            for (h, e) in row.errors.chunks(3).enumerate() {
                w.write_record([
                    row.method.key().to_string(),
                    row.repetition.to_string(),
                    row.class.to_string(),
                    row.trial.to_string(),
                    row.k.to_string(),
                    format!("k+{}", h + 1),
                    e[0].to_string(),
                    e[1].to_string(),
                    e[2].to_string(),
                    row.inside[h].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_timing_json<W: Write>(&self, mut writer: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut writer, &self.latency)?;
        writer.write_all(b"\n")?;
        Ok(())
    }
}

struct Split {
    train: Vec<Sample>,
    /// (class, trial index within class, trajectory)
    validation: Vec<(usize, usize, Trajectory)>,
}

fn split(cfg: &ExperimentConfig, classes: Vec<Vec<Trajectory>>) -> Split {
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (c, trials) in classes.into_iter().enumerate() {
        let n_train = ((trials.len() as f64) * cfg.train_fraction).round() as usize;
        for (i, traj) in trials.into_iter().enumerate() {
            let traj = if cfg.smoothing { smooth(&traj) } else { traj };
            if i < n_train {
                train.extend(make_samples(
                    &traj,
                    cfg.history,
                    cfg.horizon,
                    cfg.include_action,
                ));
            } else {
                validation.push((c, i, traj));
            }
        }
    }
    Split { train, validation }
}

fn architecture(cfg: &MlpConfig) -> String {
    let mut dims = vec![cfg.input_dim.to_string()];
    dims.extend(cfg.hidden_dims.iter().map(usize::to_string));
    dims.push(cfg.output_dim.to_string());
    format!("{} (init seed {})", dims.join("-"), cfg.seed)
}

fn train_network(
    cfg: &ExperimentConfig,
    samples: &[Sample],
    hidden: &[usize],
    seed: u64,
) -> Result<(MlpModel, Vec<f64>)> {
    let init = init_mlp(&cfg.mlp_config(hidden, seed))?;
    let hp = TrainHyperparams {
        seed,
        ..cfg.train.clone()
    };
    train(&init, samples, &hp)
}

struct MethodAccumulator {
    predictions: Vec<DVector<f64>>,
    truths: Vec<DVector<f64>>,
    inside: usize,
    positions: usize,
    adaptation_calls: usize,
    psd_clips: usize,
    pooled_by_repetition: Vec<f64>,
    adapt_ns: Vec<u64>,
    uncertainty_ns: Vec<u64>,
}

/// Run every configured method over every repetition.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let unit_to_cm = cfg.dataset.unit_to_cm();
    let mut accs: Vec<MethodAccumulator> = cfg
        .methods
        .iter()
        .map(|_| MethodAccumulator {
            predictions: Vec::new(),
            truths: Vec::new(),
            inside: 0,
            positions: 0,
            adaptation_calls: 0,
            psd_clips: 0,
            pooled_by_repetition: Vec::new(),
            adapt_ns: Vec::new(),
            uncertainty_ns: Vec::new(),
        })
        .collect();
    let mut training = Vec::new();
    let mut traces = Vec::new();
    let mut class_boundaries = Vec::new();
    let mut trial_boundaries = Vec::new();
    let mut architectures = [String::new(), String::new()];

    let id_hidden = cfg
        .identifier_hidden_dims
        .clone()
        .unwrap_or_else(|| cfg.hidden_dims.clone());
    let need_id = cfg.methods.iter().any(|m| m.uses_identifier_network());
    let need_rls = cfg.methods.iter().any(|m| !m.uses_identifier_network());

    for rep in 0..cfg.repetitions {
        let shift = 10_000 * rep as u64;
        let classes = cfg.dataset.load(shift)?;
        let data = split(cfg, classes);
        if data.train.is_empty() {
            return Err(Error::Input("no training samples after windowing".into()));
        }
        if data.validation.is_empty() {
            return Err(Error::Input("no validation trials".into()));
        }

        let mut networks: [Option<MlpModel>; 2] = [None, None];
        for (slot, (needed, hidden, seed, name)) in [
            (need_rls, &cfg.hidden_dims, cfg.seed + shift, "rls-paa"),
            (need_id, &id_hidden, cfg.seed + shift + 1, "identifier"),
        ]
        .into_iter()
        .enumerate()
        {
            if !needed {
                continue;
            }
            let (model, history) = train_network(cfg, &data.train, hidden, seed)?;
            architectures[slot] = architecture(model.config());
            training.push(TrainingSummary {
                network: name.into(),
                architecture: architectures[slot].clone(),
                repetition: rep,
                samples: data.train.len(),
                first_epoch_loss: history[0],
                final_epoch_loss: *history.last().expect("epochs >= 1"),
            });
            networks[slot] = Some(model);
        }

        for (mi, &method) in cfg.methods.iter().enumerate() {
            let slot = usize::from(method.uses_identifier_network());
            let model = networks[slot].as_ref().expect("network trained for method");
            let pcfg = cfg.pipeline_config(method.pipeline_method());
            let acc = &mut accs[mi];
            let (mut rep_sum, mut rep_count) = (0.0, 0usize);
            let mut step_index = 0usize;
            let mut last_class = None;
            let mut pipeline: Option<Pipeline> = None;
            for (class, trial, traj) in &data.validation {
                if rep == 0 && mi == 0 {
                    if last_class != Some(*class) {
                        class_boundaries.push(step_index);
                    }
                    trial_boundaries.push(step_index);
                }
                last_class = Some(*class);
                match &mut pipeline {
                    Some(p) if !cfg.independent_trials => p.begin_trial(),
                    _ => {
                        if let Some(p) = pipeline.take() {
                            tally(acc, &p);
                        }
                        pipeline = Some(Pipeline::new(model.clone(), pcfg.clone())?);
                    }
                }
                let pipeline = pipeline.as_mut().expect("pipeline just created");
                for m in measurements(traj) {
                    let Some(step) = pipeline.push(m)? else {
                        continue;
                    };
                    step_index += 1;
                    score_step(acc, &step, method);
                    rep_sum += step.apriori_error.norm_squared();
                    rep_count += step.apriori_error.len();
                    traces.push(TraceRow {
                        method,
                        repetition: rep,
                        class: *class,
                        trial: *trial,
                        k: step.k,
                        errors: step.apriori_error.as_slice().to_vec(),
                        inside: step.inside_flags(),
                    });
                }
            }
            if let Some(p) = pipeline {
                tally(acc, &p);
            }
            acc.pooled_by_repetition.push(if rep_count > 0 {
                rep_sum / rep_count as f64
            } else {
                0.0
            });
        }
    }

    let mut methods = Vec::new();
    let mut latency = Vec::new();
    for (acc, &method) in accs.iter_mut().zip(&cfg.methods) {
        let summary = msee(&acc.predictions, &acc.truths, unit_to_cm)?;
        methods.push(MethodReport {
            method,
            label: method.label().into(),
            architecture: architectures[usize::from(method.uses_identifier_network())].clone(),
            msee: summary,
            pooled_by_repetition: acc.pooled_by_repetition.clone(),
            coverage: if acc.positions > 0 {
                acc.inside as f64 / acc.positions as f64
            } else {
                0.0
            },
            adaptation_calls: acc.adaptation_calls,
            psd_clips: acc.psd_clips,
        });
        latency.push(LatencyStats::from_samples(
            method,
            &mut acc.adapt_ns,
            &acc.uncertainty_ns,
        ));
    }
    Ok(EvalReport {
        name: cfg.name.clone(),
        unit_to_cm,
        horizon: cfg.horizon,
        methods,
        training,
        class_boundaries,
        trial_boundaries,
        latency,
        traces,
    })
}

/// Identifier step size used by the comparison presets: the winner of
/// [`tune_identifier_held_out`] over [`IDENTIFIER_GRID`] on the default
/// time-invariant dataset, frozen for every dataset.
pub const TUNED_IDENTIFIER_STEP: f64 = 3e-3;

/// Generator seed shift reserved for the held-out tuning trial.
pub const HELD_OUT_SEED_SHIFT: u64 = 0x5EED_0000;

/// Step sizes searched by [`tune_identifier_held_out`].
pub const IDENTIFIER_GRID: [f64; 11] = [
    1e-6, 3e-6, 1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1,
];

/// Train the identifier's network on the training split, then pick the step
/// size with the lowest mean a-priori squared error over one trial per class,
/// generated with a seed outside every repetition and streamed class after
/// class. Only generator datasets qualify.
pub fn tune_identifier_held_out(
    cfg: &ExperimentConfig,
    grid: &[f64],
) -> Result<(IdentifierConfig, f64)> {
    cfg.validate()?;
    if matches!(cfg.dataset, DatasetSpec::Csv { .. }) {
        return Err(Error::Config(
            "held-out tuning needs a generator dataset".into(),
        ));
    }
    let data = split(cfg, cfg.dataset.load(0)?);
    let hidden = cfg
        .identifier_hidden_dims
        .clone()
        .unwrap_or_else(|| cfg.hidden_dims.clone());
    let (model, _) = train_network(cfg, &data.train, &hidden, cfg.seed + 1)?;
    let mut samples = Vec::new();
    for class in cfg.dataset.load(HELD_OUT_SEED_SHIFT)? {
        let traj = class
            .first()
            .ok_or_else(|| Error::Input("dataset class has no trials".into()))?;
        let traj = if cfg.smoothing {
            smooth(traj)
        } else {
            traj.clone()
        };
        samples.extend(make_samples(
            &traj,
            cfg.history,
            cfg.horizon,
            cfg.include_action,
        ));
    }
    let candidates: Vec<IdentifierConfig> = grid
        .iter()
        .map(|&step_size| IdentifierConfig {
            step_size,
            ..cfg.identifier
        })
        .collect();
    tune_identifier(&model, &samples, &candidates)
}

fn tally(acc: &mut MethodAccumulator, pipeline: &Pipeline) {
    acc.adaptation_calls += pipeline.counters().adaptations;
    acc.psd_clips += pipeline.uncertainty().psd_clips();
}

fn score_step(acc: &mut MethodAccumulator, step: &StepResult, method: EvalMethod) {
    acc.predictions.push(step.prediction.mean.clone());
    acc.truths.push(step.truth.clone());
    let flags = step.inside_flags();
    acc.inside += flags.iter().filter(|&&b| b).count();
    acc.positions += flags.len();
    if method.pipeline_method() != Method::None {
        acc.adapt_ns.push(step.diagnostics.adapt_nanos);
        if method.pipeline_method() == Method::RlsPaa {
            acc.uncertainty_ns.push(step.diagnostics.uncertainty_nanos);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn msee_by_hand() {
        let zero = vec![v(&[0.0; 9]); 2];
        let s = msee(&zero, &zero, 1.0).unwrap();
        assert_eq!(s.pooled, 0.0);

        let s = msee(&[v(&[1.0; 9])], &[v(&[0.0; 9])], 1.0).unwrap();
        assert_eq!(s.pooled_cm2, 1.0);

        let mut a = [0.0; 9];
        a[0] = 1.0;
        let mut b = [0.0; 9];
        b[1] = 1.0;
        let s = msee(&[v(&a), v(&b)], &[v(&[0.0; 9]), v(&[0.0; 9])], 1.0).unwrap();
        assert!((s.pooled - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(s.per_axis_horizon[0], [0.5, 0.5, 0.0]);
        assert_eq!(s.per_axis_horizon[2], [0.0; 3]);

        let dm = msee(&[v(&[1.0; 3])], &[v(&[0.0; 3])], 10.0).unwrap();
        assert_eq!(dm.pooled_cm2, 100.0);
    }

    #[test]
    fn msee_errors() {
        assert!(msee(&[v(&[0.0; 3])], &[], 1.0).is_err());
        assert!(msee(&[], &[], 1.0).is_err());
        assert!(msee(&[v(&[0.0; 4])], &[v(&[0.0; 4])], 1.0).is_err());
        assert!(msee(&[v(&[0.0; 3])], &[v(&[0.0; 6])], 1.0).is_err());
    }

    #[test]
    fn method_parsing() {
        for m in EvalMethod::ALL {
            assert_eq!(EvalMethod::parse(m.key()).unwrap(), m);
        }
        assert_eq!(
            EvalMethod::parse("none").unwrap(),
            EvalMethod::NnWithoutRlsPaa
        );
        assert!(EvalMethod::parse("bogus").is_err());
    }

    #[test]
    fn config_validation() {
        let cfg = ExperimentConfig {
            train_fraction: 1.0,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            methods: vec![],
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: ExperimentConfig = serde_json::from_str(
            r#"{"methods":["nn-with-rls-paa"],"dataset":{"kind":"tv","classes":[{}]}}"#,
        )
        .unwrap();
        assert_eq!(partial.methods, vec![EvalMethod::NnWithRlsPaa]);
        assert_eq!(partial.train.epochs, 100);
    }
}
