use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use semiadapt::datagen::{
    gen_ti, gen_tv, make_samples, smooth, TiParams, Trajectory, TvParams, TI_MOTIONS, TV_MOTIONS,
};
use semiadapt::eval::{
    run_experiment, tune_identifier_held_out, DatasetSpec, EvalMethod, ExperimentConfig,
    IDENTIFIER_GRID,
};
use semiadapt::io::{read_measurements, read_trajectory_file, write_trajectory_file};
use semiadapt::mlp::{init_mlp, train, MlpConfig, MlpModel, TrainHyperparams};
use semiadapt::pipeline::{Method, Pipeline, PipelineConfig};
use semiadapt::{Error, Result};

/// Semi-adaptable neural-network trajectory prediction.
#[derive(Parser)]
#[command(name = "semiadapt", version, about)]
struct Cli {
    /// Print progress and effective configuration to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate artificial trajectories (one CSV per trial plus manifest.json).
    Gen(GenArgs),
    /// Train the offline network on trajectory CSVs.
    Train(TrainArgs),
    /// Stream measurements through the online predictor (JSON lines out).
    Run(RunArgs),
    /// Compare adaptation methods; writes report.json and summary.csv.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum System {
    Tv,
    Ti,
}

#[derive(Args)]
struct GenArgs {
    system: System,
    /// Generator parameters as JSON (flags take precedence).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed; trial i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Uniform noise half-width (seconds for tv, position units for ti).
    #[arg(long, allow_negative_numbers = true)]
    noise: Option<f64>,
    /// Built-in motion class (0 or 1); sets coefficients and action label.
    #[arg(long)]
    motion: Option<usize>,
    /// Explicit coefficients a_x,b_x,a_y,b_y,a_z,b_z.
    #[arg(
        long,
        value_delimiter = ',',
        num_args = 6,
        allow_negative_numbers = true
    )]
    coeffs: Option<Vec<f64>>,
    /// Number of map iterations per trial (ti).
    #[arg(long)]
    steps: Option<usize>,
    /// Trial duration in seconds (tv).
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainConfig {
    history: usize,
    horizon: usize,
    include_action: bool,
    hidden_dims: Vec<usize>,
    smoothing: bool,
    train: TrainHyperparams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            history: 3,
            horizon: 3,
            include_action: false,
            hidden_dims: vec![40],
            smoothing: false,
            train: TrainHyperparams::default(),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Trajectory CSV files or directories containing them.
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Training configuration as JSON (flags take precedence).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model output path.
    #[arg(long, short)]
    out: PathBuf,
    /// Loss history CSV (default: <out>.loss.csv).
    #[arg(long)]
    loss_history: Option<PathBuf>,
    #[arg(long)]
    history: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    include_action: bool,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Low-pass filter every trajectory before windowing.
    #[arg(long)]
    smooth: bool,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    /// Trained model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Measurement stream: trajectory CSV or JSON lines; `-` for stdin.
    #[arg(long, default_value = "-")]
    input: String,
    /// StepResult JSON lines; `-` for stdout.
    #[arg(long, short, default_value = "-")]
    out: String,
    /// Pipeline configuration as JSON (flags take precedence).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the effective configuration here.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// rls-paa, identifier or none.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    history: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    include_action: bool,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    /// Initial gain scale.
    #[arg(long)]
    f_init: Option<f64>,
    /// Window of parameter increments averaged for the drift term.
    #[arg(long)]
    window: Option<usize>,
    /// Window of errors used for the noise variance.
    #[arg(long)]
    noise_window: Option<usize>,
    #[arg(long)]
    noise_prior: Option<f64>,
    /// Disable the drift term in the MSEE bookkeeping.
    #[arg(long)]
    no_drift: bool,
    #[arg(long)]
    confidence: Option<f64>,
    /// Identifier gradient step.
    #[arg(long)]
    id_step: Option<f64>,
    /// Identifier gradient steps per sample.
    #[arg(long)]
    id_steps: Option<usize>,
}

#[derive(Args)]
struct CompareArgs {
    /// Experiment configuration as JSON (flags take precedence).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in dataset preset used when no config is given.
    #[arg(long, value_enum, default_value = "ti")]
    dataset: System,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    /// Comma-separated subset, e.g. rls-paa,none.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Seed for networks and (for generator datasets) trajectories.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Trials per motion class (generator datasets).
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Restart adaptation at every validation trial.
    #[arg(long)]
    independent_trials: bool,
    #[arg(long)]
    smooth: bool,
    #[arg(long)]
    id_step: Option<f64>,
    /// Pick the identifier step on a held-out trial per class first.
    #[arg(long)]
    tune_identifier: bool,
    /// Also write the per-step trace.csv.
    #[arg(long)]
    trace: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verbose = cli.verbose;
    let outcome = match cli.command {
        Command::Gen(a) => cmd_gen(a, verbose),
        Command::Train(a) => cmd_train(a, verbose),
        Command::Run(a) => cmd_run(a, verbose),
        Command::Compare(a) => cmd_compare(a, verbose),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numerical(_) => 4,
        _ => 3,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn read_json_value(path: &Path) -> Result<Value> {
    read_json(path)
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn motion_coeffs(table: &[[f64; 6]; 2], motion: usize) -> Result<[f64; 6]> {
    table
        .get(motion)
        .copied()
        .ok_or_else(|| Error::Config(format!("motion must be 0 or 1, got {motion}")))
}

fn coeffs_array(v: &[f64]) -> [f64; 6] {
    let mut out = [0.0; 6];
    out.copy_from_slice(v);
    out
}

fn cmd_gen(a: GenArgs, verbose: bool) -> Result<()> {
    let (trajectories, params, base_seed) = match a.system {
        System::Tv => {
            let mut p: TvParams = match &a.config {
                Some(path) => read_json(path)?,
                None => TvParams::default(),
            };
            if let Some(m) = a.motion {
                p.coeffs = motion_coeffs(&TV_MOTIONS, m)?;
                p.action_label = m as i64;
            }
            if let Some(c) = &a.coeffs {
                p.coeffs = coeffs_array(c);
            }
            p.trials = a.trials.unwrap_or(p.trials);
            p.seed = a.seed.unwrap_or(p.seed);
            p.noise_halfwidth = a.noise.unwrap_or(p.noise_halfwidth);
            p.duration = a.duration.unwrap_or(p.duration);
            if a.steps.is_some() {
                return Err(Error::Config("--steps applies to ti only".into()));
            }
            p.validate()?;
            (gen_tv(&p)?, serde_json::to_value(&p)?, p.seed)
        }
        System::Ti => {
            let mut p: TiParams = match &a.config {
                Some(path) => read_json(path)?,
                None => TiParams::default(),
            };
            if let Some(m) = a.motion {
                p.coeffs = motion_coeffs(&TI_MOTIONS, m)?;
                p.action_label = m as i64;
            }
            if let Some(c) = &a.coeffs {
                p.coeffs = coeffs_array(c);
            }
            p.trials = a.trials.unwrap_or(p.trials);
            p.seed = a.seed.unwrap_or(p.seed);
            p.noise_halfwidth = a.noise.unwrap_or(p.noise_halfwidth);
            p.steps = a.steps.unwrap_or(p.steps);
            if a.duration.is_some() {
                return Err(Error::Config("--duration applies to tv only".into()));
            }
            p.validate()?;
            (gen_ti(&p)?, serde_json::to_value(&p)?, p.seed)
        }
    };
    fs::create_dir_all(&a.out)?;
    let mut files = Vec::new();
    for (i, traj) in trajectories.iter().enumerate() {
        let name = format!("trial_{i:03}.csv");
        write_trajectory_file(traj, a.out.join(&name))?;
        files.push(json!({
            "file": name,
            "seed": base_seed.wrapping_add(i as u64),
            "samples": traj.len(),
            "truncated": traj.truncated,
        }));
    }
    let manifest = json!({
        "generator": a.system,
        "params": params,
        "trials": files,
    });
    write_json(&a.out.join("manifest.json"), &manifest)?;
    if verbose {
        eprintln!("wrote {} trials to {}", trajectories.len(), a.out.display());
    }
    Ok(())
}

/// Expand directories into their sorted `*.csv` files.
fn collect_csv(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<io::Result<_>>()?;
            found.retain(|f| f.extension().is_some_and(|x| x == "csv"));
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(Error::Input("no trajectory CSV files found".into()));
    }
    Ok(out)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_train(a: TrainArgs, verbose: bool) -> Result<()> {
    let mut cfg: TrainConfig = match &a.config {
        Some(path) => read_json(path)?,
        None => TrainConfig::default(),
    };
    cfg.history = a.history.unwrap_or(cfg.history);
    cfg.horizon = a.horizon.unwrap_or(cfg.horizon);
    cfg.include_action |= a.include_action;
    cfg.smoothing |= a.smooth;
    if let Some(h) = a.hidden {
        cfg.hidden_dims = h;
    }
    cfg.train.learning_rate = a.lr.unwrap_or(cfg.train.learning_rate);
    cfg.train.epochs = a.epochs.unwrap_or(cfg.train.epochs);
    cfg.train.batch_size = a.batch_size.or(cfg.train.batch_size);
    cfg.train.seed = a.seed.unwrap_or(cfg.train.seed);
    cfg.train.validate()?;
    if cfg.history == 0 || cfg.horizon == 0 {
        return Err(Error::Config("history and horizon must be >= 1".into()));
    }

    let files = collect_csv(&a.data)?;
    let mut samples = Vec::new();
    for f in &files {
        let traj: Trajectory = read_trajectory_file(f)?;
        let traj = if cfg.smoothing { smooth(&traj) } else { traj };
        samples.extend(make_samples(
            &traj,
            cfg.history,
            cfg.horizon,
            cfg.include_action,
        ));
    }
    if samples.is_empty() {
        return Err(Error::Input(format!(
            "no samples: every trajectory is shorter than history + horizon = {}",
            cfg.history + cfg.horizon
        )));
    }
    let mlp = MlpConfig {
        input_dim: 3 * cfg.history + usize::from(cfg.include_action),
        hidden_dims: cfg.hidden_dims.clone(),
        output_dim: 3 * cfg.horizon,
        seed: cfg.train.seed,
    };
    let (model, history) = train(&init_mlp(&mlp)?, &samples, &cfg.train)?;
    model.save(&a.out)?;

    let loss_path = a
        .loss_history
        .clone()
        .unwrap_or_else(|| with_suffix(&a.out, ".loss.csv"));
    let mut w = csv::Writer::from_path(&loss_path)?;
    w.write_record(["epoch", "loss"])?;
    for (e, l) in history.iter().enumerate() {
        w.write_record([e.to_string(), l.to_string()])?;
    }
    w.flush()?;

    let manifest = json!({
        "config": cfg,
        "data": files,
        "samples": samples.len(),
        "model": a.out,
        "loss_history": loss_path,
        "first_epoch_loss": history.first(),
        "final_epoch_loss": history.last(),
    });
    write_json(&with_suffix(&a.out, ".manifest.json"), &manifest)?;
    if verbose {
        eprintln!(
            "trained on {} samples: loss {:.4e} -> {:.4e}",
            samples.len(),
            history[0],
            history[history.len() - 1]
        );
    }
    Ok(())
}

fn cmd_run(a: RunArgs, verbose: bool) -> Result<()> {
    let model = MlpModel::load(&a.model)?;
    let (mut cfg, json_keys): (PipelineConfig, Vec<String>) = match &a.config {
        Some(path) => {
            let v = read_json_value(path)?;
            let keys = v
                .as_object()
                .map(|o| o.keys().cloned().collect())
                .unwrap_or_default();
            let cfg = serde_json::from_value(v)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            (cfg, keys)
        }
        None => (PipelineConfig::default(), Vec::new()),
    };
    let has = |k: &str| json_keys.iter().any(|j| j == k);

    cfg.include_action |= a.include_action;
    // Window sizes follow the model unless given explicitly.
    let action = usize::from(cfg.include_action);
    if !has("history") {
        cfg.history = model.input_dim().saturating_sub(action) / 3;
    }
    if !has("horizon") {
        cfg.horizon = model.output_dim() / 3;
    }
    cfg.history = a.history.unwrap_or(cfg.history);
    cfg.horizon = a.horizon.unwrap_or(cfg.horizon);
    if let Some(m) = &a.method {
        cfg.method = m.parse::<Method>()?;
    }
    cfg.rls.lambda1 = a.lambda1.unwrap_or(cfg.rls.lambda1);
    cfg.rls.lambda2 = a.lambda2.unwrap_or(cfg.rls.lambda2);
    cfg.rls.f_init_scale = a.f_init.unwrap_or(cfg.rls.f_init_scale);
    cfg.uncertainty.window_size = a.window.unwrap_or(cfg.uncertainty.window_size);
    cfg.uncertainty.noise_window = a.noise_window.unwrap_or(cfg.uncertainty.noise_window);
    cfg.uncertainty.noise_prior = a.noise_prior.unwrap_or(cfg.uncertainty.noise_prior);
    if a.no_drift {
        cfg.uncertainty.drift_compensation = false;
    }
    cfg.confidence = a.confidence.unwrap_or(cfg.confidence);
    cfg.identifier.step_size = a.id_step.unwrap_or(cfg.identifier.step_size);
    cfg.identifier.steps_per_sample = a.id_steps.unwrap_or(cfg.identifier.steps_per_sample);
    cfg.validate()?;
    cfg.check_model(&model)?;

    let effective = json!({ "model": a.model, "input": a.input, "pipeline": cfg });
    if verbose {
        eprintln!("{}", serde_json::to_string(&effective)?);
    }
    if let Some(path) = &a.manifest {
        write_json(path, &effective)?;
    }

    let input: Box<dyn BufRead> = if a.input == "-" {
        Box::new(BufReader::new(io::stdin().lock()))
    } else {
        Box::new(BufReader::new(File::open(&a.input)?))
    };
    let stream = read_measurements(input)?;
    let mut out: Box<dyn Write> = if a.out == "-" {
        Box::new(BufWriter::new(io::stdout().lock()))
    } else {
        Box::new(BufWriter::new(File::create(&a.out)?))
    };
    let mut pipeline = Pipeline::new(model, cfg)?;
    for m in stream {
        if let Some(step) = pipeline.push(m)? {
            serde_json::to_writer(&mut out, &step.to_json())?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    if verbose {
        let c = pipeline.counters();
        eprintln!(
            "measurements {} rejected {} predictions {} adaptations {} emitted {}",
            c.measurements, c.rejected, c.predictions, c.adaptations, c.emitted
        );
    }
    Ok(())
}

fn reseed(dataset: &mut DatasetSpec, seed: u64) {
    match dataset {
        DatasetSpec::Tv { classes } => {
            for (c, p) in classes.iter_mut().enumerate() {
                p.seed = seed + 1000 * c as u64;
            }
        }
        DatasetSpec::Ti { classes } => {
            for (c, p) in classes.iter_mut().enumerate() {
                p.seed = seed + 1000 * c as u64;
            }
        }
        DatasetSpec::Csv { .. } => {}
    }
}

fn set_trials(dataset: &mut DatasetSpec, trials: usize) -> Result<()> {
    match dataset {
        DatasetSpec::Tv { classes } => classes.iter_mut().for_each(|p| p.trials = trials),
        DatasetSpec::Ti { classes } => classes.iter_mut().for_each(|p| p.trials = trials),
        DatasetSpec::Csv { .. } => {
            return Err(Error::Config("--trials needs a generator dataset".into()))
        }
    }
    Ok(())
}

fn cmd_compare(a: CompareArgs, verbose: bool) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => read_json(path)?,
        None => match a.dataset {
            System::Ti => ExperimentConfig::ti(0),
            System::Tv => ExperimentConfig::tv(0),
        },
    };
    if let Some(list) = &a.methods {
        cfg.methods = list
            .iter()
            .map(|m| EvalMethod::parse(m))
            .collect::<Result<_>>()?;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
        reseed(&mut cfg.dataset, seed);
    }
    if let Some(t) = a.trials {
        set_trials(&mut cfg.dataset, t)?;
    }
    cfg.repetitions = a.repetitions.unwrap_or(cfg.repetitions);
    cfg.train.epochs = a.epochs.unwrap_or(cfg.train.epochs);
    cfg.independent_trials |= a.independent_trials;
    cfg.smoothing |= a.smooth;
    cfg.identifier.step_size = a.id_step.unwrap_or(cfg.identifier.step_size);
    cfg.validate()?;

    let mut tuning = Value::Null;
    if a.tune_identifier {
        let (best, score) = tune_identifier_held_out(&cfg, &IDENTIFIER_GRID)?;
        cfg.identifier = best;
        tuning = json!({ "grid": IDENTIFIER_GRID, "step_size": best.step_size, "score": score });
    }

    let report = run_experiment(&cfg)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("report.json"), report.to_json()?)?;
    report.write_summary_csv(File::create(a.out.join("summary.csv"))?)?;
    report.write_timing_json(File::create(a.out.join("timing.json"))?)?;
    if a.trace {
        report.write_trace_csv(BufWriter::new(File::create(a.out.join("trace.csv"))?))?;
    }
    write_json(
        &a.out.join("manifest.json"),
        &json!({ "config": cfg, "identifier_tuning": tuning }),
    )?;

    println!(
        "{:<16} {:>14} {:>14} {:>9}",
        "method", "MSEE", "MSEE cm^2", "coverage"
    );
    for m in &report.methods {
        println!(
            "{:<16} {:>14.6} {:>14.4} {:>9.3}",
            m.label, m.msee.pooled, m.msee.pooled_cm2, m.coverage
        );
    }
    if verbose {
        for l in report.latency.iter().filter(|l| l.samples > 0) {
            eprintln!(
                "{}: adaptation mean {:.0} ns, median {:.0} ns",
                l.method.label(),
                l.mean_ns,
                l.median_ns
            );
        }
    }
    Ok(())
}
