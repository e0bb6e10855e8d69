use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tvem::annealing::{linear_annealing, Schedule};
use tvem::em::{EmRunner, DEFAULT_SHARDS};
use tvem::io::manifest::{file_sha256, AnnealingInfo, DataInfo, FileInfo, Outcome, RunManifest, TrainingInfo};
use tvem::io::run_dir::FREE_ENERGY_FILE;
use tvem::io::{
    generate_bars, load_dataset, save_array, BarsConfig, BarsMode, ModelKind, ModelSpec, ModelVisitor, RunDir,
    RunDirLogger,
};
use tvem::parallel::available_workers;
use tvem::rng::RNG_ALGORITHM;
use tvem::{DataSet, DenseMatrix, Error, ErrorClass, Executor, Model, Result, RngStream};

#[derive(Parser)]
#[command(name = "tvem", version, about = "Truncated variational EM for sparse coding and mixture models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write a run directory.
    Train(TrainArgs),
    /// MAP latent states of data under a trained run.
    Infer(InferArgs),
    /// Sample data from a trained run.
    Generate(GenerateArgs),
    /// Write a synthetic bars dataset.
    Bars(BarsArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    model: ModelKind,
    #[arg(long)]
    data: PathBuf,
    /// Number of latent units or mixture components.
    #[arg(long)]
    latents: usize,
    #[arg(long)]
    hprime: Option<usize>,
    #[arg(long)]
    gamma: Option<usize>,
    #[arg(long)]
    iterations: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// DSC alphabet, comma separated and including 0.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    values: Option<Vec<f64>>,
    /// DSC: tie the probabilities of `v` and `-v`.
    #[arg(long)]
    symmetric: bool,
    #[arg(long, default_value_t = 1.0)]
    temp_max: f64,
    /// Budget fraction at which the temperature reaches 1.
    #[arg(long, default_value_t = 0.5)]
    temp_frac: f64,
    /// Initial dictionary noise, relative to column RMS.
    #[arg(long, default_value_t = 0.0)]
    w_noise: f64,
    /// Budget fraction at which the noise reaches 0.
    #[arg(long, default_value_t = 1.0)]
    w_noise_end_frac: f64,
    #[arg(long)]
    workers: Option<usize>,
    /// Row shards per E-step; results depend on this, not on --workers.
    #[arg(long, default_value_t = DEFAULT_SHARDS)]
    shards: usize,
    /// Stop early once relative free-energy change falls below this.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output prefix; writes PREFIX.s and PREFIX.p.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the sampled latents.
    #[arg(long)]
    latents_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Linear,
    Max,
}

#[derive(Args)]
struct BarsArgs {
    /// Grid side length R; the dictionary has 2R bars.
    #[arg(long)]
    size: usize,
    #[arg(long)]
    n: usize,
    /// Bar activation probability [default: 2/H].
    #[arg(long)]
    prob: Option<f64>,
    #[arg(long, default_value_t = tvem::io::bars::DEFAULT_AMPLITUDE, allow_negative_numbers = true)]
    amplitude: f64,
    #[arg(long, default_value_t = tvem::io::bars::DEFAULT_NOISE)]
    noise: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Linear)]
    mode: ModeArg,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the D x H ground-truth dictionary.
    #[arg(long)]
    truth: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Generate(a) => generate(a),
        Command::Bars(a) => bars(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numerical => 4,
            })
        }
    }
}

fn executor(workers: Option<usize>) -> Result<Executor> {
    Executor::new(workers.unwrap_or_else(available_workers))
}

fn ramp(start: f64, frac: f64, end: f64, name: &str) -> Result<Schedule> {
    if !(0.0..=1.0).contains(&frac) {
        return Err(Error::config(format!("--{name} must lie in [0, 1], got {frac}")));
    }
    if frac == 0.0 || start == end {
        Schedule::new(vec![(0.0, end)])
    } else {
        Schedule::new(vec![(0.0, start), (frac, end)])
    }
}

fn train_spec(a: &TrainArgs) -> Result<ModelSpec> {
    let mut spec = ModelSpec::new(a.model, a.latents);
    if a.model.is_truncated() {
        spec.hprime = a.hprime;
        spec.gamma = a.gamma;
    } else if a.hprime.is_some() || a.gamma.is_some() {
        log::warn!("--hprime and --gamma are ignored for model {}", a.model);
    }
    if let Some(v) = &a.values {
        spec = spec.with_values(v.clone(), a.symmetric);
    } else if a.symmetric {
        return Err(Error::config("--symmetric needs --values"));
    }
    spec.validate()?;
    Ok(spec)
}

fn train(a: TrainArgs) -> Result<()> {
    let spec = train_spec(&a)?;
    if a.temp_max < 1.0 || !a.temp_max.is_finite() {
        return Err(Error::config("--temp-max must be finite and at least 1"));
    }
    if a.w_noise < 0.0 || !a.w_noise.is_finite() {
        return Err(Error::config("--w-noise must be finite and non-negative"));
    }
    if a.shards == 0 {
        return Err(Error::config("--shards must be positive"));
    }
    if a.tol.is_some_and(|t| t.is_nan() || t < 0.0) {
        return Err(Error::config("--tol must be non-negative"));
    }
    let annealing = AnnealingInfo {
        temperature: ramp(a.temp_max, a.temp_frac, 1.0, "temp-frac")?,
        w_noise: ramp(a.w_noise, a.w_noise_end_frac, 0.0, "w-noise-end-frac")?,
        rho: None,
    };
    let exec = executor(a.workers)?;
    linear_annealing(a.iterations, None, None)?;

    let data = load_dataset(&a.data)?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        rng: RNG_ALGORITHM.into(),
        model: spec.clone(),
        data: DataInfo {
            path: a.data.display().to_string(),
            sha256: file_sha256(&a.data)?,
            n: data.n(),
            dim: data.dim(),
        },
        training: TrainingInfo {
            iterations: a.iterations,
            seed: a.seed,
            workers: exec.workers(),
            shards: a.shards,
            tol: a.tol,
            init: String::new(),
        },
        annealing,
        files: FileInfo {
            free_energy: FREE_ENERGY_FILE.into(),
            ..Default::default()
        },
        outcome: None,
    };
    let dir = RunDir::create(&a.out)?;
    let runner = EmRunner::new(exec, a.seed)
        .with_shards(a.shards)
        .with_convergence_tol(a.tol);
    spec.build(TrainJob {
        runner: &runner,
        data: &data,
        dir: &dir,
        manifest,
    })?
}

struct TrainJob<'a> {
    runner: &'a EmRunner,
    data: &'a DataSet,
    dir: &'a RunDir,
    manifest: RunManifest,
}

impl ModelVisitor for TrainJob<'_> {
    type Output = Result<()>;

    fn visit<M: Model>(self, model: M) -> Result<()> {
        let TrainJob {
            runner,
            data,
            dir,
            mut manifest,
        } = self;
        let init = model.standard_init(data, &mut RngStream::new(manifest.training.seed))?;
        model.check_data(&init, data)?;
        manifest.training.init = model.init_description();
        manifest.files.init = dir.save_params("init", &model.params_to_arrays(&init))?;
        manifest.save(dir.path())?;

        let mut schedule = manifest.annealing.schedule(manifest.training.iterations)?;
        let mut logger = RunDirLogger::new(&model, dir)?;
        let res = runner.run(&model, init, data, &mut schedule, &mut logger)?;
        manifest.files.checkpoint = logger.checkpoint_files().clone();
        manifest.files.final_params = dir.save_params("final", &model.params_to_arrays(&res.final_params))?;
        let final_free_energy = res.free_energy_trace.last().copied().unwrap_or(f64::NAN);
        manifest.outcome = Some(Outcome {
            iterations_run: res.iterations_run,
            stopped_early: res.stopped_early,
            final_free_energy,
        });
        manifest.save(dir.path())?;
        log::info!("{} iterations, final free energy {final_free_energy}", res.iterations_run);
        Ok(())
    }
}

fn load_run(path: &Path) -> Result<(RunDir, RunManifest)> {
    let dir = RunDir::open(path)?;
    let manifest = RunManifest::load(path)?;
    if manifest.files.final_params.is_empty() {
        return Err(Error::data(format!("run {} has no final parameters", path.display())));
    }
    Ok((dir, manifest))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn infer(a: InferArgs) -> Result<()> {
    let exec = executor(a.workers)?;
    let (dir, manifest) = load_run(&a.run)?;
    let data = load_dataset(&a.data)?;
    if data.dim() != manifest.data.dim {
        return Err(Error::data(format!(
            "data has D={} but run {} was trained with D={}",
            data.dim(),
            a.run.display(),
            manifest.data.dim
        )));
    }
    let runner = EmRunner::new(exec, manifest.training.seed).with_shards(manifest.training.shards);
    manifest.model.build(InferJob {
        runner: &runner,
        dir: &dir,
        manifest: &manifest,
        data: &data,
        out: &a.out,
    })?
}

struct InferJob<'a> {
    runner: &'a EmRunner,
    dir: &'a RunDir,
    manifest: &'a RunManifest,
    data: &'a DataSet,
    out: &'a Path,
}

impl ModelVisitor for InferJob<'_> {
    type Output = Result<()>;

    fn visit<M: Model>(self, model: M) -> Result<()> {
        let params = model.params_from_arrays(&self.dir.load_params(&self.manifest.files.final_params)?)?;
        let res = self.runner.inference(&model, &params, self.data)?;
        save_array(&with_suffix(self.out, ".s"), &res.s)?;
        save_array(&with_suffix(self.out, ".p"), &DenseMatrix::column_vector(&res.p))
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let (dir, manifest) = load_run(&a.run)?;
    manifest.model.build(GenerateJob {
        dir: &dir,
        manifest: &manifest,
        args: &a,
    })?
}

struct GenerateJob<'a> {
    dir: &'a RunDir,
    manifest: &'a RunManifest,
    args: &'a GenerateArgs,
}

impl ModelVisitor for GenerateJob<'_> {
    type Output = Result<()>;

    fn visit<M: Model>(self, model: M) -> Result<()> {
        let params = model.params_from_arrays(&self.dir.load_params(&self.manifest.files.final_params)?)?;
        let sample = model.generate(&params, self.args.n, &mut RngStream::new(self.args.seed))?;
        save_array(&self.args.out, sample.data.y())?;
        if let Some(p) = &self.args.latents_out {
            save_array(p, &sample.latents)?;
        }
        Ok(())
    }
}

fn bars(a: BarsArgs) -> Result<()> {
    let mode = match a.mode {
        ModeArg::Linear => BarsMode::Linear,
        ModeArg::Max => BarsMode::Max,
    };
    let config = BarsConfig {
        size: a.size,
        n: a.n,
        prob: a.prob,
        amplitude: a.amplitude,
        noise: a.noise,
        mode,
    };
    let b = generate_bars(&config, &mut RngStream::new(a.seed))?;
    save_array(&a.out, b.data.y())?;
    if let Some(p) = &a.truth {
        save_array(p, &b.truth)?;
    }
    Ok(())
}
