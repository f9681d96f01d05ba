//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for configuration/input errors, 3 for
//! numerical failures.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cbpdn::CbpdnConfig;
use crate::error::{Error, Result};
use crate::io::{self, Manifest};
use crate::learner::{FistaConfig, ForgettingSchedule, StepPolicy};
use crate::pipeline::{
    default_schedule, evaluate_dictionary, online_train, preprocess, Preprocess, RegionStrategy,
    SampleMode, TrainConfig,
};
use crate::synthetic::{generator_dictionary, synthetic_image, SyntheticSpec};
use crate::transforms::Signal;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "OCDL_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "ocdl",
    version,
    about = "Online convolutional dictionary learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a dictionary from a directory of PGM images.
    Train(TrainArgs),
    /// Print the summed test functional of a dictionary.
    Eval(EvalArgs),
    /// Write synthetic PGM images generated from random filters.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PreprocessArg {
    Mean,
    None,
}

impl From<PreprocessArg> for Preprocess {
    fn from(p: PreprocessArg) -> Self {
        match p {
            PreprocessArg::Mean => Preprocess::MeanSubtract,
            PreprocessArg::None => Preprocess::None,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Re-run exactly the configuration recorded in a manifest.
    #[arg(long, conflicts_with_all = ["train_dir", "test_dir", "steps"])]
    pub from_manifest: Option<PathBuf>,
    #[arg(long, required_unless_present = "from_manifest")]
    pub train_dir: Option<PathBuf>,
    #[arg(long)]
    pub test_dir: Option<PathBuf>,
    #[arg(long = "filters", default_value_t = 32)]
    pub filters: usize,
    #[arg(long, default_value_t = 8)]
    pub filter_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    /// Forgetting exponent; `inf` keeps only the current sample. Defaults to
    /// 5, or 40 with --regions.
    #[arg(long)]
    pub p: Option<String>,
    /// Train on SIZE x SIZE regions instead of whole images.
    #[arg(long)]
    pub regions: Option<usize>,
    /// Draw this many random regions per image instead of the full grid.
    #[arg(long, requires = "regions")]
    pub region_count: Option<usize>,
    #[arg(long, required_unless_present = "from_manifest")]
    pub steps: Option<u64>,
    #[arg(long, default_value_t = 5)]
    pub eval_every: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = PreprocessArg::Mean)]
    pub preprocess: PreprocessArg,
    #[arg(long, default_value_t = 200)]
    pub cbpdn_max_iter: usize,
    #[arg(long, default_value_t = 50)]
    pub fista_max_iter: usize,
    #[arg(long)]
    pub dict_out: PathBuf,
    #[arg(long)]
    pub log_out: PathBuf,
    /// Defaults to the dictionary path with a `.manifest` extension.
    #[arg(long)]
    pub manifest_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dict: PathBuf,
    #[arg(long)]
    pub test_dir: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value_t = PreprocessArg::Mean)]
    pub preprocess: PreprocessArg,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long = "filters", default_value_t = 4)]
    pub filters: usize,
    #[arg(long, default_value_t = 5)]
    pub filter_size: usize,
    #[arg(long, default_value_t = 0.02)]
    pub density: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Seed of the generator filters.
    #[arg(long, default_value_t = 0)]
    pub filter_seed: u64,
    /// Seed of the sparse codes and noise.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// A fully resolved training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunPlan {
    pub config: TrainConfig,
    pub train_dir: PathBuf,
    pub test_dir: Option<PathBuf>,
}

impl TrainArgs {
    pub fn manifest_path(&self) -> PathBuf {
        self.manifest_out
            .clone()
            .unwrap_or_else(|| self.dict_out.with_extension("manifest"))
    }

    pub fn resolve(&self) -> Result<RunPlan> {
        if let Some(path) = &self.from_manifest {
            return plan_from_manifest(&Manifest::load(path)?);
        }
        let sample_mode = match self.regions {
            None => SampleMode::WholeImage,
            Some(size) => SampleMode::Regions {
                size: (size, size),
                strategy: match self.region_count {
                    None => RegionStrategy::Grid,
                    Some(count) => RegionStrategy::UniformRandom { count },
                },
            },
        };
        let schedule = match &self.p {
            Some(p) => p.parse()?,
            None => default_schedule(&sample_mode),
        };
        let mut cbpdn = CbpdnConfig::new(self.lambda);
        cbpdn.max_iter = self.cbpdn_max_iter;
        let fista = FistaConfig {
            max_iter: self.fista_max_iter,
            ..FistaConfig::default()
        };
        let config = TrainConfig {
            total_steps: self.steps.expect("clap enforces --steps"),
            filters: self.filters,
            filter_size: (self.filter_size, self.filter_size),
            schedule,
            cbpdn,
            fista,
            sample_mode,
            eval_every: self.eval_every,
            seed: self.seed,
            preprocess: self.preprocess.into(),
        };
        config.validate()?;
        Ok(RunPlan {
            config,
            train_dir: self.train_dir.clone().expect("clap enforces --train-dir"),
            test_dir: self.test_dir.clone(),
        })
    }
}

/// Serializes a run plan. Floats use their shortest exact representation.
pub fn plan_to_manifest(plan: &RunPlan) -> Manifest {
    let c = &plan.config;
    let mut m = Manifest::new();
    m.set("tool", "ocdl");
    m.set("tool_version", env!("CARGO_PKG_VERSION"));
    m.set("train_dir", plan.train_dir.display());
    m.set(
        "test_dir",
        plan.test_dir
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default(),
    );
    m.set("steps", c.total_steps);
    m.set("filters", c.filters);
    m.set("filter_height", c.filter_size.0);
    m.set("filter_width", c.filter_size.1);
    m.set("p", c.schedule);
    m.set("lambda", format!("{:?}", c.cbpdn.lambda));
    m.set("rho", format!("{:?}", c.cbpdn.rho));
    m.set("cbpdn_max_iter", c.cbpdn.max_iter);
    m.set("cbpdn_rel_tol", format!("{:?}", c.cbpdn.rel_tol));
    m.set("cbpdn_abs_tol", format!("{:?}", c.cbpdn.abs_tol));
    m.set("fista_max_iter", c.fista.max_iter);
    m.set("fista_rel_tol", format!("{:?}", c.fista.rel_tol));
    m.set(
        "fista_step",
        match c.fista.step {
            StepPolicy::AutoLipschitz => "auto".to_string(),
            StepPolicy::Fixed(eta) => format!("{eta:?}"),
        },
    );
    m.set("power_iters", c.fista.power_iters);
    match c.sample_mode {
        SampleMode::WholeImage => m.set("sample_mode", "whole"),
        SampleMode::Regions { size, strategy } => {
            m.set("sample_mode", "regions");
            m.set("region_height", size.0);
            m.set("region_width", size.1);
            match strategy {
                RegionStrategy::Grid => m.set("region_strategy", "grid"),
                RegionStrategy::UniformRandom { count } => {
                    m.set("region_strategy", format!("random:{count}"))
                }
            }
        }
    }
    m.set("eval_every", c.eval_every);
    m.set("seed", c.seed);
    m.set(
        "preprocess",
        match c.preprocess {
            Preprocess::MeanSubtract => "mean",
            Preprocess::None => "none",
        },
    );
    m
}

pub fn plan_from_manifest(m: &Manifest) -> Result<RunPlan> {
    fn get<'a>(m: &'a Manifest, key: &str) -> Result<&'a str> {
        m.get(key)
            .ok_or_else(|| Error::invalid(format!("manifest is missing {key:?}")))
    }
    fn num<T: std::str::FromStr>(m: &Manifest, key: &str) -> Result<T> {
        let v = get(m, key)?;
        v.parse()
            .map_err(|_| Error::invalid(format!("manifest {key}={v:?} is not a valid number")))
    }
    let sample_mode = match get(m, "sample_mode")? {
        "whole" => SampleMode::WholeImage,
        "regions" => {
            let size = (num(m, "region_height")?, num(m, "region_width")?);
            let strategy = match get(m, "region_strategy")? {
                "grid" => RegionStrategy::Grid,
                other => match other.strip_prefix("random:").map(str::parse) {
                    Some(Ok(count)) => RegionStrategy::UniformRandom { count },
                    _ => return Err(Error::invalid(format!("bad region_strategy {other:?}"))),
                },
            };
            SampleMode::Regions { size, strategy }
        }
        other => return Err(Error::invalid(format!("bad sample_mode {other:?}"))),
    };
    let step = match get(m, "fista_step")? {
        "auto" => StepPolicy::AutoLipschitz,
        _ => StepPolicy::Fixed(num(m, "fista_step")?),
    };
    let preprocess = match get(m, "preprocess")? {
        "mean" => Preprocess::MeanSubtract,
        "none" => Preprocess::None,
        other => return Err(Error::invalid(format!("bad preprocess {other:?}"))),
    };
    let config = TrainConfig {
        total_steps: num(m, "steps")?,
        filters: num(m, "filters")?,
        filter_size: (num(m, "filter_height")?, num(m, "filter_width")?),
        schedule: get(m, "p")?.parse::<ForgettingSchedule>()?,
        cbpdn: CbpdnConfig {
            lambda: num(m, "lambda")?,
            rho: num(m, "rho")?,
            max_iter: num(m, "cbpdn_max_iter")?,
            rel_tol: num(m, "cbpdn_rel_tol")?,
            abs_tol: num(m, "cbpdn_abs_tol")?,
        },
        fista: FistaConfig {
            max_iter: num(m, "fista_max_iter")?,
            rel_tol: num(m, "fista_rel_tol")?,
            step,
            power_iters: num(m, "power_iters")?,
        },
        sample_mode,
        eval_every: num(m, "eval_every")?,
        seed: num(m, "seed")?,
        preprocess,
    };
    config.validate()?;
    let test_dir = match get(m, "test_dir")? {
        "" => None,
        p => Some(PathBuf::from(p)),
    };
    Ok(RunPlan {
        config,
        train_dir: PathBuf::from(get(m, "train_dir")?),
        test_dir,
    })
}

fn load_dir(dir: &Path) -> Result<Vec<Signal>> {
    io::list_images(dir)?
        .iter()
        .map(|p| io::load_image(p))
        .collect()
}

pub fn run_train(args: &TrainArgs) -> Result<()> {
    let plan = args.resolve()?;
    let files = io::list_images(&plan.train_dir)?;
    if files.is_empty() {
        return Err(Error::invalid(format!(
            "no .pgm images in {}",
            plan.train_dir.display()
        )));
    }
    let test = match &plan.test_dir {
        Some(dir) => load_dir(dir)?,
        None => Vec::new(),
    };
    // The training set is cycled in file-name order until enough samples
    // were drawn; images are read lazily.
    let stream = files.iter().cycle().map(|p| io::load_image(p));
    let outcome = online_train(stream, &test, &plan.config)?;

    io::save_dictionary(&outcome.dictionary, &args.dict_out)?;
    io::write_log(&outcome.records, &args.log_out)?;
    let mut manifest = plan_to_manifest(&plan);
    manifest.set("dict_out", args.dict_out.display());
    manifest.set("log_out", args.log_out.display());
    manifest.save(&args.manifest_path())?;
    if let Some(v) = outcome.records.last().and_then(|r| r.test_functional) {
        log::info!("final test functional {v:?}");
    }
    Ok(())
}

/// `v` rounded to 12 significant digits, in positional notation.
pub fn format_functional(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (11 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

pub fn run_eval(args: &EvalArgs) -> Result<String> {
    let dict = io::load_dictionary(&args.dict)?;
    let mode: Preprocess = args.preprocess.into();
    let test: Vec<Signal> = load_dir(&args.test_dir)?
        .iter()
        .map(|s| preprocess(s, mode))
        .collect();
    let eval = evaluate_dictionary(&dict, &test, &CbpdnConfig::new(args.lambda))?;
    if eval.empty_test_set {
        eprintln!("warning: no test images in {}", args.test_dir.display());
    }
    Ok(format_functional(eval.value))
}

pub fn run_synth(args: &SynthArgs) -> Result<()> {
    let generator = generator_dictionary(
        args.filters,
        (args.filter_size, args.filter_size),
        args.filter_seed,
    )?;
    let spec = SyntheticSpec {
        dims: (args.size, args.size),
        density: args.density,
        noise: args.noise,
    };
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    for k in 0..args.count {
        let img = synthetic_image(&generator, &spec, &mut rng)?;
        // Affine map into [0, 1] for 8-bit storage.
        let (lo, hi) = img
            .values()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(*v), hi.max(*v))
            });
        let span = if hi > lo { hi - lo } else { 1.0 };
        let scaled = Signal::new(img.values().mapv(|v| (v - lo) / span))?;
        io::save_image(&scaled, &args.out_dir.join(format!("synth_{k:04}.pgm")))?;
    }
    Ok(())
}

/// Builds the global worker pool from `OCDL_THREADS`, if set.
pub fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("{THREADS_ENV}={value:?} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::invalid(format!("cannot size thread pool: {e}")))
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args).map(|out| println!("{out}")),
        Command::Synth(args) => run_synth(args),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
