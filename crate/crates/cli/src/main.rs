use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use polydecouple::bench::{self, CorrExperimentSpec, SysIdSpec};
use polydecouple::decouple::{decouple_pipeline, random_decoupled, AlsConfig, ExitReason, Sampling, WeightKind};
use polydecouple::io::{read_cov_for, read_json, read_poly, CovarianceFile, ModelFile, PolyFile};

#[derive(Parser, Debug)]
#[command(name = "polydecouple", version, about = "Decouple noisy multivariate polynomial maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a random map that has an exact r-branch decoupling.
    Synth(SynthArgs),
    /// Decouple a polynomial map, optionally weighted by its coefficient covariance.
    Decouple(DecoupleArgs),
    /// Error-correlation study of a weighted CPD on random 2x2x2 tensors.
    CorrExp(CorrArgs),
    /// Compare the four weightings on the built-in cubic between low-pass filters.
    SysidDemo(SysIdArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    r: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Polynomial map output.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth model output; defaults to `<out stem>.truth.json`.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WeightArg {
    None,
    Element,
    Slice,
    Dense,
}

impl From<WeightArg> for WeightKind {
    fn from(w: WeightArg) -> Self {
        match w {
            WeightArg::None => WeightKind::None,
            WeightArg::Element => WeightKind::ElementWise,
            WeightArg::Slice => WeightKind::SliceWise,
            WeightArg::Dense => WeightKind::Dense,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SamplingArg {
    Normal,
    Uniform,
}

/// Overrides of the decoupling settings. Precedence: flag, then `--config`
/// file, then built-in defaults.
#[derive(Args, Debug, Default)]
struct AlsArgs {
    /// JSON file with decoupling settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    n_points: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    weight: Option<WeightArg>,
    #[arg(long, value_enum)]
    sampling: Option<SamplingArg>,
}

impl AlsArgs {
    fn resolve(&self, base: AlsConfig) -> Result<AlsConfig> {
        let mut c = match &self.config {
            Some(path) => read_json::<AlsConfig>(path).with_context(|| format!("reading config {}", path.display()))?,
            None => base,
        };
        if let Some(v) = self.r {
            c.r = v;
        }
        if let Some(v) = self.n_points {
            c.n_points = Some(v);
        }
        if let Some(v) = self.tol {
            c.tol_rel_step = v;
        }
        if let Some(v) = self.max_iters {
            c.max_iters = v;
        }
        if let Some(v) = self.restarts {
            c.restarts = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.weight {
            c.weight_kind = v.into();
        }
        if let Some(v) = self.sampling {
            c.sampling = match v {
                SamplingArg::Normal => Sampling::Normal,
                SamplingArg::Uniform => Sampling::Uniform,
            };
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct DecoupleArgs {
    #[arg(long)]
    poly: PathBuf,
    /// Coefficient covariance; required unless `--weight none`.
    #[arg(long)]
    cov: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    als: AlsArgs,
}

#[derive(Args, Debug)]
struct CorrArgs {
    /// JSON experiment spec; the built-in weight and defaults otherwise.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct SysIdArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// Seed of the multisine phases.
    #[arg(long, default_value_t = 0)]
    excitation_seed: u64,
    #[command(flatten)]
    als: AlsArgs,
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn check_output(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            bail!("output directory {} does not exist", p.display())
        }
        _ => Ok(()),
    }
}

fn check_input(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("input file {} does not exist", path.display());
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<ExitCode> {
    let truth_path = args.truth.clone().unwrap_or_else(|| args.out.with_extension("truth.json"));
    check_output(&args.out)?;
    check_output(&truth_path)?;
    let (f, truth) = random_decoupled(args.m, args.n, args.d, args.r, args.seed)?;
    write_json(&args.out, &PolyFile::from_poly(&f))?;
    write_json(&truth_path, &truth)?;
    info!("wrote {} and {}", args.out.display(), truth_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_decouple(args: &DecoupleArgs) -> Result<ExitCode> {
    check_input(&args.poly)?;
    if let Some(cov) = &args.cov {
        check_input(cov)?;
    }
    check_output(&args.out)?;
    let config = args.als.resolve(AlsConfig::default())?;
    if config.weight_kind != WeightKind::None && args.cov.is_none() {
        bail!(
            "weight kind {:?} needs the coefficient covariance; pass --cov <file> or use --weight none",
            config.weight_kind
        );
    }
    let f = read_poly(&args.poly).with_context(|| format!("reading {}", args.poly.display()))?;
    let cov = match &args.cov {
        Some(path) => Some(read_cov_for(path, &f).with_context(|| format!("reading {}", path.display()))?),
        None => None,
    };
    let (model, report) = decouple_pipeline(&f, cov.as_ref(), &config)?;
    let exit = report.exit_reason;
    info!(
        "{} sweeps, exit {:?}, cost {:e}",
        report.iterations, report.exit_reason, report.final_cost
    );
    write_json(&args.out, &ModelFile { model, report })?;
    Ok(match exit {
        ExitReason::Tolerance => ExitCode::SUCCESS,
        ExitReason::MaxIters => ExitCode::from(2),
    })
}

fn cmd_corr(args: &CorrArgs) -> Result<ExitCode> {
    if let Some(p) = &args.spec {
        check_input(p)?;
    }
    fs::create_dir_all(&args.out_dir)?;
    let mut spec = match &args.spec {
        Some(p) => read_json::<CorrExperimentSpec>(p).with_context(|| format!("reading {}", p.display()))?,
        None => CorrExperimentSpec::default(),
    };
    if let Some(t) = args.trials {
        spec.trials = t;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let res = bench::run_corr_experiment(&spec)?;
    write_atomic(&args.out_dir.join("errors.csv"), res.to_csv().as_bytes())?;
    write_json(&args.out_dir.join("scatter.json"), &res.scatter_json())?;
    write_json(&args.out_dir.join("summary.json"), &res.summary)?;
    println!(
        "trials {}: rho(e2,e5) = {:.4}, rho(e3,e8) = {:.4}",
        res.summary.trials, res.summary.rho_2_5, res.summary.rho_3_8
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_sysid(args: &SysIdArgs) -> Result<ExitCode> {
    fs::create_dir_all(args.out_dir.join("models"))?;
    fs::create_dir_all(args.out_dir.join("inputs"))?;
    let mut spec = SysIdSpec::default();
    spec.als = args.als.resolve(spec.als)?;
    spec.excitation.seed = args.excitation_seed;
    // the built-in map and covariance, reusable with `decouple`
    write_json(&args.out_dir.join("inputs").join("poly.json"), &PolyFile::from_poly(&spec.f))?;
    write_json(&args.out_dir.join("inputs").join("cov.json"), &CovarianceFile::from_cov(&spec.sigma_f))?;
    let res = bench::run_sysid_comparison(&spec)?;
    write_atomic(&args.out_dir.join("comparison.csv"), res.to_csv().as_bytes())?;
    write_json(&args.out_dir.join("spectra.json"), &res.spectra_json())?;
    for m in &res.methods {
        let name = bench::sysid::method_name(m.method);
        write_json(&args.out_dir.join("models").join(format!("{name}.json")), &m.model)?;
    }
    print!("{}", res.to_csv());
    Ok(ExitCode::SUCCESS)
}

fn init_threads() -> Result<()> {
    if let Ok(value) = std::env::var("POLYDECOUPLE_THREADS") {
        let n: usize = value
            .parse()
            .with_context(|| format!("POLYDECOUPLE_THREADS must be a positive integer, got {value:?}"))?;
        if n == 0 {
            bail!("POLYDECOUPLE_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<ExitCode> {
    init_threads()?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Decouple(a) => cmd_decouple(a),
        Command::CorrExp(a) => cmd_corr(a),
        Command::SysidDemo(a) => cmd_sysid(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
