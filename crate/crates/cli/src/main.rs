//! `arc-lab`: command-line front end over the arclab harness.
//!
//! Run directories go under `$ARC_LAB_OUT` (default `runs/`). Exit codes:
//! 0 success, 2 usage or config error, 3 divergence, 4 I/O error.

mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use arclab::arcloss::UpdateOrder;
use arclab::flowcore::NoiseLevel;
use arclab::harness::{
    ablation_table, evaluate_checkpoint, generate, posttrain, pretrain, ExperimentConfig, RunDir, RunManifest,
    Sampler, Variant,
};
use arclab::nets::checkpoint;
use arclab::pingpong::{make_schedule, style_transfer_batch};
use arclab::toydata::{write_sample_csv, LabeledBatch, Prompt};
use arclab::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

const OUT_ENV: &str = "ARC_LAB_OUT";
const DEFAULT_OUT: &str = "runs";

#[derive(Parser)]
#[command(name = "arc-lab", version, about = "ARC post-training lab for toy rectified flows")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain a velocity network with the rectified-flow loss.
    Pretrain(RunArgs),
    /// Post-train a pretrained checkpoint with one loss variant.
    Posttrain {
        #[command(flatten)]
        run: RunArgs,
        /// Pretrained velocity checkpoint.
        #[arg(long)]
        init: PathBuf,
        #[arg(long, value_parser = parse_variant)]
        variant: Variant,
        #[arg(long, value_enum)]
        order: Option<Order>,
    },
    /// Generate samples from a checkpoint.
    Sample(SampleArgs),
    /// Style transfer: re-noise reference samples and run the tail of the ping-pong schedule.
    Transfer(TransferArgs),
    /// Evaluate a checkpoint over the configured samplers and step counts.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Pretrain, post-train every variant and evaluate the seven table rows.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        order: Option<Order>,
    },
    /// Render SVG bar charts and per-class scatter plots from a metrics CSV.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory name under the output root; defaults to `<command>-<config hash>-seed<seed>`.
    #[arg(long)]
    run_name: Option<String>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Config supplying sampler settings; built-in defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SamplerKind::Pingpong)]
    sampler: SamplerKind,
    #[arg(long, default_value_t = 8)]
    steps: usize,
    /// Class to condition on.
    #[arg(long, required_unless_present = "init_from")]
    prompt: Option<usize>,
    #[arg(long, default_value_t = 16, conflicts_with = "init_from")]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Reference samples CSV to start from (style transfer).
    #[arg(long, requires = "tau_start")]
    init_from: Option<PathBuf>,
    /// Highest noise level kept from the schedule.
    #[arg(long, requires = "init_from")]
    tau_start: Option<f64>,
}

#[derive(Args)]
struct TransferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reference samples CSV (`class_id,x0,x1`).
    #[arg(long)]
    init_from: PathBuf,
    #[arg(long)]
    tau_start: f64,
    #[arg(long, default_value_t = 8)]
    steps: usize,
    /// Target class; each row keeps its own class when omitted.
    #[arg(long)]
    prompt: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerKind {
    Euler,
    Pingpong,
}

#[derive(Clone, Copy, ValueEnum)]
enum Order {
    GenThenDisc,
    DiscThenGen,
}

impl From<Order> for UpdateOrder {
    fn from(o: Order) -> Self {
        match o {
            Order::GenThenDisc => UpdateOrder::GenThenDisc,
            Order::DiscThenGen => UpdateOrder::DiscThenGen,
        }
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Divergence { .. } | Error::NonFinite(_) => 3,
            Error::Io { .. } | Error::Csv(_) | Error::Checkpoint { .. } => 4,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info })
        .format_timestamp(None)
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(command: Command) -> CliResult {
    match command {
        Command::Pretrain(run) => {
            let cfg = load_config(&run)?;
            with_run(&cfg, "pretrain", &run, |cfg, dir, manifest| {
                let out = pretrain(cfg, dir, manifest)?;
                println!("{}", out.final_checkpoint.display());
                Ok(())
            })?;
            Ok(())
        }
        Command::Posttrain {
            run,
            init,
            variant,
            order,
        } => {
            let mut cfg = load_config(&run)?;
            if let Some(o) = order {
                cfg.posttrain.order = o.into();
            }
            let (pretrained, _) = checkpoint::load_velocity(&init)?;
            with_run(&cfg, "posttrain", &run, |cfg, dir, manifest| {
                let out = posttrain(cfg, &pretrained, variant, dir, manifest)?;
                println!("{}", out.generator_checkpoint.display());
                println!("{}", out.discriminator_checkpoint.display());
                Ok(())
            })?;
            Ok(())
        }
        Command::Sample(args) => sample(args),
        Command::Transfer(args) => transfer(args),
        Command::Eval { run, ckpt } => {
            let cfg = load_config(&run)?;
            let dir = with_run(&cfg, "eval", &run, |cfg, dir, manifest| {
                print_table(&evaluate_checkpoint(cfg, &ckpt, dir, manifest)?);
                Ok(())
            })?;
            plot_run(&dir)
        }
        Command::Ablate { run, order } => {
            let mut cfg = load_config(&run)?;
            if let Some(o) = order {
                cfg.posttrain.order = o.into();
            }
            let dir = with_run(&cfg, "ablate", &run, |cfg, dir, manifest| {
                print_table(&ablation_table(cfg, dir, manifest)?);
                Ok(())
            })?;
            plot_run(&dir)
        }
        Command::Plot { metrics, out } => plot::plot(&metrics, &out),
    }
}

fn load_config(run: &RunArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&run.config)?;
    if let Some(seed) = run.seed {
        cfg.seed = seed;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn optional_config(path: Option<&Path>) -> CliResult<ExperimentConfig> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    })
}

fn output_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT), PathBuf::from)
}

/// Creates the run directory, writes the manifest, runs `body` and records
/// its outcome in the manifest.
fn with_run<F>(cfg: &ExperimentConfig, command: &str, run: &RunArgs, body: F) -> CliResult<RunDir>
where
    F: FnOnce(&ExperimentConfig, &RunDir, &mut RunManifest) -> arclab::Result<()>,
{
    let name = run
        .run_name
        .clone()
        .unwrap_or_else(|| format!("{command}-{}-seed{}", &cfg.hash()[..12], cfg.seed));
    let dir = RunDir::create(&output_root().join(name))?;
    info!("run directory {}", dir.root().display());
    let mut manifest = RunManifest::begin(&dir, command, cfg)?;
    let result = body(cfg, &dir, &mut manifest);
    manifest.finish(&dir, result)?;
    Ok(dir)
}

fn plot_run(dir: &RunDir) -> CliResult {
    plot::plot(&dir.file("metrics.csv"), &dir.root().join("plots"))
}

fn print_table(reports: &[arclab::evalkit::MetricReport]) {
    println!(
        "{:<28} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9}",
        "label", "sw", "fd", "recall", "coverage", "ccds", "adherence"
    );
    for r in reports {
        println!(
            "{:<28} {:>8.4} {:>8.4} {:>8.3} {:>8.3} {:>8.4} {:>9.4}",
            r.label, r.sw, r.fd, r.recall, r.coverage, r.ccds, r.adherence
        );
    }
}

fn sample(args: SampleArgs) -> CliResult {
    if let Some(init) = args.init_from {
        if matches!(args.sampler, SamplerKind::Euler) {
            return Err(Error::InvalidArgument("--init-from needs the pingpong sampler".into()).into());
        }
        return transfer(TransferArgs {
            ckpt: args.ckpt,
            config: args.config,
            init_from: init,
            tau_start: args.tau_start.expect("clap enforces --tau-start"),
            steps: args.steps,
            prompt: args.prompt,
            seed: args.seed,
            out: args.out,
        });
    }
    let cfg = optional_config(args.config.as_deref())?;
    let (gen, _) = checkpoint::load_velocity(&args.ckpt)?;
    let classes = gen.topology().classes;
    let prompt = Prompt::new(args.prompt.expect("clap enforces --prompt"), classes)?;
    if args.n == 0 || args.steps == 0 {
        return Err(Error::InvalidArgument("--n and --steps must be positive".into()).into());
    }
    let sampler = match args.sampler {
        SamplerKind::Euler => Sampler::Euler(args.steps),
        SamplerKind::Pingpong => Sampler::PingPong(args.steps),
    };
    let prompts = vec![prompt; args.n];
    let x = generate(&gen, &cfg, sampler, &prompts, args.seed)?;
    write_samples(&args.out, &format!("{sampler}.csv"), &LabeledBatch::new(x, prompts)?, args.seed)
}

fn transfer(args: TransferArgs) -> CliResult {
    let cfg = optional_config(args.config.as_deref())?;
    let (gen, _) = checkpoint::load_velocity(&args.ckpt)?;
    let classes = gen.topology().classes;
    let reference = LabeledBatch::read_csv(&args.init_from, classes)?;
    let prompts = match args.prompt {
        Some(k) => vec![Prompt::new(k, classes)?; reference.len()],
        None => reference.prompts().to_vec(),
    };
    let tau = NoiseLevel::new(args.tau_start)?;
    let schedule = make_schedule(args.steps, &cfg.loss.gen_range, cfg.eval.schedule_grid)?;
    let x = style_transfer_batch(&gen, &schedule, &prompts, reference.samples(), tau, args.seed)?;
    if x.ncols() != 2 {
        warn!("samples have {} dimensions; only 2-D samples can be plotted", x.ncols());
    }
    let name = format!("transfer_pingpong_{}_tau{}.csv", args.steps, args.tau_start);
    write_samples(&args.out, &name, &LabeledBatch::new(x, prompts)?, args.seed)
}

fn write_samples(dir: &Path, name: &str, batch: &LabeledBatch, seed: u64) -> CliResult {
    let path = dir.join(name);
    write_sample_csv(&path, batch, Some(seed))?;
    println!("{}", path.display());
    Ok(())
}
