mod config;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relpos_core::autodiff::{OpKind, Tensor};
use relpos_core::relpos::{distance_vector, format_matrix, DistanceKind, PositionalMode};
use relpos_core::trainer::{mean_std, train, write_metrics_csv};
use relpos_core::vit::{gradcheck_model, write_checkpoint, ModelConfig, ModelParams};
use relpos_core::{Error, PatchGrid};

use config::RunConfig;

const GRADCHECK_TOLERANCE: f64 = 1e-4;
const GRADCHECK_MAX_ND: usize = 1024;

#[derive(Parser)]
#[command(
    name = "relpos",
    version,
    about = "Sequence and circle relationship embeddings for a micro vision transformer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a distance vector and write it in matrix text format.
    DumpDistances {
        /// Number of patches (a perfect square, at least 9).
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "sequence")]
        kind: DistanceKind,
        /// Unit distance between adjacent patches.
        #[arg(long, default_value_t = 1.0)]
        d: f64,
        /// Output file; defaults to `distances_<kind>_<n>.txt` in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learnable parameter counts for every positional mode.
    ParamCount(ConfigArgs),
    /// Finite-difference check of the full model gradient.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, hide = true)]
        inject_fault: Option<OpKind>,
    },
    /// Train and evaluate, writing metrics CSV and checkpoint per seed.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Repeat with seeds seed..seed+k-1 and report mean and std.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self, base: RunConfig) -> Result<RunConfig, Failure> {
        RunConfig::load(base, self.config.as_deref(), &self.set).map_err(Failure::Config)
    }
}

enum Failure {
    Check(String),
    Config(anyhow::Error),
    Data(anyhow::Error),
}

impl Failure {
    fn report(self) -> ExitCode {
        let (code, msg) = match self {
            Failure::Check(msg) => (1, msg),
            Failure::Config(e) => (2, format!("configuration error: {e:#}")),
            Failure::Data(e) => (3, format!("data error: {e:#}")),
        };
        eprintln!("relpos: {msg}");
        ExitCode::from(code)
    }
}

/// Dataset problems are data errors; everything else is configuration.
fn classify(e: Error) -> Failure {
    match e {
        Error::EmptyDataset | Error::LabelOutOfRange { .. } | Error::Parse { .. } | Error::Io(_) => {
            Failure::Data(e.into())
        }
        other => Failure::Config(other.into()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::DumpDistances { n, kind, d, out } => dump_distances(n, kind, d, out),
        Command::ParamCount(args) => param_count(&args),
        Command::Gradcheck { config, inject_fault } => gradcheck(&config, inject_fault),
        Command::Train { config, seeds } => run_train(&config, seeds),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}

fn dump_distances(n: usize, kind: DistanceKind, d: f64, out: Option<PathBuf>) -> Result<(), Failure> {
    let grid = PatchGrid::from_patch_count(n).map_err(classify)?;
    let dis = distance_vector(&grid, kind, d).map_err(classify)?;
    let line: Vec<String> = dis.values().iter().map(f64::to_string).collect();
    println!("{}", line.join(" "));

    let path = out.unwrap_or_else(|| RunConfig::default().out_dir().join(format!("distances_{kind}_{n}.txt")));
    let column = Tensor::new(vec![n], dis.values().to_vec()).map_err(classify)?;
    write_file(&path, format_matrix(kind.as_str(), d, &column).as_bytes())
}

fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(Failure::Data)?;
    }
    fs::write(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Data)
}

fn param_count(args: &ConfigArgs) -> Result<(), Failure> {
    let cfg = args.load(RunConfig::default())?;
    println!("{:<12} {:>18} {:>14}", "mode", "positional_params", "total_params");
    for mode in PositionalMode::ALL {
        let mut model = cfg.model;
        model.positional.mode = mode;
        let total = model.param_count().map_err(classify)?;
        let positional = model.positional_param_count().map_err(classify)?;
        println!("{mode:<12} {positional:>18} {total:>14}");
    }
    Ok(())
}

/// Base for gradient checks: small enough that every scalar is perturbed.
fn tiny_run() -> RunConfig {
    RunConfig {
        model: ModelConfig {
            image_side: 6,
            patch_size: 2,
            embed_dim: 8,
            heads: 2,
            blocks: 1,
            ..ModelConfig::default()
        },
        ..RunConfig::default()
    }
}

fn gradcheck(args: &ConfigArgs, fault: Option<OpKind>) -> Result<(), Failure> {
    let cfg = args.load(tiny_run())?;
    let model = cfg.model;
    let grid = model.grid().map_err(classify)?;
    if grid.n() * model.embed_dim > GRADCHECK_MAX_ND {
        return Err(Failure::Config(anyhow::anyhow!(
            "gradient check needs n*D <= {GRADCHECK_MAX_ND}, got {}*{} = {}",
            grid.n(),
            model.embed_dim,
            grid.n() * model.embed_dim
        )));
    }
    let seed = cfg.train.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Spread parameters well beyond their init scale so every backward rule
    // contributes gradients large enough to expose a wrong one.
    let params = ModelParams::init(&model, seed).map_err(classify)?.map(|_, t| {
        let noise = Tensor::randn(t.shape(), cfg.gradcheck_param_std, &mut rng);
        let data = t.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect();
        Tensor::new(t.shape().to_vec(), data).expect("same shape")
    });
    let batch = cfg.gradcheck_batch.max(1);
    let images = Tensor::randn(
        &[batch, model.image_side, model.image_side, model.channels],
        1.0,
        &mut rng,
    );
    let labels: Vec<usize> = (0..batch).map(|i| i % model.classes).collect();
    let report = gradcheck_model(&params, &model, &images, &labels, cfg.gradcheck_step, fault).map_err(classify)?;

    let mut groups: Vec<(String, f64)> = Vec::new();
    for (name, err) in report {
        let group = match name.split('.').collect::<Vec<_>>()[..] {
            ["blocks", i, ..] => format!("blocks.{i}"),
            [first, ..] => first.to_string(),
            [] => name.clone(),
        };
        match groups.iter_mut().find(|(g, _)| *g == group) {
            Some((_, worst)) => *worst = worst.max(err),
            None => groups.push((group, err)),
        }
    }
    let worst = groups.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    for (group, err) in &groups {
        println!("{group:<12} {err:.3e}");
    }
    println!("mode={} max_rel_error={worst:.3e}", model.positional.mode);
    if worst < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "gradient check failed: max relative error {worst:.3e} >= {GRADCHECK_TOLERANCE:e}"
        )))
    }
}

fn run_train(args: &ConfigArgs, seeds: u64) -> Result<(), Failure> {
    let cfg = args.load(RunConfig::default())?;
    cfg.check_task().map_err(Failure::Config)?;
    if seeds == 0 {
        return Err(Failure::Config(anyhow::anyhow!("--seeds must be at least 1")));
    }
    let out_dir = cfg.out_dir();
    let mode = cfg.model.positional.mode;
    let mut scores = Vec::new();
    for seed in cfg.train.seed..cfg.train.seed + seeds {
        let (model, train_set, eval_set) = cfg.datasets(seed).map_err(|e| Failure::Data(e.into()))?;
        let train_cfg = relpos_core::trainer::TrainConfig { seed, ..cfg.train };
        let outcome = train(&model, &train_cfg, &train_set, &eval_set).map_err(classify)?;

        let mut csv = Vec::new();
        write_metrics_csv(&outcome.metrics, &mut csv).map_err(|e| Failure::Data(e.into()))?;
        write_file(&out_dir.join(format!("metrics_{mode}_seed{seed}.csv")), &csv)?;
        let checkpoint = write_checkpoint(&outcome.params, &model).map_err(classify)?;
        write_file(
            &out_dir.join(format!("checkpoint_{mode}_seed{seed}.txt")),
            checkpoint.as_bytes(),
        )?;

        let top1 = outcome.final_eval_top1();
        println!("mode={mode} eval_top1={top1} seed={seed}");
        scores.push(top1);
    }
    if seeds > 1 {
        let (mean, std) = mean_std(&scores);
        println!("mode={mode} seeds={seeds} eval_top1={mean:.4}±{std:.4}");
    }
    std::io::stdout().flush().ok();
    Ok(())
}
