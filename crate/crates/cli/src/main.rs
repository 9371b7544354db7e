//! `pvrp` command line: instance generation, training, evaluation and
//! solution validation.
//!
//! Exit codes: 0 success, 1 infeasible solution or failed run, 2 usage error.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use pvrp::camp::{init_params, CampConfig, CampParams};
use pvrp::eval::{self, EvalConfig, Method};
use pvrp::instance::{generate, read_instances, write_instances, DistKind, GenConfig, Instance, Variant};
use pvrp::nd::Checkpoint;
use pvrp::trainer::{self, derive_seed, MetricsRow, TrainConfig, TrainError, TrainObserver, TrainState, METRICS_HEADER};
use pvrp::validator::{self, Solution};

#[derive(Parser)]
#[command(name = "pvrp", version, about = "Profiled vehicle routing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write random instances as JSON lines
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        dist: DistKind,
        /// Defaults to zone-constraints for the zone distribution and
        /// preferences otherwise
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long, default_value_t = 1280)]
        count: usize,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy from a JSON configuration
    Train {
        /// JSON file with optional `model` and `train` sections
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Overrides the configured seed
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_encoder_comm: bool,
        #[arg(long)]
        no_reward_balance: bool,
        #[arg(long)]
        shared_profile: bool,
        /// Fill the wall-clock column (makes the metrics file non-reproducible)
        #[arg(long)]
        timing: bool,
    },
    /// Compare the policy and reference solvers on an instance file
    Eval {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated subset of camp-greedy,camp-sample,greedy,random,exact
        #[arg(long, value_delimiter = ',', default_value = "camp-greedy,camp-sample,greedy,random,exact")]
        methods: Vec<Method>,
        /// Comma-separated weight grid; defaults to each instance's own weight
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        #[arg(long, default_value_t = 128)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Mean cost and preference per weight and method
        #[arg(long)]
        pareto: Option<PathBuf>,
        #[arg(long)]
        timing: bool,
    },
    /// Check solutions against their instances
    Validate {
        #[arg(long)]
        instances: PathBuf,
        /// JSON lines `{"instance_id": ..., "routes": [[...], ...]}`
        #[arg(long)]
        solutions: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Usage(String),
    Failed(anyhow::Error),
    Infeasible,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Failed(e)
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate {
            n,
            m,
            dist,
            variant,
            count,
            alpha,
            seed,
            out,
        } => cmd_generate(n, m, dist, variant, count, alpha, seed, &out),
        Command::Train {
            config,
            out_dir,
            seed,
            no_encoder_comm,
            no_reward_balance,
            shared_profile,
            timing,
        } => cmd_train(&config, &out_dir, seed, no_encoder_comm, no_reward_balance, shared_profile, timing),
        Command::Eval {
            instances,
            checkpoint,
            methods,
            alphas,
            samples,
            seed,
            out,
            pareto,
            timing,
        } => {
            let cfg = EvalConfig {
                methods,
                alphas,
                samples,
                seed,
                timed: timing,
            };
            cmd_eval(&instances, checkpoint.as_deref(), &cfg, &out, pareto.as_deref())
        }
        Command::Validate {
            instances,
            solutions,
            seed,
        } => cmd_validate(&instances, &solutions, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Infeasible) => ExitCode::from(1),
        Err(Failure::Failed(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    n: usize,
    m: usize,
    dist: DistKind,
    variant: Option<Variant>,
    count: usize,
    alpha: f64,
    seed: u64,
    out: &Path,
) -> Result<(), Failure> {
    let mut base = GenConfig::new(n, m, dist, seed).with_alpha(alpha);
    if let Some(v) = variant {
        base.variant = v;
    }
    if let Err(e) = base.validate() {
        return usage(e.to_string());
    }
    let instances = (0..count)
        .map(|i| {
            let mut cfg = base.clone();
            cfg.seed = derive_seed(&[seed, i as u64]);
            let mut inst = generate(&cfg)?;
            inst.id = format!("{}-n{n}-m{m}-s{seed}-{i:05}", dist.as_str());
            Ok(inst)
        })
        .collect::<Result<Vec<Instance>, pvrp::instance::InstanceError>>()
        .context("generating instances")?;
    write_instances(out, &instances).with_context(|| format!("writing {}", out.display()))?;
    println!(
        "wrote {count} instances to {} (dist {}, variant {}, n {n}, m {m}, alpha {alpha}, seed {seed})",
        out.display(),
        dist.as_str(),
        base.variant.as_str()
    );
    Ok(())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    model: CampConfig,
    train: TrainConfig,
    /// Seed of the initial weights.
    init_seed: u64,
}

struct CsvSink {
    metrics: BufWriter<File>,
    out_dir: PathBuf,
    run: RunConfig,
}

impl TrainObserver for CsvSink {
    fn on_batch(&mut self, rows: &[MetricsRow]) -> Result<(), TrainError> {
        for r in rows {
            writeln!(self.metrics, "{}", r.csv_line()).map_err(|e| TrainError::Config(format!("writing metrics: {e}")))?;
        }
        Ok(())
    }

    fn on_epoch(&mut self, epoch: usize, state: &TrainState) -> Result<(), TrainError> {
        self.metrics.flush().map_err(|e| TrainError::Config(format!("writing metrics: {e}")))?;
        let extra = serde_json::json!({ "train": self.run.train, "init_seed": self.run.init_seed, "epoch": epoch });
        let text = state.params.to_checkpoint(extra).to_json();
        for name in [format!("checkpoint-epoch{epoch:03}.json"), "checkpoint.json".to_string()] {
            fs::write(self.out_dir.join(&name), &text).map_err(|e| TrainError::Config(format!("writing {name}: {e}")))?;
        }
        Ok(())
    }
}

fn cmd_train(
    config: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    no_encoder_comm: bool,
    no_reward_balance: bool,
    shared_profile: bool,
    timing: bool,
) -> Result<(), Failure> {
    let text = match fs::read_to_string(config) {
        Ok(t) => t,
        Err(e) => return usage(format!("cannot read config {}: {e}", config.display())),
    };
    let mut run: RunConfig = match serde_json::from_str(&text) {
        Ok(r) => r,
        Err(e) => return usage(format!("{}: {e}", config.display())),
    };
    if let Some(s) = seed {
        run.train.seed = s;
        run.init_seed = s;
    }
    run.model.encoder_comm &= !no_encoder_comm;
    run.model.profile_embeddings &= !shared_profile;
    run.train.reward_balance &= !no_reward_balance;
    if let Err(e) = run.model.validate() {
        return usage(e.to_string());
    }
    if let Err(e) = run.train.validate() {
        return usage(e.to_string());
    }

    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut metrics = BufWriter::new(File::create(out_dir.join("metrics.csv")).context("creating metrics.csv")?);
    let header = serde_json::to_string(&run).expect("config serializes");
    writeln!(metrics, "# config {header}").context("writing metrics.csv")?;
    writeln!(metrics, "{METRICS_HEADER}").context("writing metrics.csv")?;

    let params = init_params(&run.model, run.init_seed).context("initializing the model")?;
    let mut sink = CsvSink {
        metrics,
        out_dir: out_dir.to_path_buf(),
        run: run.clone(),
    };
    let (state, rows) = trainer::train(params, &run.train, timing, &mut sink).context("training")?;
    sink.metrics.flush().context("writing metrics.csv")?;
    let last = rows.last().map_or(f64::NAN, |r| r.mean_reward);
    println!(
        "trained {} epochs x {} batches; last batch mean reward {last:.4}; {} parameters; output in {}",
        run.train.epochs,
        run.train.batches_per_epoch(),
        state.params.store.scalar_count(),
        out_dir.display()
    );
    Ok(())
}

fn load_policy(path: &Path) -> Result<CampParams, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let ck = Checkpoint::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(CampParams::from_checkpoint(&ck).with_context(|| format!("loading {}", path.display()))?)
}

fn write_csv<T: Serialize>(path: &Path, header: &str, rows: &[T]) -> anyhow::Result<()> {
    let mut file = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(file, "# config {header}")?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_eval(
    instances: &Path,
    checkpoint: Option<&Path>,
    cfg: &EvalConfig,
    out: &Path,
    pareto: Option<&Path>,
) -> Result<(), Failure> {
    let insts = read_instances(instances).with_context(|| format!("reading {}", instances.display()))?;
    let policy = checkpoint.map(load_policy).transpose()?;
    if policy.is_none() && cfg.methods.iter().any(|m| m.needs_policy()) {
        return usage("camp methods need --checkpoint");
    }
    let rows = eval::evaluate(&insts, policy.as_ref(), cfg).context("evaluating")?;
    let header = serde_json::json!({
        "instances": instances.display().to_string(),
        "checkpoint": checkpoint.map(|p| p.display().to_string()),
        "methods": cfg.methods,
        "alphas": cfg.alphas,
        "samples": cfg.samples,
        "seed": cfg.seed,
    })
    .to_string();
    write_csv(out, &header, &rows)?;
    if let Some(p) = pareto {
        write_csv(p, &header, &eval::pareto(&rows))?;
    }
    println!("wrote {} rows for {} instances to {}", rows.len(), insts.len(), out.display());
    Ok(())
}

#[derive(Debug, Deserialize)]
struct SolutionRecord {
    instance_id: String,
    routes: Vec<Vec<usize>>,
}

fn cmd_validate(instances: &Path, solutions: &Path, seed: u64) -> Result<(), Failure> {
    let insts = read_instances(instances).with_context(|| format!("reading {}", instances.display()))?;
    let file = File::open(solutions).with_context(|| format!("opening {}", solutions.display()))?;
    println!("# config {{\"instances\":{:?},\"solutions\":{:?},\"seed\":{seed}}}", instances.display().to_string(), solutions.display().to_string());
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut all_feasible = true;
    let mut count = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", solutions.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SolutionRecord = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: malformed solution", solutions.display(), i + 1))?;
        let inst = insts
            .iter()
            .find(|x| x.id == rec.instance_id)
            .with_context(|| format!("{}:{}: unknown instance {}", solutions.display(), i + 1, rec.instance_id))?;
        let solution = Solution { routes: rec.routes };
        count += 1;
        let report = match validator::validate(inst, &solution) {
            Ok(r) => r,
            Err(e) => {
                all_feasible = false;
                writeln!(out, "{}: infeasible", rec.instance_id).ok();
                writeln!(out, "  structure: {e}").ok();
                continue;
            }
        };
        if report.feasible {
            let value = validator::objective_unchecked(inst, &solution);
            writeln!(out, "{}: feasible, objective {value}", rec.instance_id).ok();
        } else {
            all_feasible = false;
            writeln!(out, "{}: infeasible", rec.instance_id).ok();
            for v in &report.violations {
                writeln!(out, "  {}: {}", v.constraint.as_str(), v.detail).ok();
            }
        }
    }
    writeln!(out, "{count} solutions checked").ok();
    if all_feasible {
        Ok(())
    } else {
        Err(Failure::Infeasible)
    }
}
