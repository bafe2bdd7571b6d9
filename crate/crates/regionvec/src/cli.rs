//! The `regionvec` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use regionvec_core::data::{self, Dataset};
use regionvec_core::downstream::{self, EvalConfig, EvalReport};
use regionvec_core::graph::{self, View};
use regionvec_core::losses::MobilityDivergence;
use regionvec_core::model::HyperParams;
use regionvec_core::synth::{self, SynthSpec};
use regionvec_core::trainer::{self, TrainConfig};
use regionvec_core::Error as CoreError;

use crate::error::{Error, Result};
use crate::{io, pipeline};

const SUBCOMMANDS: [&str; 5] = ["synth", "pretrain", "evaluate", "sweep", "gradcheck"];

#[derive(Debug, Parser)]
#[command(
    name = "regionvec",
    version,
    about = "Multi-view urban region embeddings"
)]
#[command(args_override_self = true)]
struct Cli {
    /// Flat `key = value` file of flag defaults; flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic grid city as a dataset directory.
    Synth(SynthArgs),
    /// Train embeddings on a dataset and write them as CSV.
    Pretrain(PretrainArgs),
    /// Score an embedding file on labelled tasks with k-fold Ridge.
    Evaluate(EvaluateArgs),
    /// Train and score every view combination over several seeds.
    Sweep(SweepArgs),
    /// Check the full loss gradient against central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Grid rows (and columns unless --cols is given).
    #[arg(long, default_value_t = 6)]
    grid: usize,
    /// Grid columns.
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Planted latent clusters.
    #[arg(long, default_value_t = 3)]
    clusters: usize,
    /// Label noise standard deviation.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Bins per demographic attribute.
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long, default_value_t = 8)]
    poi_categories: usize,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Divergence {
    Js,
    /// KL(target || predicted)
    KlTargetPredicted,
    /// KL(predicted || target)
    KlPredictedTarget,
}

impl From<Divergence> for MobilityDivergence {
    fn from(d: Divergence) -> Self {
        match d {
            Divergence::Js => MobilityDivergence::Js,
            Divergence::KlTargetPredicted => MobilityDivergence::KlTargetPredicted,
            Divergence::KlPredictedTarget => MobilityDivergence::KlPredictedTarget,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Embedding dimension.
    #[arg(long, default_value_t = 144)]
    dim: usize,
    /// GCN layers per relation.
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    weight_decay: f64,
    /// Similarity edges per region for each demographic view.
    #[arg(long, default_value_t = 10)]
    topk_demo: usize,
    /// Flow edges per region for the mobility view.
    #[arg(long, default_value_t = 20)]
    topk_mobility: usize,
    /// Triplet hinge margin.
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    /// Training seed (base seed in a sweep).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Divergence in the mobility loss.
    #[arg(long, value_enum, default_value_t = Divergence::Js)]
    divergence: Divergence,
}

impl TrainArgs {
    fn config(&self, views: Vec<View>) -> TrainConfig {
        TrainConfig {
            hp: HyperParams {
                dim: self.dim,
                gcn_layers: self.layers,
                ..HyperParams::default()
            },
            epochs: self.epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            margin: self.margin,
            k_demo: self.topk_demo,
            k_mobility: self.topk_mobility,
            seed: self.seed,
            mobility_divergence: self.divergence.into(),
            ..TrainConfig::new(views)
        }
    }
}

#[derive(Debug, Clone)]
struct ViewList(Vec<View>);

fn parse_view_list(s: &str) -> std::result::Result<ViewList, String> {
    graph::parse_views(s, ',')
        .map(ViewList)
        .map_err(|e| e.to_string())
}

#[derive(Debug, Clone)]
struct ComboList(Vec<Vec<View>>);

fn parse_combo_list(s: &str) -> std::result::Result<ComboList, String> {
    graph::parse_combinations(s)
        .map(ComboList)
        .map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
struct PretrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated views: neighbor, poi, mobility, income, age,
    /// education, employment, foreign_born.
    #[arg(long, value_parser = parse_view_list)]
    views: ViewList,
    #[command(flatten)]
    train: TrainArgs,
    /// Print losses every N epochs to stderr; 0 is silent.
    #[arg(long, default_value_t = 0)]
    log_every: usize,
    /// Embedding CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Cross-validation folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 1.0)]
    ridge_lambda: f64,
    /// Tasks regressed on ln(1 + y); comma-separated.
    #[arg(long, value_delimiter = ',')]
    log_transform: Vec<String>,
    /// Task to score; repeat or comma-separate. Default: every labelled task.
    #[arg(long, value_delimiter = ',')]
    task: Vec<String>,
}

impl EvalArgs {
    fn config(&self, seed: u64, runs: usize) -> EvalConfig {
        EvalConfig {
            folds: self.folds,
            ridge_lambda: self.ridge_lambda,
            seed,
            log_transform: self.log_transform.iter().cloned().collect(),
            runs,
            tasks: self.task.clone(),
        }
    }
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Embedding CSV.
    #[arg(long)]
    embeddings: PathBuf,
    /// Dataset directory holding the labels.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    eval: EvalArgs,
    /// Fold-shuffle seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Combinations, `+` within and `;` between, e.g. "mobility+income;neighbor+poi".
    #[arg(long, value_parser = parse_combo_list)]
    combos: ComboList,
    /// Training seeds per combination.
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    eval: EvalArgs,
    /// Fold-shuffle seed.
    #[arg(long, default_value_t = 0)]
    eval_seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// JSON report to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Regions in the synthetic city.
    #[arg(long, default_value_t = 12)]
    regions: usize,
    #[arg(long, default_value_t = 3)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Exit 1 when the error exceeds this.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// exit status: 0 success, 1 bad input, 2 filesystem trouble.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match inject_config(argv) {
        Ok(a) => a,
        Err(e) => return report(&e),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => report(&e),
    }
}

fn report(e: &Error) -> i32 {
    eprintln!("error: {e}");
    e.exit_code()
}

/// Splices `--key value` pairs from the `--config` file in right after the
/// subcommand, so that later command-line flags override them.
fn inject_config(mut argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    for (i, arg) in argv.iter().enumerate() {
        let arg = arg.to_string_lossy();
        if arg == "--config" {
            path = argv.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = arg.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let Some(at) = argv
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
    else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let tokens = parse_config(&text, &path)?;
    argv.splice(at + 1..at + 1, tokens);
    Ok(argv)
}

fn parse_config(text: &str, path: &Path) -> Result<Vec<OsString>> {
    let mut tokens = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Malformed {
            file: path.display().to_string(),
            line: i as u64 + 1,
            message: "expected `key = value`".into(),
        })?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        tokens.push(format!("--{key}").into());
        tokens.push(value.trim().into());
    }
    Ok(tokens)
}

fn load_checked(dir: &Path) -> Result<Dataset> {
    let dataset = io::load_dataset(dir)?;
    let findings = data::validate(&dataset);
    for w in &findings.warnings {
        eprintln!("warning: {} ({} at {})", w.message, w.code, w.location);
    }
    findings.into_result()?;
    Ok(dataset)
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Synth(a) => synth(a).map(|()| 0),
        Command::Pretrain(a) => pretrain(a).map(|()| 0),
        Command::Evaluate(a) => evaluate(a).map(|()| 0),
        Command::Sweep(a) => sweep(a).map(|()| 0),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        grid_side: a.grid,
        grid_cols: a.cols,
        seed: a.seed,
        clusters: a.clusters,
        noise: a.noise,
        bins: a.bins,
        poi_categories: a.poi_categories,
    };
    let city = synth::generate_city(&spec)?;
    io::write_dataset(&a.out, &city.dataset)?;
    io::write_latents(&a.out, &city.latents)?;
    println!("wrote {} regions to {}", city.dataset.n(), a.out.display());
    Ok(())
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let dataset = load_checked(&a.data)?;
    let cfg = TrainConfig {
        log_every: a.log_every,
        ..a.train.config(a.views.0)
    };
    let result = pipeline::train_timed(&dataset, &cfg, |epoch, l| {
        eprintln!(
            "epoch {epoch:>5}  total {:.6}  neighbor {:.6}  poi {:.6}  mobility {:.6}  demo {:.6}",
            l.total,
            l.l_n,
            l.l_poi,
            l.l_mobility,
            l.l_demo.values().sum::<f64>()
        );
    })?;
    io::write_embeddings(&a.out, &result.embeddings)?;
    eprintln!(
        "trained {} epochs in {:.2?}; final loss {:.6}",
        cfg.epochs,
        result.wall_time,
        result.history.last().map_or(f64::NAN, |l| l.total)
    );
    println!("{}", a.out.display());
    Ok(())
}

fn fmt_r2(r2: Option<f64>) -> String {
    r2.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let dataset = load_checked(&a.data)?;
    let embeddings = io::read_embeddings(&a.embeddings)?;
    if embeddings.rows() != dataset.n() {
        return Err(CoreError::InvalidDataset(format!(
            "{} embedding rows for {} regions",
            embeddings.rows(),
            dataset.n()
        ))
        .into());
    }
    let cfg = a.eval.config(a.seed, 1);
    let mut out = std::io::stdout().lock();
    for task in downstream::sweep_tasks(&dataset, &cfg)? {
        let eval = downstream::evaluate(&embeddings, &dataset.labels[&task], &task, &cfg)?;
        let m = &eval.mean;
        writeln!(
            out,
            "{task}\tmae {:.4}\trmse {:.4}\tr2 {}",
            m.mae,
            m.rmse,
            fmt_r2(m.r2)
        )
        .map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

fn print_report(report: &EvalReport) {
    for row in &report.rows {
        let tasks: Vec<String> = row
            .tasks
            .iter()
            .map(|(t, s)| format!("{t} {}", fmt_r2(s.r2)))
            .collect();
        println!(
            "{}\tavg_r2 {}\t{}",
            row.combination,
            fmt_r2(row.avg_r2),
            tasks.join("\t")
        );
    }
}

fn sweep(a: SweepArgs) -> Result<()> {
    let dataset = load_checked(&a.data)?;
    let train_cfg = a.train.config(Vec::new());
    let eval_cfg = a.eval.config(a.eval_seed, a.runs);
    let report = pipeline::parallel_sweep(&dataset, &a.combos.0, &train_cfg, &eval_cfg, a.workers)?;
    io::write_report(&a.out, &report)?;
    print_report(&report);
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<i32> {
    let check = trainer::gradient_check(a.regions, a.seed, a.dim)?;
    println!("{:e}", check.max_rel_error);
    if check.max_rel_error < a.tolerance {
        Ok(0)
    } else {
        eprintln!(
            "max relative error {:e} exceeds {:e} ({} coordinates, {} relations)",
            check.max_rel_error, a.tolerance, check.coordinates, check.relations
        );
        Ok(1)
    }
}
