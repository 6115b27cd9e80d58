use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use umgad::checkpoint::Checkpoint;
use umgad::detect::{
    classify, inject_anomalies, score_nodes, select_threshold, AnomalyScores, InjectConfig,
    Metrics, ScoreCurve, Selector,
};
use umgad::graph::{load_multiplex, read_labels, write_multiplex};
use umgad::masking::dump_plans;
use umgad::model::{plan_step, GraphContext};
use umgad::numerics::RngStream;
use umgad::synthetic::SbmConfig;
use umgad::{Error, MultiplexGraph, RunConfig};

#[derive(Parser)]
#[command(
    name = "umgad",
    version,
    about = "Unsupervised anomaly detection on multiplex graphs"
)]
struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// INI configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `train.epochs=50`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Z-score every feature column.
    #[arg(long)]
    standardize: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved configuration.
    Config {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write a synthetic community graph.
    Generate {
        #[arg(long, default_value_t = 500)]
        nodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Manifest path to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Plant clique and attribute anomalies.
    Inject {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Total number of anomalous nodes.
        #[arg(long, default_value_t = 25)]
        anomalies: usize,
        #[arg(long, default_value_t = 5)]
        clique_size: usize,
        /// Manifest path to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Loss log; defaults to `<out>.log.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        dump_plans: Option<PathBuf>,
    },
    /// Score every node with a trained model.
    Score {
        #[command(flatten)]
        run: ScoreArgs,
    },
    /// Score, select the knee threshold and write the ranked curve.
    Detect {
        #[command(flatten)]
        run: ScoreArgs,
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Compare a scores file against labels.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Write the ranked-score curve of a scores file.
    Curve {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Seed of the inference-time plans.
    #[arg(long)]
    score_seed: Option<u64>,
    /// Flag the k highest scores instead of using the knee threshold.
    #[arg(long)]
    top_k: Option<usize>,
    /// Scores file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dump_plans: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::ConflictingSelectors => 1,
        e if e.is_numerical() => 3,
        _ => 2,
    }
}

fn resolve(base: RunConfig, args: &ConfigArgs) -> Result<RunConfig, Error> {
    let mut cfg = base;
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.merge_ini(&text, path)?;
    }
    for spec in &args.overrides {
        cfg.apply_override(spec)?;
    }
    if args.standardize {
        cfg.standardize = true;
    }
    Ok(cfg)
}

fn announce(cfg: &RunConfig) -> Result<(), Error> {
    cfg.validate()?;
    println!("# resolved configuration");
    print!("{}", cfg.render());
    Ok(())
}

fn load_graph(path: &Path, cfg: &RunConfig) -> Result<MultiplexGraph, Error> {
    let g = load_multiplex(path)?;
    if cfg.standardize {
        let x = g.attributes().standardized();
        g.with_attributes(x)
    } else {
        Ok(g)
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_plans(
    g: &MultiplexGraph,
    cfg: &RunConfig,
    stream: &RngStream,
    tag: &str,
    path: &Path,
) -> Result<(), Error> {
    let ctx = GraphContext::new(g);
    let plans = plan_step(&ctx, &cfg.model, &cfg.train.ablation, stream)?;
    let mut out = String::new();
    dump_plans(&mut out, tag, &plans.mask, &plans.augment);
    write_text(path, &out)
}

fn write_manifest(g: &MultiplexGraph, out: &Path) -> Result<(), Error> {
    let dir = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let stem = out
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("invalid output path {}", out.display())))?;
    let written = write_multiplex(g, dir, stem)?;
    println!("manifest={}", written.display());
    Ok(())
}

fn train_cmd(
    manifest: &Path,
    cfg_args: &ConfigArgs,
    seed: Option<u64>,
    out: &Path,
    log: Option<&Path>,
    dump: Option<&Path>,
) -> Result<(), Error> {
    let mut cfg = resolve(RunConfig::default(), cfg_args)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    announce(&cfg)?;
    let g = load_graph(manifest, &cfg)?;
    if let Some(path) = dump {
        write_plans(
            &g,
            &cfg,
            &RngStream::new(cfg.train.seed, "epoch=0"),
            "epoch=0",
            path,
        )?;
    }
    let state = umgad::train(&g, &cfg.model, &cfg.train, &cfg.loss)?;
    let log_path = log.map_or_else(
        || PathBuf::from(format!("{}.log.csv", out.display())),
        Path::to_path_buf,
    );
    state.log.write_csv(&log_path)?;
    Checkpoint {
        params: state.params,
        optimizer: Some(state.optimizer),
        epochs_done: cfg.train.epochs as u64,
        config_text: cfg.render(),
    }
    .save(out)?;
    let totals = state.log.totals();
    if let (Some(first), Some(last)) = (totals.first(), totals.last()) {
        println!("loss_first={first:.6} loss_last={last:.6}");
    }
    println!("checkpoint={} log={}", out.display(), log_path.display());
    Ok(())
}

fn score_cmd(run: &ScoreArgs, curve: Option<&Path>, report_threshold: bool) -> Result<(), Error> {
    let ck = Checkpoint::load(&run.ckpt)?;
    let base = if ck.config_text.is_empty() {
        RunConfig::default()
    } else {
        RunConfig::parse_ini(&ck.config_text, &run.ckpt)?
    };
    let mut cfg = resolve(base, &run.cfg)?;
    if let Some(s) = run.score_seed {
        cfg.detect.score_seed = s;
    }
    if let Some(k) = run.top_k {
        cfg.detect.top_k = Some(k);
    }
    announce(&cfg)?;
    let g = load_graph(&run.manifest, &cfg)?;
    let stream = RngStream::new(cfg.detect.score_seed, "score");
    if let Some(path) = &run.dump_plans {
        write_plans(&g, &cfg, &stream, "score", path)?;
    }
    let scores = score_nodes(
        &g,
        &ck.params,
        &cfg.model,
        &cfg.loss,
        &cfg.train.ablation,
        &stream,
    )?;
    let flags = match cfg.detect.top_k {
        Some(k) => classify(&scores.fused, Selector::TopK(k)),
        None => {
            let t = select_threshold(&scores.fused)?;
            if report_threshold {
                println!(
                    "method={} knee_index={} threshold={} flagged={}",
                    t.method, t.knee_index, t.threshold, t.flagged_count
                );
            }
            classify(&scores.fused, Selector::Threshold(&t))
        }
    };
    scores.write_csv(&flags, &run.out)?;
    if let Some(path) = curve {
        ScoreCurve::new(&scores.fused)?.write_csv(path)?;
    }
    if let Some(labels) = g.labels() {
        if labels.contains(&0) && labels.contains(&1) {
            print_metrics(&Metrics::evaluate(&scores.fused, &flags, labels)?);
        }
    }
    println!("scores={}", run.out.display());
    Ok(())
}

fn print_metrics(m: &Metrics) {
    println!("auc={:.4}", m.auc);
    println!("macro_f1={:.4}", m.macro_f1);
    println!(
        "precision_normal={:.4} precision_anomaly={:.4}",
        m.precision[0], m.precision[1]
    );
    println!(
        "recall_normal={:.4} recall_anomaly={:.4}",
        m.recall[0], m.recall[1]
    );
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Config { cfg } => announce(&resolve(RunConfig::default(), &cfg)?),
        Command::Generate { nodes, seed, out } => {
            announce(&RunConfig::default())?;
            let g = SbmConfig {
                nodes,
                ..SbmConfig::default()
            }
            .generate(seed)?;
            write_manifest(&g, &out)
        }
        Command::Inject {
            manifest,
            seed,
            anomalies,
            clique_size,
            out,
        } => {
            announce(&RunConfig::default())?;
            let g = load_multiplex(&manifest)?;
            let icfg = InjectConfig::with_total(anomalies, clique_size);
            let (h, _) = inject_anomalies(&g, &icfg, &RngStream::new(seed, "inject"))?;
            println!(
                "cliques={} clique_size={} attribute_outliers={}",
                icfg.n_struct, icfg.clique_size, icfg.n_attr
            );
            write_manifest(&h, &out)
        }
        Command::Train {
            manifest,
            cfg,
            seed,
            out,
            log,
            dump_plans,
        } => train_cmd(
            &manifest,
            &cfg,
            seed,
            &out,
            log.as_deref(),
            dump_plans.as_deref(),
        ),
        Command::Score { run } => score_cmd(&run, None, false),
        Command::Detect { run, curve } => score_cmd(&run, curve.as_deref(), true),
        Command::Eval { scores, labels } => {
            announce(&RunConfig::default())?;
            let (fused, flags) = AnomalyScores::read_fused(&scores)?;
            let labels = read_labels(&labels, fused.len())?;
            print_metrics(&Metrics::evaluate(&fused, &flags, &labels)?);
            Ok(())
        }
        Command::Curve { scores, out } => {
            announce(&RunConfig::default())?;
            let (fused, _) = AnomalyScores::read_fused(&scores)?;
            ScoreCurve::new(&fused)?.write_csv(&out)?;
            let t = select_threshold(&fused)?;
            println!(
                "method={} knee_index={} threshold={} flagged={}",
                t.method, t.knee_index, t.threshold, t.flagged_count
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
