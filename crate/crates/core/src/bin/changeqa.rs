use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use changeqa::calibrate::{
    metric_agreement, read_labeled_scores, roc_sweep, simulate_bon, simulate_convergence, topk_consistency, Direction,
    MetricAnnotation, RankAnnotation,
};
use changeqa::config::Config;
use changeqa::pipeline::{load_manifest, LoadedPair, Pipeline};
use changeqa::qa::dataset_stats;
use changeqa::review::{load_dataset, run_blocking, AnnotationStore, ReviewState};
use changeqa::{Error, Result};

#[derive(Parser)]
#[command(name = "changeqa", version, about = "Change question-answer dataset curation and calibration")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirArg {
    Higher,
    Lower,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the dataset from a pairs manifest.
    Run {
        #[arg(long)]
        pairs: PathBuf,
    },
    /// Class distribution and question-length statistics of a dataset.
    Stats {
        /// Defaults to `<out>/dataset.jsonl`.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Push random crops through the screening and judging stages.
    RandomCropAudit {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n_crops: usize,
    },
    /// ROC sweep and Youden threshold over `sample_id,score,label` rows.
    CalibrateIou {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, value_enum, default_value = "lower")]
        direction: DirArg,
    },
    /// Top-k consistency curve from `{query_id, rank, agree}` JSONL.
    EvalTopk {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value_t = 5)]
        k_max: usize,
    },
    /// Per-metric approval rates from `{query_id, metric, approved}` JSONL.
    EvalMetrics {
        #[arg(long)]
        annotations: PathBuf,
    },
    /// Monte Carlo check of the Best-of-N acceptance probability.
    SimulateBon {
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.2,0.5")]
        p: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,5,10")]
        n: Vec<u32>,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
    },
    /// Threshold ERM under flipped pseudo-labels.
    SimulateConvergence {
        #[arg(long, default_value_t = 0.3)]
        epsilon: f64,
        #[arg(long, value_delimiter = ',', default_value = "50,100,200,500,1000,2000,5000")]
        n: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        trials: usize,
    },
    /// Serve the human review API and UI.
    ReviewServe {
        #[arg(long)]
        dataset: PathBuf,
        /// Pairs manifest, for serving images.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long, default_value = "annotations.jsonl")]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, default_value_t = 3)]
        panel_size: usize,
        /// Directory holding the review UI bundle.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => return Err(Error::Config("--config is required for this command".into())),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(|e| Error::Io { path: d.into(), source: e })?;
    }
    fs::write(path, body).map_err(|e| Error::Io { path: path.into(), source: e })
}

/// Writes `<out>/<name>.json` and, when given, `<out>/<name>.csv`.
fn report<T: Serialize>(cli: &Cli, name: &str, value: &T, csv: Option<String>) -> Result<()> {
    let json = serde_json::to_string_pretty(value)? + "\n";
    write(&cli.out.join(format!("{name}.json")), &json)?;
    if let Some(c) = csv {
        write(&cli.out.join(format!("{name}.csv")), &c)?;
    }
    println!("report: {}", cli.out.join(format!("{name}.json")).display());
    Ok(())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Schema(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn dispatch(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.cmd {
        Cmd::Run { pairs } => {
            let pipeline = Pipeline::from_config(load_config(cli)?)?;
            let out = pipeline.run(&load_manifest(pairs)?);
            out.write(&cli.out)?;
            let s = &out.stats;
            println!("pairs              {:>8} ({} failed)", s.pairs_total, s.pairs_failed);
            println!("candidates         {:>8}", s.total_candidates);
            println!("rejected patch     {:>8}", s.rejected_patch);
            println!("rejected encoder   {:>8}", s.rejected_encoder);
            println!("directly accepted  {:>8}", s.directly_accepted);
            println!("forwarded to judge {:>8}", s.forwarded_to_judge);
            println!("accepted judge     {:>8}", s.accepted_judge);
            println!("rejected judge     {:>8} ({} confirmed no-change)", s.rejected_judge, s.no_change_confirmed);
            println!("rows               {:>8} change, {} no-change", s.change_rows, s.no_change_rows);
            println!("output: {}", cli.out.display());
            s.check_identities()
        }
        Cmd::Stats { dataset } => {
            let path = dataset.clone().unwrap_or_else(|| cli.out.join("dataset.jsonl"));
            let text = fs::read_to_string(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            let r = dataset_stats(&text);
            println!("rows {} (change {}, no-change {}), malformed {}", r.rows, r.change_rows, r.no_change_rows, r.malformed);
            println!("{:<20} {:>8} {:>10}", "class", "count", "proportion");
            for c in &r.classes {
                println!("{:<20} {:>8} {:>10.2}", c.class, c.count, c.proportion);
            }
            let mut csv = String::from("x,y\n");
            for (w, n) in &r.question_words {
                csv.push_str(&format!("{w},{n}\n"));
            }
            report(cli, "dataset_stats", &r, Some(csv))
        }
        Cmd::RandomCropAudit { pairs, n_crops } => {
            let cfg = load_config(cli)?;
            let audit_seed = cfg.seed;
            let pipeline = Pipeline::from_config(cfg)?;
            let k = pipeline.classes.len();
            let loaded = load_manifest(pairs)?
                .iter()
                .map(|e| LoadedPair::load(e, k))
                .collect::<Result<Vec<_>>>()?;
            let r = pipeline.random_crop_audit(&loaded, *n_crops, audit_seed)?;
            println!("crops {}  passed {}  pass rate {:.4} ± {:.4}", r.n_crops, r.passed, r.pass_rate, r.standard_error);
            println!("rejected: patch {}  encoder {}  judge {}", r.rejected_patch, r.rejected_encoder, r.rejected_judge);
            report(cli, "random_crop_audit", &r, None)
        }
        Cmd::CalibrateIou { scores, direction } => {
            let dir = match direction {
                DirArg::Higher => Direction::HigherIsPositive,
                DirArg::Lower => Direction::LowerIsPositive,
            };
            let r = roc_sweep(&read_labeled_scores(scores)?, dir)?;
            println!("positives {}  negatives {}", r.positives, r.negatives);
            println!("AUC {:.4}  Youden J {:.4} at threshold {}", r.auc, r.youden_j, r.best_threshold);
            let mut csv = String::from("x,y\n");
            for p in &r.points {
                csv.push_str(&format!("{},{}\n", p.fpr, p.tpr));
            }
            report(cli, "calibrate_iou", &r, Some(csv))
        }
        Cmd::EvalTopk { annotations, k_max } => {
            let a: Vec<RankAnnotation> = read_jsonl(annotations)?;
            let curve = topk_consistency(&a, *k_max)?;
            println!("{:>3} {:>8}", "k", "A(k)");
            let mut csv = String::from("x,y\n");
            for (i, v) in curve.iter().enumerate() {
                println!("{:>3} {:>8.4}", i + 1, v);
                csv.push_str(&format!("{},{}\n", i + 1, v));
            }
            report(cli, "eval_topk", &curve, Some(csv))
        }
        Cmd::EvalMetrics { annotations } => {
            let a: Vec<MetricAnnotation> = read_jsonl(annotations)?;
            let rows = metric_agreement(&a)?;
            println!("{:<14} {:>8} {:>8} {:>8}", "metric", "queries", "approved", "rate");
            for r in &rows {
                println!("{:<14} {:>8} {:>8} {:>7.1}%", r.metric, r.queries, r.approved, 100.0 * r.rate);
            }
            report(cli, "eval_metrics", &rows, None)
        }
        Cmd::SimulateBon { p, n, trials } => {
            let cells = simulate_bon(p, n, *trials, seed)?;
            println!("{:>6} {:>4} {:>10} {:>10} {:>8}", "p", "N", "analytic", "empirical", "z");
            let mut csv = String::from("p,x,y\n");
            for c in &cells {
                println!("{:>6} {:>4} {:>10.5} {:>10.5} {:>8.2}", c.p, c.n, c.analytic, c.empirical, c.z);
                csv.push_str(&format!("{},{},{}\n", c.p, c.n, c.empirical));
            }
            report(cli, "simulate_bon", &cells, Some(csv))
        }
        Cmd::SimulateConvergence { epsilon, n, trials } => {
            let curve = simulate_convergence(*epsilon, n, *trials, seed)?;
            println!("{:>7} {:>10} {:>10}", "n", "error", "se");
            let mut csv = String::from("x,y\n");
            for c in &curve {
                println!("{:>7} {:>10.5} {:>10.5}", c.n, c.mean_error, c.standard_error);
                csv.push_str(&format!("{},{}\n", c.n, c.mean_error));
            }
            report(cli, "simulate_convergence", &curve, Some(csv))
        }
        Cmd::ReviewServe {
            dataset,
            pairs,
            store,
            bind,
            panel_size,
            static_dir,
        } => {
            let pairs = match pairs {
                Some(p) => load_manifest(p)?,
                None => Vec::new(),
            };
            let state = ReviewState::new(load_dataset(dataset)?, &pairs, AnnotationStore::open(store)?, *panel_size);
            run_blocking(*bind, state, static_dir.clone())
        }
    }
}
