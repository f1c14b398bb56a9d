//! `subtail` command-line runner.
//!
//! Results go to stdout, progress and diagnostics to stderr. Exit codes:
//! 0 success, 1 usage error, 2 data or validation error, 3 numerical abort.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use subtail::clustering::{subcluster_all, ClusterConfig};
use subtail::data_io::{
    generate_synthetic, load_config, load_features, load_report, make_split, save_features,
    RunReport, SyntheticSpec,
};
use subtail::domain::{unit_normalize, Matrix};
use subtail::experiment::{evaluate_run, run_training, write_run, REPORT_FILE};
use subtail::trainer::{ablation_grid, format_ablation_table, run_ablation_suite};
use subtail::Error;

#[derive(Parser)]
#[command(
    name = "subtail",
    version,
    about = "Sub-cluster aware training for long-tailed classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic long-tailed dataset as feature CSV.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sub-cluster the unit-normalized raw features of every class.
    Cluster {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        delta: usize,
        #[arg(long)]
        iters: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a run directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trained run on one of its splits.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum)]
        split: EvalSplit,
    },
    /// Train every warm-up/dynamic/re-weighting variant and tabulate test scores.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a run report.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum)]
        format: ReportFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalSplit {
    Valid,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    Ok(serde_json::to_string_pretty(value).map_err(Error::from)?)
}

#[derive(Serialize)]
struct ClassClusterSummary {
    class: usize,
    samples: usize,
    clusters: usize,
    sizes: Vec<usize>,
}

#[derive(Serialize)]
struct ClusterOutput {
    capacity: usize,
    delta: usize,
    iterations: usize,
    seed: u64,
    max_cluster_size: usize,
    classes: Vec<ClassClusterSummary>,
    /// Class-local cluster index of every row, in file order.
    assignment: Vec<usize>,
}

fn cluster(data: &Path, delta: usize, iters: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    let dataset = load_features(data)?;
    let rows = dataset
        .features()
        .iter_rows()
        .map(unit_normalize)
        .collect::<Result<Vec<_>, _>>()?;
    let unit = Matrix::from_rows(&rows)?;
    let config = ClusterConfig {
        delta,
        iterations: iters,
        seed,
    };
    let a = subcluster_all(&unit, dataset.labels(), dataset.num_classes(), &config)?;
    let output = ClusterOutput {
        capacity: a.capacity,
        delta,
        iterations: iters,
        seed,
        max_cluster_size: a.max_cluster_size(),
        classes: a
            .classes
            .iter()
            .enumerate()
            .map(|(c, cls)| ClassClusterSummary {
                class: c,
                samples: cls.members.len(),
                clusters: cls.clusters.cluster_count(),
                sizes: cls.clusters.sizes.clone(),
            })
            .collect(),
        assignment: a.sample_cluster.clone(),
    };
    write_file(out, &(to_json(&output)? + "\n"))?;
    let counts: Vec<String> = output
        .classes
        .iter()
        .map(|c| c.clusters.to_string())
        .collect();
    println!(
        "{{\"capacity\":{},\"max_cluster_size\":{},\"clusters_per_class\":[{}]}}",
        output.capacity,
        output.max_cluster_size,
        counts.join(",")
    );
    Ok(())
}

fn train(data: &Path, config_path: &Path, out: &Path) -> Result<(), Failure> {
    let (config, text) = load_config(config_path)?;
    let dataset = load_features(data)?;
    let data_path = fs::canonicalize(data).map_err(|e| io_error(data, e))?;
    let started = Instant::now();
    let total = config.total_epochs;
    let artifacts = run_training(&dataset, &config, &text, |r| {
        let mut line = format!(
            "epoch {}/{}{} contrastive={:.6}",
            r.epoch,
            total,
            if r.warmup { " warmup" } else { "" },
            r.contrastive_loss
        );
        if let Some(ce) = r.classification_loss {
            let _ = write!(line, " ce={ce:.6}");
        }
        if r.reclustered {
            line.push_str(" reclustered");
        }
        eprintln!("{line}");
    })?;
    write_run(out, &data_path.to_string_lossy(), &artifacts)?;
    eprintln!("trained in {:.1}s", started.elapsed().as_secs_f64());
    let m = &artifacts.report.metrics;
    println!(
        "{{\"valid_balanced_accuracy\":{},\"test_balanced_accuracy\":{},\"test_balanced_f1\":{}}}",
        m["valid"].balanced_accuracy, m["test"].balanced_accuracy, m["test"].balanced_f1
    );
    Ok(())
}

fn threads_from_env() -> Result<usize, Failure> {
    match std::env::var("SUBTAIL_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Failure::Usage(format!(
                "SUBTAIL_THREADS must be a positive integer, got {v:?}"
            ))),
        },
    }
}

fn ablate(data: &Path, config_path: &Path, out: &Path) -> Result<(), Failure> {
    let threads = threads_from_env()?;
    let (config, _) = load_config(config_path)?;
    let dataset = load_features(data)?;
    let split = make_split(&dataset, &config.split, config.seed)?;
    let train_set = dataset.subset(&split.train)?;
    let test_set = dataset.subset(&split.test)?;
    let variants = ablation_grid();
    eprintln!(
        "ablating {} variants on {} threads",
        variants.len(),
        threads
    );
    let started = Instant::now();
    let rows = run_ablation_suite(&train_set, &test_set, &config, &variants, threads)?;
    eprintln!(
        "ablation finished in {:.1}s",
        started.elapsed().as_secs_f64()
    );
    let table = format_ablation_table(&rows);
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    write_file(&out.join("ablation.tsv"), &table)?;
    write_file(&out.join("ablation.json"), &(to_json(&rows)? + "\n"))?;
    print!("{table}");
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per epoch; `w{c}` columns hold the class weights in effect.
fn report_csv(report: &RunReport) -> String {
    let k = report
        .epochs
        .iter()
        .find_map(|e| e.weights.as_ref().map(Vec::len))
        .unwrap_or(0);
    let mut out = String::from("epoch,warmup,reclustered,contrastive_loss,classification_loss");
    for c in 0..k {
        let _ = write!(out, ",w{c}");
    }
    out.push('\n');
    for e in &report.epochs {
        let _ = write!(
            out,
            "{},{},{},{},{}",
            e.epoch,
            e.warmup as u8,
            e.reclustered as u8,
            e.contrastive_loss,
            opt(e.classification_loss)
        );
        for c in 0..k {
            let _ = write!(out, ",{}", opt(e.weights.as_ref().map(|w| w[c])));
        }
        out.push('\n');
    }
    out
}

fn report(run: &Path, format: ReportFormat) -> Result<(), Failure> {
    let report = load_report(&run.join(REPORT_FILE))?;
    match format {
        ReportFormat::Json => println!("{}", serde_json::to_string(&report).map_err(Error::from)?),
        ReportFormat::Csv => print!("{}", report_csv(&report)),
    }
    Ok(())
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Generate { spec, out } => {
            let text = fs::read_to_string(&spec).map_err(|e| io_error(&spec, e))?;
            let spec: SyntheticSpec = toml::from_str(&text).map_err(Error::from)?;
            let dataset = generate_synthetic(&spec)?;
            save_features(&dataset, &out)?;
            println!(
                "{{\"samples\":{},\"classes\":{},\"dim\":{},\"class_counts\":{:?}}}",
                dataset.len(),
                dataset.num_classes(),
                dataset.dim(),
                dataset.class_counts()
            );
            Ok(())
        }
        Command::Cluster {
            data,
            delta,
            iters,
            seed,
            out,
        } => cluster(&data, delta, iters, seed, &out),
        Command::Train { data, config, out } => train(&data, &config, &out),
        Command::Evaluate { run, split } => {
            let name = match split {
                EvalSplit::Valid => "valid",
                EvalSplit::Test => "test",
            };
            let m = evaluate_run(&run, name)?;
            println!("{}", serde_json::to_string(&m).map_err(Error::from)?);
            Ok(())
        }
        Command::Ablate { data, config, out } => ablate(&data, &config, &out),
        Command::Report { run, format } => report(&run, format),
    }
}

fn diagnostic(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message.replace('\n', " ") });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid usage");
            diagnostic("usage", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            diagnostic("usage", &m);
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => match e {
            Error::NumericalAbort { .. } | Error::Diverged => {
                diagnostic("numerical", &e.to_string());
                ExitCode::from(3)
            }
            _ => {
                diagnostic("data", &e.to_string());
                ExitCode::from(2)
            }
        },
    }
}
