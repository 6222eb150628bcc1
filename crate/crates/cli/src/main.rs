//! `edgeq` — run simulations, compare schemes, and inspect the building blocks.
//!
//! Exit status: 0 on success, 2 for bad arguments or input files, 1 when a
//! run itself fails.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use edgeq_core::estimate::fit_lognormal3;
use edgeq_core::profiling::{build_profile, kmeans, read_observations};
use edgeq_core::sim::metrics::{summary_csv, SummaryRow};
use edgeq_core::sim::{self, replay, EventTrace, ExperimentConfig, RunMetrics, Scheme, SimError};
use edgeq_core::vision::{detect, read_pnm, DetectionConfig};

#[derive(Parser)]
#[command(name = "edgeq", version, about = "Cloud-edge video query simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and write its trace and summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's scheme.
        #[arg(long)]
        scheme: Option<String>,
        /// Directory for trace.jsonl, summary.csv and queues.csv; summary
        /// goes to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Run all four schemes over several seeds.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Directory for summary.csv and per_seed.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Detect moving objects in a directory of frames.
    Detect {
        /// Directory of PGM/PPM frames, processed in file-name order.
        #[arg(long)]
        input: PathBuf,
        /// TOML file with detection settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit a three-parameter lognormal to a `latency_s` CSV.
    Fit {
        #[arg(long)]
        input: PathBuf,
    },
    /// Cluster cameras by the class mix in a `camera_id,label` CSV.
    Cluster {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
    },
    /// Recompute the summary row from a stored trace.
    Replay {
        #[arg(long)]
        input: PathBuf,
        /// Scheme name written in the summary row.
        #[arg(long)]
        scheme: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

enum Failure {
    /// Bad arguments or unusable input.
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        if e.is_config() {
            Failure::Input(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Input(e.into())
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("edgeq: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("edgeq: {}", one_line(&e));
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("edgeq: {}", one_line(&e));
            ExitCode::from(1)
        }
    }
}

fn one_line(e: &anyhow::Error) -> String {
    format!("{e:#}").replace('\n', " ")
}

fn execute(cmd: Cmd) -> Outcome {
    match cmd {
        Cmd::Run {
            config,
            seed,
            scheme,
            out,
            force,
        } => cmd_run(&config, seed, scheme.as_deref(), out.as_deref(), force),
        Cmd::Compare {
            config,
            seeds,
            jobs,
            out,
            force,
        } => cmd_compare(&config, &seeds, jobs, out.as_deref(), force),
        Cmd::Detect { input, config } => cmd_detect(&input, config.as_deref()),
        Cmd::Fit { input } => cmd_fit(&input),
        Cmd::Cluster {
            input,
            k,
            seed,
            max_iters,
        } => cmd_cluster(&input, k, seed, max_iters),
        Cmd::Replay {
            input,
            scheme,
            out,
            force,
        } => cmd_replay(&input, &scheme, out.as_deref(), force),
    }
}

/// Refuses to clobber existing files unless `force` is set.
fn prepare_out(dir: &Path, files: &[&str], force: bool) -> Outcome {
    if !force {
        if let Some(f) = files.iter().map(|f| dir.join(f)).find(|p| p.exists()) {
            return Err(input(anyhow!("{} exists; pass --force to overwrite", f.display())));
        }
    }
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(runtime)
}

fn write_file(path: &Path, contents: &[u8]) -> Outcome {
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)
}

fn stdout(text: &str) -> Outcome {
    io::stdout().lock().write_all(text.as_bytes()).map_err(runtime)
}

fn queues_csv(m: &RunMetrics) -> String {
    let mut out = String::from("device,t,q\n");
    for (dev, series) in m.queue_series.iter().enumerate() {
        for (t, q) in series {
            let _ = writeln!(out, "{dev},{t},{q}");
        }
    }
    out
}

fn cmd_run(config: &Path, seed: Option<u64>, scheme: Option<&str>, out: Option<&Path>, force: bool) -> Outcome {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(s) = scheme {
        cfg.scheme.scheme = s.parse::<Scheme>()?;
    }
    let files = ["trace.jsonl", "summary.csv", "queues.csv"];
    if let Some(dir) = out {
        prepare_out(dir, &files, force)?;
    }
    let run = sim::run(&cfg)?;
    let summary = summary_csv(&[SummaryRow::from_run(cfg.scheme.scheme.as_str(), &run.metrics)]);
    match out {
        Some(dir) => {
            write_file(&dir.join(files[0]), run.trace.to_jsonl().as_bytes())?;
            write_file(&dir.join(files[1]), summary.as_bytes())?;
            write_file(&dir.join(files[2]), queues_csv(&run.metrics).as_bytes())
        }
        None => stdout(&summary),
    }
}

fn cmd_compare(config: &Path, seeds: &[u64], jobs: usize, out: Option<&Path>, force: bool) -> Outcome {
    let cfg = ExperimentConfig::load(config)?;
    let files = ["summary.csv", "per_seed.csv"];
    if let Some(dir) = out {
        prepare_out(dir, &files, force)?;
    }
    let cmp = sim::compare_schemes(&cfg, seeds, jobs)?;
    let summary = summary_csv(&cmp.rows);
    if let Some(dir) = out {
        let mut per_seed = String::from("seed,");
        for r in &cmp.per_seed {
            let body = summary_csv(&r.rows);
            let mut lines = body.lines();
            if per_seed == "seed," {
                per_seed.push_str(lines.next().unwrap_or_default());
                per_seed.push('\n');
            } else {
                lines.next();
            }
            for l in lines {
                let _ = writeln!(per_seed, "{},{l}", r.seed);
            }
        }
        write_file(&dir.join(files[0]), summary.as_bytes())?;
        write_file(&dir.join(files[1]), per_seed.as_bytes())?;
    }
    stdout(&summary)
}

fn cmd_detect(dir: &Path, config: Option<&Path>) -> Outcome {
    let cfg = match config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))
                .map_err(input)?;
            let cfg: DetectionConfig = toml::from_str(&text)
                .with_context(|| format!("parsing {}", p.display()))
                .map_err(input)?;
            cfg
        }
        None => DetectionConfig::default(),
    };
    cfg.validate().map_err(input)?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))
        .map_err(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm")))
        .collect();
    paths.sort();
    if paths.len() < 3 {
        return Err(input(anyhow!("{} holds fewer than three frames", dir.display())));
    }
    let frames = paths
        .iter()
        .map(|p| read_pnm(p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(input)?;
    let mut out = String::from("frame,x,y,w,h\n");
    for (i, w) in frames.windows(3).enumerate() {
        let name = paths[i + 1].file_name().unwrap_or_default().to_string_lossy();
        for b in detect(&w[0], &w[1], &w[2], &cfg).map_err(input)? {
            let _ = writeln!(out, "{name},{},{},{},{}", b.x, b.y, b.w, b.h);
        }
    }
    stdout(&out)
}

fn read_latencies(path: &Path) -> anyhow::Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    if headers.len() != 1 || &headers[0] != "latency_s" {
        return Err(anyhow!("{}: expected a single `latency_s` column", path.display()));
    }
    rdr.deserialize::<f64>()
        .enumerate()
        .map(|(i, r)| r.with_context(|| format!("{}: row {}", path.display(), i + 2)))
        .collect()
}

fn cmd_fit(path: &Path) -> Outcome {
    let xs = read_latencies(path).map_err(input)?;
    let fit = fit_lognormal3(&xs).map_err(runtime)?;
    stdout(&format!(
        "gamma,mu,sigma,root_found\n{},{},{},{}\n",
        fit.gamma, fit.mu, fit.sigma, fit.root_found
    ))
}

fn cmd_cluster(path: &Path, k: usize, seed: u64, max_iters: usize) -> Outcome {
    let file = fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(input)?;
    let obs = read_observations(BufReader::new(file)).map_err(input)?;
    let profiles = build_profile(&obs);
    let fit = kmeans(&profiles, k, seed, max_iters).map_err(input)?;
    let mut out = String::from("camera_id,cluster\n");
    for (cam, c) in &fit.membership {
        let _ = writeln!(out, "{cam},{c}");
    }
    eprintln!("wcss={} iterations={}", fit.wcss(), fit.iterations);
    stdout(&out)
}

fn cmd_replay(path: &Path, scheme: &str, out: Option<&Path>, force: bool) -> Outcome {
    let scheme: Scheme = scheme.parse()?;
    let file = fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(input)?;
    let trace = EventTrace::read_jsonl(BufReader::new(file)).map_err(|e| match e {
        SimError::Trace(_) => input(e),
        e => Failure::from(e),
    })?;
    let metrics = replay(&trace, 0).map_err(input)?;
    let summary = summary_csv(&[SummaryRow::from_run(scheme.as_str(), &metrics)]);
    match out {
        Some(dir) => {
            prepare_out(dir, &["summary.csv", "queues.csv"], force)?;
            write_file(&dir.join("summary.csv"), summary.as_bytes())?;
            write_file(&dir.join("queues.csv"), queues_csv(&metrics).as_bytes())
        }
        None => stdout(&summary),
    }
}
