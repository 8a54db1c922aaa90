use std::error::Error;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use brb_core::adversary::Strategy;
use brb_core::experiment::{compare, read_rows, run_experiment, run_single, with_jobs, ExperimentConfig};
use brb_core::props::{run_suite, small_fixtures};
use brb_core::sim::LinkModel;
use brb_core::topology::{generate_regular_graph, TopologySpec};
use brb_core::ModificationConfig;
use clap::{Parser, Subcommand};

type CliResult<T> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "brb", version, about = "Byzantine reliable broadcast simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random k-regular graph with connectivity at least 2f+1.
    GenGraph {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        f: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write `i: neighbors` lines instead of the graph file format.
        #[arg(long)]
        canonical: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the sweep described by an experiment config and write CSV rows.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// CSV destination; defaults to `run.output`, then stdout. With
        /// `--trace` or `--dump-paths` the JSON run report goes here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads, 0 for one per core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// First seed; repetition i uses seed+i.
        #[arg(long)]
        seed: Option<u64>,
        /// Frame trace of a single-run config: `time sender receiver mtype bits`.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Path store dump of a single-run config, JSON lines.
        #[arg(long)]
        dump_paths: Option<PathBuf>,
    },
    /// Per-seed latency and bits deltas of a candidate CSV against a baseline.
    Compare {
        baseline: PathBuf,
        candidate: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the BRB properties over small graphs and every corrupt set.
    Props {
        #[arg(long, value_delimiter = ',', default_value = "4,7,10")]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0,1")]
        f: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "bd,bdopt,latbdw")]
        presets: Vec<String>,
        /// Strategy names, or `all`.
        #[arg(long, value_delimiter = ',', default_value = "all")]
        strategies: Vec<String>,
        #[arg(long, default_value_t = 16)]
        payload: usize,
        #[arg(long = "async")]
        asynchronous: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// JSON summary destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn sink(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| format!("{}: {e}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn gen_graph(n: usize, k: usize, f: usize, seed: u64, canonical: bool, out: Option<&Path>) -> CliResult<()> {
    let g = generate_regular_graph(&TopologySpec::new(n, k, f, seed))?;
    let text = if canonical {
        g.to_canonical_string()
    } else {
        g.to_file_string()
    };
    let mut w = sink(out)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

struct RunArgs {
    config: PathBuf,
    out: Option<PathBuf>,
    jobs: usize,
    seed: Option<u64>,
    trace: Option<PathBuf>,
    dump_paths: Option<PathBuf>,
}

fn run(a: RunArgs) -> CliResult<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.run.seed = s;
        cfg.run.seeds = None;
    }
    if a.trace.is_some() || a.dump_paths.is_some() {
        let mut trace = a.trace.as_deref().map(|p| sink(Some(p))).transpose()?;
        let mut paths = a.dump_paths.as_deref().map(|p| sink(Some(p))).transpose()?;
        let report = run_single(
            &cfg,
            trace.as_mut().map(|w| w as &mut dyn Write),
            paths.as_mut().map(|w| w as &mut dyn Write),
        )?;
        for w in trace.iter_mut().chain(paths.iter_mut()) {
            w.flush()?;
        }
        let mut w = sink(a.out.as_deref())?;
        writeln!(w, "{}", report.to_json())?;
        w.flush()?;
        return Ok(());
    }
    let outcome = with_jobs(a.jobs, || run_experiment(&cfg))?;
    for (n, k, f, why) in &outcome.skipped {
        eprintln!("skipped n={n} k={k} f={f}: {why}");
    }
    let dest = a.out.or(cfg.run.output.clone());
    let w = sink(dest.as_deref())?;
    outcome.write_csv(w)?;
    Ok(())
}

fn compare_files(baseline: &Path, candidate: &Path, out: Option<&Path>) -> CliResult<()> {
    let open = |p: &Path| File::open(p).map_err(|e| format!("{}: {e}", p.display()));
    let base = read_rows(open(baseline)?)?;
    let cand = read_rows(open(candidate)?)?;
    let cmp = compare(&base, &cand)?;
    let mut w = sink(out)?;
    w.write_all(cmp.to_table().as_bytes())?;
    w.flush()?;
    Ok(())
}

struct PropsArgs {
    n: Vec<usize>,
    f: Vec<usize>,
    presets: Vec<String>,
    strategies: Vec<String>,
    payload: usize,
    asynchronous: bool,
    seed: u64,
    jobs: usize,
    out: Option<PathBuf>,
}

fn props(a: PropsArgs) -> CliResult<bool> {
    let presets: Vec<(String, ModificationConfig)> = a
        .presets
        .iter()
        .map(|p| Ok((p.clone(), p.parse()?)))
        .collect::<CliResult<_>>()?;
    let strategies: Vec<Strategy> = if a.strategies.iter().any(|s| s == "all") {
        Strategy::ALL.to_vec()
    } else {
        a.strategies.iter().map(|s| s.parse()).collect::<Result<_, String>>()?
    };
    let link = if a.asynchronous {
        LinkModel::asynchronous()
    } else {
        LinkModel::default()
    };
    let fixtures = small_fixtures(&a.n, &a.f, a.seed);
    let named: Vec<(&str, ModificationConfig)> = presets.iter().map(|(n, c)| (n.as_str(), *c)).collect();
    // One fixture per task; the summaries are merged in fixture order.
    let parts = with_jobs(a.jobs, || {
        use rayon::prelude::*;
        fixtures
            .par_iter()
            .map(|fx| run_suite(std::slice::from_ref(fx), &named, &strategies, link, a.payload))
            .collect::<Vec<_>>()
    });
    let mut runs = 0;
    let mut violations = Vec::new();
    for p in parts {
        runs += p.runs;
        violations.extend(p.violations);
    }
    eprintln!(
        "{} fixtures, {runs} runs, {} violations",
        fixtures.len(),
        violations.len()
    );
    let ok = violations.is_empty();
    let mut w = sink(a.out.as_deref())?;
    serde_json::to_writer_pretty(
        &mut w,
        &serde_json::json!({ "fixtures": fixtures.len(), "runs": runs, "violations": violations }),
    )?;
    writeln!(w)?;
    w.flush()?;
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenGraph {
            n,
            k,
            f,
            seed,
            canonical,
            out,
        } => gen_graph(n, k, f, seed, canonical, out.as_deref()).map(|_| true),
        Command::Run {
            config,
            out,
            jobs,
            seed,
            trace,
            dump_paths,
        } => run(RunArgs {
            config,
            out,
            jobs,
            seed,
            trace,
            dump_paths,
        })
        .map(|_| true),
        Command::Compare {
            baseline,
            candidate,
            out,
        } => compare_files(&baseline, &candidate, out.as_deref()).map(|_| true),
        Command::Props {
            n,
            f,
            presets,
            strategies,
            payload,
            asynchronous,
            seed,
            jobs,
            out,
        } => props(PropsArgs {
            n,
            f,
            presets,
            strategies,
            payload,
            asynchronous,
            seed,
            jobs,
            out,
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
