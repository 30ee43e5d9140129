//! Command-line front door: validate decks, run single simulations, expand
//! parameter sweeps, and post-process isotope ratios. Logging goes to stderr;
//! data only to files under the output directory.

use clap::{Parser, Subcommand};
use retort::deck::{parse_deck_with_warnings, SimulationDeck};
use retort::orchestrator::{compute_delta15n, run_simulation, write_outputs, RunError, RunOutputs};
use retort::sweep::{generate_replicas, summarize_ensemble};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_OK: u8 = 0;
const EXIT_DECK: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_AUDIT: u8 = 4;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "retort", version, about = "Bioreactive transport simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Suppress informational logging.
    #[arg(long, global = true)]
    quiet: bool,
    /// Extra diagnostic logging.
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and validate a deck without running it.
    Check {
        #[arg(long)]
        deck: PathBuf,
    },
    /// Run one simulation and write grid/timeseries/flux/probes CSVs.
    Run {
        #[arg(long)]
        deck: PathBuf,
        /// Output directory (default $RETORT_OUT or ./out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expand the deck's sweep block and run every replica.
    Sweep {
        #[arg(long)]
        deck: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent replica runs.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Override the deck's sweep seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute (R_S, delta-15N) from two columns of a timeseries.csv.
    Iso {
        #[arg(long)]
        timeseries: PathBuf,
        /// Column holding the light-isotope concentration.
        #[arg(long)]
        n14: String,
        /// Column holding the heavy-isotope concentration.
        #[arg(long)]
        n15: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Log {
    quiet: bool,
    verbose: bool,
}

impl Log {
    fn info(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("retort: {}", msg.as_ref());
        }
    }

    fn debug(&self, msg: impl AsRef<str>) {
        if self.verbose && !self.quiet {
            eprintln!("retort: {}", msg.as_ref());
        }
    }

    fn error(&self, msg: impl AsRef<str>) {
        eprintln!("retort: error: {}", msg.as_ref());
    }
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("RETORT_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn load_deck(path: &Path, log: &Log) -> Result<SimulationDeck, u8> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        log.error(format!("cannot read {}: {e}", path.display()));
        EXIT_DECK
    })?;
    let file = path.display().to_string();
    let (parsed, warnings) = parse_deck_with_warnings(&text);
    for w in &warnings {
        eprintln!("{}", w.render(&file));
    }
    match parsed {
        Ok(deck) => Ok(deck),
        Err(diags) => {
            for d in &diags {
                eprintln!("{}", d.render(&file));
            }
            Err(EXIT_DECK)
        }
    }
}

fn run_error_code(e: &RunError) -> u8 {
    match e {
        RunError::Deck(_) => EXIT_DECK,
        RunError::Audit { .. } => EXIT_AUDIT,
        RunError::Solver { .. } | RunError::Io { .. } => EXIT_SOLVER,
    }
}

fn report_run_error(e: &RunError, log: &Log) -> u8 {
    if let RunError::Deck(diags) = e {
        for d in diags {
            eprintln!("{}", d.render("deck"));
        }
    } else {
        log.error(e.to_string());
    }
    run_error_code(e)
}

fn summary_line(out: &RunOutputs) -> String {
    let days = out.snapshots.last().map(|s| s.time).unwrap_or(0.0);
    let worst = out
        .audit
        .worst()
        .map(|(name, e)| format!("{name} {e:.2e}"))
        .unwrap_or_else(|| "none".to_string());
    format!(
        "done: {} steps, {days:.4} days simulated, worst audit closure: {worst}",
        out.steps
    )
}

fn cmd_check(deck_path: &Path, log: &Log) -> u8 {
    match load_deck(deck_path, log) {
        Ok(deck) => {
            println!(
                "OK: {} elements, {} materials, {} species, {} reactions, {} equilibria",
                deck.grid.elements,
                deck.materials.len(),
                deck.species.entries.len(),
                deck.reactions.len(),
                deck.equilibria.len()
            );
            EXIT_OK
        }
        Err(code) => code,
    }
}

fn cmd_run(deck_path: &Path, out: Option<PathBuf>, log: &Log) -> u8 {
    let deck = match load_deck(deck_path, log) {
        Ok(d) => d,
        Err(code) => return code,
    };
    let dir = out_dir(out);
    let base = deck_path.parent().unwrap_or(Path::new("."));
    log.debug(format!("running {} into {}", deck_path.display(), dir.display()));
    match run_simulation(deck, base) {
        Ok(outputs) => {
            if let Err(e) = write_outputs(&outputs, &dir) {
                return report_run_error(&e, log);
            }
            log.info(format!("wrote outputs to {}", dir.display()));
            println!("{}", summary_line(&outputs));
            EXIT_OK
        }
        Err(e) => report_run_error(&e, log),
    }
}

fn cmd_sweep(
    deck_path: &Path,
    out: Option<PathBuf>,
    workers: usize,
    seed: Option<u64>,
    log: &Log,
) -> u8 {
    let mut deck = match load_deck(deck_path, log) {
        Ok(d) => d,
        Err(code) => return code,
    };
    let Some(mut spec) = deck.sweep.clone() else {
        log.error("deck has no [SWEEP] block");
        return EXIT_DECK;
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    deck.sweep = Some(spec.clone());
    let replicas = match generate_replicas(&deck, &spec) {
        Ok(r) => r,
        Err(e) => {
            log.error(e.to_string());
            return EXIT_DECK;
        }
    };
    let dir = out_dir(out);
    let base = deck_path.parent().unwrap_or(Path::new("."));
    log.info(format!("{} replicas, {} workers", replicas.len(), workers.max(1)));

    // run replicas, optionally in parallel; results keep their index order
    let n = replicas.len();
    let mut results: Vec<Option<Result<RunOutputs, RunError>>> = Vec::new();
    results.resize_with(n, || None);
    let workers = workers.max(1).min(n.max(1));
    if workers <= 1 {
        for (i, rep) in replicas.into_iter().enumerate() {
            results[i] = Some(run_simulation(rep, base));
        }
    } else {
        let jobs: Vec<(usize, SimulationDeck)> = replicas.into_iter().enumerate().collect();
        let slots: Vec<std::sync::Mutex<Option<Result<RunOutputs, RunError>>>> =
            (0..n).map(|_| std::sync::Mutex::new(None)).collect();
        let next = std::sync::atomic::AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if idx >= jobs.len() {
                        break;
                    }
                    let (i, rep) = &jobs[idx];
                    let res = run_simulation(rep.clone(), base);
                    *slots[*i].lock().unwrap() = Some(res);
                });
            }
        });
        for (i, slot) in slots.into_iter().enumerate() {
            results[i] = slot.into_inner().unwrap();
        }
    }

    let mut outputs = Vec::with_capacity(n);
    for (i, res) in results.into_iter().enumerate() {
        match res.expect("every replica executed") {
            Ok(o) => outputs.push(o),
            Err(e) => {
                log.error(format!("replica {i}: {e}"));
                return run_error_code(&e);
            }
        }
    }

    // per-replica output directories plus the ensemble summary
    for (i, o) in outputs.iter().enumerate() {
        let sub = dir.join(format!("replica_{i:03}"));
        if let Err(e) = write_outputs(o, &sub) {
            return report_run_error(&e, log);
        }
    }
    if let Some((species, element)) = &spec.summary {
        let series: Vec<Vec<(f64, f64)>> = outputs
            .iter()
            .filter_map(|o| o.probe_series(species, *element))
            .collect();
        if series.len() != outputs.len() {
            log.error(format!("summary probe `{species}` missing from some replicas"));
            return EXIT_SOLVER;
        }
        let summary = match summarize_ensemble(&series) {
            Ok(s) => s,
            Err(e) => {
                log.error(e.to_string());
                return EXIT_SOLVER;
            }
        };
        let path = dir.join("ensemble.csv");
        if let Err(e) = write_ensemble(&path, &summary, spec.seed) {
            log.error(format!("cannot write {}: {e}", path.display()));
            return EXIT_SOLVER;
        }
        log.info(format!("wrote {}", path.display()));
    }
    let worst = outputs
        .iter()
        .filter_map(|o| o.audit.worst())
        .map(|(_, e)| *e)
        .fold(0.0f64, f64::max);
    println!(
        "done: {} replicas, seed {}, worst audit closure: {worst:.2e}",
        outputs.len(),
        spec.seed
    );
    EXIT_OK
}

fn write_ensemble(path: &Path, summary: &[(f64, f64, f64)], seed: u64) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# seed = {seed}")?;
    writeln!(w, "time_days,mean,std")?;
    for (t, mean, std) in summary {
        writeln!(w, "{t},{mean},{std}")?;
    }
    w.flush()
}

fn cmd_iso(timeseries: &Path, n14: &str, n15: &str, out: Option<PathBuf>, log: &Log) -> u8 {
    let text = match std::fs::read_to_string(timeseries) {
        Ok(t) => t,
        Err(e) => {
            log.error(format!("cannot read {}: {e}", timeseries.display()));
            return EXIT_DECK;
        }
    };
    let mut lines = text.lines();
    let Some(header) = lines.next() else {
        log.error("timeseries file is empty");
        return EXIT_DECK;
    };
    let cols: Vec<&str> = header.split(',').collect();
    let col = |name: &str| cols.iter().position(|c| *c == name);
    let (Some(i14), Some(i15)) = (col(n14), col(n15)) else {
        log.error(format!("columns `{n14}`/`{n15}` not found in {}", timeseries.display()));
        return EXIT_DECK;
    };
    let (i_time, i_el) = (col("time_days"), col("element"));

    let mut rows: Vec<(String, String, f64, f64)> = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let parse = |i: usize| f.get(i).and_then(|s| s.parse::<f64>().ok());
        let (Some(a), Some(b)) = (parse(i14), parse(i15)) else {
            log.error(format!("row {}: cannot parse isotope columns", k + 2));
            return EXIT_DECK;
        };
        let time = i_time.and_then(|i| f.get(i)).unwrap_or(&"").to_string();
        let el = i_el.and_then(|i| f.get(i)).unwrap_or(&"").to_string();
        rows.push((time, el, a, b));
    }

    let n14v: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let n15v: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let deltas = match compute_delta15n(&n14v, &n15v) {
        Ok(d) => d,
        Err(e) => {
            log.error(e);
            return EXIT_DECK;
        }
    };

    let dir = out_dir(out);
    if let Err(e) = std::fs::create_dir_all(&dir) {
        log.error(format!("cannot create {}: {e}", dir.display()));
        return EXIT_SOLVER;
    }
    let path = dir.join("iso.csv");
    let write = || -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(w, "time_days,element,r_s,delta15n_permil")?;
        for ((time, el, _, _), (r_s, delta)) in rows.iter().zip(&deltas) {
            writeln!(w, "{time},{el},{r_s},{delta}")?;
        }
        w.flush()
    };
    if let Err(e) = write() {
        log.error(format!("cannot write {}: {e}", path.display()));
        return EXIT_SOLVER;
    }
    log.info(format!("wrote {}", path.display()));
    println!("done: {} rows", deltas.len());
    EXIT_OK
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version requests are successes, not usage errors
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let log = Log {
        quiet: cli.quiet,
        verbose: cli.verbose,
    };
    let code = match &cli.cmd {
        Cmd::Check { deck } => cmd_check(deck, &log),
        Cmd::Run { deck, out } => cmd_run(deck, out.clone(), &log),
        Cmd::Sweep {
            deck,
            out,
            workers,
            seed,
        } => cmd_sweep(deck, out.clone(), *workers, *seed, &log),
        Cmd::Iso {
            timeseries,
            n14,
            n15,
            out,
        } => cmd_iso(timeseries, n14, n15, out.clone(), &log),
    };
    ExitCode::from(code)
}
