// Copyright 2026 The ctdiff Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ctdiff::diff::{DiffParams, META_ENTRY};
use ctdiff::fixtures::{self, builtin_corpus, list_fixtures, load_manifest, run_suite};
use ctdiff::orchestrator::{
    analyze_traces, collect_external_traces, collect_minivm_traces, load_config, persist_report,
    program_symbols, run_matrix_detailed, AnalysisSettings, ExperimentError,
};
use ctdiff::report::{render_report, AnalysisReport, KnownIssueList, ReportFormat, SymbolMap};
use ctdiff::trace::{decode_trace, encode_trace, Trace};
use ctdiff::vm::{assemble, Program};

// stdout may be a closed pipe (`ctdiff fixtures | head`); output errors
// are not failures of the command.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout(), $($t)*);
    }};
}

macro_rules! sayln {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

const EXIT_USAGE: u8 = 1;
const EXIT_INTERNAL: u8 = 2;
const EXIT_FINDINGS: u8 = 3;

const META_FILE: &str = "meta.json";
const SYMBOLS_FILE: &str = "symbols.map";

#[derive(Parser)]
#[command(
    name = "ctdiff",
    version,
    about = "Find secret-dependent control flow and memory accesses by diffing execution traces"
)]
struct Cli {
    /// Exit with status 3 when any unfiltered finding is reported.
    #[arg(long, global = true)]
    fail_on_findings: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Collect one trace per run index.
    Trace {
        #[command(flatten)]
        producer: ProducerArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Analyze a directory of traces.
    Analyze {
        #[arg(long)]
        traces: PathBuf,
        #[command(flatten)]
        analysis: AnalysisArgs,
        /// Write the structured report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collect traces and analyze them.
    Run {
        #[command(flatten)]
        producer: ProducerArgs,
        #[command(flatten)]
        analysis: AnalysisArgs,
        /// Directory for traces and report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment matrix.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// List the built-in fixtures, or run them with --run.
    Fixtures {
        #[arg(long)]
        run: bool,
        /// Use this manifest instead of the built-in corpus.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        runs: usize,
        #[arg(long, default_value_t = DiffParams::DEFAULT_WINDOW)]
        window: usize,
        #[arg(long, default_value_t = DiffParams::DEFAULT_HORIZON)]
        horizon: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProducerKind {
    Minivm,
    External,
}

#[derive(clap::Args)]
struct ProducerArgs {
    #[arg(long, value_enum, default_value = "minivm")]
    producer: ProducerKind,
    /// MiniISA source (minivm) or the `{target}` value (external).
    #[arg(long)]
    program: String,
    #[arg(long, default_value_t = 8)]
    runs: usize,
    /// Command template with {target} {run} {secret_hex} {out}.
    #[arg(long)]
    cmd: Option<String>,
    #[arg(long, default_value_t = ctdiff::vm::DEFAULT_SECRET_LEN)]
    secret_len: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Human,
}

#[derive(clap::Args)]
struct AnalysisArgs {
    /// Symbol map: `<start-hex> <length-hex> <function> [file]` lines.
    #[arg(long)]
    symbols: Option<PathBuf>,
    /// Known-issue list: `fn <name>` / `file <name>` lines.
    #[arg(long)]
    filter: Option<PathBuf>,
    #[arg(long, default_value_t = DiffParams::DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = DiffParams::DEFAULT_HORIZON)]
    horizon: usize,
    /// Keep only records with pc in `<base-hex>:<length-hex>`; repeatable.
    #[arg(long, value_parser = parse_scope)]
    scope: Vec<(u64, u64)>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

fn parse_scope(s: &str) -> Result<(u64, u64), String> {
    let (b, l) = s
        .split_once(':')
        .ok_or("expected <base-hex>:<length-hex>")?;
    let hex = |x: &str| {
        u64::from_str_radix(x.trim_start_matches("0x"), 16).map_err(|e| format!("`{x}`: {e}"))
    };
    Ok((hex(b)?, hex(l)?))
}

enum Failure {
    Usage(String),
    Internal(String),
}

type CliResult<T> = Result<T, Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> Failure {
    Failure::Internal(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(findings) if cli.fail_on_findings && findings => ExitCode::from(EXIT_FINDINGS),
        Ok(_) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal failure: {m}");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}

/// Returns whether any unfiltered finding was reported.
fn dispatch(cmd: Cmd) -> CliResult<bool> {
    match cmd {
        Cmd::Trace { producer, out } => {
            let collected = collect(&producer)?;
            write_trace_dir(&out, &collected)?;
            sayln!(
                "wrote {} traces to {}",
                collected.traces.len(),
                out.display()
            );
            Ok(false)
        }
        Cmd::Analyze {
            traces,
            analysis,
            out,
        } => {
            let collected = read_trace_dir(&traces)?;
            let (report, _) = analyze(collected, &analysis)?;
            match out {
                Some(path) => {
                    fs::write(&path, render_report(&report, ReportFormat::Structured))
                        .map_err(|e| internal(format!("{}: {e}", path.display())))?;
                    say!("{}", render_report(&report, ReportFormat::Human));
                }
                None => say!(
                    "{}",
                    render_report(
                        &report,
                        analysis.format.map_or(ReportFormat::Structured, to_format)
                    )
                ),
            }
            Ok(has_findings(&report))
        }
        Cmd::Run {
            producer,
            analysis,
            out,
        } => {
            let collected = collect(&producer)?;
            let (report, traces) = analyze(collected, &analysis)?;
            if let Some(dir) = &out {
                persist_report(dir, &report, &traces).map_err(internal)?;
            }
            say!(
                "{}",
                render_report(
                    &report,
                    analysis.format.map_or(ReportFormat::Human, to_format)
                )
            );
            Ok(has_findings(&report))
        }
        Cmd::Matrix { config, jobs } => {
            if jobs == 0 {
                return Err(usage("--jobs must be at least 1"));
            }
            let config = load_config(&config).map_err(usage)?;
            let run = run_matrix_detailed(&config, jobs).map_err(internal)?;
            let s = &run.summary;
            sayln!(
                "{} experiments: none {}, cf_only {}, mem_only {}, both {}, failed {}",
                s.totals.experiments,
                s.totals.none,
                s.totals.cf_only,
                s.totals.mem_only,
                s.totals.both,
                s.totals.failed
            );
            for f in &s.failures {
                sayln!("failed {}: {}", f.experiment_id, f.error);
            }
            sayln!("results in {}", config.output_dir.display());
            Ok(run
                .results
                .iter()
                .any(|r| r.as_ref().is_ok_and(has_findings)))
        }
        Cmd::Fixtures {
            run,
            manifest,
            runs,
            window,
            horizon,
        } => {
            let corpus = match &manifest {
                Some(path) => load_manifest(path).map_err(usage)?,
                None => builtin_corpus(),
            };
            if !run {
                for f in list_or(&corpus) {
                    sayln!(
                        "{:<22} {:<5} {:<8} min_runs={} {}",
                        f.name,
                        f.tag.as_str(),
                        f.expected.classification.as_str(),
                        f.min_runs,
                        f.origin
                    );
                }
                return Ok(false);
            }
            let params = DiffParams::new(window, horizon).map_err(usage)?;
            let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
            let result = run_suite(&corpus, &params, runs, &KnownIssueList::default(), workers)
                .map_err(usage)?;
            say!("{}", result.render());
            if result.passed() {
                Ok(false)
            } else {
                Err(internal("fixture suite failed"))
            }
        }
    }
}

fn list_or(corpus: &[fixtures::LoadedFixture]) -> Vec<fixtures::FixtureEntry> {
    if corpus.is_empty() {
        list_fixtures()
    } else {
        corpus.iter().map(|f| f.entry.clone()).collect()
    }
}

fn to_format(f: Format) -> ReportFormat {
    match f {
        Format::Json => ReportFormat::Structured,
        Format::Human => ReportFormat::Human,
    }
}

/// Traces plus what the producer knows about the program.
struct Collected {
    program_id: String,
    traces: Vec<Trace>,
    meta: BTreeMap<String, String>,
    symbols: Option<SymbolMap>,
}

fn collect(args: &ProducerArgs) -> CliResult<Collected> {
    if args.runs < 2 {
        return Err(usage("--runs must be at least 2"));
    }
    match args.producer {
        ProducerKind::Minivm => {
            if args.cmd.is_some() {
                return Err(usage("--cmd is only used with --producer external"));
            }
            let path = Path::new(&args.program);
            let program = read_program(path)?;
            let traces = collect_minivm_traces(&program, args.runs).map_err(experiment_failure)?;
            let file = path.file_name().map(|f| f.to_string_lossy().into_owned());
            Ok(Collected {
                program_id: args.program.clone(),
                traces,
                meta: BTreeMap::from([
                    (META_ENTRY.to_owned(), format!("{:x}", program.entry)),
                    ("producer".to_owned(), "minivm".to_owned()),
                ]),
                symbols: Some(program_symbols(&program, file.as_deref())),
            })
        }
        ProducerKind::External => {
            let cmd = args
                .cmd
                .as_deref()
                .ok_or_else(|| usage("--producer external needs --cmd"))?;
            if !cmd.contains("{out}") {
                return Err(usage("--cmd must write its trace to {out}"));
            }
            let cmd = cmd.replace("{target}", &args.program);
            let scratch = std::env::temp_dir().join(format!("ctdiff-{}", std::process::id()));
            let traces =
                collect_external_traces(&cmd, args.runs, args.secret_len, &scratch, Path::new("."));
            let _ = fs::remove_dir_all(&scratch);
            Ok(Collected {
                program_id: args.program.clone(),
                traces: traces.map_err(experiment_failure)?,
                meta: BTreeMap::from([("producer".to_owned(), "external".to_owned())]),
                symbols: None,
            })
        }
    }
}

fn experiment_failure(e: ExperimentError) -> Failure {
    match e {
        ExperimentError::Io { .. } | ExperimentError::Assemble(_) | ExperimentError::Config(_) => {
            usage(e)
        }
        _ => internal(e),
    }
}

fn read_program(path: &Path) -> CliResult<Program> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    assemble(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_trace_dir(dir: &Path, c: &Collected) -> CliResult<()> {
    let io = |p: &Path, e: std::io::Error| internal(format!("{}: {e}", p.display()));
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    for t in &c.traces {
        let path = dir.join(format!("run_{}.trace", t.run_index));
        fs::write(&path, encode_trace(t).map_err(internal)?).map_err(|e| io(&path, e))?;
    }
    let mut meta = c.meta.clone();
    meta.insert("program_id".to_owned(), c.program_id.clone());
    let path = dir.join(META_FILE);
    let json = serde_json::to_string_pretty(&meta).map_err(internal)? + "\n";
    fs::write(&path, json).map_err(|e| io(&path, e))?;
    if let Some(symbols) = &c.symbols {
        let path = dir.join(SYMBOLS_FILE);
        fs::write(&path, symbols.render()).map_err(|e| io(&path, e))?;
    }
    Ok(())
}

fn read_trace_dir(dir: &Path) -> CliResult<Collected> {
    let entries = fs::read_dir(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    let mut traces = Vec::new();
    for entry in entries {
        let path = entry.map_err(usage)?.path();
        if path.extension().is_some_and(|x| x == "trace") {
            let text =
                fs::read_to_string(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            traces
                .push(decode_trace(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?);
        }
    }
    traces.sort_by_key(|t| t.run_index);
    let mut meta: BTreeMap<String, String> = match fs::read_to_string(dir.join(META_FILE)) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| usage(format!("{META_FILE}: {e}")))?,
        Err(_) => BTreeMap::new(),
    };
    let program_id = meta
        .remove("program_id")
        .unwrap_or_else(|| dir.display().to_string());
    let symbols = match fs::read_to_string(dir.join(SYMBOLS_FILE)) {
        Ok(text) => {
            Some(SymbolMap::parse(&text).map_err(|e| usage(format!("{SYMBOLS_FILE}: {e}")))?)
        }
        Err(_) => None,
    };
    Ok(Collected {
        program_id,
        traces,
        meta,
        symbols,
    })
}

fn analyze(c: Collected, args: &AnalysisArgs) -> CliResult<(AnalysisReport, Vec<Trace>)> {
    let params = DiffParams::new(args.window, args.horizon).map_err(usage)?;
    let symbols = match &args.symbols {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            SymbolMap::parse(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => c.symbols.unwrap_or_default(),
    };
    let known = match &args.filter {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            KnownIssueList::parse(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => KnownIssueList::default(),
    };
    let parameters = BTreeMap::from([("target".to_owned(), c.program_id.clone())]);
    let settings = AnalysisSettings {
        diff: &params,
        symbols: &symbols,
        known: &known,
        scope: &args.scope,
    };
    let id = Path::new(&c.program_id).file_stem().map_or_else(
        || c.program_id.clone(),
        |s| s.to_string_lossy().into_owned(),
    );
    analyze_traces(&id, parameters, &c.program_id, c.traces, c.meta, settings).map_err(
        |e| match e {
            ExperimentError::InvalidTrace { .. } | ExperimentError::Trace(_) => usage(e),
            other => internal(other),
        },
    )
}

fn has_findings(report: &AnalysisReport) -> bool {
    report.unfiltered().next().is_some()
}
