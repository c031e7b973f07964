// Copyright 2026 The ctdiff Authors
// SPDX-License-Identifier: Apache-2.0

//! Experiment matrices.
//!
//! A matrix is the Cartesian product of targets and named dimension
//! values. Each cell collects one trace per run index, analyzes the set and
//! writes its traces and report (or a failure record) under
//! `output_dir/<experiment_id>/`. Cells run on a bounded worker pool and
//! results are always assembled in expansion order.

mod pool;
mod template;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diff::{analyze_trace_set, DiffParams, META_ENTRY};
use crate::fixtures;
use crate::report::{
    aggregate_with_failures, render_report, AnalysisReport, FailureRecord, KnownIssueList,
    MatrixSummary, ReportError, ReportFormat, SymbolEntry, SymbolMap,
};
use crate::trace::{
    decode_trace, encode_trace, scope_filter, validate_trace, Trace, TraceError, TraceSet,
};
use crate::vm::{
    assemble, derive_secret, execute, AsmError, Program, SecretInput, VmError, VmLimits,
};

pub use pool::parallel_map;

/// Placeholders filled per run by the orchestrator; not valid as
/// dimension names.
pub const RESERVED_PLACEHOLDERS: [&str; 4] = ["target", "run", "secret_hex", "out"];
/// Target prefix selecting a built-in fixture instead of a file.
pub const FIXTURE_PREFIX: &str = "fixture:";
/// Parameter key holding the target template.
pub const TARGET_KEY: &str = "target";

const REPORT_FILE: &str = "report.json";
const FAILURE_FILE: &str = "failure.json";
const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("runs_per_experiment must be at least 2, got {0}")]
    TooFewRuns(usize),
    #[error("placeholder `{{{name}}}` in `{template}` is not a dimension")]
    UnresolvedPlaceholder { template: String, name: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Resource { path: PathBuf, source: ReportError },
}

/// Errors that turn one experiment into a failure record.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExperimentError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
    #[error("assembly failed: {0}")]
    Assemble(#[from] AsmError),
    #[error("run {run}: {source}")]
    Vm { run: u64, source: VmError },
    #[error("run {run}: producer failed: {message}")]
    Producer { run: u64, message: String },
    #[error("run {run}: trace decode failed: {source}")]
    Decode { run: u64, source: TraceError },
    #[error("run {run}: producer is not deterministic (two runs with the same secret differ)")]
    Nondeterministic { run: u64 },
    #[error("run {run}: invalid trace: {}", violations.join("; "))]
    InvalidTrace { run: u64, violations: Vec<String> },
    #[error("{0}")]
    Trace(#[from] TraceError),
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MatrixError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("summary has no group key `{0}`")]
    UnknownGroupKey(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Producer {
    #[default]
    Minivm,
    External,
}

/// Pc range kept by the scope filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScopeRange {
    pub base: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    /// Program paths (`fixture:<name>` for built-ins) for the minivm
    /// producer, or `{target}` values for the external command.
    pub targets: Vec<String>,
    #[serde(default)]
    pub dimensions: BTreeMap<String, Vec<String>>,
    #[serde(default = "default_runs")]
    pub runs_per_experiment: usize,
    #[serde(default)]
    pub diff: DiffParams,
    #[serde(default)]
    pub producer: Producer,
    /// Shell command writing one encoded trace to `{out}`.
    #[serde(default)]
    pub external_cmd: Option<String>,
    #[serde(default)]
    pub symbol_map: Option<PathBuf>,
    #[serde(default)]
    pub known_issues: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Parameter keys to aggregate by. Defaults to `target` followed by
    /// every dimension name.
    #[serde(default)]
    pub group_by: Vec<String>,
    #[serde(default)]
    pub scope: Vec<ScopeRange>,
    /// Secret length handed to the external producer. Minivm programs
    /// declare their own.
    #[serde(default = "default_secret_len")]
    pub secret_len: usize,
    /// Directory relative paths in targets and commands are resolved
    /// against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_runs() -> usize {
    8
}

fn default_secret_len() -> usize {
    crate::vm::DEFAULT_SECRET_LEN
}

impl MatrixConfig {
    /// Parses and validates a JSON config. Relative paths are resolved
    /// against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        Self::from_json_at(text, base_dir, Path::new("<config>"))
    }

    fn from_json_at(text: &str, base_dir: &Path, origin: &Path) -> Result<Self, ConfigError> {
        let mut config: MatrixConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse {
                path: origin.to_owned(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        config.base_dir = base_dir.to_owned();
        // join keeps absolute paths as they are
        config.output_dir = base_dir.join(&config.output_dir);
        config.symbol_map = config.symbol_map.map(|p| base_dir.join(p));
        config.known_issues = config.known_issues.map(|p| base_dir.join(p));
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.runs_per_experiment < 2 {
            return Err(ConfigError::TooFewRuns(self.runs_per_experiment));
        }
        if self.secret_len == 0 {
            return invalid("secret_len must be at least 1".into());
        }
        for (name, values) in &self.dimensions {
            if !template::is_name(name) {
                return invalid(format!(
                    "dimension name `{name}` must be alphanumeric, `_` or `-`"
                ));
            }
            if RESERVED_PLACEHOLDERS.contains(&name.as_str()) {
                return invalid(format!("dimension name `{name}` is reserved"));
            }
            if values.is_empty() {
                return invalid(format!("dimension `{name}` has no values"));
            }
            let distinct: BTreeSet<&String> = values.iter().collect();
            if distinct.len() != values.len() {
                return invalid(format!("dimension `{name}` lists a value twice"));
            }
        }
        let mut seen = BTreeSet::new();
        for t in &self.targets {
            if !seen.insert(t) {
                return invalid(format!("duplicate target `{t}`"));
            }
            self.check_template(t, &[])?;
        }
        match (self.producer, &self.external_cmd) {
            (Producer::External, None) => {
                return invalid("producer `external` requires external_cmd".into())
            }
            (Producer::Minivm, Some(_)) => {
                return invalid("external_cmd is only used with producer `external`".into())
            }
            (Producer::External, Some(cmd)) => {
                self.check_template(cmd, &RESERVED_PLACEHOLDERS)?;
                if !template::placeholders(cmd)
                    .map_err(ConfigError::Invalid)?
                    .contains(&"out")
                {
                    return invalid("external_cmd must write its trace to `{out}`".into());
                }
            }
            (Producer::Minivm, None) => {}
        }
        for key in &self.group_by {
            if key != TARGET_KEY && !self.dimensions.contains_key(key) {
                return invalid(format!(
                    "group_by key `{key}` is neither `target` nor a dimension"
                ));
            }
        }
        let ranges: Vec<(u64, u64)> = self.scope_ranges();
        if let Err(e) = scope_filter(&Trace::default(), &ranges) {
            return invalid(format!("scope: {e}"));
        }
        Ok(())
    }

    fn check_template(&self, template: &str, extra: &[&str]) -> Result<(), ConfigError> {
        for name in template::placeholders(template).map_err(ConfigError::Invalid)? {
            if !self.dimensions.contains_key(name) && !extra.contains(&name) {
                return Err(ConfigError::UnresolvedPlaceholder {
                    template: template.to_owned(),
                    name: name.to_owned(),
                });
            }
        }
        Ok(())
    }

    /// The configured grouping keys, or the default.
    pub fn group_keys(&self) -> Vec<String> {
        if !self.group_by.is_empty() {
            return self.group_by.clone();
        }
        std::iter::once(TARGET_KEY.to_owned())
            .chain(self.dimensions.keys().cloned())
            .collect()
    }

    pub fn scope_ranges(&self) -> Vec<(u64, u64)> {
        self.scope.iter().map(|r| (r.base, r.length)).collect()
    }

    /// Reads the optional symbol map and known-issue list.
    pub fn load_resources(&self) -> Result<Resources, ConfigError> {
        let read = |p: &Path| {
            fs::read_to_string(p).map_err(|e| ConfigError::Io {
                path: p.to_owned(),
                message: e.to_string(),
            })
        };
        let symbols = match &self.symbol_map {
            Some(p) => {
                Some(
                    SymbolMap::parse(&read(p)?).map_err(|source| ConfigError::Resource {
                        path: p.clone(),
                        source,
                    })?,
                )
            }
            None => None,
        };
        let known = match &self.known_issues {
            Some(p) => {
                KnownIssueList::parse(&read(p)?).map_err(|source| ConfigError::Resource {
                    path: p.clone(),
                    source,
                })?
            }
            None => KnownIssueList::default(),
        };
        Ok(Resources { symbols, known })
    }
}

/// Symbol map and known-issue list shared by all cells.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Resources {
    /// Overrides the symbols derived from minivm programs when present.
    pub symbols: Option<SymbolMap>,
    pub known: KnownIssueList,
}

/// Reads, parses and validates a matrix config file.
pub fn load_config(path: &Path) -> Result<MatrixConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let config = MatrixConfig::from_json_at(&text, base, path)?;
    config.load_resources()?;
    Ok(config)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExperimentSpec {
    pub experiment_id: String,
    /// `target` (as written in the config) plus one entry per dimension.
    pub parameters: BTreeMap<String, String>,
    /// Target with dimension placeholders filled in.
    pub target: String,
    /// External command with everything but the per-run placeholders
    /// filled in.
    pub command: Option<String>,
}

/// Cartesian product of targets and dimension values. Targets vary
/// slowest; dimensions follow in name order, each in listed value order.
pub fn expand_matrix(config: &MatrixConfig) -> Vec<ExperimentSpec> {
    let dims: Vec<(&String, &Vec<String>)> = config.dimensions.iter().collect();
    let cells: usize = dims.iter().map(|(_, v)| v.len()).product();
    let mut specs = Vec::with_capacity(config.targets.len() * cells);
    for target in &config.targets {
        for cell in 0..cells {
            let mut parameters = BTreeMap::from([(TARGET_KEY.to_owned(), target.clone())]);
            let mut rem = cell;
            for (name, values) in dims.iter().rev() {
                parameters.insert((*name).clone(), values[rem % values.len()].clone());
                rem /= values.len();
            }
            let dim_values: BTreeMap<&str, &str> = parameters
                .iter()
                .filter(|(k, _)| k.as_str() != TARGET_KEY)
                .map(|(k, v)| (k.as_str(), v.as_str()))
                .collect();
            let resolved = template::substitute(target, &dim_values);
            let command = config.external_cmd.as_ref().map(|cmd| {
                let mut values = dim_values.clone();
                values.insert(TARGET_KEY, &resolved);
                template::substitute(cmd, &values)
            });
            specs.push(ExperimentSpec {
                experiment_id: experiment_id(config, &parameters),
                parameters,
                target: resolved,
                command,
            });
        }
    }
    specs
}

/// Hash over everything that determines a cell's result.
fn experiment_id(config: &MatrixConfig, parameters: &BTreeMap<String, String>) -> String {
    #[derive(Serialize)]
    struct Identity<'a> {
        parameters: &'a BTreeMap<String, String>,
        runs: usize,
        diff: &'a DiffParams,
        producer: Producer,
        external_cmd: &'a Option<String>,
        scope: &'a [ScopeRange],
        secret_len: usize,
    }
    let identity = Identity {
        parameters,
        runs: config.runs_per_experiment,
        diff: &config.diff,
        producer: config.producer,
        external_cmd: &config.external_cmd,
        scope: &config.scope,
        secret_len: config.secret_len,
    };
    let bytes = serde_json::to_vec(&identity).expect("identity serialization is infallible");
    let digest = Sha256::digest(&bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs every run index of `program` once, and run 0 a second time to
/// check the producer is deterministic.
pub fn collect_minivm_traces(
    program: &Program,
    runs: usize,
) -> Result<Vec<Trace>, ExperimentError> {
    let limits = VmLimits::default();
    let mut traces = Vec::with_capacity(runs);
    for run in 0..runs as u64 {
        let secret = secret_for(run, program.secret_len)?;
        let trace = execute(program, &secret, limits)
            .map_err(|source| ExperimentError::Vm { run, source })?
            .trace;
        if run == 0 {
            let again = execute(program, &secret, limits)
                .map_err(|source| ExperimentError::Vm { run, source })?;
            if again.trace != trace {
                return Err(ExperimentError::Nondeterministic { run });
            }
        }
        traces.push(trace);
    }
    Ok(traces)
}

fn secret_for(run: u64, len: usize) -> Result<SecretInput, ExperimentError> {
    derive_secret(run, len).map_err(|e| ExperimentError::Config(e.to_string()))
}

/// One symbol entry per function label of `program`.
pub fn program_symbols(program: &Program, source_file: Option<&str>) -> SymbolMap {
    let entries = program
        .functions()
        .into_iter()
        .map(|(start, length, function_name)| SymbolEntry {
            start,
            length,
            function_name,
            source_file: source_file.map(str::to_owned),
        })
        .collect();
    SymbolMap::new(entries).expect("labels yield disjoint functions")
}

/// Analysis settings for [`analyze_traces`].
#[derive(Debug, Clone, Copy)]
pub struct AnalysisSettings<'a> {
    pub diff: &'a DiffParams,
    pub symbols: &'a SymbolMap,
    pub known: &'a KnownIssueList,
    pub scope: &'a [(u64, u64)],
}

/// Scope-filters and validates `traces`, then diffs, symbolizes, filters
/// and classifies them. Returns the report and the traces it was built
/// from.
pub fn analyze_traces(
    experiment_id: &str,
    parameters: BTreeMap<String, String>,
    program_id: &str,
    traces: Vec<Trace>,
    producer_meta: BTreeMap<String, String>,
    settings: AnalysisSettings<'_>,
) -> Result<(AnalysisReport, Vec<Trace>), ExperimentError> {
    let traces = if settings.scope.is_empty() {
        traces
    } else {
        traces
            .iter()
            .map(|t| scope_filter(t, settings.scope))
            .collect::<Result<Vec<_>, _>>()?
    };
    for t in &traces {
        let violations = validate_trace(t);
        if !violations.is_empty() {
            return Err(ExperimentError::InvalidTrace {
                run: t.run_index,
                violations,
            });
        }
    }
    let set = TraceSet::new(program_id, traces, producer_meta)?;
    let raw = analyze_trace_set(&set, settings.diff);
    let traces = set.into_traces();
    let report = AnalysisReport::build(
        experiment_id,
        parameters,
        &raw,
        &traces,
        settings.symbols,
        settings.known,
    );
    Ok((report, traces))
}

/// Loads the program behind a minivm target: `fixture:<name>` or a path
/// relative to `base_dir`. Returns the program and its file name.
pub fn load_program(target: &str, base_dir: &Path) -> Result<(Program, String), ExperimentError> {
    let (source, file) = match target.strip_prefix(FIXTURE_PREFIX) {
        Some(name) => {
            let entry = fixtures::list_fixtures()
                .into_iter()
                .find(|f| f.name == name)
                .ok_or_else(|| ExperimentError::UnknownFixture(name.to_owned()))?;
            let text = fixtures::builtin_source(&entry.source)
                .ok_or_else(|| ExperimentError::UnknownFixture(name.to_owned()))?;
            (text.to_owned(), entry.source)
        }
        None => {
            let path = base_dir.join(target);
            let text = fs::read_to_string(&path).map_err(|e| ExperimentError::Io {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let file = path
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_else(|| target.to_owned());
            (text, file)
        }
    };
    Ok((assemble(&source)?, file))
}

/// Runs one cell and persists its outcome. Failures are returned as
/// records, never propagated.
pub fn run_experiment(
    spec: &ExperimentSpec,
    config: &MatrixConfig,
) -> Result<AnalysisReport, FailureRecord> {
    match config.load_resources() {
        Ok(resources) => run_with(spec, config, &resources),
        Err(e) => Err(persist_failure(spec, config, e.to_string())),
    }
}

fn run_with(
    spec: &ExperimentSpec,
    config: &MatrixConfig,
    resources: &Resources,
) -> Result<AnalysisReport, FailureRecord> {
    let dir = config.output_dir.join(&spec.experiment_id);
    let outcome = reset_dir(&dir)
        .and_then(|()| produce_and_analyze(spec, config, resources, &dir))
        .and_then(|(report, traces)| persist_report(&dir, &report, &traces).map(|()| report));
    outcome.map_err(|e| persist_failure(spec, config, e.to_string()))
}

fn produce_and_analyze(
    spec: &ExperimentSpec,
    config: &MatrixConfig,
    resources: &Resources,
    dir: &Path,
) -> Result<(AnalysisReport, Vec<Trace>), ExperimentError> {
    let runs = config.runs_per_experiment;
    let mut meta = BTreeMap::from([(
        "producer".to_owned(),
        format!("{:?}", config.producer).to_lowercase(),
    )]);
    let (traces, derived_symbols) = match config.producer {
        Producer::Minivm => {
            let (program, file) = load_program(&spec.target, &config.base_dir)?;
            meta.insert(META_ENTRY.to_owned(), format!("{:x}", program.entry));
            let traces = collect_minivm_traces(&program, runs)?;
            (traces, program_symbols(&program, Some(&file)))
        }
        Producer::External => {
            let command = spec
                .command
                .as_deref()
                .ok_or_else(|| ExperimentError::Config("no external command".into()))?;
            let traces = collect_external_traces(
                command,
                runs,
                config.secret_len,
                &dir.join("raw"),
                &config.base_dir,
            )?;
            (traces, SymbolMap::default())
        }
    };
    let symbols = resources.symbols.as_ref().unwrap_or(&derived_symbols);
    let scope = config.scope_ranges();
    let settings = AnalysisSettings {
        diff: &config.diff,
        symbols,
        known: &resources.known,
        scope: &scope,
    };
    analyze_traces(
        &spec.experiment_id,
        spec.parameters.clone(),
        &spec.target,
        traces,
        meta,
        settings,
    )
}

/// Invokes `command` (via `sh -c`) once per run with `{run}`,
/// `{secret_hex}` and `{out}` filled in and decodes the trace it writes.
/// Run 0 is produced twice to check determinism.
pub fn collect_external_traces(
    command: &str,
    runs: usize,
    secret_len: usize,
    scratch: &Path,
    cwd: &Path,
) -> Result<Vec<Trace>, ExperimentError> {
    fs::create_dir_all(scratch).map_err(|e| io_err(scratch, e))?;
    let mut traces = Vec::with_capacity(runs);
    for run in 0..runs as u64 {
        let secret = secret_for(run, secret_len)?;
        let trace = external_run(
            command,
            &secret,
            &scratch.join(format!("run_{run}.trace")),
            cwd,
        )?;
        if run == 0 {
            let again = external_run(command, &secret, &scratch.join("run_0.recheck.trace"), cwd)?;
            if again != trace {
                return Err(ExperimentError::Nondeterministic { run });
            }
        }
        traces.push(trace);
    }
    Ok(traces)
}

fn external_run(
    command: &str,
    secret: &SecretInput,
    out: &Path,
    cwd: &Path,
) -> Result<Trace, ExperimentError> {
    let run = secret.run_index;
    let run_text = run.to_string();
    let hex = secret.hex();
    let out_text = out.to_string_lossy();
    let values = BTreeMap::from([
        ("run", run_text.as_str()),
        ("secret_hex", hex.as_str()),
        ("out", &*out_text),
    ]);
    let cmd = template::substitute(command, &values);
    let _ = fs::remove_file(out);
    let output = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .current_dir(cwd)
        .output()
        .map_err(|e| ExperimentError::Producer {
            run,
            message: format!("cannot start `sh`: {e}"),
        })?;
    if !output.status.success() {
        let stderr = String::from_utf8_lossy(&output.stderr);
        let tail: Vec<&str> = stderr.lines().rev().take(5).collect();
        let tail: Vec<&str> = tail.into_iter().rev().collect();
        return Err(ExperimentError::Producer {
            run,
            message: format!(
                "`{cmd}` exited with {}: {}",
                output.status,
                tail.join(" | ")
            ),
        });
    }
    let text = fs::read_to_string(out).map_err(|e| ExperimentError::Producer {
        run,
        message: format!("no trace at {}: {e}", out.display()),
    })?;
    let trace = decode_trace(&text).map_err(|source| ExperimentError::Decode { run, source })?;
    if trace.run_index != run || trace.secret_id != secret.id() {
        return Err(ExperimentError::Producer {
            run,
            message: format!(
                "trace header says run {} secret {}, expected run {run} secret {}",
                trace.run_index,
                trace.secret_id,
                secret.id()
            ),
        });
    }
    Ok(trace)
}

fn io_err(path: &Path, e: std::io::Error) -> ExperimentError {
    ExperimentError::Io {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

fn reset_dir(dir: &Path) -> Result<(), ExperimentError> {
    match fs::remove_dir_all(dir) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(io_err(dir, e)),
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Writes `traces/run_<i>.trace` and `report.json` under `dir`.
pub fn persist_report(
    dir: &Path,
    report: &AnalysisReport,
    traces: &[Trace],
) -> Result<(), ExperimentError> {
    let trace_dir = dir.join("traces");
    fs::create_dir_all(&trace_dir).map_err(|e| io_err(&trace_dir, e))?;
    for t in traces {
        let path = trace_dir.join(format!("run_{}.trace", t.run_index));
        fs::write(&path, encode_trace(t)?).map_err(|e| io_err(&path, e))?;
    }
    let path = dir.join(REPORT_FILE);
    fs::write(&path, render_report(report, ReportFormat::Structured)).map_err(|e| io_err(&path, e))
}

// Best effort: a failure to write the record is folded into its message.
fn persist_failure(spec: &ExperimentSpec, config: &MatrixConfig, error: String) -> FailureRecord {
    let mut record = FailureRecord {
        experiment_id: spec.experiment_id.clone(),
        parameters: spec.parameters.clone(),
        error,
    };
    let dir = config.output_dir.join(&spec.experiment_id);
    let path = dir.join(FAILURE_FILE);
    let written = fs::create_dir_all(&dir).and_then(|()| {
        let _ = fs::remove_file(dir.join(REPORT_FILE));
        fs::write(&path, to_pretty_json(&record))
    });
    if let Err(e) = written {
        record.error = format!("{} (failure record not written: {e})", record.error);
    }
    record
}

fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialization is infallible");
    s.push('\n');
    s
}

/// Outcome of [`run_matrix_detailed`]: every expanded cell with its result,
/// in expansion order.
#[derive(Debug, Clone)]
pub struct MatrixRun {
    pub specs: Vec<ExperimentSpec>,
    pub results: Vec<Result<AnalysisReport, FailureRecord>>,
    pub summary: MatrixSummary,
}

/// Runs every cell with at most `parallelism` concurrent workers, then
/// writes `summary.json` and one `summary_<key>.csv` per grouping key.
pub fn run_matrix(config: &MatrixConfig, parallelism: usize) -> Result<MatrixSummary, MatrixError> {
    run_matrix_detailed(config, parallelism).map(|run| run.summary)
}

pub fn run_matrix_detailed(
    config: &MatrixConfig,
    parallelism: usize,
) -> Result<MatrixRun, MatrixError> {
    let specs = expand_matrix(config);
    let resources = config.load_resources();
    let results: Vec<Result<AnalysisReport, FailureRecord>> =
        parallel_map(&specs, parallelism, |spec| match &resources {
            Ok(r) => run_with(spec, config, r),
            Err(e) => Err(persist_failure(spec, config, e.to_string())),
        })
        .into_iter()
        .zip(&specs)
        .map(|(result, spec)| {
            result.unwrap_or_else(|panic| {
                Err(persist_failure(
                    spec,
                    config,
                    format!("internal error: {panic}"),
                ))
            })
        })
        .collect();

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for r in &results {
        match r {
            Ok(report) => reports.push(report.clone()),
            Err(f) => failures.push(f.clone()),
        }
    }
    let keys = config.group_keys();
    let summary = aggregate_with_failures(&reports, &failures, &keys)?;

    let out = &config.output_dir;
    let write = |name: String, text: String| {
        let path = out.join(name);
        fs::write(&path, text).map_err(|e| MatrixError::Io {
            path: path.clone(),
            message: e.to_string(),
        })
    };
    fs::create_dir_all(out).map_err(|e| MatrixError::Io {
        path: out.clone(),
        message: e.to_string(),
    })?;
    write(SUMMARY_FILE.to_owned(), to_pretty_json(&summary))?;
    for key in &keys {
        write(format!("summary_{key}.csv"), emit_tables(&summary, key)?)?;
    }
    Ok(MatrixRun {
        specs,
        results,
        summary,
    })
}

/// `group,none,cf_only,mem_only,both,failed` table for one grouping key.
pub fn emit_tables(summary: &MatrixSummary, group_key: &str) -> Result<String, MatrixError> {
    summary
        .to_csv(group_key)
        .ok_or_else(|| MatrixError::UnknownGroupKey(group_key.to_owned()))
}
