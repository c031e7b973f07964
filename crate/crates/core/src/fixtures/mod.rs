// Copyright 2026 The ctdiff Authors
// SPDX-License-Identifier: Apache-2.0

//! Built-in MiniISA corpus: pairs of a constant-time routine and a leaky
//! variant of the same routine, plus the manifest of expected outcomes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diff::{DiffParams, DivergenceKind, META_ENTRY};
use crate::orchestrator::{
    analyze_traces, collect_minivm_traces, parallel_map, program_symbols, AnalysisSettings,
    ExperimentError, MatrixConfig, TARGET_KEY,
};
use crate::report::{AnalysisReport, Classification, KnownIssueList};
use crate::trace::Trace;
use crate::vm::assemble;

const MANIFEST: &str = include_str!("../../fixtures/manifest.json");

macro_rules! sources {
    ($($file:literal),* $(,)?) => {
        &[$(($file, include_str!(concat!("../../fixtures/", $file)))),*]
    };
}

const SOURCES: &[(&str, &str)] = sources!(
    "select_ct.s",
    "select_leaky.s",
    "cmovznz_ct.s",
    "cmovznz_addr_leaky.s",
    "ghash_carry_ct.s",
    "ghash_carry_leaky.s",
    "u128_add_ct.s",
    "u128_add_leaky.s",
    "check_scalar_ct.s",
    "check_scalar_leaky.s",
    "modexp_sel_ct.s",
    "modexp_sel_leaky.s",
    "split_cond_ct.s",
    "split_cond_leaky.s",
);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FixtureError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("fixture suite needs at least 2 runs, got {0}")]
    TooFewRuns(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureTag {
    Ct,
    Leaky,
}

impl FixtureTag {
    pub fn as_str(self) -> &'static str {
        match self {
            FixtureTag::Ct => "ct",
            FixtureTag::Leaky => "leaky",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedFinding {
    pub kind: DivergenceKind,
    pub function: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedOutcome {
    pub classification: Classification,
    pub findings: Vec<ExpectedFinding>,
}

impl ExpectedOutcome {
    fn clean() -> Self {
        Self {
            classification: Classification::None,
            findings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    pub name: String,
    /// Source file, relative to the manifest.
    pub source: String,
    pub tag: FixtureTag,
    /// Pattern name shared by the `ct` and `leaky` siblings.
    pub pair: String,
    pub expected: ExpectedOutcome,
    /// The leak pattern this fixture reproduces.
    pub origin: String,
    /// Which secret bits decide the leaky behavior.
    pub discriminator: String,
    /// Smallest run count whose secrets differ in the discriminating bits
    /// from run 0.
    pub min_runs: usize,
}

/// A manifest entry together with its assembly source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedFixture {
    pub entry: FixtureEntry,
    pub source_text: String,
}

/// The built-in manifest, in manifest order.
pub fn list_fixtures() -> Vec<FixtureEntry> {
    serde_json::from_str(MANIFEST).expect("built-in manifest parses")
}

/// Text of a built-in fixture source file.
pub fn builtin_source(file: &str) -> Option<&'static str> {
    SOURCES
        .iter()
        .find(|(f, _)| *f == file)
        .map(|(_, text)| *text)
}

pub fn builtin_corpus() -> Vec<LoadedFixture> {
    list_fixtures()
        .into_iter()
        .map(|entry| LoadedFixture {
            source_text: builtin_source(&entry.source)
                .expect("every manifest source is embedded")
                .to_owned(),
            entry,
        })
        .collect()
}

/// Reads a manifest file and the sources it names, relative to the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<LoadedFixture>, FixtureError> {
    let read = |p: &Path| {
        fs::read_to_string(p).map_err(|e| FixtureError::Io {
            path: p.to_owned(),
            message: e.to_string(),
        })
    };
    let entries: Vec<FixtureEntry> = serde_json::from_str(&read(path)?)
        .map_err(|e| FixtureError::Manifest(format!("{}: {e}", path.display())))?;
    check_manifest(&entries)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    entries
        .into_iter()
        .map(|entry| {
            Ok(LoadedFixture {
                source_text: read(&dir.join(&entry.source))?,
                entry,
            })
        })
        .collect()
}

/// Checks the manifest invariants: unique names, `ct` entries expect a
/// clean result, `leaky` entries expect findings, and every pair has both
/// siblings.
pub fn check_manifest(entries: &[FixtureEntry]) -> Result<(), FixtureError> {
    let bad = |m: String| Err(FixtureError::Manifest(m));
    let mut names = BTreeSet::new();
    let mut pairs: BTreeMap<&str, BTreeSet<FixtureTag>> = BTreeMap::new();
    for e in entries {
        if !names.insert(&e.name) {
            return bad(format!("duplicate fixture `{}`", e.name));
        }
        if e.origin.trim().is_empty() {
            return bad(format!("`{}` has no origin", e.name));
        }
        if e.min_runs < 2 {
            return bad(format!("`{}` has min_runs below 2", e.name));
        }
        match e.tag {
            FixtureTag::Ct => {
                if e.expected != ExpectedOutcome::clean() {
                    return bad(format!("ct fixture `{}` must expect no findings", e.name));
                }
                if e.name != format!("{}_ct", e.pair) {
                    return bad(format!(
                        "ct fixture `{}` must be named `{}_ct`",
                        e.name, e.pair
                    ));
                }
            }
            FixtureTag::Leaky => {
                if e.expected.findings.is_empty()
                    || e.expected.classification == Classification::None
                {
                    return bad(format!("leaky fixture `{}` must expect findings", e.name));
                }
                let implied =
                    crate::report::classify_kinds(e.expected.findings.iter().map(|f| f.kind));
                if implied != e.expected.classification {
                    return bad(format!(
                        "`{}` expects {} but its findings imply {}",
                        e.name,
                        e.expected.classification.as_str(),
                        implied.as_str()
                    ));
                }
                if !(e.name.starts_with(&format!("{}_", e.pair)) && e.name.ends_with("leaky")) {
                    return bad(format!(
                        "leaky fixture `{}` must be named `{}_..leaky`",
                        e.name, e.pair
                    ));
                }
            }
        }
        pairs.entry(&e.pair).or_default().insert(e.tag);
    }
    for (pair, tags) in pairs {
        if tags.len() != 2 {
            return bad(format!("pair `{pair}` lacks a ct or leaky sibling"));
        }
    }
    Ok(())
}

/// Assembles `fixture`, collects `runs` traces and analyzes them.
pub fn analyze_fixture(
    fixture: &LoadedFixture,
    params: &DiffParams,
    runs: usize,
    known: &KnownIssueList,
) -> Result<(AnalysisReport, Vec<Trace>), ExperimentError> {
    let e = &fixture.entry;
    let program = assemble(&fixture.source_text)?;
    let traces = collect_minivm_traces(&program, runs)?;
    let symbols = program_symbols(&program, Some(&e.source));
    let parameters = BTreeMap::from([
        ("fixture".to_owned(), e.name.clone()),
        ("pair".to_owned(), e.pair.clone()),
        ("tag".to_owned(), e.tag.as_str().to_owned()),
    ]);
    let meta = BTreeMap::from([(META_ENTRY.to_owned(), format!("{:x}", program.entry))]);
    let settings = AnalysisSettings {
        diff: params,
        symbols: &symbols,
        known,
        scope: &[],
    };
    analyze_traces(
        &format!("fixture-{}", e.name),
        parameters,
        &e.name,
        traces,
        meta,
        settings,
    )
}

/// Unfiltered findings reduced to `(kind, function)` pairs.
pub fn observed_findings(report: &AnalysisReport) -> Vec<ExpectedFinding> {
    let set: BTreeSet<ExpectedFinding> = report
        .unfiltered()
        .map(|f| ExpectedFinding {
            kind: f.kind,
            function: f.function_name.clone(),
        })
        .collect();
    set.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureOutcome {
    pub name: String,
    pub tag: FixtureTag,
    /// What the manifest predicts for this run count. Below `min_runs` the
    /// leak is not observable and a clean result is expected.
    pub expected: ExpectedOutcome,
    pub observable: bool,
    pub min_runs: usize,
    pub classification: Option<Classification>,
    pub findings: Vec<ExpectedFinding>,
    pub error: Option<String>,
    pub report: Option<AnalysisReport>,
}

impl FixtureOutcome {
    pub fn passed(&self) -> bool {
        let mut expected = self.expected.findings.clone();
        expected.sort();
        expected.dedup();
        self.error.is_none()
            && self.classification == Some(self.expected.classification)
            && self.findings == expected
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteResult {
    pub runs: usize,
    pub outcomes: Vec<FixtureOutcome>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(FixtureOutcome::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &FixtureOutcome> {
        self.outcomes.iter().filter(|o| !o.passed())
    }

    /// One line per fixture, then a verdict.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let fmt_findings = |f: &[ExpectedFinding]| {
            f.iter()
                .map(|f| format!("{}@{}", f.kind.as_str(), f.function))
                .collect::<Vec<_>>()
                .join(",")
        };
        for o in &self.outcomes {
            let verdict = if o.passed() { "ok  " } else { "FAIL" };
            let _ = write!(out, "{verdict} {:<22} {:<5}", o.name, o.tag.as_str());
            match (&o.error, o.classification) {
                (Some(e), _) => {
                    let _ = write!(out, " error: {e}");
                }
                (None, Some(c)) => {
                    let _ = write!(out, " {:<8} [{}]", c.as_str(), fmt_findings(&o.findings));
                }
                (None, None) => {}
            }
            if !o.passed() {
                let _ = write!(
                    out,
                    " expected {} [{}]",
                    o.expected.classification.as_str(),
                    fmt_findings(&o.expected.findings)
                );
            }
            if !o.observable {
                let _ = write!(out, " (leak needs {}+ runs)", o.min_runs);
            }
            out.push('\n');
        }
        let failed = self.failures().count();
        let _ = writeln!(
            out,
            "{} of {} fixtures passed with {} runs",
            self.outcomes.len() - failed,
            self.outcomes.len(),
            self.runs
        );
        out
    }
}

/// Runs the built-in corpus.
pub fn run_fixture_suite(params: &DiffParams, runs: usize) -> Result<SuiteResult, FixtureError> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    run_suite(
        &builtin_corpus(),
        params,
        runs,
        &KnownIssueList::default(),
        workers,
    )
}

/// Runs `fixtures` on the orchestrator's worker pool and compares each
/// against its manifest entry.
pub fn run_suite(
    fixtures: &[LoadedFixture],
    params: &DiffParams,
    runs: usize,
    known: &KnownIssueList,
    workers: usize,
) -> Result<SuiteResult, FixtureError> {
    if runs < 2 {
        return Err(FixtureError::TooFewRuns(runs));
    }
    let outcomes = parallel_map(fixtures, workers, |f| {
        let observable = runs >= f.entry.min_runs;
        let expected = if observable {
            f.entry.expected.clone()
        } else {
            ExpectedOutcome::clean()
        };
        let mut outcome = FixtureOutcome {
            name: f.entry.name.clone(),
            tag: f.entry.tag,
            expected,
            observable,
            min_runs: f.entry.min_runs,
            classification: None,
            findings: Vec::new(),
            error: None,
            report: None,
        };
        match analyze_fixture(f, params, runs, known) {
            Ok((report, _)) => {
                outcome.classification = Some(report.classification);
                outcome.findings = observed_findings(&report);
                outcome.report = Some(report);
            }
            Err(e) => outcome.error = Some(e.to_string()),
        }
        outcome
    })
    .into_iter()
    .zip(fixtures)
    .map(|(r, f)| {
        r.unwrap_or_else(|panic| FixtureOutcome {
            name: f.entry.name.clone(),
            tag: f.entry.tag,
            expected: f.entry.expected.clone(),
            observable: true,
            min_runs: f.entry.min_runs,
            classification: None,
            findings: Vec::new(),
            error: Some(format!("internal error: {panic}")),
            report: None,
        })
    })
    .collect();
    Ok(SuiteResult { runs, outcomes })
}

/// Matrix over the built-in corpus: one `fixture` dimension value per
/// manifest entry, grouped by fixture.
pub fn fixture_matrix_config(output_dir: &Path, runs: usize, diff: DiffParams) -> MatrixConfig {
    let names = list_fixtures().into_iter().map(|f| f.name).collect();
    MatrixConfig {
        targets: vec![format!(
            "{}{{fixture}}",
            crate::orchestrator::FIXTURE_PREFIX
        )],
        dimensions: BTreeMap::from([("fixture".to_owned(), names)]),
        runs_per_experiment: runs,
        diff,
        producer: Default::default(),
        external_cmd: None,
        symbol_map: None,
        known_issues: None,
        output_dir: output_dir.to_owned(),
        group_by: vec!["fixture".to_owned(), TARGET_KEY.to_owned()],
        scope: Vec::new(),
        secret_len: crate::vm::DEFAULT_SECRET_LEN,
        base_dir: PathBuf::from("."),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_is_consistent() {
        let entries = list_fixtures();
        assert!(entries.len() >= 12);
        check_manifest(&entries).unwrap();
        for e in &entries {
            assert!(builtin_source(&e.source).is_some(), "{}", e.source);
        }
        assert_eq!(SOURCES.len(), entries.len());
    }

    #[test]
    fn manifest_checks_fire() {
        let mut entries = list_fixtures();
        entries[1].expected.findings.clear();
        assert!(check_manifest(&entries).is_err());
        let mut entries = list_fixtures();
        entries.remove(0);
        assert!(check_manifest(&entries).is_err());
        let mut entries = list_fixtures();
        entries[0].expected.classification = Classification::Both;
        assert!(check_manifest(&entries).is_err());
    }

    #[test]
    fn every_fixture_assembles() {
        for f in builtin_corpus() {
            let p = assemble(&f.source_text).unwrap_or_else(|e| panic!("{}: {e}", f.entry.name));
            let fns: Vec<String> = p.functions().into_iter().map(|(_, _, n)| n).collect();
            for exp in &f.entry.expected.findings {
                assert!(
                    fns.contains(&exp.function),
                    "{} lacks {}",
                    f.entry.name,
                    exp.function
                );
            }
        }
    }

    #[test]
    fn too_few_runs() {
        assert_eq!(
            run_fixture_suite(&DiffParams::default(), 1),
            Err(FixtureError::TooFewRuns(1))
        );
    }
}
