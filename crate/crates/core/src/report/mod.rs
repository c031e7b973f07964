// Copyright 2026 The ctdiff Authors
// SPDX-License-Identifier: Apache-2.0

//! From raw divergences to per-experiment reports.
//!
//! Raw findings are symbolized, tagged against a known-issue list,
//! deduplicated per function, and the experiment is classified into one of
//! four buckets. Filtered findings stay in the report for audit but never
//! count towards the classification.

mod aggregate;
mod render;
mod symbols;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::diff::{DivergenceKind, RawFindings};
use crate::trace::Trace;

pub use aggregate::{
    aggregate_summaries, aggregate_with_failures, FailureRecord, GroupCounts, GroupTable,
    MatrixSummary,
};
pub use render::{render_report, ReportFormat};
pub use symbols::{KnownIssueList, SymbolEntry, SymbolMap};

/// Function name used when a pc is not covered by the symbol map.
pub const UNKNOWN_FUNCTION: &str = "<unknown>";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("symbol map entries `{first}` and `{second}` overlap")]
    OverlappingSymbols { first: String, second: String },
    #[error("symbol map line {line}: {message}")]
    SymbolParse { line: usize, message: String },
    #[error("known-issue list line {line}: {message}")]
    KnownIssueParse { line: usize, message: String },
    #[error("report {experiment_id} has no parameter `{key}`")]
    MissingGroupKey { experiment_id: String, key: String },
}

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub enum Classification {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "cf_only")]
    ControlFlowOnly,
    #[serde(rename = "mem_only")]
    MemoryOnly,
    #[serde(rename = "both")]
    Both,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::None => "none",
            Classification::ControlFlowOnly => "cf_only",
            Classification::MemoryOnly => "mem_only",
            Classification::Both => "both",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: DivergenceKind,
    pub site_pc: u64,
    pub function_name: String,
    pub source_file: Option<String>,
    pub merge_pc: Option<u64>,
    pub evidence_count: usize,
    pub distinct_values: BTreeSet<u64>,
    pub filtered: bool,
}

impl Finding {
    fn sort_key(&self) -> (DivergenceKind, &str, u64) {
        (self.kind, &self.function_name, self.site_pc)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub run_index: u64,
    pub secret_id: String,
    pub records: usize,
}

impl RunStats {
    pub fn of(trace: &Trace) -> Self {
        Self {
            run_index: trace.run_index,
            secret_id: trace.secret_id.clone(),
            records: trace.records.len(),
        }
    }
}

/// Result of analyzing one experiment. Field order is the serialized key
/// order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub experiment_id: String,
    pub parameters: BTreeMap<String, String>,
    pub classification: Classification,
    pub findings: Vec<Finding>,
    pub trace_stats: Vec<RunStats>,
}

impl AnalysisReport {
    /// Runs the symbolize, filter and dedup steps and classifies the result.
    pub fn build(
        experiment_id: impl Into<String>,
        parameters: BTreeMap<String, String>,
        raw: &RawFindings,
        traces: &[Trace],
        symbols: &SymbolMap,
        known: &KnownIssueList,
    ) -> Self {
        let findings = deduplicate(apply_known_issue_filter(
            symbolize_findings(raw, symbols),
            known,
        ));
        Self {
            experiment_id: experiment_id.into(),
            parameters,
            classification: classify_experiment(&findings),
            findings,
            trace_stats: traces.iter().map(RunStats::of).collect(),
        }
    }

    pub fn unfiltered(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| !f.filtered)
    }
}

/// Attaches function names (or [`UNKNOWN_FUNCTION`]) to every merged raw
/// finding.
pub fn symbolize_findings(raw: &RawFindings, map: &SymbolMap) -> Vec<Finding> {
    raw.merged
        .iter()
        .map(|(&(kind, site_pc), m)| {
            let sym = map.lookup(site_pc);
            Finding {
                kind,
                site_pc,
                function_name: sym
                    .map_or_else(|| UNKNOWN_FUNCTION.to_owned(), |s| s.function_name.clone()),
                source_file: sym.and_then(|s| s.source_file.clone()),
                merge_pc: m.merge_pc,
                evidence_count: m.evidence_count,
                distinct_values: m.distinct_values.clone(),
                filtered: false,
            }
        })
        .collect()
}

/// Sets `filtered` on every finding whose function or source file is in
/// the list, and clears it on all others. Nothing is removed.
pub fn apply_known_issue_filter(mut findings: Vec<Finding>, list: &KnownIssueList) -> Vec<Finding> {
    for f in &mut findings {
        f.filtered = f.function_name != UNKNOWN_FUNCTION
            && list.matches(&f.function_name, f.source_file.as_deref());
    }
    findings
}

/// Merges findings of the same kind in the same named function; findings
/// in unknown code merge only on identical `(kind, site_pc)`.
///
/// The smallest site pc is kept as representative. The merged finding is
/// filtered only if every part was.
pub fn deduplicate(findings: Vec<Finding>) -> Vec<Finding> {
    let mut groups: BTreeMap<(DivergenceKind, String, Option<u64>), Finding> = BTreeMap::new();
    for f in findings {
        let pc_key = (f.function_name == UNKNOWN_FUNCTION).then_some(f.site_pc);
        let key = (f.kind, f.function_name.clone(), pc_key);
        match groups.get_mut(&key) {
            None => {
                groups.insert(key, f);
            }
            Some(acc) => {
                let filtered = acc.filtered && f.filtered;
                let evidence = acc.evidence_count + f.evidence_count;
                let mut values = std::mem::take(&mut acc.distinct_values);
                values.extend(f.distinct_values.iter().copied());
                if f.site_pc < acc.site_pc {
                    *acc = f;
                }
                acc.filtered = filtered;
                acc.evidence_count = evidence;
                acc.distinct_values = values;
            }
        }
    }
    let mut out: Vec<Finding> = groups.into_values().collect();
    out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    out
}

/// Buckets an experiment by the kinds of its unfiltered findings.
pub fn classify_experiment(findings: &[Finding]) -> Classification {
    classify_kinds(findings.iter().filter(|f| !f.filtered).map(|f| f.kind))
}

/// Bucket implied by a collection of finding kinds.
pub fn classify_kinds(kinds: impl IntoIterator<Item = DivergenceKind>) -> Classification {
    let (cf, mem) = kinds
        .into_iter()
        .fold((false, false), |(cf, mem), k| match k {
            DivergenceKind::ControlFlow => (true, mem),
            DivergenceKind::MemoryAddress => (cf, true),
        });
    match (cf, mem) {
        (false, false) => Classification::None,
        (true, false) => Classification::ControlFlowOnly,
        (false, true) => Classification::MemoryOnly,
        (true, true) => Classification::Both,
    }
}
