// Copyright 2026 The ctdiff Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AnalysisReport, Classification, ReportError};
use crate::diff::DivergenceKind;

/// An experiment that could not be analyzed. Failures are results.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub experiment_id: String,
    pub parameters: BTreeMap<String, String>,
    pub error: String,
}

/// Classification bucket counts for one group of experiments.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub group: String,
    pub experiments: usize,
    pub none: usize,
    pub cf_only: usize,
    pub mem_only: usize,
    pub both: usize,
    pub failed: usize,
    /// Unfiltered findings across the group's reports.
    pub findings_control_flow: usize,
    pub findings_memory_address: usize,
}

impl GroupCounts {
    fn named(group: &str) -> Self {
        Self {
            group: group.to_owned(),
            ..Self::default()
        }
    }

    fn add_report(&mut self, report: &AnalysisReport) {
        self.experiments += 1;
        match report.classification {
            Classification::None => self.none += 1,
            Classification::ControlFlowOnly => self.cf_only += 1,
            Classification::MemoryOnly => self.mem_only += 1,
            Classification::Both => self.both += 1,
        }
        for f in report.unfiltered() {
            match f.kind {
                DivergenceKind::ControlFlow => self.findings_control_flow += 1,
                DivergenceKind::MemoryAddress => self.findings_memory_address += 1,
            }
        }
    }

    fn add_failure(&mut self) {
        self.experiments += 1;
        self.failed += 1;
    }

    /// Sum of all buckets including failures.
    pub fn bucket_total(&self) -> usize {
        self.none + self.cf_only + self.mem_only + self.both + self.failed
    }
}

/// Rows for one grouping key, in first-seen order of the key's values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupTable {
    pub key: String,
    pub rows: Vec<GroupCounts>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixSummary {
    pub group_by: Vec<String>,
    pub groups: Vec<GroupTable>,
    pub totals: GroupCounts,
    pub failures: Vec<FailureRecord>,
}

impl MatrixSummary {
    pub fn table(&self, key: &str) -> Option<&GroupTable> {
        self.groups.iter().find(|t| t.key == key)
    }

    /// `group,none,cf_only,mem_only,both,failed` CSV for one grouping key.
    pub fn to_csv(&self, key: &str) -> Option<String> {
        let table = self.table(key)?;
        let mut out = String::from("group,none,cf_only,mem_only,both,failed\n");
        for r in &table.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                csv_field(&r.group),
                r.none,
                r.cf_only,
                r.mem_only,
                r.both,
                r.failed
            ));
        }
        Some(out)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Counts experiments per classification bucket, grouped separately by
/// each of `group_by`.
pub fn aggregate_summaries(
    reports: &[AnalysisReport],
    group_by: &[String],
) -> Result<MatrixSummary, ReportError> {
    aggregate_with_failures(reports, &[], group_by)
}

/// Like [`aggregate_summaries`], with failed experiments counted in the
/// `failed` bucket of their groups.
pub fn aggregate_with_failures(
    reports: &[AnalysisReport],
    failures: &[FailureRecord],
    group_by: &[String],
) -> Result<MatrixSummary, ReportError> {
    let mut summary = MatrixSummary {
        group_by: group_by.to_vec(),
        groups: Vec::with_capacity(group_by.len()),
        totals: GroupCounts::named("all"),
        failures: failures.to_vec(),
    };
    let lookup = |id: &str, params: &BTreeMap<String, String>, key: &str| {
        params
            .get(key)
            .cloned()
            .ok_or_else(|| ReportError::MissingGroupKey {
                experiment_id: id.to_owned(),
                key: key.to_owned(),
            })
    };
    for key in group_by {
        let mut rows: Vec<GroupCounts> = Vec::new();
        let row_for = |value: String, rows: &mut Vec<GroupCounts>| -> usize {
            match rows.iter().position(|r| r.group == value) {
                Some(i) => i,
                None => {
                    rows.push(GroupCounts::named(&value));
                    rows.len() - 1
                }
            }
        };
        for r in reports {
            let i = row_for(lookup(&r.experiment_id, &r.parameters, key)?, &mut rows);
            rows[i].add_report(r);
        }
        for f in failures {
            let i = row_for(lookup(&f.experiment_id, &f.parameters, key)?, &mut rows);
            rows[i].add_failure();
        }
        summary.groups.push(GroupTable {
            key: key.clone(),
            rows,
        });
    }
    reports.iter().for_each(|r| summary.totals.add_report(r));
    failures.iter().for_each(|_| summary.totals.add_failure());
    Ok(summary)
}
