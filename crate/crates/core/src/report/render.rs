// Copyright 2026 The ctdiff Authors
// SPDX-License-Identifier: Apache-2.0

use std::fmt::Write as _;

use super::AnalysisReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Pretty-printed JSON with a fixed key order.
    Structured,
    /// Plain-text summary.
    Human,
}

pub fn render_report(report: &AnalysisReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Structured => {
            let mut s =
                serde_json::to_string_pretty(report).expect("report serialization is infallible");
            s.push('\n');
            s
        }
        ReportFormat::Human => render_human(report),
    }
}

fn render_human(report: &AnalysisReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "experiment {}", report.experiment_id);
    let _ = writeln!(out, "classification: {}", report.classification.as_str());
    for (k, v) in &report.parameters {
        let _ = writeln!(out, "  {k} = {v}");
    }
    let counts: Vec<String> = report
        .trace_stats
        .iter()
        .map(|s| s.records.to_string())
        .collect();
    let _ = writeln!(
        out,
        "runs: {} (records per run: {})",
        report.trace_stats.len(),
        counts.join(", ")
    );

    let mut findings: Vec<_> = report.findings.iter().collect();
    findings.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let filtered = findings.iter().filter(|f| f.filtered).count();
    let _ = writeln!(out, "findings: {} ({} filtered)", findings.len(), filtered);
    for f in findings {
        let _ = write!(
            out,
            "  {:<14} {} @ {:#x}",
            f.kind.as_str(),
            f.function_name,
            f.site_pc
        );
        if let Some(file) = &f.source_file {
            let _ = write!(out, " ({file})");
        }
        match f.merge_pc {
            Some(m) => {
                let _ = write!(out, ", merges at {m:#x}");
            }
            None => out.push_str(", no merge"),
        }
        let values: Vec<String> = f
            .distinct_values
            .iter()
            .map(|v| format!("{v:#x}"))
            .collect();
        let _ = write!(
            out,
            ", seen in {} pair(s), values [{}]",
            f.evidence_count,
            values.join(" ")
        );
        if f.filtered {
            out.push_str(" [filtered: known source-level issue]");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeMap, BTreeSet};

    use super::*;
    use crate::diff::DivergenceKind;
    use crate::report::{Classification, Finding, RunStats};

    fn empty() -> AnalysisReport {
        AnalysisReport {
            experiment_id: "e1".into(),
            parameters: BTreeMap::new(),
            classification: Classification::None,
            findings: vec![],
            trace_stats: vec![],
        }
    }

    #[test]
    fn empty_structured() {
        let s = render_report(&empty(), ReportFormat::Structured);
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["findings"], serde_json::json!([]));
        assert_eq!(v["classification"], "none");
        assert!(s.ends_with("}\n"));
    }

    #[test]
    fn key_order_is_fixed() {
        let s = render_report(&empty(), ReportFormat::Structured);
        let positions: Vec<usize> = [
            "experiment_id",
            "parameters",
            "classification",
            "findings",
            "trace_stats",
        ]
        .iter()
        .map(|k| s.find(&format!("\"{k}\"")).unwrap())
        .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{s}");
    }

    #[test]
    fn one_finding_renders_every_field() {
        let mut r = empty();
        r.classification = Classification::MemoryOnly;
        r.parameters.insert("variant".into(), "x".into());
        r.trace_stats.push(RunStats {
            run_index: 0,
            secret_id: "ab".into(),
            records: 3,
        });
        r.findings.push(Finding {
            kind: DivergenceKind::MemoryAddress,
            site_pc: 0x14,
            function_name: "cmovznz4".into(),
            source_file: Some("p256.c".into()),
            merge_pc: Some(0x15),
            evidence_count: 4,
            distinct_values: BTreeSet::from([0x2000, 0x2008]),
            filtered: true,
        });
        let s = render_report(&r, ReportFormat::Structured);
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        let f = &v["findings"][0];
        for key in [
            "kind",
            "site_pc",
            "function_name",
            "source_file",
            "merge_pc",
            "evidence_count",
            "distinct_values",
            "filtered",
        ] {
            assert!(!f[key].is_null(), "missing {key}");
        }
        assert_eq!(f["kind"], "memory_address");
        let back: AnalysisReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);

        let h = render_report(&r, ReportFormat::Human);
        assert!(h.contains("classification: mem_only"));
        assert!(h.contains("memory_address"));
        assert!(h.contains("cmovznz4 @ 0x14 (p256.c), merges at 0x15"));
        assert!(h.contains("[filtered"));
    }
}
