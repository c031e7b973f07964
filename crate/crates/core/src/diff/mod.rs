// Copyright 2026 The ctdiff Authors
// SPDX-License-Identifier: Apache-2.0

//! Divergence detection between traces recorded under different secrets.
//!
//! Two traces are compared record by record until the first difference.
//! From there a bounded forward search looks for a merge point: offsets
//! `(i, j)` after which both traces agree on a window of `W` records.
//! Comparison resumes at the merge point. Records between a divergence and
//! its merge point are never inspected, so the number of reported
//! divergences is a lower bound.

mod oracle;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::trace::{Trace, TraceRecord, TraceSet};

pub use oracle::{oracle_align, AlignRegion, OracleError, ORACLE_MAX_RECORDS};

/// Producer metadata key holding the program entry pc (lowercase hex).
pub const META_ENTRY: &str = "entry";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DiffError {
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error("horizon {horizon} is smaller than window {window}")]
    HorizonTooSmall { window: usize, horizon: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceStrategy {
    /// Every trace is compared against `traces[0]`.
    #[default]
    FirstTraceAsReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawDiffParams", into = "RawDiffParams")]
pub struct DiffParams {
    window: usize,
    horizon: usize,
    reference: ReferenceStrategy,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiffParams {
    #[serde(default = "default_window")]
    window: usize,
    #[serde(default = "default_horizon")]
    horizon: usize,
    #[serde(default)]
    reference_strategy: ReferenceStrategy,
}

fn default_window() -> usize {
    DiffParams::DEFAULT_WINDOW
}

fn default_horizon() -> usize {
    DiffParams::DEFAULT_HORIZON
}

impl TryFrom<RawDiffParams> for DiffParams {
    type Error = DiffError;

    fn try_from(raw: RawDiffParams) -> Result<Self, DiffError> {
        DiffParams::new(raw.window, raw.horizon)
    }
}

impl From<DiffParams> for RawDiffParams {
    fn from(p: DiffParams) -> Self {
        RawDiffParams {
            window: p.window,
            horizon: p.horizon,
            reference_strategy: p.reference,
        }
    }
}

impl DiffParams {
    pub const DEFAULT_WINDOW: usize = 8;
    pub const DEFAULT_HORIZON: usize = 4096;

    pub fn new(window: usize, horizon: usize) -> Result<Self, DiffError> {
        if window == 0 {
            return Err(DiffError::ZeroWindow);
        }
        if horizon < window {
            return Err(DiffError::HorizonTooSmall { window, horizon });
        }
        Ok(Self {
            window,
            horizon,
            reference: ReferenceStrategy::FirstTraceAsReference,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn reference_strategy(&self) -> ReferenceStrategy {
        self.reference
    }
}

impl Default for DiffParams {
    fn default() -> Self {
        Self::new(Self::DEFAULT_WINDOW, Self::DEFAULT_HORIZON).expect("defaults are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    ControlFlow,
    MemoryAddress,
}

impl DivergenceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DivergenceKind::ControlFlow => "control_flow",
            DivergenceKind::MemoryAddress => "memory_address",
        }
    }
}

/// One localized difference between a pair of traces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub kind: DivergenceKind,
    pub site_pc: u64,
    pub div_index_a: usize,
    pub div_index_b: usize,
    /// Absolute record indices where the traces re-align.
    pub merge: Option<(usize, usize)>,
    /// Differing values: branch targets or data addresses when both records
    /// sit at the same pc, otherwise the pcs each trace went on to. `None`
    /// where a trace had already ended.
    pub witnesses: (Option<u64>, Option<u64>),
}

/// Index of the first differing record, or `None` if the traces are
/// identical. If one trace is a strict prefix of the other, this is the
/// length of the shorter one.
pub fn first_divergence(a: &Trace, b: &Trace) -> Option<usize> {
    first_divergence_in(&a.records, &b.records)
}

fn first_divergence_in(a: &[TraceRecord], b: &[TraceRecord]) -> Option<usize> {
    match a.iter().zip(b).position(|(x, y)| x != y) {
        Some(d) => Some(d),
        None if a.len() == b.len() => None,
        None => Some(a.len().min(b.len())),
    }
}

/// Smallest-cost offsets `(i, j)`, `1 <= i, j <= horizon`, such that
/// `a[d+i..d+i+W] == b[d+j..d+j+W]`.
///
/// Candidates are ordered by `i + j`, then `|i - j|`, then `i`. A window
/// that runs past the end of either trace is accepted only when both
/// remaining suffixes are equal in full.
pub fn find_merge_point(
    a: &Trace,
    b: &Trace,
    d: usize,
    params: &DiffParams,
) -> Option<(usize, usize)> {
    merge_offsets(&a.records, &b.records, d, params.window, params.horizon)
}

fn merge_offsets(
    a: &[TraceRecord],
    b: &[TraceRecord],
    d: usize,
    window: usize,
    horizon: usize,
) -> Option<(usize, usize)> {
    let max_i = horizon.min(a.len().saturating_sub(d));
    let max_j = horizon.min(b.len().saturating_sub(d));
    if max_i == 0 || max_j == 0 {
        return None;
    }
    let aligned = |i: usize, j: usize| {
        let (sa, sb) = (&a[d + i..], &b[d + j..]);
        if sa.len() >= window && sb.len() >= window {
            sa[..window] == sb[..window]
        } else {
            sa == sb
        }
    };
    for sum in 2..=max_i + max_j {
        // |i - j| = gap, same parity as sum, and i, j >= 1
        for gap in (sum % 2..=sum - 2).step_by(2) {
            let lo = (sum - gap) / 2;
            let hi = (sum + gap) / 2;
            let mut pairs = [(lo, hi), (hi, lo)];
            let candidates = if gap == 0 {
                &mut pairs[..1]
            } else {
                &mut pairs[..]
            };
            for &mut (i, j) in candidates {
                if i <= max_i && j <= max_j && aligned(i, j) {
                    return Some((i, j));
                }
            }
        }
    }
    None
}

/// Kind and attributed site of a divergence.
///
/// `ra`/`rb` are the first differing records (`None` where a trace ended),
/// `last_common` the record just before the divergence, if any, and
/// `entry` the program entry used when the traces differ from the start.
pub fn classify_divergence(
    ra: Option<&TraceRecord>,
    rb: Option<&TraceRecord>,
    last_common: Option<&TraceRecord>,
    entry: u64,
) -> (DivergenceKind, u64) {
    match (ra, rb) {
        (Some(x), Some(y))
            if x.kind.is_memory() && x.kind == y.kind && x.pc == y.pc && x.addr != y.addr =>
        {
            (DivergenceKind::MemoryAddress, x.pc)
        }
        (Some(x), Some(y)) if x.pc == y.pc => (DivergenceKind::ControlFlow, x.pc),
        _ => (
            DivergenceKind::ControlFlow,
            last_common.map_or(entry, |r| r.pc),
        ),
    }
}

fn witnesses(ra: Option<&TraceRecord>, rb: Option<&TraceRecord>) -> (Option<u64>, Option<u64>) {
    match (ra, rb) {
        (Some(x), Some(y)) if x.pc == y.pc => (Some(x.addr), Some(y.addr)),
        _ => (ra.map(|r| r.pc), rb.map(|r| r.pc)),
    }
}

/// Greedy pairwise diff: find the first divergence, classify it, search
/// for a merge point and resume there; stop at the first divergence that
/// does not merge within the horizon.
///
/// The entry pc used for attribution is the base of `a`'s first image
/// range; use [`analyze_trace_set`] to supply the real entry.
pub fn diff_traces(a: &Trace, b: &Trace, params: &DiffParams) -> Vec<Divergence> {
    let entry = a.image_ranges.first().map_or(0, |r| r.base);
    diff_records(&a.records, &b.records, params, entry)
}

fn diff_records(
    a: &[TraceRecord],
    b: &[TraceRecord],
    params: &DiffParams,
    entry: u64,
) -> Vec<Divergence> {
    let mut out = Vec::new();
    let (mut ia, mut ib) = (0, 0);
    while let Some(d) = first_divergence_in(&a[ia..], &b[ib..]) {
        let (da, db) = (ia + d, ib + d);
        let (ra, rb) = (a.get(da), b.get(db));
        let last_common = da.checked_sub(1).map(|k| &a[k]);
        let (kind, site_pc) = classify_divergence(ra, rb, last_common, entry);
        let merge = merge_offsets(&a[ia..], &b[ib..], d, params.window, params.horizon)
            .map(|(i, j)| (da + i, db + j));
        out.push(Divergence {
            kind,
            site_pc,
            div_index_a: da,
            div_index_b: db,
            merge,
            witnesses: witnesses(ra, rb),
        });
        match merge {
            Some((ma, mb)) => (ia, ib) = (ma, mb),
            None => break,
        }
    }
    out
}

/// Divergences found between the reference trace and one other trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairDivergences {
    pub reference_run: u64,
    pub other_run: u64,
    pub divergences: Vec<Divergence>,
}

/// Evidence for one `(kind, site_pc)` across all compared pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MergedFinding {
    /// Number of trace pairs exhibiting this divergence.
    pub evidence_count: usize,
    pub distinct_values: BTreeSet<u64>,
    /// Smallest pc of a reference-trace record at which this divergence
    /// merged.
    pub merge_pc: Option<u64>,
}

impl MergedFinding {
    fn absorb(&mut self, other: MergedFinding) {
        self.evidence_count += other.evidence_count;
        self.distinct_values.extend(other.distinct_values);
        self.merge_pc = match (self.merge_pc, other.merge_pc) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        };
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawFindings {
    pub pairs: Vec<PairDivergences>,
    pub merged: BTreeMap<(DivergenceKind, u64), MergedFinding>,
}

impl RawFindings {
    pub fn is_empty(&self) -> bool {
        self.merged.is_empty()
    }

    /// Folds in the findings of another set of pairs. The merged map is
    /// order-independent.
    pub fn absorb(&mut self, other: RawFindings) {
        self.pairs.extend(other.pairs);
        for (key, finding) in other.merged {
            self.merged.entry(key).or_default().absorb(finding);
        }
    }

    fn from_pair(reference: &Trace, other: &Trace, divergences: Vec<Divergence>) -> Self {
        let mut merged: BTreeMap<(DivergenceKind, u64), MergedFinding> = BTreeMap::new();
        for div in &divergences {
            let entry = merged.entry((div.kind, div.site_pc)).or_default();
            entry.evidence_count = 1;
            entry
                .distinct_values
                .extend([div.witnesses.0, div.witnesses.1].into_iter().flatten());
            let merge_pc = div
                .merge
                .and_then(|(ma, _)| reference.records.get(ma))
                .map(|r| r.pc);
            entry.merge_pc = match (entry.merge_pc, merge_pc) {
                (Some(x), Some(y)) => Some(x.min(y)),
                (x, y) => x.or(y),
            };
        }
        RawFindings {
            pairs: vec![PairDivergences {
                reference_run: reference.run_index,
                other_run: other.run_index,
                divergences,
            }],
            merged,
        }
    }
}

/// Diffs every non-reference trace against the reference and merges the
/// divergences by `(kind, site_pc)`.
pub fn analyze_trace_set(ts: &TraceSet, params: &DiffParams) -> RawFindings {
    let traces = ts.traces();
    let reference = &traces[0];
    let entry = ts
        .producer_meta()
        .get(META_ENTRY)
        .and_then(|e| u64::from_str_radix(e, 16).ok())
        .or_else(|| reference.image_ranges.first().map(|r| r.base))
        .unwrap_or(0);
    let mut findings = RawFindings::default();
    for other in &traces[1..] {
        let divs = diff_records(&reference.records, &other.records, params, entry);
        findings.absorb(RawFindings::from_pair(reference, other, divs));
    }
    findings
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::ImageRange;

    fn tr(records: Vec<TraceRecord>) -> Trace {
        Trace {
            run_index: 0,
            secret_id: "00".into(),
            records,
            image_ranges: vec![ImageRange::new(0, 0x10000, "text")],
        }
    }

    /// Distinct records named by a letter.
    fn sym(s: &str) -> Trace {
        tr(s.bytes()
            .map(|c| TraceRecord::control(u64::from(c), 0))
            .collect())
    }

    /// All valid `(i, j)` in the horizon, minimized by the documented key.
    fn brute_merge(a: &Trace, b: &Trace, d: usize, w: usize, h: usize) -> Option<(usize, usize)> {
        let mut best = None;
        for i in 1..=h {
            for j in 1..=h {
                if d + i > a.len() || d + j > b.len() {
                    continue;
                }
                let sa = &a.records[d + i..];
                let sb = &b.records[d + j..];
                let ok = if sa.len() >= w && sb.len() >= w {
                    sa[..w] == sb[..w]
                } else {
                    sa == sb
                };
                let key = (i + j, i.abs_diff(j), i);
                if ok && best.is_none_or(|(k, _)| key < k) {
                    best = Some((key, (i, j)));
                }
            }
        }
        best.map(|(_, p)| p)
    }

    #[test]
    fn params_validation() {
        assert_eq!(DiffParams::new(0, 10), Err(DiffError::ZeroWindow));
        assert_eq!(
            DiffParams::new(8, 4),
            Err(DiffError::HorizonTooSmall {
                window: 8,
                horizon: 4
            })
        );
        let d = DiffParams::default();
        assert_eq!((d.window(), d.horizon()), (8, 4096));
        let p: DiffParams = serde_json::from_str(r#"{"window": 2}"#).unwrap();
        assert_eq!((p.window(), p.horizon()), (2, 4096));
        assert!(serde_json::from_str::<DiffParams>(r#"{"window": 0}"#).is_err());
    }

    #[test]
    fn first_divergence_cases() {
        assert_eq!(first_divergence(&sym("abc"), &sym("abc")), None);
        assert_eq!(first_divergence(&sym("abcdeX"), &sym("abcdeY")), Some(5));
        assert_eq!(first_divergence(&sym(""), &sym("a")), Some(0));
        assert_eq!(first_divergence(&sym("ab"), &sym("abc")), Some(2));
        assert_eq!(first_divergence(&sym(""), &sym("")), None);
    }

    #[test]
    fn merge_after_substitution() {
        let (a, b) = (sym("xQyz"), sym("xRyz"));
        let p = DiffParams::new(1, 16).unwrap();
        assert_eq!(brute_merge(&a, &b, 1, 1, 16), Some((1, 1)));
        assert_eq!(find_merge_point(&a, &b, 1, &p), Some((1, 1)));
    }

    #[test]
    fn merge_after_insertion() {
        let (a, b) = (sym("xyz"), sym("xQyz"));
        let p = DiffParams::new(1, 16).unwrap();
        assert_eq!(brute_merge(&a, &b, 1, 1, 16), Some((1, 2)));
        assert_eq!(find_merge_point(&a, &b, 1, &p), Some((1, 2)));
    }

    #[test]
    fn no_merge_beyond_horizon() {
        let a = tr((0..100).map(|k| TraceRecord::control(k, 1)).collect());
        let b = tr((0..100)
            .map(|k| TraceRecord::control(k + 1000, 1))
            .collect());
        let p = DiffParams::new(2, 16).unwrap();
        assert_eq!(find_merge_point(&a, &b, 0, &p), None);
        // the same suffix, but only beyond the horizon
        let mut a2 = sym("QQQQQQQQQQQQQQQQQQQQabc");
        a2.records[..20]
            .iter_mut()
            .enumerate()
            .for_each(|(k, r)| r.addr = k as u64);
        let b2 = sym("Rabc");
        assert_eq!(
            find_merge_point(&a2, &b2, 0, &DiffParams::new(1, 10).unwrap()),
            None
        );
        assert_eq!(
            find_merge_point(&a2, &b2, 0, &DiffParams::new(1, 20).unwrap()),
            Some((20, 1))
        );
    }

    #[test]
    fn merge_matches_brute_force_on_small_alphabets() {
        // exhaustive over a family of short strings
        let words = [
            "", "a", "ab", "ba", "aab", "abab", "bbaa", "abcab", "cabba", "aaaa", "abcabc",
        ];
        for x in words {
            for y in words {
                for pre in ["", "z", "zz"] {
                    let a = sym(&format!("{pre}Q{x}"));
                    let b = sym(&format!("{pre}R{y}"));
                    let d = pre.len();
                    for w in 1..=3 {
                        for h in [w, 3, 8] {
                            let p = DiffParams::new(w, h).unwrap();
                            assert_eq!(
                                find_merge_point(&a, &b, d, &p),
                                brute_merge(&a, &b, d, w, h),
                                "{pre}Q{x} vs {pre}R{y} w={w} h={h}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn classify_cases() {
        let (k, s) = classify_divergence(
            Some(&TraceRecord::read(7, 0x2010, 8)),
            Some(&TraceRecord::read(7, 0x2018, 8)),
            None,
            0,
        );
        assert_eq!((k, s), (DivergenceKind::MemoryAddress, 7));
        let (k, s) = classify_divergence(
            Some(&TraceRecord::control(3, 4)),
            Some(&TraceRecord::control(3, 9)),
            None,
            0,
        );
        assert_eq!((k, s), (DivergenceKind::ControlFlow, 3));
        let common = TraceRecord::control(9, 12);
        let (k, s) = classify_divergence(
            Some(&TraceRecord::control(12, 1)),
            Some(&TraceRecord::control(20, 1)),
            Some(&common),
            0,
        );
        assert_eq!((k, s), (DivergenceKind::ControlFlow, 9));
        // read vs write at the same pc is not an address difference
        let (k, _) = classify_divergence(
            Some(&TraceRecord::read(5, 0x10, 8)),
            Some(&TraceRecord::write(5, 0x18, 8)),
            None,
            0,
        );
        assert_eq!(k, DivergenceKind::ControlFlow);
        // one trace ended; nothing in common
        assert_eq!(
            classify_divergence(None, Some(&TraceRecord::control(3, 4)), None, 42),
            (DivergenceKind::ControlFlow, 42)
        );
    }

    #[test]
    fn diff_identical_is_empty() {
        assert!(diff_traces(&sym("abcdef"), &sym("abcdef"), &DiffParams::default()).is_empty());
    }

    #[test]
    fn diff_constructed_pair() {
        // last common record at pc 9, then different paths that rejoin
        let common: Vec<TraceRecord> = (0..4).map(|k| TraceRecord::read(9, 0x100 + k, 1)).collect();
        let mut a = vec![TraceRecord::control(9, 12), TraceRecord::control(12, 30)];
        let mut b = vec![TraceRecord::control(9, 20), TraceRecord::control(20, 30)];
        a.extend(&common);
        b.extend(&common);
        let divs = diff_traces(&tr(a), &tr(b), &DiffParams::new(4, 16).unwrap());
        assert_eq!(divs.len(), 1);
        assert_eq!(divs[0].kind, DivergenceKind::ControlFlow);
        assert_eq!(divs[0].site_pc, 9);
        assert_eq!(divs[0].witnesses, (Some(12), Some(20)));
        assert_eq!(divs[0].merge, Some((2, 2)));
    }

    #[test]
    fn diff_resumes_after_merge() {
        let a = sym("abQcdefRgh");
        let b = sym("abXcdefYgh");
        let divs = diff_traces(&a, &b, &DiffParams::new(2, 16).unwrap());
        let at: Vec<(usize, Option<(usize, usize)>)> =
            divs.iter().map(|d| (d.div_index_a, d.merge)).collect();
        assert_eq!(at, vec![(2, Some((3, 3))), (7, Some((8, 8)))]);
    }

    #[test]
    fn unresolved_divergence_stops() {
        let a = sym("abQQQQ");
        let b = sym("abRRRR");
        // with a horizon reaching both ends, the empty suffixes would align
        let reach = diff_traces(&a, &b, &DiffParams::new(1, 4).unwrap());
        assert_eq!(reach[0].merge, Some((6, 6)));
        let divs = diff_traces(&a, &b, &DiffParams::new(1, 3).unwrap());
        assert_eq!(divs.len(), 1);
        assert_eq!(divs[0].merge, None);
        // prefix: the longer tail is one divergence without a merge
        let divs = diff_traces(&sym("ab"), &sym("abcd"), &DiffParams::default());
        assert_eq!(divs.len(), 1);
        assert_eq!((divs[0].div_index_a, divs[0].merge), (2, None));
        assert_eq!(divs[0].witnesses, (None, Some(u64::from(b'c'))));
    }

    #[test]
    fn trailing_substitution_merges_at_end() {
        let divs = diff_traces(&sym("abcQ"), &sym("abcR"), &DiffParams::default());
        assert_eq!(divs.len(), 1);
        assert_eq!(divs[0].merge, Some((4, 4)));
    }

    fn set(traces: Vec<Trace>) -> TraceSet {
        let traces = traces
            .into_iter()
            .enumerate()
            .map(|(k, mut t)| {
                t.run_index = k as u64;
                t.secret_id = format!("{k:02x}");
                t
            })
            .collect();
        TraceSet::new("p", traces, BTreeMap::new()).unwrap()
    }

    #[test]
    fn analyze_identical_set() {
        let ts = set(vec![sym("abc"); 8]);
        assert!(analyze_trace_set(&ts, &DiffParams::default()).is_empty());
    }

    #[test]
    fn analyze_two_traces_reduces_to_pair() {
        let (a, b) = (sym("abQcd"), sym("abRcd"));
        let ts = set(vec![a.clone(), b.clone()]);
        let raw = analyze_trace_set(&ts, &DiffParams::default());
        assert_eq!(raw.pairs.len(), 1);
        assert_eq!(
            raw.pairs[0].divergences,
            diff_traces(&a, &b, &DiffParams::default())
        );
        // pcs differ, so the site is the last common record
        let f = &raw.merged[&(DivergenceKind::ControlFlow, u64::from(b'b'))];
        assert_eq!(f.evidence_count, 1);
        assert_eq!(
            f.distinct_values,
            BTreeSet::from([u64::from(b'Q'), u64::from(b'R')])
        );
        assert_eq!(f.merge_pc, Some(u64::from(b'c')));
    }

    #[test]
    fn evidence_counts_pairs_not_divergences() {
        let a = sym("aQbcdQe");
        let b = sym("aRbcdRe");
        let ts = set(vec![a.clone(), b.clone(), b, a]);
        let raw = analyze_trace_set(&ts, &DiffParams::new(1, 8).unwrap());
        assert_eq!(raw.merged.len(), 2);
        assert!(raw.merged.values().all(|f| f.evidence_count == 2));
        assert!(raw
            .merged
            .values()
            .all(|f| f.evidence_count < ts.traces().len()));
    }

    #[test]
    fn entry_from_producer_meta() {
        let a = sym("Qab");
        let b = sym("Rab");
        let mut meta = BTreeMap::new();
        meta.insert(META_ENTRY.to_string(), "2a".to_string());
        let ts = TraceSet::new(
            "p",
            vec![
                a,
                Trace {
                    secret_id: "01".into(),
                    ..b
                },
            ],
            meta,
        )
        .unwrap();
        let raw = analyze_trace_set(&ts, &DiffParams::default());
        assert!(raw
            .merged
            .contains_key(&(DivergenceKind::ControlFlow, 0x2a)));
    }
}
