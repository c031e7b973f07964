// Copyright 2026 The ctdiff Authors
// SPDX-License-Identifier: Apache-2.0

//! LCS alignment used to cross-check the greedy engine. Quadratic in time
//! and memory, hence the size bound.

use std::ops::Range;

use crate::trace::{Trace, TraceRecord};

pub const ORACLE_MAX_RECORDS: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("oracle alignment limited to {limit} records per trace, got {len_a} and {len_b}")]
pub struct OracleError {
    pub limit: usize,
    pub len_a: usize,
    pub len_b: usize,
}

/// A maximal run of records that are not part of the alignment. Either
/// side may be empty (pure insertion or deletion).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignRegion {
    pub a: Range<usize>,
    pub b: Range<usize>,
}

/// Longest-common-subsequence alignment over full-record equality,
/// reported as the maximal non-matching regions.
///
/// The alignment is built front to back and matches equal heads eagerly,
/// so a common prefix is always aligned and the first region starts at the
/// first differing index.
pub fn oracle_align(a: &Trace, b: &Trace) -> Result<Vec<AlignRegion>, OracleError> {
    align_records(&a.records, &b.records)
}

fn align_records(a: &[TraceRecord], b: &[TraceRecord]) -> Result<Vec<AlignRegion>, OracleError> {
    let (n, m) = (a.len(), b.len());
    if n > ORACLE_MAX_RECORDS || m > ORACLE_MAX_RECORDS {
        return Err(OracleError {
            limit: ORACLE_MAX_RECORDS,
            len_a: n,
            len_b: m,
        });
    }

    // suffix[i][j] = LCS length of a[i..] and b[j..]
    let mut suffix = vec![vec![0u16; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            suffix[i][j] = if a[i] == b[j] {
                suffix[i + 1][j + 1] + 1
            } else {
                suffix[i + 1][j].max(suffix[i][j + 1])
            };
        }
    }

    let mut regions = Vec::new();
    let (mut i, mut j) = (0, 0);
    let (mut gap_a, mut gap_b) = (0, 0);
    let flush = |regions: &mut Vec<AlignRegion>, ga: usize, gb: usize, i: usize, j: usize| {
        if ga < i || gb < j {
            regions.push(AlignRegion { a: ga..i, b: gb..j });
        }
    };
    while i < n && j < m {
        if a[i] == b[j] {
            flush(&mut regions, gap_a, gap_b, i, j);
            i += 1;
            j += 1;
            gap_a = i;
            gap_b = j;
        } else if suffix[i + 1][j] >= suffix[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    flush(&mut regions, gap_a, gap_b, n, m);
    Ok(regions)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(s: &str) -> Vec<TraceRecord> {
        s.bytes()
            .map(|c| TraceRecord::control(u64::from(c), 0))
            .collect()
    }

    fn regions(a: &str, b: &str) -> Vec<(Range<usize>, Range<usize>)> {
        align_records(&recs(a), &recs(b))
            .unwrap()
            .into_iter()
            .map(|r| (r.a, r.b))
            .collect()
    }

    #[test]
    fn identical() {
        assert!(regions("abc", "abc").is_empty());
        assert!(regions("", "").is_empty());
    }

    #[test]
    fn single_substitution() {
        assert_eq!(regions("abXcd", "abYcd"), vec![(2..3, 2..3)]);
    }

    #[test]
    fn insertion_and_prefix() {
        assert_eq!(regions("xyz", "xQyz"), vec![(1..1, 1..2)]);
        assert_eq!(regions("ab", "abcd"), vec![(2..2, 2..4)]);
        assert_eq!(regions("", "a"), vec![(0..0, 0..1)]);
    }

    #[test]
    fn common_prefix_is_matched_eagerly() {
        // a backward traceback could align a[0] with b[2] here
        assert_eq!(regions("ab", "acab"), vec![(1..1, 1..3)]);
    }

    #[test]
    fn three_separated_substitutions() {
        // hand-checked tiny instance
        assert_eq!(
            regions("aXbbYccZd", "aPbbQccRd"),
            vec![(1..2, 1..2), (4..5, 4..5), (7..8, 7..8)]
        );
    }

    #[test]
    fn size_bound() {
        let long = vec![TraceRecord::control(0, 0); ORACLE_MAX_RECORDS + 1];
        assert!(align_records(&long, &[]).is_err());
        assert!(align_records(&long[..ORACLE_MAX_RECORDS], &long[..ORACLE_MAX_RECORDS]).is_ok());
    }
}
