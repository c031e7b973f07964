// Copyright 2026 The ctdiff Authors
// SPDX-License-Identifier: Apache-2.0

// Generators shared by the property and acceptance tests.
#![allow(dead_code)]

use ctdiff::trace::{ImageRange, RecordKind, Trace, TraceRecord};
use proptest::prelude::*;

pub const TEXT_BASE: u64 = 0x40_0000;
pub const TEXT_LEN: u64 = 0x1000;

pub fn trace_of(run: u64, records: Vec<TraceRecord>) -> Trace {
    Trace {
        run_index: run,
        secret_id: format!("{:02x}", run + 1),
        records,
        image_ranges: vec![ImageRange::new(TEXT_BASE, TEXT_LEN, "text")],
    }
}

fn record(kind: RecordKind, pc: u64, addr: u64, size: u32) -> TraceRecord {
    match kind {
        RecordKind::ControlTransfer => TraceRecord::control(pc, addr),
        RecordKind::MemRead => TraceRecord::read(pc, addr, size),
        RecordKind::MemWrite => TraceRecord::write(pc, addr, size),
    }
}

fn kind() -> impl Strategy<Value = RecordKind> {
    prop_oneof![
        Just(RecordKind::ControlTransfer),
        Just(RecordKind::MemRead),
        Just(RecordKind::MemWrite),
    ]
}

/// Any well-formed record: full-range addresses and sizes.
pub fn any_record() -> impl Strategy<Value = TraceRecord> {
    (kind(), 0..TEXT_LEN, any::<u64>(), 1u32..=u32::MAX)
        .prop_map(|(k, off, addr, size)| record(k, TEXT_BASE + off, addr, size))
}

/// Records from a tiny alphabet so that equal records recur often.
pub fn small_record() -> impl Strategy<Value = TraceRecord> {
    (kind(), 0u64..3, 0u64..3)
        .prop_map(|(k, pc, addr)| record(k, TEXT_BASE + pc, 0x1000 + addr * 8, 8))
}

/// Any valid trace, including empty ones and several images.
pub fn any_trace() -> impl Strategy<Value = Trace> {
    let image = ("[a-z_][a-z0-9_.]{0,7}", 0u64..0x10_0000, 1u64..0x1000);
    (
        any::<u64>(),
        "[0-9a-f]{1,16}",
        prop::collection::vec(image, 1..4),
        prop::collection::vec((kind(), any::<u64>(), any::<u64>(), 1u32..=u32::MAX), 0..64),
    )
        .prop_map(|(run, secret, images, raw)| {
            let mut base = 0u64;
            let image_ranges: Vec<ImageRange> = images
                .into_iter()
                .map(|(name, gap, len)| {
                    let r = ImageRange::new(base + gap, len, name);
                    base += gap + len;
                    r
                })
                .collect();
            let records = raw
                .into_iter()
                .map(|(k, pick, addr, size)| {
                    let img = &image_ranges[(pick % image_ranges.len() as u64) as usize];
                    let pc = img.base + (pick >> 8) % img.length;
                    record(k, pc, addr, size)
                })
                .collect();
            Trace {
                run_index: run,
                secret_id: secret,
                records,
                image_ranges,
            }
        })
}

/// A trace and an edited copy of it: a handful of substitutions,
/// insertions and deletions over a small alphabet, at most `max` records
/// each.
pub fn edited_pair(max: usize) -> impl Strategy<Value = (Trace, Trace)> {
    let edits = prop::collection::vec((0u8..3, any::<prop::sample::Index>(), small_record()), 0..6);
    (prop::collection::vec(small_record(), 0..max), edits).prop_map(move |(base, edits)| {
        let mut other = base.clone();
        for (op, at, rec) in edits {
            match op {
                0 if !other.is_empty() => {
                    let i = at.index(other.len());
                    other[i] = rec;
                }
                1 if other.len() < max => {
                    let i = at.index(other.len() + 1);
                    other.insert(i, rec);
                }
                2 if !other.is_empty() => {
                    let i = at.index(other.len());
                    other.remove(i);
                }
                _ => {}
            }
        }
        (trace_of(0, base), trace_of(1, other))
    })
}

/// Pair with a single differing region between a shared prefix and a
/// shared suffix, each at least `window` records long. Every record is
/// unique so the only valid alignment is the intended one.
#[derive(Debug, Clone)]
pub struct SingleRegion {
    pub a: Trace,
    pub b: Trace,
    pub prefix: usize,
    pub region_a: usize,
    pub region_b: usize,
}

pub fn single_region(window: usize) -> impl Strategy<Value = SingleRegion> {
    (
        window..window + 40,
        1usize..30,
        1usize..30,
        window..window + 40,
    )
        .prop_map(move |(prefix, ra, rb, suffix)| {
            let mut next = 0u64;
            let mut fresh = |n: usize| -> Vec<TraceRecord> {
                (0..n)
                    .map(|_| {
                        next += 1;
                        TraceRecord::read(TEXT_BASE + next % TEXT_LEN, 0x10_0000 + next * 8, 8)
                    })
                    .collect()
            };
            let p = fresh(prefix);
            let s = fresh(suffix);
            let mut a = p.clone();
            a.extend(fresh(ra));
            a.extend(s.iter().copied());
            let mut b = p;
            b.extend(fresh(rb));
            b.extend(s);
            SingleRegion {
                a: trace_of(0, a),
                b: trace_of(1, b),
                prefix,
                region_a: ra,
                region_b: rb,
            }
        })
}
