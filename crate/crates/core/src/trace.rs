// Copyright 2026 The ctdiff Authors
// SPDX-License-Identifier: Apache-2.0

//! Execution traces: the per-run record stream, its text encoding, and
//! trace-scope filtering.
//!
//! A trace is a single interleaved stream of control-transfer and memory
//! events. Conditional branches always record their resolved next pc, so
//! the branch direction is visible even when the fall-through is taken.
//!
//! The on-disk form is line oriented:
//!
//! ```text
//! #trace v1
//! #run 0
//! #secret afcd1d7b39a820e2
//! #image 0 20 text
//! C 10 40
//! R 11 1000 8
//! W 12 2000 1
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Errors from trace encoding, decoding and set construction.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot encode trace: {0}")]
    Encode(String),
    #[error("include ranges overlap: {first:#x}+{first_len:#x} and {second:#x}+{second_len:#x}")]
    OverlappingRanges {
        first: u64,
        first_len: u64,
        second: u64,
        second_len: u64,
    },
    #[error("a trace set needs at least two traces, got {0}")]
    TooFewTraces(usize),
    #[error("duplicate secret id {0} in trace set")]
    DuplicateSecret(String),
    #[error("trace for run {run} has image ranges different from the first trace")]
    ImageMismatch { run: u64 },
}

/// What a single trace record observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RecordKind {
    ControlTransfer,
    MemRead,
    MemWrite,
}

impl RecordKind {
    pub fn letter(self) -> char {
        match self {
            RecordKind::ControlTransfer => 'C',
            RecordKind::MemRead => 'R',
            RecordKind::MemWrite => 'W',
        }
    }

    pub fn is_memory(self) -> bool {
        !matches!(self, RecordKind::ControlTransfer)
    }
}

/// One executed control transfer or memory access.
///
/// `addr` is the resolved destination for control transfers and the
/// effective data address for memory accesses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TraceRecord {
    pub kind: RecordKind,
    pub pc: u64,
    pub addr: u64,
    pub size: u32,
}

impl TraceRecord {
    pub fn control(pc: u64, target: u64) -> Self {
        Self {
            kind: RecordKind::ControlTransfer,
            pc,
            addr: target,
            size: 0,
        }
    }

    pub fn read(pc: u64, addr: u64, size: u32) -> Self {
        Self {
            kind: RecordKind::MemRead,
            pc,
            addr,
            size,
        }
    }

    pub fn write(pc: u64, addr: u64, size: u32) -> Self {
        Self {
            kind: RecordKind::MemWrite,
            pc,
            addr,
            size,
        }
    }
}

/// A contiguous code region. Records whose pc falls in one of a trace's
/// image ranges are in scope.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRange {
    pub base: u64,
    pub length: u64,
    pub name: String,
}

impl ImageRange {
    pub fn new(base: u64, length: u64, name: impl Into<String>) -> Self {
        Self {
            base,
            length,
            name: name.into(),
        }
    }

    pub fn contains(&self, pc: u64) -> bool {
        contains(self.base, self.length, pc)
    }
}

fn contains(base: u64, length: u64, pc: u64) -> bool {
    pc >= base && pc - base < length
}

/// The records of one run under one secret.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Trace {
    pub run_index: u64,
    pub secret_id: String,
    pub records: Vec<TraceRecord>,
    pub image_ranges: Vec<ImageRange>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// A well-formed set of traces of one program under pairwise-distinct
/// secrets, all sharing the same image ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceSet {
    program_id: String,
    traces: Vec<Trace>,
    producer_meta: BTreeMap<String, String>,
}

impl TraceSet {
    pub fn new(
        program_id: impl Into<String>,
        traces: Vec<Trace>,
        producer_meta: BTreeMap<String, String>,
    ) -> Result<Self, TraceError> {
        if traces.len() < 2 {
            return Err(TraceError::TooFewTraces(traces.len()));
        }
        let mut seen = BTreeSet::new();
        for t in &traces {
            if !seen.insert(t.secret_id.as_str()) {
                return Err(TraceError::DuplicateSecret(t.secret_id.clone()));
            }
            if t.image_ranges != traces[0].image_ranges {
                return Err(TraceError::ImageMismatch { run: t.run_index });
            }
        }
        Ok(Self {
            program_id: program_id.into(),
            traces,
            producer_meta,
        })
    }

    pub fn program_id(&self) -> &str {
        &self.program_id
    }

    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    pub fn producer_meta(&self) -> &BTreeMap<String, String> {
        &self.producer_meta
    }

    pub fn into_traces(self) -> Vec<Trace> {
        self.traces
    }
}

/// Returns every invariant violation in `trace`; an empty list means the
/// trace is well formed.
pub fn validate_trace(trace: &Trace) -> Vec<String> {
    let mut violations = Vec::new();
    if !is_secret_id(&trace.secret_id) {
        violations.push(format!(
            "secret id {:?} is not a non-empty lowercase hex string",
            trace.secret_id
        ));
    }
    for (i, image) in trace.image_ranges.iter().enumerate() {
        if !is_image_name(&image.name) {
            violations.push(format!(
                "image range {i} has invalid name {:?} (must be non-empty without whitespace)",
                image.name
            ));
        }
    }
    for (i, rec) in trace.records.iter().enumerate() {
        match rec.kind {
            RecordKind::ControlTransfer if rec.size != 0 => violations.push(format!(
                "record {i}: control transfer with size {} (must be 0)",
                rec.size
            )),
            RecordKind::MemRead | RecordKind::MemWrite if rec.size == 0 => {
                violations.push(format!("record {i}: memory access with size 0"))
            }
            _ => {}
        }
        if !trace.image_ranges.iter().any(|r| r.contains(rec.pc)) {
            violations.push(format!(
                "record {i}: pc {:#x} outside all image ranges",
                rec.pc
            ));
        }
    }
    violations
}

fn is_lower_hex(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

fn is_secret_id(s: &str) -> bool {
    is_lower_hex(s)
}

fn is_image_name(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

/// Encodes a trace in the line-oriented text format.
///
/// Only the fields the format can carry are checked; record invariants are
/// the business of [`validate_trace`].
pub fn encode_trace(trace: &Trace) -> Result<String, TraceError> {
    if !is_secret_id(&trace.secret_id) {
        return Err(TraceError::Encode(format!(
            "secret id {:?} is not lowercase hex",
            trace.secret_id
        )));
    }
    let mut out = String::with_capacity(64 + trace.records.len() * 16);
    out.push_str("#trace v1\n");
    let _ = writeln!(out, "#run {}", trace.run_index);
    let _ = writeln!(out, "#secret {}", trace.secret_id);
    for image in &trace.image_ranges {
        if !is_image_name(&image.name) {
            return Err(TraceError::Encode(format!(
                "image name {:?} is empty or contains whitespace",
                image.name
            )));
        }
        let _ = writeln!(
            out,
            "#image {:x} {:x} {}",
            image.base, image.length, image.name
        );
    }
    for rec in &trace.records {
        match rec.kind {
            RecordKind::ControlTransfer => {
                let _ = writeln!(out, "C {:x} {:x}", rec.pc, rec.addr);
            }
            RecordKind::MemRead | RecordKind::MemWrite => {
                let _ = writeln!(
                    out,
                    "{} {:x} {:x} {}",
                    rec.kind.letter(),
                    rec.pc,
                    rec.addr,
                    rec.size
                );
            }
        }
    }
    Ok(out)
}

struct LineParser<'a> {
    line: usize,
    fields: std::str::SplitAsciiWhitespace<'a>,
}

impl<'a> LineParser<'a> {
    fn err(&self, message: impl Into<String>) -> TraceError {
        TraceError::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    fn field(&mut self, what: &str) -> Result<&'a str, TraceError> {
        self.fields
            .next()
            .ok_or_else(|| self.err(format!("missing {what}")))
    }

    fn hex(&mut self, what: &str) -> Result<u64, TraceError> {
        let s = self.field(what)?;
        if !is_lower_hex(s) {
            return Err(self.err(format!("{what} {s:?} is not lowercase hex")));
        }
        u64::from_str_radix(s, 16).map_err(|e| self.err(format!("{what} {s:?}: {e}")))
    }

    fn decimal<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, TraceError>
    where
        T::Err: std::fmt::Display,
    {
        let s = self.field(what)?;
        if !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(self.err(format!("{what} {s:?} is not a decimal number")));
        }
        s.parse()
            .map_err(|e: T::Err| self.err(format!("{what} {s:?}: {e}")))
    }

    fn finish(mut self) -> Result<(), TraceError> {
        match self.fields.next() {
            None => Ok(()),
            Some(extra) => Err(self.err(format!("unexpected trailing field {extra:?}"))),
        }
    }
}

/// Decodes the text format produced by [`encode_trace`].
pub fn decode_trace(input: &str) -> Result<Trace, TraceError> {
    let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (n, first) = header(&mut lines, "#trace v1")?;
    if first != "#trace v1" {
        return Err(TraceError::Parse {
            line: n,
            message: format!("expected \"#trace v1\", found {first:?}"),
        });
    }

    let (n, run_line) = header(&mut lines, "#run")?;
    let mut p = header_fields(n, run_line, "#run")?;
    let run_index = p.decimal("run index")?;
    p.finish()?;

    let (n, secret_line) = header(&mut lines, "#secret")?;
    let mut p = header_fields(n, secret_line, "#secret")?;
    let secret_id = p.field("secret id")?;
    if !is_secret_id(secret_id) {
        return Err(p.err(format!("secret id {secret_id:?} is not lowercase hex")));
    }
    let secret_id = secret_id.to_owned();
    p.finish()?;

    let mut image_ranges = Vec::new();
    let mut records = Vec::new();
    for (n, line) in lines {
        let mut fields = line.split_ascii_whitespace();
        let tag = fields.next().unwrap_or("");
        let mut p = LineParser { line: n, fields };
        match tag {
            "#image" => {
                if !records.is_empty() {
                    return Err(p.err("#image header after the first record"));
                }
                let base = p.hex("image base")?;
                let length = p.hex("image length")?;
                let name = p.field("image name")?.to_owned();
                p.finish()?;
                image_ranges.push(ImageRange { base, length, name });
            }
            "C" => {
                let pc = p.hex("pc")?;
                let target = p.hex("target")?;
                p.finish()?;
                records.push(TraceRecord::control(pc, target));
            }
            "R" | "W" => {
                let pc = p.hex("pc")?;
                let addr = p.hex("address")?;
                let size = p.decimal("size")?;
                p.finish()?;
                records.push(if tag == "R" {
                    TraceRecord::read(pc, addr, size)
                } else {
                    TraceRecord::write(pc, addr, size)
                });
            }
            "" => return Err(p.err("empty line")),
            other => return Err(p.err(format!("unknown record letter {other:?}"))),
        }
    }

    Ok(Trace {
        run_index,
        secret_id,
        records,
        image_ranges,
    })
}

fn header<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    tag: &str,
) -> Result<(usize, &'a str), TraceError> {
    lines.next().ok_or_else(|| TraceError::Parse {
        line: 0,
        message: format!("unexpected end of input, expected {tag}"),
    })
}

fn header_fields<'a>(line: usize, text: &'a str, tag: &str) -> Result<LineParser<'a>, TraceError> {
    let mut fields = text.split_ascii_whitespace();
    if fields.next() != Some(tag) {
        return Err(TraceError::Parse {
            line,
            message: format!("expected {tag} header, found {text:?}"),
        });
    }
    Ok(LineParser { line, fields })
}

/// Keeps only the records whose pc lies in one of `include`, in their
/// original order, and replaces the trace's image ranges with the include
/// set.
///
/// `include` ranges are `(base, length)` pairs and must not overlap.
pub fn scope_filter(trace: &Trace, include: &[(u64, u64)]) -> Result<Trace, TraceError> {
    check_non_overlapping(include)?;
    let records = trace
        .records
        .iter()
        .filter(|r| include.iter().any(|&(b, l)| contains(b, l, r.pc)))
        .copied()
        .collect();
    let image_ranges = include
        .iter()
        .map(|&(base, length)| ImageRange {
            name: name_for(trace, base, length),
            base,
            length,
        })
        .collect();
    Ok(Trace {
        run_index: trace.run_index,
        secret_id: trace.secret_id.clone(),
        records,
        image_ranges,
    })
}

// Keep the original image name when an include range is exactly one of the
// trace's images, so filtering twice is the identity.
fn name_for(trace: &Trace, base: u64, length: u64) -> String {
    trace
        .image_ranges
        .iter()
        .find(|r| r.base == base && r.length == length)
        .map(|r| r.name.clone())
        .unwrap_or_else(|| format!("scope_{base:x}"))
}

fn check_non_overlapping(ranges: &[(u64, u64)]) -> Result<(), TraceError> {
    let mut sorted: Vec<(u64, u64)> = ranges.iter().copied().filter(|&(_, l)| l > 0).collect();
    sorted.sort_unstable();
    for w in sorted.windows(2) {
        let (b0, l0) = w[0];
        let (b1, l1) = w[1];
        if u128::from(b0) + u128::from(l0) > u128::from(b1) {
            return Err(TraceError::OverlappingRanges {
                first: b0,
                first_len: l0,
                second: b1,
                second_len: l1,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trace {
        Trace {
            run_index: 3,
            secret_id: "00ff".into(),
            records: vec![
                TraceRecord::control(0x10, 0x40),
                TraceRecord::read(0x11, 0x1000, 8),
                TraceRecord::write(0x12, 0x2000, 1),
            ],
            image_ranges: vec![ImageRange::new(0, 0x1000, "text")],
        }
    }

    #[test]
    fn well_formed_trace_has_no_violations() {
        assert!(validate_trace(&sample()).is_empty());
    }

    #[test]
    fn control_transfer_with_size_is_flagged() {
        let mut t = sample();
        t.records[0].size = 8;
        let v = validate_trace(&t);
        assert_eq!(v.len(), 1);
        assert!(v[0].starts_with("record 0:"), "{v:?}");
    }

    #[test]
    fn memory_record_without_size_is_flagged() {
        let mut t = sample();
        t.records[2].size = 0;
        let v = validate_trace(&t);
        assert_eq!(v.len(), 1);
        assert!(v[0].starts_with("record 2:"));
    }

    #[test]
    fn pc_outside_image_is_flagged() {
        let mut t = sample();
        t.records.push(TraceRecord::control(0x9000, 0x10));
        // brute force: which records fall outside every image range?
        let outside: Vec<usize> = t
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| !(0..0x1000u64).contains(&r.pc))
            .map(|(i, _)| i)
            .collect();
        assert_eq!(outside, vec![3]);
        let v = validate_trace(&t);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("0x9000"), "{v:?}");
    }

    #[test]
    fn control_record_formats_as_c_line() {
        let t = Trace {
            records: vec![TraceRecord::control(0x10, 0x40)],
            ..sample()
        };
        let text = encode_trace(&t).unwrap();
        assert!(text.ends_with("\nC 10 40\n"), "{text}");
        assert_eq!(decode_trace(&text).unwrap(), t);
    }

    #[test]
    fn empty_trace_is_headers_only() {
        let t = Trace {
            records: vec![],
            ..sample()
        };
        let text = encode_trace(&t).unwrap();
        assert_eq!(
            text,
            "#trace v1\n#run 3\n#secret 00ff\n#image 0 1000 text\n"
        );
        assert_eq!(decode_trace(&text).unwrap(), t);
    }

    #[test]
    fn encoding_is_exact() {
        let text = encode_trace(&sample()).unwrap();
        assert_eq!(
            text,
            "#trace v1\n#run 3\n#secret 00ff\n#image 0 1000 text\nC 10 40\nR 11 1000 8\nW 12 2000 1\n"
        );
    }

    #[test]
    fn decode_errors_carry_line_numbers() {
        let base = "#trace v1\n#run 0\n#secret 00\n";
        let cases = [
            (format!("{base}X 1 2\n"), 4, "unknown record letter"),
            (format!("{base}C 1 zz\n"), 4, "not lowercase hex"),
            (format!("{base}C 1 2\nR 1 2\n"), 5, "missing size"),
            (format!("{base}C 1 2 3\n"), 4, "trailing"),
            (format!("{base}C 1 0x2\n"), 4, "not lowercase hex"),
            (
                format!("{base}C 1 2\n#image 0 10 a\n"),
                5,
                "after the first record",
            ),
            ("#trace v2\n".to_string(), 1, "expected"),
            ("#trace v1\n#run x\n".to_string(), 2, "not a decimal"),
            (
                "#trace v1\n#run 0\n#secret ZZ\n".to_string(),
                3,
                "not lowercase hex",
            ),
            (format!("{base}\n"), 4, "empty line"),
        ];
        for (input, line, needle) in cases {
            match decode_trace(&input) {
                Err(TraceError::Parse { line: l, message }) => {
                    assert_eq!(l, line, "{input:?}: {message}");
                    assert!(message.contains(needle), "{input:?}: {message}");
                }
                other => panic!("{input:?} decoded to {other:?}"),
            }
        }
        assert!(matches!(decode_trace(""), Err(TraceError::Parse { .. })));
    }

    #[test]
    fn encode_rejects_unencodable_names() {
        let mut t = sample();
        t.image_ranges[0].name = "two words".into();
        assert!(encode_trace(&t).is_err());
        assert_eq!(validate_trace(&t).len(), 1);
    }

    #[test]
    fn full_scope_is_identity() {
        let t = sample();
        let f = scope_filter(&t, &[(0, 0x1000)]).unwrap();
        assert_eq!(f, t);
        let f = scope_filter(&t, &[(0, u64::MAX)]).unwrap();
        assert_eq!(f.records, t.records);
    }

    #[test]
    fn empty_scope_drops_everything() {
        let f = scope_filter(&sample(), &[]).unwrap();
        assert!(f.records.is_empty());
        assert!(f.image_ranges.is_empty());
    }

    #[test]
    fn scope_keeps_members_in_order() {
        let mut t = sample();
        t.records = vec![
            TraceRecord::control(0x10, 1),
            TraceRecord::control(0x2000, 2),
            TraceRecord::control(0x30, 3),
        ];
        let f = scope_filter(&t, &[(0x0, 0x100)]).unwrap();
        let pcs: Vec<u64> = f.records.iter().map(|r| r.pc).collect();
        assert_eq!(pcs, vec![0x10, 0x30]);
    }

    #[test]
    fn overlapping_scope_rejected() {
        let err = scope_filter(&sample(), &[(0, 0x20), (0x10, 0x20)]).unwrap_err();
        assert!(matches!(err, TraceError::OverlappingRanges { .. }));
        // adjacent is fine
        assert!(scope_filter(&sample(), &[(0, 0x10), (0x10, 0x20)]).is_ok());
    }

    #[test]
    fn trace_set_invariants() {
        let a = sample();
        let mut b = sample();
        b.secret_id = "01".into();
        b.run_index = 4;
        assert!(TraceSet::new("p", vec![a.clone(), b.clone()], BTreeMap::new()).is_ok());
        assert_eq!(
            TraceSet::new("p", vec![a.clone()], BTreeMap::new()).unwrap_err(),
            TraceError::TooFewTraces(1)
        );
        assert!(matches!(
            TraceSet::new("p", vec![a.clone(), a.clone()], BTreeMap::new()),
            Err(TraceError::DuplicateSecret(_))
        ));
        b.image_ranges.push(ImageRange::new(0x5000, 1, "lib"));
        assert_eq!(
            TraceSet::new("p", vec![a, b], BTreeMap::new()).unwrap_err(),
            TraceError::ImageMismatch { run: 4 }
        );
    }
}
