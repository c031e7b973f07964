// Copyright 2026 The ctdiff Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;

use super::ReportError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolEntry {
    pub start: u64,
    pub length: u64,
    pub function_name: String,
    pub source_file: Option<String>,
}

impl SymbolEntry {
    fn end(&self) -> u128 {
        u128::from(self.start) + u128::from(self.length)
    }
}

/// Address-to-function map with non-overlapping entries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolMap {
    entries: Vec<SymbolEntry>,
}

impl SymbolMap {
    pub fn new(mut entries: Vec<SymbolEntry>) -> Result<Self, ReportError> {
        entries.retain(|e| e.length > 0);
        entries.sort_by_key(|e| e.start);
        for w in entries.windows(2) {
            if w[0].end() > u128::from(w[1].start) {
                return Err(ReportError::OverlappingSymbols {
                    first: w[0].function_name.clone(),
                    second: w[1].function_name.clone(),
                });
            }
        }
        Ok(Self { entries })
    }

    /// Parses `<start-hex> <length-hex> <function_name> [source_file]`
    /// lines. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, ReportError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = strip_comment(line);
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| ReportError::SymbolParse {
                line: n + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if !(3..=4).contains(&fields.len()) {
                return Err(bad(format!(
                    "expected 3 or 4 fields, found {}",
                    fields.len()
                )));
            }
            let hex = |s: &str| {
                u64::from_str_radix(s.strip_prefix("0x").unwrap_or(s), 16)
                    .map_err(|_| bad(format!("`{s}` is not a hex number")))
            };
            entries.push(SymbolEntry {
                start: hex(fields[0])?,
                length: hex(fields[1])?,
                function_name: fields[2].to_owned(),
                source_file: fields.get(3).map(|s| (*s).to_owned()),
            });
        }
        Self::new(entries)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{:x} {:x} {}", e.start, e.length, e.function_name));
            if let Some(f) = &e.source_file {
                out.push(' ');
                out.push_str(f);
            }
            out.push('\n');
        }
        out
    }

    pub fn entries(&self) -> &[SymbolEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The entry containing `pc` (start inclusive, end exclusive).
    pub fn lookup(&self, pc: u64) -> Option<&SymbolEntry> {
        let idx = self.entries.partition_point(|e| e.start <= pc);
        let e = self.entries.get(idx.checked_sub(1)?)?;
        (u128::from(pc) < e.end()).then_some(e)
    }
}

/// Functions and files whose leaks are known to come from source code.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnownIssueList {
    pub function_names: BTreeSet<String>,
    pub source_files: BTreeSet<String>,
}

impl KnownIssueList {
    /// Parses `fn <name>` / `file <name>` lines with `#` comments.
    pub fn parse(text: &str) -> Result<Self, ReportError> {
        let mut list = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = strip_comment(line);
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| ReportError::KnownIssueParse {
                line: n + 1,
                message,
            };
            let mut fields = line.split_whitespace();
            let (kind, name) = (fields.next(), fields.next());
            if fields.next().is_some() {
                return Err(bad("expected `fn <name>` or `file <name>`".into()));
            }
            match (kind, name) {
                (Some("fn"), Some(name)) => list.function_names.insert(name.to_owned()),
                (Some("file"), Some(name)) => list.source_files.insert(name.to_owned()),
                _ => {
                    return Err(bad(format!(
                        "expected `fn <name>` or `file <name>`, found `{line}`"
                    )))
                }
            };
        }
        Ok(list)
    }

    pub fn is_empty(&self) -> bool {
        self.function_names.is_empty() && self.source_files.is_empty()
    }

    pub fn matches(&self, function_name: &str, source_file: Option<&str>) -> bool {
        self.function_names.contains(function_name)
            || source_file.is_some_and(|f| self.source_files.contains(f))
    }
}

fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}
