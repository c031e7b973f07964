// Copyright 2026 The ctdiff Authors
// SPDX-License-Identifier: Apache-2.0

//! Two-pass assembler for MiniISA source text.
//!
//! Line oriented. `;` starts a comment. A line may hold a `label:`
//! definition, an instruction, or both (`main: halt`). Labels starting with
//! `.` are local and never become function symbols. Directives:
//!
//! - `.entry <label>` (default: instruction 0)
//! - `.secret <decimal-len>` (default: 8)
//! - `.data <addr-hex> <byte-hex>...`

use std::collections::BTreeMap;

use super::isa::{AluOp, Instr, Program, Reg, Width, DEFAULT_DATA_SIZE, NUM_REGS};

pub const DEFAULT_SECRET_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AsmError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: undefined label `{label}`")]
    UndefinedLabel { line: usize, label: String },
    #[error("line {line}: duplicate label `{label}`")]
    DuplicateLabel { line: usize, label: String },
    #[error("line {line}: immediate `{text}` out of 64-bit range")]
    ImmediateRange { line: usize, text: String },
    #[error("program has no instructions")]
    Empty,
}

/// Operand that may still refer to an unresolved label.
#[derive(Debug)]
enum Pending {
    Ready(Instr),
    Branch {
        mnemonic: Mnemonic,
        rs: Option<Reg>,
        label: String,
        line: usize,
    },
}

#[derive(Debug, Clone, Copy)]
enum Mnemonic {
    Beqz,
    Bnez,
    Jmp,
    Call,
}

pub fn assemble(source: &str) -> Result<Program, AsmError> {
    let mut pending = Vec::new();
    let mut labels: BTreeMap<String, usize> = BTreeMap::new();
    let mut entry_label: Option<(String, usize)> = None;
    let mut secret_len = DEFAULT_SECRET_LEN;
    let mut data_init = Vec::new();

    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let mut text = raw.split(';').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }

        // label definitions, possibly followed by an instruction
        if let Some((head, rest)) = text.split_once(':') {
            let head = head.trim();
            if is_label(head) && !head.contains(char::is_whitespace) {
                if labels.insert(head.to_owned(), pending.len()).is_some() {
                    return Err(AsmError::DuplicateLabel {
                        line,
                        label: head.to_owned(),
                    });
                }
                text = rest.trim();
                if text.is_empty() {
                    continue;
                }
            }
        }

        let (mnemonic, operands) = match text.split_once(char::is_whitespace) {
            Some((m, rest)) => (m, rest.trim()),
            None => (text, ""),
        };
        let ctx = Ctx { line };

        match mnemonic {
            ".entry" => {
                let label = operands.trim();
                if !is_label(label) {
                    return Err(ctx.syntax(format!(".entry expects a label, found `{label}`")));
                }
                entry_label = Some((label.to_owned(), line));
            }
            ".secret" => {
                let len: usize = operands.trim().parse().map_err(|_| {
                    ctx.syntax(format!(
                        ".secret expects a decimal length, found `{operands}`"
                    ))
                })?;
                if len == 0 {
                    return Err(ctx.syntax(".secret length must be at least 1"));
                }
                secret_len = len;
            }
            ".data" => {
                let mut words = operands.split_whitespace();
                let addr = words
                    .next()
                    .ok_or_else(|| ctx.syntax(".data expects an address"))
                    .and_then(|w| ctx.hex(w))?;
                let bytes = words
                    .map(|w| {
                        let v = ctx.hex(w)?;
                        u8::try_from(v)
                            .map_err(|_| ctx.syntax(format!("data byte `{w}` exceeds 0xff")))
                    })
                    .collect::<Result<Vec<u8>, _>>()?;
                let end = u128::from(addr) + bytes.len() as u128;
                if end > DEFAULT_DATA_SIZE as u128 {
                    return Err(ctx.syntax(format!(
                        ".data at {addr:#x} with {} bytes exceeds data space of {DEFAULT_DATA_SIZE:#x} bytes",
                        bytes.len()
                    )));
                }
                data_init.push((addr, bytes));
            }
            m if m.starts_with('.') => {
                return Err(ctx.syntax(format!("unknown directive `{m}`")));
            }
            m => pending.push(ctx.instruction(m, operands)?),
        }
    }

    if pending.is_empty() {
        return Err(AsmError::Empty);
    }

    let resolve = |label: &str, line: usize| {
        labels
            .get(label)
            .copied()
            .ok_or_else(|| AsmError::UndefinedLabel {
                line,
                label: label.to_owned(),
            })
    };

    let count = pending.len();
    let mut instructions = Vec::with_capacity(count);
    for p in pending {
        let instr = match p {
            Pending::Ready(i) => i,
            Pending::Branch {
                mnemonic,
                rs,
                label,
                line,
            } => {
                let target = resolve(&label, line)?;
                if target >= count {
                    return Err(AsmError::Syntax {
                        line,
                        message: format!("label `{label}` does not precede an instruction"),
                    });
                }
                match (mnemonic, rs) {
                    (Mnemonic::Beqz, Some(rs)) => Instr::Beqz { rs, target },
                    (Mnemonic::Bnez, Some(rs)) => Instr::Bnez { rs, target },
                    (Mnemonic::Jmp, _) => Instr::Jmp { target },
                    (Mnemonic::Call, _) => Instr::Call { target },
                    _ => unreachable!("conditional branch without register"),
                }
            }
        };
        instructions.push(instr);
    }

    let entry = match entry_label {
        Some((label, line)) => resolve(&label, line)?,
        None => 0,
    };
    if entry >= count {
        return Err(AsmError::Syntax {
            line: 0,
            message: "entry label does not precede an instruction".into(),
        });
    }

    Ok(Program {
        instructions,
        entry,
        data_init,
        secret_len,
        labels,
    })
}

fn is_label(s: &str) -> bool {
    let body = s.strip_prefix('.').unwrap_or(s);
    !body.is_empty()
        && !body.starts_with(|c: char| c.is_ascii_digit())
        && body
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

struct Ctx {
    line: usize,
}

impl Ctx {
    fn syntax(&self, message: impl Into<String>) -> AsmError {
        AsmError::Syntax {
            line: self.line,
            message: message.into(),
        }
    }

    fn hex(&self, word: &str) -> Result<u64, AsmError> {
        let digits = word.strip_prefix("0x").unwrap_or(word);
        u64::from_str_radix(digits, 16)
            .map_err(|_| self.syntax(format!("`{word}` is not a hex number")))
    }

    fn reg(&self, word: &str) -> Result<Reg, AsmError> {
        word.strip_prefix('r')
            .and_then(|n| n.parse::<u8>().ok())
            .filter(|&n| (n as usize) < NUM_REGS && !word[1..].starts_with('+'))
            .map(Reg)
            .ok_or_else(|| self.syntax(format!("`{word}` is not a register (r0-r15)")))
    }

    /// Decimal or `0x` hex, optionally negated; negative values wrap to
    /// their two's complement.
    fn imm(&self, word: &str) -> Result<u64, AsmError> {
        let (neg, body) = match word.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, word),
        };
        let magnitude: u128 = match body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
            Some(hex) if !hex.is_empty() && hex.bytes().all(|b| b.is_ascii_hexdigit()) => {
                u128::from_str_radix(hex, 16).map_err(|_| self.range(word))?
            }
            None if !body.is_empty() && body.bytes().all(|b| b.is_ascii_digit()) => {
                body.parse::<u128>().map_err(|_| self.range(word))?
            }
            _ => return Err(self.syntax(format!("`{word}` is not an immediate"))),
        };
        if neg {
            if magnitude > 1u128 << 63 {
                return Err(self.range(word));
            }
            Ok((magnitude as u64).wrapping_neg())
        } else {
            u64::try_from(magnitude).map_err(|_| self.range(word))
        }
    }

    fn range(&self, word: &str) -> AsmError {
        AsmError::ImmediateRange {
            line: self.line,
            text: word.to_owned(),
        }
    }

    /// `[rs]`, `[rs+imm]` or `[rs-imm]`.
    fn mem(&self, word: &str) -> Result<(Reg, u64), AsmError> {
        let inner = word
            .strip_prefix('[')
            .and_then(|w| w.strip_suffix(']'))
            .ok_or_else(|| self.syntax(format!("`{word}` is not a memory operand")))?;
        let inner: String = inner.chars().filter(|c| !c.is_whitespace()).collect();
        if let Some(pos) = inner.find(['+', '-']) {
            let base = self.reg(&inner[..pos])?;
            let off = self.imm(inner[pos + 1..].trim_start_matches('+'))?;
            let off = if inner.as_bytes()[pos] == b'-' {
                off.wrapping_neg()
            } else {
                off
            };
            Ok((base, off))
        } else {
            Ok((self.reg(&inner)?, 0))
        }
    }

    fn instruction(&self, mnemonic: &str, operands: &str) -> Result<Pending, AsmError> {
        let ops: Vec<&str> = if operands.is_empty() {
            Vec::new()
        } else {
            operands.split(',').map(str::trim).collect()
        };
        let arity = |n: usize| {
            if ops.len() == n {
                Ok(())
            } else {
                Err(self.syntax(format!(
                    "`{mnemonic}` takes {n} operand(s), found {}",
                    ops.len()
                )))
            }
        };
        let alu = |op| -> Result<Pending, AsmError> {
            arity(3)?;
            Ok(Pending::Ready(Instr::Alu {
                op,
                rd: self.reg(ops[0])?,
                rs1: self.reg(ops[1])?,
                rs2: self.reg(ops[2])?,
            }))
        };
        let alu_imm = |op| -> Result<Pending, AsmError> {
            arity(3)?;
            Ok(Pending::Ready(Instr::AluImm {
                op,
                rd: self.reg(ops[0])?,
                rs: self.reg(ops[1])?,
                imm: self.imm(ops[2])?,
            }))
        };
        let load = |width| -> Result<Pending, AsmError> {
            arity(2)?;
            let (base, offset) = self.mem(ops[1])?;
            Ok(Pending::Ready(Instr::Load {
                width,
                rd: self.reg(ops[0])?,
                base,
                offset,
            }))
        };
        let store = |width| -> Result<Pending, AsmError> {
            arity(2)?;
            let (base, offset) = self.mem(ops[0])?;
            Ok(Pending::Ready(Instr::Store {
                width,
                base,
                offset,
                rs: self.reg(ops[1])?,
            }))
        };
        let branch = |mnemonic, with_reg: bool| -> Result<Pending, AsmError> {
            arity(if with_reg { 2 } else { 1 })?;
            let (rs, label) = if with_reg {
                (Some(self.reg(ops[0])?), ops[1])
            } else {
                (None, ops[0])
            };
            if !is_label(label) {
                return Err(self.syntax(format!("`{label}` is not a label")));
            }
            Ok(Pending::Branch {
                mnemonic,
                rs,
                label: label.to_owned(),
                line: self.line,
            })
        };

        match mnemonic {
            "li" => {
                arity(2)?;
                Ok(Pending::Ready(Instr::Li {
                    rd: self.reg(ops[0])?,
                    imm: self.imm(ops[1])?,
                }))
            }
            "mov" => {
                arity(2)?;
                Ok(Pending::Ready(Instr::Mov {
                    rd: self.reg(ops[0])?,
                    rs: self.reg(ops[1])?,
                }))
            }
            "add" => alu(AluOp::Add),
            "sub" => alu(AluOp::Sub),
            "mul" => alu(AluOp::Mul),
            "and" => alu(AluOp::And),
            "or" => alu(AluOp::Or),
            "xor" => alu(AluOp::Xor),
            "shl" => alu(AluOp::Shl),
            "shr" => alu(AluOp::Shr),
            "addi" => alu_imm(AluOp::Add),
            "andi" => alu_imm(AluOp::And),
            "ori" => alu_imm(AluOp::Or),
            "xori" => alu_imm(AluOp::Xor),
            "shli" => alu_imm(AluOp::Shl),
            "shri" => alu_imm(AluOp::Shr),
            "eqz" => {
                arity(2)?;
                Ok(Pending::Ready(Instr::Eqz {
                    rd: self.reg(ops[0])?,
                    rs: self.reg(ops[1])?,
                }))
            }
            "ltu" => {
                arity(3)?;
                Ok(Pending::Ready(Instr::Ltu {
                    rd: self.reg(ops[0])?,
                    rs1: self.reg(ops[1])?,
                    rs2: self.reg(ops[2])?,
                }))
            }
            "csel" => {
                arity(4)?;
                Ok(Pending::Ready(Instr::Csel {
                    rd: self.reg(ops[0])?,
                    rc: self.reg(ops[1])?,
                    rs1: self.reg(ops[2])?,
                    rs2: self.reg(ops[3])?,
                }))
            }
            "ld" => load(Width::Word),
            "ldb" => load(Width::Byte),
            "st" => store(Width::Word),
            "stb" => store(Width::Byte),
            "beqz" => branch(Mnemonic::Beqz, true),
            "bnez" => branch(Mnemonic::Bnez, true),
            "jmp" => branch(Mnemonic::Jmp, false),
            "call" => branch(Mnemonic::Call, false),
            "ret" => {
                arity(0)?;
                Ok(Pending::Ready(Instr::Ret))
            }
            "halt" => {
                arity(0)?;
                Ok(Pending::Ready(Instr::Halt))
            }
            other => Err(self.syntax(format!("unknown instruction `{other}`"))),
        }
    }
}
