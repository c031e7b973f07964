// Copyright 2026 The ctdiff Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fmt;

/// Number of general purpose registers.
pub const NUM_REGS: usize = 16;

/// Base address of the secret input in data space.
pub const SECRET_BASE: u64 = 0x1000;
/// Conventional base address for public inputs and outputs.
pub const PUBLIC_BASE: u64 = 0x2000;
/// Default data space size in bytes.
pub const DEFAULT_DATA_SIZE: usize = 65_536;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Reg(pub u8);

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AluOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Shr,
}

impl AluOp {
    pub fn apply(self, a: u64, b: u64) -> u64 {
        match self {
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::Mul => a.wrapping_mul(b),
            AluOp::And => a & b,
            AluOp::Or => a | b,
            AluOp::Xor => a ^ b,
            AluOp::Shl => a << (b & 63),
            AluOp::Shr => a >> (b & 63),
        }
    }
}

/// Access width of a load or store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Width {
    Byte,
    Word,
}

impl Width {
    pub fn bytes(self) -> u32 {
        match self {
            Width::Byte => 1,
            Width::Word => 8,
        }
    }
}

/// A decoded MiniISA instruction. Branch and call targets are instruction
/// indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instr {
    Li {
        rd: Reg,
        imm: u64,
    },
    Mov {
        rd: Reg,
        rs: Reg,
    },
    Alu {
        op: AluOp,
        rd: Reg,
        rs1: Reg,
        rs2: Reg,
    },
    AluImm {
        op: AluOp,
        rd: Reg,
        rs: Reg,
        imm: u64,
    },
    Eqz {
        rd: Reg,
        rs: Reg,
    },
    Ltu {
        rd: Reg,
        rs1: Reg,
        rs2: Reg,
    },
    Csel {
        rd: Reg,
        rc: Reg,
        rs1: Reg,
        rs2: Reg,
    },
    Load {
        width: Width,
        rd: Reg,
        base: Reg,
        offset: u64,
    },
    Store {
        width: Width,
        base: Reg,
        offset: u64,
        rs: Reg,
    },
    Beqz {
        rs: Reg,
        target: usize,
    },
    Bnez {
        rs: Reg,
        target: usize,
    },
    Jmp {
        target: usize,
    },
    Call {
        target: usize,
    },
    Ret,
    Halt,
}

impl Instr {
    pub fn branch_target(&self) -> Option<usize> {
        match *self {
            Instr::Beqz { target, .. }
            | Instr::Bnez { target, .. }
            | Instr::Jmp { target }
            | Instr::Call { target } => Some(target),
            _ => None,
        }
    }
}

/// An assembled MiniISA program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub instructions: Vec<Instr>,
    pub entry: usize,
    pub data_init: Vec<(u64, Vec<u8>)>,
    pub secret_len: usize,
    pub labels: BTreeMap<String, usize>,
}

impl Program {
    /// Function boundaries derived from labels: every label not starting
    /// with `.` opens a function that runs up to the next such label.
    /// Returns `(start, length, name)` triples in address order.
    pub fn functions(&self) -> Vec<(u64, u64, String)> {
        let mut starts: Vec<(usize, &str)> = self
            .labels
            .iter()
            .filter(|(name, _)| !name.starts_with('.'))
            .map(|(name, &idx)| (idx, name.as_str()))
            .collect();
        starts.sort();
        // aliases at the same index: keep the alphabetically first name
        starts.dedup_by_key(|(idx, _)| *idx);
        let end = self.instructions.len();
        starts
            .iter()
            .enumerate()
            .filter(|(_, (idx, _))| *idx < end)
            .map(|(i, &(idx, name))| {
                let next = starts.get(i + 1).map_or(end, |&(n, _)| n);
                (idx as u64, (next - idx) as u64, name.to_owned())
            })
            .collect()
    }
}
