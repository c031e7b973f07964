// Copyright 2026 The ctdiff Authors
// SPDX-License-Identifier: Apache-2.0

use crate::trace::{ImageRange, Trace, TraceRecord};

use super::isa::{Instr, Program, Width, DEFAULT_DATA_SIZE, NUM_REGS, SECRET_BASE};
use super::secret::SecretInput;

/// Name of the single image range covering a program's instructions.
pub const TEXT_IMAGE: &str = "text";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VmLimits {
    pub max_steps: u64,
    pub data_size: usize,
}

impl Default for VmLimits {
    fn default() -> Self {
        Self {
            max_steps: 1_000_000,
            data_size: DEFAULT_DATA_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VmError {
    #[error("step limit of {0} exceeded")]
    StepLimit(u64),
    #[error("pc {pc}: {width}-byte access at {addr:#x} outside data space of {size:#x} bytes")]
    OutOfBounds {
        pc: u64,
        addr: u64,
        width: u32,
        size: usize,
    },
    #[error("pc {0}: `ret` with empty return stack")]
    ReturnUnderflow(u64),
    #[error("pc {0} is outside the program")]
    PcOutOfRange(u64),
    #[error("secret has {actual} bytes, program expects {expected}")]
    SecretLength { expected: usize, actual: usize },
    #[error("max_steps must be at least 1")]
    InvalidLimits,
    #[error("initial data at {addr:#x} ({len} bytes) outside data space of {size:#x} bytes")]
    DataInit { addr: u64, len: usize, size: usize },
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Halted { steps: u64 },
}

/// Trace and final machine state of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Execution {
    pub trace: Trace,
    pub status: ExitStatus,
    pub registers: [u64; NUM_REGS],
}

/// Runs `program` once with `secret` written at [`SECRET_BASE`].
///
/// Every control transfer emits a `C` record with the resolved next pc
/// (taken or not), every load/store an `R`/`W` record with its effective
/// address. `halt` emits nothing.
pub fn execute(
    program: &Program,
    secret: &SecretInput,
    limits: VmLimits,
) -> Result<Execution, VmError> {
    if limits.max_steps == 0 {
        return Err(VmError::InvalidLimits);
    }
    if secret.bytes.len() != program.secret_len {
        return Err(VmError::SecretLength {
            expected: program.secret_len,
            actual: secret.bytes.len(),
        });
    }

    let mut mem = vec![0u8; limits.data_size];
    for (addr, bytes) in &program.data_init {
        write_region(&mut mem, *addr, bytes).ok_or(VmError::DataInit {
            addr: *addr,
            len: bytes.len(),
            size: limits.data_size,
        })?;
    }
    write_region(&mut mem, SECRET_BASE, &secret.bytes).ok_or(VmError::DataInit {
        addr: SECRET_BASE,
        len: secret.bytes.len(),
        size: limits.data_size,
    })?;

    let mut regs = [0u64; NUM_REGS];
    let mut ret_stack: Vec<u64> = Vec::new();
    let mut records = Vec::new();
    let mut pc = program.entry as u64;
    let mut steps = 0u64;

    loop {
        if steps >= limits.max_steps {
            return Err(VmError::StepLimit(limits.max_steps));
        }
        let instr = *program
            .instructions
            .get(pc as usize)
            .ok_or(VmError::PcOutOfRange(pc))?;
        steps += 1;
        let next = pc + 1;

        match instr {
            Instr::Li { rd, imm } => regs[rd.0 as usize] = imm,
            Instr::Mov { rd, rs } => regs[rd.0 as usize] = regs[rs.0 as usize],
            Instr::Alu { op, rd, rs1, rs2 } => {
                regs[rd.0 as usize] = op.apply(regs[rs1.0 as usize], regs[rs2.0 as usize])
            }
            Instr::AluImm { op, rd, rs, imm } => {
                regs[rd.0 as usize] = op.apply(regs[rs.0 as usize], imm)
            }
            Instr::Eqz { rd, rs } => regs[rd.0 as usize] = u64::from(regs[rs.0 as usize] == 0),
            Instr::Ltu { rd, rs1, rs2 } => {
                regs[rd.0 as usize] = u64::from(regs[rs1.0 as usize] < regs[rs2.0 as usize])
            }
            Instr::Csel { rd, rc, rs1, rs2 } => {
                regs[rd.0 as usize] = if regs[rc.0 as usize] != 0 {
                    regs[rs1.0 as usize]
                } else {
                    regs[rs2.0 as usize]
                }
            }
            Instr::Load {
                width,
                rd,
                base,
                offset,
            } => {
                let addr = regs[base.0 as usize].wrapping_add(offset);
                let bytes = access(&mem, pc, addr, width)?;
                let mut word = [0u8; 8];
                word[..bytes.len()].copy_from_slice(bytes);
                regs[rd.0 as usize] = u64::from_le_bytes(word);
                records.push(TraceRecord::read(pc, addr, width.bytes()));
            }
            Instr::Store {
                width,
                base,
                offset,
                rs,
            } => {
                let addr = regs[base.0 as usize].wrapping_add(offset);
                access(&mem, pc, addr, width)?;
                let n = width.bytes() as usize;
                let start = addr as usize;
                mem[start..start + n].copy_from_slice(&regs[rs.0 as usize].to_le_bytes()[..n]);
                records.push(TraceRecord::write(pc, addr, width.bytes()));
            }
            Instr::Beqz { rs, target } | Instr::Bnez { rs, target } => {
                let zero = regs[rs.0 as usize] == 0;
                let taken = zero == matches!(instr, Instr::Beqz { .. });
                let dest = if taken { target as u64 } else { next };
                records.push(TraceRecord::control(pc, dest));
                pc = dest;
                continue;
            }
            Instr::Jmp { target } => {
                records.push(TraceRecord::control(pc, target as u64));
                pc = target as u64;
                continue;
            }
            Instr::Call { target } => {
                ret_stack.push(next);
                records.push(TraceRecord::control(pc, target as u64));
                pc = target as u64;
                continue;
            }
            Instr::Ret => {
                let dest = ret_stack.pop().ok_or(VmError::ReturnUnderflow(pc))?;
                records.push(TraceRecord::control(pc, dest));
                pc = dest;
                continue;
            }
            Instr::Halt => break,
        }
        pc = next;
    }

    Ok(Execution {
        trace: Trace {
            run_index: secret.run_index,
            secret_id: secret.id(),
            records,
            image_ranges: vec![ImageRange::new(
                0,
                program.instructions.len() as u64,
                TEXT_IMAGE,
            )],
        },
        status: ExitStatus::Halted { steps },
        registers: regs,
    })
}

fn write_region(mem: &mut [u8], addr: u64, bytes: &[u8]) -> Option<()> {
    let start = usize::try_from(addr).ok()?;
    let end = start.checked_add(bytes.len())?;
    mem.get_mut(start..end)?.copy_from_slice(bytes);
    Some(())
}

fn access(mem: &[u8], pc: u64, addr: u64, width: Width) -> Result<&[u8], VmError> {
    let n = width.bytes() as usize;
    usize::try_from(addr)
        .ok()
        .and_then(|start| mem.get(start..start.checked_add(n)?))
        .ok_or(VmError::OutOfBounds {
            pc,
            addr,
            width: width.bytes(),
            size: mem.len(),
        })
}

/// Runs `program` twice and reports whether both traces are identical.
pub fn check_determinism(
    program: &Program,
    secret: &SecretInput,
    limits: VmLimits,
) -> Result<bool, VmError> {
    check_determinism_with(|| execute(program, secret, limits).map(|e| e.trace))
}

/// Determinism self-check over an arbitrary trace producer.
pub fn check_determinism_with<E>(mut produce: impl FnMut() -> Result<Trace, E>) -> Result<bool, E> {
    let first = produce()?;
    let second = produce()?;
    Ok(first == second)
}
