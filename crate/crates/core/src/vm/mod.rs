// Copyright 2026 The ctdiff Authors
// SPDX-License-Identifier: Apache-2.0

//! MiniISA: a small deterministic register machine used as a reproducible
//! trace producer.
//!
//! Code and data are separate. Instruction addresses are instruction
//! indices; data space is a flat byte array with the secret at
//! [`SECRET_BASE`]. `call`/`ret` use an internal return stack so that
//! calling conventions never show up as memory records.

mod asm;
mod exec;
mod isa;
mod secret;

pub use asm::{assemble, AsmError, DEFAULT_SECRET_LEN};
pub use exec::{
    check_determinism, check_determinism_with, execute, Execution, ExitStatus, VmError, VmLimits,
    TEXT_IMAGE,
};
pub use isa::{
    AluOp, Instr, Program, Reg, Width, DEFAULT_DATA_SIZE, NUM_REGS, PUBLIC_BASE, SECRET_BASE,
};
pub use secret::{derive_secret, SecretInput, ZeroLengthSecret};
