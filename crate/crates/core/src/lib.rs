// Copyright 2026 The ctdiff Authors
// SPDX-License-Identifier: Apache-2.0

//! Differential address-trace analysis for constant-time verification.
//!
//! A program is run several times under different secrets in a fully
//! deterministic environment; any difference between the resulting
//! control-flow/memory-address traces is a secret dependency. The crate
//! provides:
//!
//! - [`trace`]: the trace model and its text format,
//! - [`vm`]: a deterministic fixture VM (MiniISA) that produces traces,
//! - [`diff`]: divergence and merge-point detection over trace pairs,
//! - [`report`]: symbolization, known-issue filtering, classification,
//! - [`orchestrator`]: experiment matrices with bounded parallelism,
//! - [`fixtures`]: a corpus of safe/leaky code pattern pairs.

pub mod diff;
pub mod fixtures;
pub mod orchestrator;
pub mod report;
pub mod trace;
pub mod vm;
