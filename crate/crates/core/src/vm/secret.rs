// Copyright 2026 The ctdiff Authors
// SPDX-License-Identifier: Apache-2.0

use std::fmt::Write as _;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("secret length must be at least 1")]
pub struct ZeroLengthSecret;

/// The only input that varies between runs of one experiment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretInput {
    pub run_index: u64,
    pub bytes: Vec<u8>,
}

impl SecretInput {
    /// Lowercase hex of the first (up to) 8 bytes.
    pub fn id(&self) -> String {
        hex(&self.bytes[..self.bytes.len().min(8)])
    }

    pub fn hex(&self) -> String {
        hex(&self.bytes)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

struct SplitMix64 {
    state: u64,
}

impl Iterator for SplitMix64 {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Some(z ^ (z >> 31))
    }
}

/// Deterministic secret for `run_index`: little-endian splitmix64 outputs
/// seeded with the run index, truncated to `length` bytes.
pub fn derive_secret(run_index: u64, length: usize) -> Result<SecretInput, ZeroLengthSecret> {
    if length == 0 {
        return Err(ZeroLengthSecret);
    }
    let bytes = SplitMix64 { state: run_index }
        .flat_map(u64::to_le_bytes)
        .take(length)
        .collect();
    Ok(SecretInput { run_index, bytes })
}
