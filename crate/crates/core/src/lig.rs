//! Loop Index Generator.
//!
//! Emits a pseudo-permutation of `0..N`: a random starting offset, then
//! blocks of `B` consecutive iterations, each block shuffled by a Beneš swap
//! network. The final block is left in order when `B` does not divide `N`.
//!
//! ```text
//! pi = (offset + block_base + block[j]) mod N
//! ```

use std::fmt::Write as _;

use thiserror::Error;

use crate::rng::{BitSource, RngError};

/// Largest supported block size (control word must fit a u64).
pub const MAX_BLOCK_SIZE: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LigError {
    #[error("block size {0} is not a power of two in 2..={MAX_BLOCK_SIZE}")]
    BlockSize(u32),
    #[error("LIG module id {0} outside 1..=3")]
    ModuleId(u8),
    #[error("iteration count must be at least 1")]
    ZeroIterations,
    #[error("swap network for B={block} needs {expected} control bits, got {got}")]
    ControlBits { block: u32, expected: u32, got: usize },
    #[error("LIG exhausted or inactive")]
    Exhausted,
    #[error(transparent)]
    Rng(#[from] RngError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LigConfig {
    block_size: u32,
    module_id: u8,
}

impl LigConfig {
    pub fn new(block_size: u32, module_id: u8) -> Result<Self, LigError> {
        if !block_size.is_power_of_two() || !(2..=MAX_BLOCK_SIZE).contains(&block_size) {
            return Err(LigError::BlockSize(block_size));
        }
        if !(1..=3).contains(&module_id) {
            return Err(LigError::ModuleId(module_id));
        }
        Ok(LigConfig { block_size, module_id })
    }

    pub fn block_size(&self) -> u32 {
        self.block_size
    }

    pub fn module_id(&self) -> u8 {
        self.module_id
    }
}

/// Number of swap units in a Beneš network over `block_size` inputs:
/// `(2·log2 B − 1)` stages of `B/2` units.
pub fn control_bits(block_size: u32) -> u32 {
    let stages = 2 * block_size.trailing_zeros() - 1;
    stages * block_size / 2
}

/// Routes the identity `[0..B)` through the swap network. Swap unit `k`
/// exchanges its pair when `control[k]` is set.
pub fn permute_block(control: &[bool], block_size: u32) -> Result<Vec<u32>, LigError> {
    if !block_size.is_power_of_two() || !(2..=MAX_BLOCK_SIZE).contains(&block_size) {
        return Err(LigError::BlockSize(block_size));
    }
    let expected = control_bits(block_size);
    if control.len() != expected as usize {
        return Err(LigError::ControlBits { block: block_size, expected, got: control.len() });
    }
    let word = control.iter().enumerate().fold(0u64, |w, (k, &b)| w | (b as u64) << k);
    let mut block: Vec<u32> = (0..block_size).collect();
    route(&mut block, word, &mut 0);
    Ok(block)
}

// Bit order: input column, upper subnetwork, lower subnetwork, output column.
fn route(v: &mut [u32], word: u64, cursor: &mut u32) {
    let mut bit = || {
        let b = word >> *cursor & 1 == 1;
        *cursor += 1;
        b
    };
    let n = v.len();
    if n == 2 {
        if bit() {
            v.swap(0, 1);
        }
        return;
    }
    for k in 0..n / 2 {
        if bit() {
            v.swap(2 * k, 2 * k + 1);
        }
    }
    let mut upper: Vec<u32> = v.iter().step_by(2).copied().collect();
    let mut lower: Vec<u32> = v.iter().skip(1).step_by(2).copied().collect();
    route(&mut upper, word, cursor);
    route(&mut lower, word, cursor);
    for k in 0..n / 2 {
        let swap = word >> *cursor & 1 == 1;
        *cursor += 1;
        let (a, b) = if swap { (lower[k], upper[k]) } else { (upper[k], lower[k]) };
        v[2 * k] = a;
        v[2 * k + 1] = b;
    }
}

/// One Loop Index Generator instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LigState {
    n: u32,
    block_size: u32,
    offset: u32,
    i: u32,
    j: u32,
    block: Vec<u32>,
    block_base: u32,
    active: bool,
}

impl LigState {
    /// Powers on the generator for a loop of `n` iterations.
    pub fn init<R: BitSource + ?Sized>(
        config: &LigConfig,
        n: u32,
        rng: &mut R,
    ) -> Result<Self, LigError> {
        if n == 0 {
            return Err(LigError::ZeroIterations);
        }
        let offset = rng.rand_below(n)?;
        let mut state = LigState {
            n,
            block_size: config.block_size,
            offset,
            i: 0,
            j: 0,
            block: Vec::with_capacity(config.block_size as usize),
            block_base: 0,
            active: true,
        };
        state.load_block(rng)?;
        Ok(state)
    }

    /// Builds a state from explicit parts. Test and tooling hook; the block
    /// must be a permutation of `0..block_size`.
    pub fn from_parts(n: u32, offset: u32, block: Vec<u32>) -> Result<Self, LigError> {
        let block_size = block.len() as u32;
        if n == 0 {
            return Err(LigError::ZeroIterations);
        }
        if !block_size.is_power_of_two() || block_size < 2 {
            return Err(LigError::BlockSize(block_size));
        }
        Ok(LigState {
            n,
            block_size,
            offset: offset % n,
            i: 0,
            j: 0,
            block,
            block_base: 0,
            active: true,
        })
    }

    fn load_block<R: BitSource + ?Sized>(&mut self, rng: &mut R) -> Result<(), LigError> {
        self.block.clear();
        self.block.extend(0..self.block_size);
        if self.block_base as u64 + self.block_size as u64 <= self.n as u64 {
            let word = rng.next_wide(control_bits(self.block_size))?;
            route(&mut self.block, word, &mut 0);
        }
        Ok(())
    }

    pub fn is_exhausted(&self) -> bool {
        !self.active || self.i >= self.n
    }

    /// Current permuted index and completed-iteration count.
    pub fn current(&self) -> Result<(u32, u32), LigError> {
        if self.is_exhausted() {
            return Err(LigError::Exhausted);
        }
        let raw = self.offset as u64 + self.block_base as u64 + self.block[self.j as usize] as u64;
        Ok(((raw % self.n as u64) as u32, self.i))
    }

    pub fn pi(&self) -> Result<u32, LigError> {
        self.current().map(|(pi, _)| pi)
    }

    /// Completed-iteration count; readable after exhaustion.
    pub fn iteration(&self) -> u32 {
        self.i
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn offset(&self) -> u32 {
        self.offset
    }

    pub fn block(&self) -> &[u32] {
        &self.block
    }

    pub fn block_base(&self) -> u32 {
        self.block_base
    }

    pub fn position(&self) -> u32 {
        self.j
    }

    /// Moves to the next iteration, reloading the block on rollover. No
    /// random bits are drawn once the stream is exhausted.
    pub fn advance<R: BitSource + ?Sized>(&mut self, rng: &mut R) -> Result<(), LigError> {
        if self.is_exhausted() {
            return Err(LigError::Exhausted);
        }
        self.i += 1;
        self.j += 1;
        if self.i >= self.n {
            return Ok(());
        }
        if self.j == self.block_size {
            self.j = 0;
            self.block_base += self.block_size;
            self.load_block(rng)?;
        }
        Ok(())
    }

    /// Debug dump line: `i, block_base, j, block[j], pi`.
    pub fn dump_line(&self) -> Result<String, LigError> {
        let (pi, i) = self.current()?;
        Ok(format!(
            "{}, {}, {}, {}, {}",
            i, self.block_base, self.j, self.block[self.j as usize], pi
        ))
    }
}

/// Full index stream for a loop of `n` iterations.
pub fn lig_stream<R: BitSource + ?Sized>(
    config: &LigConfig,
    n: u32,
    rng: &mut R,
) -> Result<Vec<u32>, LigError> {
    let mut state = LigState::init(config, n, rng)?;
    let mut out = Vec::with_capacity(n as usize);
    loop {
        out.push(state.pi()?);
        if out.len() == n as usize {
            return Ok(out);
        }
        state.advance(rng)?;
    }
}

/// Debug dump of a whole stream, one line per iteration.
pub fn lig_dump<R: BitSource + ?Sized>(
    config: &LigConfig,
    n: u32,
    rng: &mut R,
) -> Result<String, LigError> {
    let mut state = LigState::init(config, n, rng)?;
    let mut text = String::new();
    for k in 0..n {
        let _ = writeln!(text, "{}", state.dump_line()?);
        if k + 1 < n {
            state.advance(rng)?;
        }
    }
    Ok(text)
}
