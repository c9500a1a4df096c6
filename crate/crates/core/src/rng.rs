//! Hybrid LFSR/CASR pseudo-random bit source.
//!
//! The generator clocks a 43-bit linear feedback shift register and a 37-bit
//! cellular automata shift register in lock step. Each clock yields one output
//! bit, the XOR of the two registers' output cells. Both registers are
//! maximal-length, so a non-zero state never decays to zero.
//!
//! Anything implementing [`BitSource`] can drive a loop index generator; the
//! hybrid generator here is only the default.

use thiserror::Error;

/// Width of the linear feedback shift register.
pub const LFSR_WIDTH: u32 = 43;
/// Width of the cellular automata shift register.
pub const CASR_WIDTH: u32 = 37;

const LFSR_MASK: u64 = (1 << LFSR_WIDTH) - 1;
const CASR_MASK: u64 = (1 << CASR_WIDTH) - 1;

/// Feedback taps of the LFSR, as exponents of the primitive polynomial
/// `x^43 + x^41 + x^20 + x + 1` (excluding the leading term). The register
/// holds `s[t..t+43]` with `s[t]` in bit 0 and realizes
/// `s[t+43] = s[t+41] ^ s[t+20] ^ s[t+1] ^ s[t]`.
pub const LFSR_TAPS: [u32; 4] = [41, 20, 1, 0];

/// The single CASR cell running rule 150; every other cell runs rule 90 with
/// null boundaries.
pub const CASR_RULE150_CELL: u32 = 28;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RngError {
    #[error("bit count {0} outside 1..=32")]
    BitCount(u32),
    #[error("modulus must be positive")]
    ZeroModulus,
}

/// A source of pseudo-random bits.
pub trait BitSource {
    /// Returns `n` fresh bits (1 ≤ n ≤ 32). The first bit produced ends up in
    /// the most significant position of the result.
    fn next_bits(&mut self, n: u32) -> Result<u32, RngError>;

    /// Plain `next_bits(32) mod n`; modulo bias is accepted.
    fn rand_below(&mut self, n: u32) -> Result<u32, RngError> {
        if n == 0 {
            return Err(RngError::ZeroModulus);
        }
        Ok(self.next_bits(32)? % n)
    }

    /// Fills `count` bits, LSB-first, into a u64. Used for control words wider
    /// than one draw.
    fn next_wide(&mut self, count: u32) -> Result<u64, RngError> {
        let mut out = 0u64;
        let mut filled = 0;
        while filled < count {
            let take = (count - filled).min(32);
            let chunk = self.next_bits(take)? as u64;
            out |= chunk << filled;
            filled += take;
        }
        Ok(out)
    }
}

/// State of the hybrid generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HybridRng {
    lfsr: u64,
    casr: u64,
    seed: u64,
}

impl HybridRng {
    /// Expands a 64-bit seed: the LFSR takes bits 0..43, the CASR bits 27..64.
    /// An all-zero register is replaced by the all-ones pattern of its width.
    pub fn seed(seed: u64) -> Self {
        let mut lfsr = seed & LFSR_MASK;
        let mut casr = (seed >> 27) & CASR_MASK;
        if lfsr == 0 {
            lfsr = LFSR_MASK;
        }
        if casr == 0 {
            casr = CASR_MASK;
        }
        HybridRng { lfsr, casr, seed }
    }

    pub fn lfsr(&self) -> u64 {
        self.lfsr
    }

    pub fn casr(&self) -> u64 {
        self.casr
    }

    pub fn seed_value(&self) -> u64 {
        self.seed
    }

    #[inline]
    fn clock(&mut self) -> u32 {
        let l = self.lfsr;
        let fb = LFSR_TAPS.iter().fold(0, |acc, &t| acc ^ (l >> t)) & 1;
        self.lfsr = (l >> 1) | (fb << (LFSR_WIDTH - 1));

        let c = self.casr;
        self.casr = ((c << 1) ^ (c >> 1) ^ (c & (1 << CASR_RULE150_CELL))) & CASR_MASK;

        ((self.lfsr ^ self.casr) & 1) as u32
    }
}

impl BitSource for HybridRng {
    fn next_bits(&mut self, n: u32) -> Result<u32, RngError> {
        if !(1..=32).contains(&n) {
            return Err(RngError::BitCount(n));
        }
        let mut v = 0u32;
        for _ in 0..n {
            v = (v << 1) | self.clock();
        }
        Ok(v)
    }
}

/// SplitMix64 finalizer, used to derive well-spread per-run seeds from a
/// campaign seed and a run index.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Parses a seed given as decimal or `0x`-prefixed hex.
pub fn parse_seed(text: &str) -> Option<u64> {
    let t = text.trim();
    match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(&hex.replace('_', ""), 16).ok(),
        None => t.replace('_', "").parse().ok(),
    }
}
