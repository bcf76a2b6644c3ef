//! Bitstream primitives: Bernoulli bit sources, AND products, stochastic buses
//! and saturating counter banks with first-overflow readout.
//!
//! Streams are simulated 64 cycles at a time. Bit `i` of a word is the bit
//! emitted on cycle `64 * word_index + i`, so the least significant bit is the
//! earliest cycle.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};

/// Default per-run cycle budget.
pub const DEFAULT_MAX_CYCLES: u64 = 10_000_000;

const WORD_BITS: u64 = 64;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed from a master seed and a path of indices
/// (pixel coordinates, source index, ...).
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = mix64(master ^ 0x9e37_79b9_7f4a_7c15);
    for &k in path {
        h = mix64(h.wrapping_add(0x9e37_79b9_7f4a_7c15) ^ mix64(k));
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Threshold {
    Never,
    Always,
    /// A bit is 1 when a fresh 64-bit uniform integer is below this value.
    Below(u64),
}

/// A seeded source of i.i.d. Bernoulli(p) bits.
#[derive(Debug, Clone)]
pub struct BitSource {
    p: f64,
    threshold: Threshold,
    rng: Xoshiro256PlusPlus,
}

impl BitSource {
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability(p));
        }
        let threshold = if p == 0.0 {
            Threshold::Never
        } else if p == 1.0 {
            Threshold::Always
        } else {
            // p * 2^64 is exact in binary floating point; the cast truncates the
            // sub-2^-64 remainder of very small p.
            match (p * 18_446_744_073_709_551_616.0) as u64 {
                0 => Threshold::Never,
                t => Threshold::Below(t),
            }
        };
        Ok(Self {
            p,
            threshold,
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
        })
    }

    /// A line held at 1. Consumes no randomness.
    pub fn constant_one() -> Self {
        Self::new(1.0, 0).expect("1 is a valid probability")
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Whether this source needs a random generator in hardware.
    pub fn is_random(&self) -> bool {
        matches!(self.threshold, Threshold::Below(_))
    }

    /// Emits the next 64 cycles. Only lanes set in `live` are resolved; the
    /// returned word is always a subset of `live`.
    ///
    /// Each lane compares its own fresh uniform 64-bit integer `U` against the
    /// threshold `t`, most significant bit first. A lane is settled as soon as
    /// its bit of `U` differs from the bit of `t`, so one random word is drawn
    /// per bit position for all undecided lanes at once.
    pub fn next_word(&mut self, live: u64) -> u64 {
        match self.threshold {
            Threshold::Never => 0,
            Threshold::Always => live,
            Threshold::Below(t) => {
                let last = t.trailing_zeros();
                let mut undecided = live;
                let mut ones = 0u64;
                let mut bit = 63u32;
                while undecided != 0 {
                    let r = self.rng.next_u64();
                    if (t >> bit) & 1 == 1 {
                        ones |= undecided & !r;
                        undecided &= r;
                    } else {
                        undecided &= !r;
                    }
                    // Below the last set bit of t, U can only be >= t.
                    if bit == last {
                        break;
                    }
                    bit -= 1;
                }
                ones
            }
        }
    }

    pub fn next_bit(&mut self) -> bool {
        self.next_word(1) & 1 == 1
    }
}

/// Anything that produces one bit per cycle, 64 cycles at a time.
pub trait BitChannel {
    /// Next 64 cycles restricted to the lanes in `live`.
    fn next_word(&mut self, live: u64) -> u64;
    /// The Bernoulli parameter of the emitted stream.
    fn p_value(&self) -> f64;
}

impl BitChannel for BitSource {
    fn next_word(&mut self, live: u64) -> u64 {
        BitSource::next_word(self, live)
    }

    fn p_value(&self) -> f64 {
        self.p
    }
}

fn lane_mask(lanes: u64) -> u64 {
    if lanes >= WORD_BITS {
        u64::MAX
    } else {
        (1u64 << lanes) - 1
    }
}

/// A finite bit sequence packed into 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitStream {
    words: Vec<u64>,
    len: usize,
}

impl BitStream {
    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut words = Vec::new();
        let mut len = 0usize;
        for b in bits {
            if len.is_multiple_of(64) {
                words.push(0);
            }
            if b {
                *words.last_mut().unwrap() |= 1 << (len % 64);
            }
            len += 1;
        }
        Self { words, len }
    }

    /// Parses a string of `0`/`1` characters, earliest bit first.
    pub fn parse(s: &str) -> Option<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(Self::from_bits)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> Option<bool> {
        (i < self.len).then(|| (self.words[i / 64] >> (i % 64)) & 1 == 1)
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    /// Fraction of bits set to 1.
    pub fn rate(&self) -> f64 {
        if self.len == 0 {
            0.0
        } else {
            self.count_ones() as f64 / self.len as f64
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| (self.words[i / 64] >> (i % 64)) & 1 == 1)
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }
}

impl std::fmt::Display for BitStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Draws `n` bits from `source`.
pub fn emit_bits<C: BitChannel + ?Sized>(source: &mut C, n: usize) -> BitStream {
    let n_words = n.div_ceil(64);
    let mut words = Vec::with_capacity(n_words);
    let mut remaining = n as u64;
    for _ in 0..n_words {
        let lanes = remaining.min(WORD_BITS);
        words.push(source.next_word(lane_mask(lanes)));
        remaining -= lanes;
    }
    BitStream { words, len: n }
}

/// Bitwise conjunction. For independent inputs with p-values `p1` and `p2` the
/// output has p-value `p1 * p2`.
pub fn and_product(a: &BitStream, b: &BitStream) -> Result<BitStream> {
    if a.len != b.len {
        return Err(Error::LengthMismatch {
            left: a.len,
            right: b.len,
        });
    }
    Ok(BitStream {
        words: a.words.iter().zip(&b.words).map(|(x, y)| x & y).collect(),
        len: a.len,
    })
}

/// `M` bit channels jointly encoding an unnormalized distribution `C * P(V)`.
#[derive(Debug, Clone)]
pub struct StochasticBus<C = BitSource> {
    channels: Vec<C>,
    constant: Option<f64>,
}

impl<C: BitChannel> StochasticBus<C> {
    pub fn from_channels(channels: Vec<C>, constant: Option<f64>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::ZeroWidth);
        }
        Ok(Self { channels, constant })
    }

    pub fn width(&self) -> usize {
        self.channels.len()
    }

    /// Bus normalization constant, when known.
    pub fn constant(&self) -> Option<f64> {
        self.constant
    }

    pub fn p_values(&self) -> Vec<f64> {
        self.channels.iter().map(BitChannel::p_value).collect()
    }

    pub fn channels(&self) -> &[C] {
        &self.channels
    }

    pub fn channels_mut(&mut self) -> &mut [C] {
        &mut self.channels
    }
}

impl StochasticBus<BitSource> {
    /// One independent source per channel, seeded from `seed` and the channel
    /// index.
    pub fn from_p_values(p_values: &[f64], constant: Option<f64>, seed: u64) -> Result<Self> {
        let channels = p_values
            .iter()
            .enumerate()
            .map(|(j, &p)| BitSource::new(p, derive_seed(seed, &[j as u64])))
            .collect::<Result<Vec<_>>>()?;
        Self::from_channels(channels, constant)
    }

    /// Encodes a probability distribution with `C = 1 / max_j P(V = V_j)`, so
    /// the most probable value is carried by an all-ones line.
    pub fn encode(distribution: &[f64], seed: u64) -> Result<Self> {
        if distribution.is_empty() {
            return Err(Error::ZeroWidth);
        }
        if let Some(&bad) = distribution
            .iter()
            .find(|p| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::InvalidProbability(bad));
        }
        let max = distribution.iter().copied().fold(0.0, f64::max);
        if max == 0.0 {
            return Err(Error::InvalidSpec("distribution is identically zero".into()));
        }
        let c = 1.0 / max;
        let p: Vec<f64> = distribution
            .iter()
            .map(|&q| if q == max { 1.0 } else { (q * c).min(1.0) })
            .collect();
        Self::from_p_values(&p, Some(c), seed)
    }
}

/// `M` saturating counters sharing the maximum `n_max`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterBank {
    n_max: u32,
    counts: Vec<u32>,
}

impl CounterBank {
    pub fn new(width: usize, n_max: u32) -> Result<Self> {
        if width == 0 {
            return Err(Error::ZeroWidth);
        }
        if n_max == 0 {
            return Err(Error::ZeroCounterMax);
        }
        Ok(Self {
            n_max,
            counts: vec![0; width],
        })
    }

    pub fn width(&self) -> usize {
        self.counts.len()
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn reset(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
    }

    pub fn is_zeroed(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    /// Counter `winner` reached `n_max` first (lowest index on the same cycle).
    Overflow { winner: usize },
    /// The cycle budget ran out; counts are partial.
    Timeout,
}

/// Result of running a bus into a counter bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunReport {
    pub outcome: RunOutcome,
    pub counts: Vec<u32>,
    pub cycles: u64,
    pub n_max: u32,
}

impl RunReport {
    pub fn winner(&self) -> Option<usize> {
        match self.outcome {
            RunOutcome::Overflow { winner } => Some(winner),
            RunOutcome::Timeout => None,
        }
    }

    pub fn is_timeout(&self) -> bool {
        self.outcome == RunOutcome::Timeout
    }

    pub fn readout(&self) -> Result<Vec<f64>> {
        readout_distribution(self)
    }
}

/// Position of the `k`-th (0-based) set bit of `w`, which must exist.
fn nth_set_bit(mut w: u64, k: u32) -> u32 {
    for _ in 0..k {
        w &= w - 1;
    }
    w.trailing_zeros()
}

/// Clocks every channel into its counter until the first counter reaches
/// `n_max`, or until `max_cycles` have elapsed.
///
/// The stopping cycle is exact even though bits are produced 64 at a time:
/// counts reflect only the cycles up to and including the overflow cycle.
pub fn run_until_overflow<C: BitChannel>(
    bus: &mut StochasticBus<C>,
    bank: &mut CounterBank,
    max_cycles: u64,
) -> Result<RunReport> {
    if bus.width() != bank.width() {
        return Err(Error::WidthMismatch {
            bus: bus.width(),
            bank: bank.width(),
        });
    }
    if max_cycles == 0 {
        return Err(Error::ZeroMaxCycles);
    }
    if !bank.is_zeroed() {
        return Err(Error::CountersNotZeroed);
    }
    let n_max = bank.n_max;
    let mut words = vec![0u64; bus.width()];
    let mut elapsed = 0u64;
    while elapsed < max_cycles {
        let lanes = (max_cycles - elapsed).min(WORD_BITS);
        let live = lane_mask(lanes);
        // (lane, channel) of the earliest overflow in this word
        let mut first: Option<(u32, usize)> = None;
        for (j, channel) in bus.channels.iter_mut().enumerate() {
            let w = channel.next_word(live);
            words[j] = w;
            let need = n_max - bank.counts[j];
            if w.count_ones() >= need {
                let lane = nth_set_bit(w, need - 1);
                if first.is_none_or(|(best, _)| lane < best) {
                    first = Some((lane, j));
                }
            }
        }
        if let Some((lane, winner)) = first {
            let upto = lane_mask(u64::from(lane) + 1);
            for (count, w) in bank.counts.iter_mut().zip(&words) {
                *count += (w & upto).count_ones();
            }
            return Ok(RunReport {
                outcome: RunOutcome::Overflow { winner },
                counts: bank.counts.clone(),
                cycles: elapsed + u64::from(lane) + 1,
                n_max,
            });
        }
        for (count, w) in bank.counts.iter_mut().zip(&words) {
            *count += w.count_ones();
        }
        elapsed += lanes;
    }
    Ok(RunReport {
        outcome: RunOutcome::Timeout,
        counts: bank.counts.clone(),
        cycles: elapsed,
        n_max,
    })
}

/// Counts the 1s emitted by each channel over `cycles` cycles, without any
/// counter stopping the run.
pub fn free_run<C: BitChannel>(bus: &mut StochasticBus<C>, cycles: u64) -> Vec<u64> {
    let mut ones = vec![0u64; bus.width()];
    let mut elapsed = 0u64;
    while elapsed < cycles {
        let lanes = (cycles - elapsed).min(WORD_BITS);
        let live = lane_mask(lanes);
        for (acc, channel) in ones.iter_mut().zip(bus.channels.iter_mut()) {
            *acc += u64::from(channel.next_word(live).count_ones());
        }
        elapsed += lanes;
    }
    ones
}

/// Max-normalized readout `n_j / n_max`; the winner reads exactly 1.
pub fn readout_distribution(report: &RunReport) -> Result<Vec<f64>> {
    if report.is_timeout() {
        return Err(Error::TimedOut {
            cycles: report.cycles,
        });
    }
    let n_max = f64::from(report.n_max);
    Ok(report
        .counts
        .iter()
        .map(|&c| f64::from(c) / n_max)
        .collect())
}
