//! The `random(lo, hi)` builtin and the program-wide seeded generator.
//!
//! The generator is ChaCha8 seeded with `ChaCha8Rng::seed_from_u64`. A draw
//! from `[lo, hi]` is an integer chosen uniformly from `ceil(lo)..=floor(hi)`
//! with `Rng::gen_range`; an interval holding no integer yields `lo`.

use core::fmt;

use num_bigint::BigInt;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::num::Rational;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RandomError {
    EmptyInterval,
    OutOfRange,
}

impl fmt::Display for RandomError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RandomError::EmptyInterval => f.write_str("random(lo, hi) needs lo =< hi"),
            RandomError::OutOfRange => f.write_str("random bounds exceed the 64-bit integer range"),
        }
    }
}

/// Uniform integer in `[lo, hi]`.
pub fn builtin_random(lo: &Rational, hi: &Rational, rng: &mut ChaCha8Rng) -> Result<Rational, RandomError> {
    if lo > hi {
        return Err(RandomError::EmptyInterval);
    }
    let a = lo.ceil().to_integer();
    let b = hi.floor().to_integer();
    if a > b {
        return Ok(lo.clone());
    }
    let (Some(a), Some(b)) = (a.to_i64(), b.to_i64()) else {
        return Err(RandomError::OutOfRange);
    };
    let v = rng.gen_range(a..=b);
    Ok(Rational::from_integer(BigInt::from(v)))
}

/// Source of values for `random(lo, hi)` terms met during a step.
pub trait Draw {
    fn draw(&mut self, lo: &Rational, hi: &Rational) -> Rational;
}

/// Always yields the lower bound. Used where successor sets must not depend
/// on a generator (exploration, oracles).
#[derive(Clone, Copy, Debug, Default)]
pub struct LowerBound;

impl Draw for LowerBound {
    fn draw(&mut self, lo: &Rational, _hi: &Rational) -> Rational {
        lo.clone()
    }
}

/// The program-wide generator: feeds `random` and the random scheduling policy.
#[derive(Clone, Debug)]
pub struct Seeded {
    rng: ChaCha8Rng,
}

impl Seeded {
    pub fn new(seed: u64) -> Self {
        Seeded { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Uniform index in `0..n`; consumes nothing when `n <= 1`.
    pub fn pick(&mut self, n: usize) -> usize {
        if n <= 1 {
            0
        } else {
            self.rng.gen_range(0..n)
        }
    }
}

impl Draw for Seeded {
    fn draw(&mut self, lo: &Rational, hi: &Rational) -> Rational {
        // The parser rejects lo > hi, so only out-of-range bounds can fail here.
        builtin_random(lo, hi, &mut self.rng).unwrap_or_else(|_| lo.clone())
    }
}
