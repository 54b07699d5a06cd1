//! Exact rationals and the mixed exact/float scalar used by the continuous store.

use alloc::string::{String, ToString};
use core::cmp::Ordering;
use core::fmt;
use core::hash::{Hash, Hasher};
use core::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};

pub type Rational = num_rational::BigRational;

/// Builds an integer rational.
pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Builds `num / den`. Panics on a zero denominator.
pub fn ratio(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

pub fn rat_to_f64(q: &Rational) -> f64 {
    match q.to_f64() {
        Some(v) => v,
        None => {
            // Huge numerator/denominator pairs: fall back to a scaled division.
            let n = q.numer().to_f64().unwrap_or(f64::NAN);
            let d = q.denom().to_f64().unwrap_or(f64::NAN);
            n / d
        }
    }
}

/// Parses `123`, `-4`, `2.5` or `7/3` into an exact rational.
pub fn parse_rational(text: &str) -> Option<Rational> {
    let text = text.trim();
    if let Some((n, d)) = text.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(Rational::new(n, d));
    }
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let (whole, frac) = match body.split_once('.') {
        Some((w, f)) => (w, f),
        None => (body, ""),
    };
    if whole.is_empty() && frac.is_empty() {
        return None;
    }
    if !whole.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let mut digits = String::from(whole);
    digits.push_str(frac);
    let n: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().ok()? };
    let d = num_traits::pow(BigInt::from(10), frac.len());
    let q = Rational::new(n, d);
    Some(if neg { -q } else { q })
}

/// Renders a rational as `p` or `p/q`.
pub fn fmt_rational(q: &Rational) -> String {
    if q.is_integer() {
        q.numer().to_string()
    } else {
        alloc::format!("{}/{}", q.numer(), q.denom())
    }
}

/// A continuous-store scalar: exact while every operation stays in the
/// rationals, binary floating point once an exponential enters.
#[derive(Clone, Debug)]
pub enum Real {
    Exact(Rational),
    Approx(f64),
}

impl Real {
    pub fn zero() -> Self {
        Real::Exact(Rational::zero())
    }

    pub fn int(n: i64) -> Self {
        Real::Exact(int(n))
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Real::Exact(q) => rat_to_f64(q),
            Real::Approx(v) => *v,
        }
    }

    pub fn as_exact(&self) -> Option<&Rational> {
        match self {
            Real::Exact(q) => Some(q),
            Real::Approx(_) => None,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Real::Exact(_))
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Real::Exact(q) => q.is_zero(),
            Real::Approx(v) => *v == 0.0,
        }
    }

    pub fn is_positive(&self) -> bool {
        match self {
            Real::Exact(q) => q.is_positive(),
            Real::Approx(v) => *v > 0.0,
        }
    }

    /// Numeric comparison; exact when both sides are exact.
    pub fn cmp_value(&self, other: &Real) -> Ordering {
        match (self, other) {
            (Real::Exact(a), Real::Exact(b)) => a.cmp(b),
            _ => self.to_f64().total_cmp(&other.to_f64()),
        }
    }

    pub fn min_value(self, other: Real) -> Real {
        if other.cmp_value(&self) == Ordering::Less {
            other
        } else {
            self
        }
    }

    pub fn max_value(self, other: Real) -> Real {
        if other.cmp_value(&self) == Ordering::Greater {
            other
        } else {
            self
        }
    }
}

impl From<Rational> for Real {
    fn from(q: Rational) -> Self {
        Real::Exact(q)
    }
}

impl From<f64> for Real {
    fn from(v: f64) -> Self {
        Real::Approx(v)
    }
}

impl PartialEq for Real {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Real::Exact(a), Real::Exact(b)) => a == b,
            (Real::Approx(a), Real::Approx(b)) => a.to_bits() == b.to_bits(),
            _ => false,
        }
    }
}

impl Eq for Real {}

impl Hash for Real {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Real::Exact(q) => {
                0u8.hash(state);
                q.hash(state);
            }
            Real::Approx(v) => {
                1u8.hash(state);
                v.to_bits().hash(state);
            }
        }
    }
}

impl PartialOrd for Real {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Structural order (exact values sort before approximate ones); used only
/// to keep sets of configurations canonical. Use [`Real::cmp_value`] for math.
impl Ord for Real {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Real::Exact(a), Real::Exact(b)) => a.cmp(b),
            (Real::Approx(a), Real::Approx(b)) => a.total_cmp(b),
            (Real::Exact(_), Real::Approx(_)) => Ordering::Less,
            (Real::Approx(_), Real::Exact(_)) => Ordering::Greater,
        }
    }
}

impl<'a> Add<&'a Real> for &'a Real {
    type Output = Real;
    fn add(self, rhs: &Real) -> Real {
        match (self, rhs) {
            (Real::Exact(a), Real::Exact(b)) => Real::Exact(a + b),
            _ => Real::Approx(self.to_f64() + rhs.to_f64()),
        }
    }
}

impl<'a> Sub<&'a Real> for &'a Real {
    type Output = Real;
    fn sub(self, rhs: &Real) -> Real {
        match (self, rhs) {
            (Real::Exact(a), Real::Exact(b)) => Real::Exact(a - b),
            _ => Real::Approx(self.to_f64() - rhs.to_f64()),
        }
    }
}

impl<'a> Mul<&'a Real> for &'a Real {
    type Output = Real;
    fn mul(self, rhs: &Real) -> Real {
        match (self, rhs) {
            (Real::Exact(a), Real::Exact(b)) => Real::Exact(a * b),
            _ => Real::Approx(self.to_f64() * rhs.to_f64()),
        }
    }
}

impl Neg for Real {
    type Output = Real;
    fn neg(self) -> Real {
        match self {
            Real::Exact(q) => Real::Exact(-q),
            Real::Approx(v) => Real::Approx(-v),
        }
    }
}

impl fmt::Display for Real {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Real::Exact(q) => f.write_str(&fmt_rational(q)),
            Real::Approx(v) => write!(f, "{:?}", v),
        }
    }
}
