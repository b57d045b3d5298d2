//! Arbitrary-precision scalars, vectors and small dense linear algebra.
//!
//! Every number in the toolkit is a [`BigScalar`] created under a
//! [`PrecisionContext`]. A context is requested in decimal digits and maps to a
//! binary mantissa of exactly `ceil(digits * log2(10))` bits, so a 16-digit
//! context behaves like (slightly better than) IEEE double precision and the
//! effect of round-off can be studied by simply changing the digit count.
//!
//! Mixing scalars from two contexts is a programming error: the arithmetic
//! operators panic, and [`ensure_same_context`] is available for validating
//! user input up front. There is no implicit promotion.

mod linalg;

#[cfg(feature = "mpfr")]
#[path = "backend_mpfr.rs"]
mod backend;

#[cfg(all(feature = "pure-rust", not(feature = "mpfr")))]
#[path = "backend_dashu.rs"]
mod backend;

#[cfg(not(any(feature = "mpfr", feature = "pure-rust")))]
compile_error!("enable one arithmetic backend: `mpfr` (default) or `pure-rust`");

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

use thiserror::Error;

pub use linalg::{linsolve, spectral_norm, BigMat, BigVec, LuFactors, SpectralNormError};

/// Smallest supported context.
pub const MIN_DIGITS: u32 = 4;
/// Largest supported context.
pub const MAX_DIGITS: u32 = 100_000;

const LOG2_10: f64 = std::f64::consts::LOG2_10;
const LOG10_2: f64 = std::f64::consts::LOG10_2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrecisionError {
    #[error("requested {0} decimal digits; supported range is {MIN_DIGITS}..={MAX_DIGITS}")]
    DigitsOutOfRange(u32),
    #[error("malformed decimal literal {literal:?} at byte {position}")]
    Parse { literal: String, position: usize },
    #[error("mixed precision contexts: {left} vs {right} decimal digits")]
    ContextMismatch { left: u32, right: u32 },
    #[error("matrix is singular to working precision (pivot {pivot} in column {column})")]
    Singular { column: usize, pivot: String },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
}

/// Working precision shared by a family of scalars.
///
/// Contexts are plain values: copying one is free and two contexts with the
/// same digit count are interchangeable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PrecisionContext {
    digits: u32,
    bits: u32,
}

impl PrecisionContext {
    pub fn new(decimal_digits: u32) -> Result<Self, PrecisionError> {
        if !(MIN_DIGITS..=MAX_DIGITS).contains(&decimal_digits) {
            return Err(PrecisionError::DigitsOutOfRange(decimal_digits));
        }
        let bits = (decimal_digits as f64 * LOG2_10).ceil() as u32;
        Ok(Self { digits: decimal_digits, bits })
    }

    fn from_bits(bits: u32) -> Self {
        // bits = ceil(d log2 10) implies d = floor(bits log10 2)
        let digits = (bits as f64 * LOG10_2).floor() as u32;
        Self { digits, bits }
    }

    /// Requested significant decimal digits (`n_mach`).
    pub fn digits(&self) -> u32 {
        self.digits
    }

    /// Binary mantissa length.
    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Machine epsilon `10^(-digits)`.
    pub fn eps(&self) -> BigScalar {
        self.pow10(-(self.digits as i64))
    }

    /// `2^(-bits)`, the actual spacing of the binary representation near one.
    pub fn unit_roundoff(&self) -> BigScalar {
        let two = self.from_i64(2);
        two.powi(-(self.bits as i64))
    }

    /// Digits emitted by [`BigScalar::to_decimal`]; enough for an exact round trip.
    pub fn serial_digits(&self) -> usize {
        (self.bits as f64 * LOG10_2).ceil() as usize + 1
    }

    pub fn zero(&self) -> BigScalar {
        self.from_i64(0)
    }

    pub fn one(&self) -> BigScalar {
        self.from_i64(1)
    }

    pub fn from_i64(&self, v: i64) -> BigScalar {
        BigScalar { raw: backend::from_i64(v, self.bits), bits: self.bits }
    }

    /// `num / den` correctly rounded, e.g. `8/3` for the Lorenz parameter `b`.
    pub fn ratio(&self, num: i64, den: i64) -> BigScalar {
        &self.from_i64(num) / &self.from_i64(den)
    }

    /// Rounds an `f64` into the context. Only for diagnostics and initial guesses.
    pub fn from_f64(&self, v: f64) -> BigScalar {
        BigScalar { raw: backend::from_f64(v, self.bits), bits: self.bits }
    }

    pub fn pow10(&self, e: i64) -> BigScalar {
        self.parse(&format!("1e{e}")).expect("well-formed power of ten")
    }

    /// Parses a decimal or scientific literal, correctly rounded.
    pub fn parse(&self, s: &str) -> Result<BigScalar, PrecisionError> {
        let literal = validate_literal(s)?;
        let raw = backend::parse(literal, self.bits).ok_or_else(|| PrecisionError::Parse {
            literal: s.to_string(),
            position: 0,
        })?;
        Ok(BigScalar { raw, bits: self.bits })
    }

    /// Rounds a scalar from any context into this one.
    pub fn convert(&self, x: &BigScalar) -> BigScalar {
        if x.bits == self.bits {
            return x.clone();
        }
        BigScalar { raw: backend::round_to(&x.raw, self.bits), bits: self.bits }
    }

    pub fn vec_from_f64(&self, v: &[f64]) -> BigVec {
        BigVec::from(v.iter().map(|&x| self.from_f64(x)).collect::<Vec<_>>())
    }

    pub fn vec_parse(&self, items: &[&str]) -> Result<BigVec, PrecisionError> {
        items.iter().map(|s| self.parse(s)).collect::<Result<Vec<_>, _>>().map(BigVec::from)
    }
}

/// Syntax: optional sign, digits with an optional '.', optional exponent.
fn validate_literal(s: &str) -> Result<&str, PrecisionError> {
    let t = s.trim();
    let offset = s.len() - s.trim_start().len();
    let err = |i: usize| PrecisionError::Parse { literal: s.to_string(), position: offset + i };
    let b = t.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        i += 1;
    }
    let mut mantissa_digits = 0;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
        mantissa_digits += 1;
    }
    if i < b.len() && b[i] == b'.' {
        i += 1;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
            mantissa_digits += 1;
        }
    }
    if mantissa_digits == 0 {
        return Err(err(i));
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        i += 1;
        if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
            i += 1;
        }
        let start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == start {
            return Err(err(i));
        }
    }
    if i != b.len() {
        return Err(err(i));
    }
    Ok(t)
}

/// Arbitrary-precision real number tied to a [`PrecisionContext`].
#[derive(Clone)]
pub struct BigScalar {
    raw: backend::Raw,
    bits: u32,
}

/// Fails when two scalars were created under different contexts.
pub fn ensure_same_context(a: &BigScalar, b: &BigScalar) -> Result<(), PrecisionError> {
    if a.bits == b.bits {
        Ok(())
    } else {
        Err(PrecisionError::ContextMismatch { left: a.context().digits, right: b.context().digits })
    }
}

#[track_caller]
#[inline]
fn check(a: u32, b: u32) {
    if a != b {
        panic!(
            "mixed precision contexts ({} vs {} decimal digits)",
            PrecisionContext::from_bits(a).digits,
            PrecisionContext::from_bits(b).digits
        );
    }
}

impl BigScalar {
    pub fn context(&self) -> PrecisionContext {
        PrecisionContext::from_bits(self.bits)
    }

    pub fn is_zero(&self) -> bool {
        backend::is_zero(&self.raw)
    }

    pub fn is_finite(&self) -> bool {
        backend::is_finite(&self.raw)
    }

    pub fn is_sign_negative(&self) -> bool {
        backend::is_negative(&self.raw)
    }

    pub fn abs(&self) -> BigScalar {
        BigScalar { raw: backend::abs(&self.raw), bits: self.bits }
    }

    pub fn sqrt(&self) -> BigScalar {
        BigScalar { raw: backend::sqrt(&self.raw, self.bits), bits: self.bits }
    }

    pub fn exp(&self) -> BigScalar {
        BigScalar { raw: backend::exp(&self.raw, self.bits), bits: self.bits }
    }

    /// Natural logarithm. The argument must be positive.
    pub fn ln(&self) -> BigScalar {
        BigScalar { raw: backend::ln(&self.raw, self.bits), bits: self.bits }
    }

    pub fn log10(&self) -> BigScalar {
        BigScalar { raw: backend::log10(&self.raw, self.bits), bits: self.bits }
    }

    /// `self^e` for a positive base.
    #[track_caller]
    pub fn pow(&self, e: &BigScalar) -> BigScalar {
        check(self.bits, e.bits);
        BigScalar { raw: backend::pow(&self.raw, &e.raw, self.bits), bits: self.bits }
    }

    pub fn powi(&self, e: i64) -> BigScalar {
        BigScalar { raw: backend::powi(&self.raw, e, self.bits), bits: self.bits }
    }

    pub fn mul_i64(&self, k: i64) -> BigScalar {
        BigScalar { raw: backend::mul_i64(&self.raw, k, self.bits), bits: self.bits }
    }

    pub fn div_i64(&self, k: i64) -> BigScalar {
        BigScalar { raw: backend::div_i64(&self.raw, k, self.bits), bits: self.bits }
    }

    /// Nearest `f64`; saturates to infinity outside the double range.
    pub fn to_f64(&self) -> f64 {
        backend::to_f64(&self.raw)
    }

    /// `log10 |self|` as a double, valid far outside the double range
    /// (e.g. stability factors of size `10^388`).
    pub fn log10_abs_f64(&self) -> f64 {
        if self.is_zero() {
            return f64::NEG_INFINITY;
        }
        self.abs().log10().to_f64()
    }

    /// `self += a·b`; a single rounding with the MPFR backend.
    #[track_caller]
    pub fn add_mul(&mut self, a: &BigScalar, b: &BigScalar) {
        check(self.bits, a.bits);
        check(self.bits, b.bits);
        backend::add_mul_assign(&mut self.raw, &a.raw, &b.raw, self.bits);
    }

    /// `self −= a·b`; a single rounding with the MPFR backend.
    #[track_caller]
    pub fn sub_mul(&mut self, a: &BigScalar, b: &BigScalar) {
        check(self.bits, a.bits);
        check(self.bits, b.bits);
        backend::sub_mul_assign(&mut self.raw, &a.raw, &b.raw, self.bits);
    }

    /// Compares `|self|` with `|other|` without allocating.
    #[track_caller]
    pub fn cmp_abs(&self, other: &BigScalar) -> std::cmp::Ordering {
        check(self.bits, other.bits);
        backend::cmp_abs(&self.raw, &other.raw).expect("comparison of non-NaN values")
    }

    #[track_caller]
    pub fn max(&self, other: &BigScalar) -> BigScalar {
        if self >= other {
            self.clone()
        } else {
            other.clone()
        }
    }

    #[track_caller]
    pub fn min(&self, other: &BigScalar) -> BigScalar {
        if self <= other {
            self.clone()
        } else {
            other.clone()
        }
    }

    /// Correctly rounded `(negative, digits, exponent)` such that the value is
    /// `±d.ddd… × 10^exponent` with exactly `sig` digits.
    pub fn decimal_parts(&self, sig: usize) -> (bool, String, i64) {
        let sig = sig.max(1);
        if self.is_zero() {
            return (false, "0".repeat(sig), 0);
        }
        backend::to_decimal(&self.raw, sig)
    }

    /// Scientific string with `sig` significant digits, e.g. `-1.2500e-3`.
    pub fn to_sci(&self, sig: usize) -> String {
        if !self.is_finite() {
            return format!("{}", self.to_f64());
        }
        if self.is_zero() {
            return "0".to_string();
        }
        let (neg, digits, exp) = self.decimal_parts(sig);
        let sign = if neg { "-" } else { "" };
        let (head, tail) = digits.split_at(1);
        if tail.is_empty() {
            format!("{sign}{head}e{exp:+}")
        } else {
            format!("{sign}{head}.{tail}e{exp:+}")
        }
    }

    /// Serialization form: enough digits that parsing it back is bit-exact.
    pub fn to_decimal(&self) -> String {
        self.to_sci(self.context().serial_digits())
    }

    /// `(mantissa, exponent)` decimal pair for reporting huge magnitudes.
    pub fn mantissa_exponent(&self, sig: usize) -> (String, i64) {
        if self.is_zero() {
            return ("0".to_string(), 0);
        }
        let (neg, digits, exp) = self.decimal_parts(sig);
        let sign = if neg { "-" } else { "" };
        let (head, tail) = digits.split_at(1);
        if tail.is_empty() {
            (format!("{sign}{head}"), exp)
        } else {
            (format!("{sign}{head}.{tail}"), exp)
        }
    }
}

impl fmt::Display for BigScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match f.precision() {
            Some(p) => f.write_str(&self.to_sci(p.max(1))),
            None => f.write_str(&self.to_decimal()),
        }
    }
}

impl fmt::Debug for BigScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}d]", self.to_sci(20), self.context().digits)
    }
}

impl PartialEq for BigScalar {
    #[track_caller]
    fn eq(&self, other: &Self) -> bool {
        check(self.bits, other.bits);
        backend::cmp(&self.raw, &other.raw) == Some(Ordering::Equal)
    }
}

impl PartialOrd for BigScalar {
    #[track_caller]
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        check(self.bits, other.bits);
        backend::cmp(&self.raw, &other.raw)
    }
}

impl FromStr for PrecisionContext {
    type Err = PrecisionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let d: u32 = s.trim().parse().map_err(|_| PrecisionError::Parse {
            literal: s.to_string(),
            position: 0,
        })?;
        PrecisionContext::new(d)
    }
}

macro_rules! binop {
    ($tr:ident, $m:ident, $atr:ident, $am:ident, $f:ident, $fa:ident) => {
        impl $tr<&BigScalar> for &BigScalar {
            type Output = BigScalar;
            #[track_caller]
            #[inline]
            fn $m(self, rhs: &BigScalar) -> BigScalar {
                check(self.bits, rhs.bits);
                BigScalar { raw: backend::$f(&self.raw, &rhs.raw, self.bits), bits: self.bits }
            }
        }
        impl $tr<BigScalar> for &BigScalar {
            type Output = BigScalar;
            #[track_caller]
            #[inline]
            fn $m(self, rhs: BigScalar) -> BigScalar {
                self.$m(&rhs)
            }
        }
        impl $tr<&BigScalar> for BigScalar {
            type Output = BigScalar;
            #[track_caller]
            #[inline]
            fn $m(mut self, rhs: &BigScalar) -> BigScalar {
                check(self.bits, rhs.bits);
                backend::$fa(&mut self.raw, &rhs.raw, self.bits);
                self
            }
        }
        impl $tr<BigScalar> for BigScalar {
            type Output = BigScalar;
            #[track_caller]
            #[inline]
            fn $m(self, rhs: BigScalar) -> BigScalar {
                self.$m(&rhs)
            }
        }
        impl $atr<&BigScalar> for BigScalar {
            #[track_caller]
            #[inline]
            fn $am(&mut self, rhs: &BigScalar) {
                check(self.bits, rhs.bits);
                backend::$fa(&mut self.raw, &rhs.raw, self.bits);
            }
        }
        impl $atr<BigScalar> for BigScalar {
            #[track_caller]
            #[inline]
            fn $am(&mut self, rhs: BigScalar) {
                <Self as $atr<&BigScalar>>::$am(self, &rhs);
            }
        }
    };
}

binop!(Add, add, AddAssign, add_assign, add, add_assign);
binop!(Sub, sub, SubAssign, sub_assign, sub, sub_assign);
binop!(Mul, mul, MulAssign, mul_assign, mul, mul_assign);
binop!(Div, div, DivAssign, div_assign, div, div_assign);

impl Neg for &BigScalar {
    type Output = BigScalar;
    fn neg(self) -> BigScalar {
        BigScalar { raw: backend::neg(&self.raw), bits: self.bits }
    }
}

impl Neg for BigScalar {
    type Output = BigScalar;
    fn neg(self) -> BigScalar {
        -&self
    }
}
