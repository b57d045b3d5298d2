use std::cmp::Ordering;

use rug::float::Round;
use rug::ops::Pow;
use rug::Float;

pub(crate) type Raw = Float;

#[inline]
pub(crate) fn from_i64(v: i64, bits: u32) -> Raw {
    Float::with_val(bits, v)
}

#[inline]
pub(crate) fn from_f64(v: f64, bits: u32) -> Raw {
    Float::with_val(bits, v)
}

pub(crate) fn parse(s: &str, bits: u32) -> Option<Raw> {
    Float::parse(s).ok().map(|p| Float::with_val(bits, p))
}

#[inline]
pub(crate) fn round_to(x: &Raw, bits: u32) -> Raw {
    Float::with_val(bits, x)
}

#[inline]
pub(crate) fn add(a: &Raw, b: &Raw, bits: u32) -> Raw {
    Float::with_val(bits, a + b)
}

#[inline]
pub(crate) fn sub(a: &Raw, b: &Raw, bits: u32) -> Raw {
    Float::with_val(bits, a - b)
}

#[inline]
pub(crate) fn mul(a: &Raw, b: &Raw, bits: u32) -> Raw {
    Float::with_val(bits, a * b)
}

#[inline]
pub(crate) fn div(a: &Raw, b: &Raw, bits: u32) -> Raw {
    Float::with_val(bits, a / b)
}

// In-place forms keep the destination's precision, which always equals `bits`.
#[inline]
pub(crate) fn add_assign(a: &mut Raw, b: &Raw, _bits: u32) {
    *a += b;
}

#[inline]
pub(crate) fn sub_assign(a: &mut Raw, b: &Raw, _bits: u32) {
    *a -= b;
}

#[inline]
pub(crate) fn mul_assign(a: &mut Raw, b: &Raw, _bits: u32) {
    *a *= b;
}

#[inline]
pub(crate) fn div_assign(a: &mut Raw, b: &Raw, _bits: u32) {
    *a /= b;
}

/// `a += b·c` with a single rounding.
#[inline]
pub(crate) fn add_mul_assign(a: &mut Raw, b: &Raw, c: &Raw, _bits: u32) {
    *a += b * c;
}

/// `a −= b·c` with a single rounding.
#[inline]
pub(crate) fn sub_mul_assign(a: &mut Raw, b: &Raw, c: &Raw, _bits: u32) {
    *a -= b * c;
}

#[inline]
pub(crate) fn cmp_abs(a: &Raw, b: &Raw) -> Option<Ordering> {
    a.cmp_abs(b)
}

#[inline]
pub(crate) fn neg(a: &Raw) -> Raw {
    Float::with_val(a.prec(), -a)
}

#[inline]
pub(crate) fn abs(a: &Raw) -> Raw {
    Float::with_val(a.prec(), a.abs_ref())
}

pub(crate) fn sqrt(a: &Raw, bits: u32) -> Raw {
    Float::with_val(bits, a.sqrt_ref())
}

pub(crate) fn exp(a: &Raw, bits: u32) -> Raw {
    Float::with_val(bits, a.exp_ref())
}

pub(crate) fn ln(a: &Raw, bits: u32) -> Raw {
    Float::with_val(bits, a.ln_ref())
}

pub(crate) fn log10(a: &Raw, bits: u32) -> Raw {
    Float::with_val(bits, a.log10_ref())
}

pub(crate) fn pow(a: &Raw, e: &Raw, bits: u32) -> Raw {
    Float::with_val(bits, a.pow(e))
}

pub(crate) fn powi(a: &Raw, e: i64, bits: u32) -> Raw {
    Float::with_val(bits, a.pow(e))
}

#[inline]
pub(crate) fn mul_i64(a: &Raw, k: i64, bits: u32) -> Raw {
    Float::with_val(bits, a * k)
}

#[inline]
pub(crate) fn div_i64(a: &Raw, k: i64, bits: u32) -> Raw {
    Float::with_val(bits, a / k)
}

#[inline]
pub(crate) fn cmp(a: &Raw, b: &Raw) -> Option<Ordering> {
    a.partial_cmp(b)
}

#[inline]
pub(crate) fn is_zero(a: &Raw) -> bool {
    a.is_zero()
}

pub(crate) fn is_finite(a: &Raw) -> bool {
    a.is_finite()
}

pub(crate) fn is_negative(a: &Raw) -> bool {
    a.is_sign_negative() && !a.is_zero()
}

pub(crate) fn to_f64(a: &Raw) -> f64 {
    a.to_f64()
}

pub(crate) fn to_decimal(a: &Raw, sig: usize) -> (bool, String, i64) {
    let (neg, digits, exp) = a.to_sign_string_exp_round(10, Some(sig), Round::Nearest);
    // value = 0.digits × 10^exp
    (neg, digits, exp.unwrap_or(0) as i64 - 1)
}
