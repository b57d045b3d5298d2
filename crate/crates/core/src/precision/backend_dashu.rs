use std::cmp::Ordering;
use std::str::FromStr;

use dashu_float::round::mode::HalfEven;
use dashu_float::FBig;
use dashu_int::IBig;

pub(crate) type Raw = FBig<HalfEven, 2>;
type Dec = FBig<HalfEven, 10>;

// `with_precision` only rounds when the context shrinks, and some dashu ops
// return a significand wider than their context; widening first forces it.
#[inline]
fn fit(x: Raw, bits: u32) -> Raw {
    let b = bits as usize;
    if x.repr().digits() <= b {
        return x.with_precision(b).value();
    }
    x.with_precision(b + 1).value().with_precision(b).value()
}

pub(crate) fn from_i64(v: i64, bits: u32) -> Raw {
    fit(Raw::from(v), bits)
}

pub(crate) fn from_f64(v: f64, bits: u32) -> Raw {
    fit(Raw::try_from(v).expect("finite f64"), bits)
}

pub(crate) fn parse(s: &str, bits: u32) -> Option<Raw> {
    let exact = Dec::from_str(s).ok()?;
    Some(fit(exact.with_base_and_precision::<2>(bits as usize).value(), bits))
}

pub(crate) fn round_to(x: &Raw, bits: u32) -> Raw {
    fit(x.clone(), bits)
}

pub(crate) fn add(a: &Raw, b: &Raw, bits: u32) -> Raw {
    fit(a + b, bits)
}

pub(crate) fn sub(a: &Raw, b: &Raw, bits: u32) -> Raw {
    fit(a - b, bits)
}

pub(crate) fn mul(a: &Raw, b: &Raw, bits: u32) -> Raw {
    fit(a * b, bits)
}

pub(crate) fn div(a: &Raw, b: &Raw, bits: u32) -> Raw {
    fit(a / b, bits)
}

pub(crate) fn add_assign(a: &mut Raw, b: &Raw, bits: u32) {
    *a = fit(&*a + b, bits);
}

pub(crate) fn sub_assign(a: &mut Raw, b: &Raw, bits: u32) {
    *a = fit(&*a - b, bits);
}

pub(crate) fn mul_assign(a: &mut Raw, b: &Raw, bits: u32) {
    *a = fit(&*a * b, bits);
}

pub(crate) fn div_assign(a: &mut Raw, b: &Raw, bits: u32) {
    *a = fit(&*a / b, bits);
}

pub(crate) fn neg(a: &Raw) -> Raw {
    -a.clone()
}

pub(crate) fn abs(a: &Raw) -> Raw {
    if is_negative(a) {
        neg(a)
    } else {
        a.clone()
    }
}

pub(crate) fn sqrt(a: &Raw, bits: u32) -> Raw {
    fit(a.context().sqrt(a.repr()).value(), bits)
}

pub(crate) fn exp(a: &Raw, bits: u32) -> Raw {
    fit(a.exp(), bits)
}

pub(crate) fn ln(a: &Raw, bits: u32) -> Raw {
    fit(a.ln(), bits)
}

pub(crate) fn log10(a: &Raw, bits: u32) -> Raw {
    // two extra words keep the quotient within an ulp of the true value
    let wide = bits + 128;
    let r = fit(a.clone(), wide).ln() / fit(Raw::from(10), wide).ln();
    fit(r, bits)
}

pub(crate) fn pow(a: &Raw, e: &Raw, bits: u32) -> Raw {
    fit(a.powf(e), bits)
}

pub(crate) fn powi(a: &Raw, e: i64, bits: u32) -> Raw {
    fit(a.powi(IBig::from(e)), bits)
}

pub(crate) fn mul_i64(a: &Raw, k: i64, bits: u32) -> Raw {
    fit(a * from_i64(k, bits), bits)
}

pub(crate) fn div_i64(a: &Raw, k: i64, bits: u32) -> Raw {
    fit(a / from_i64(k, bits), bits)
}

pub(crate) fn add_mul_assign(a: &mut Raw, b: &Raw, c: &Raw, bits: u32) {
    *a = fit(&*a + fit(b * c, bits), bits);
}

pub(crate) fn sub_mul_assign(a: &mut Raw, b: &Raw, c: &Raw, bits: u32) {
    *a = fit(&*a - fit(b * c, bits), bits);
}

pub(crate) fn cmp_abs(a: &Raw, b: &Raw) -> Option<Ordering> {
    abs(a).partial_cmp(&abs(b))
}

pub(crate) fn cmp(a: &Raw, b: &Raw) -> Option<Ordering> {
    a.partial_cmp(b)
}

pub(crate) fn is_zero(a: &Raw) -> bool {
    a.repr().is_zero()
}

pub(crate) fn is_finite(a: &Raw) -> bool {
    !a.repr().is_infinite()
}

pub(crate) fn is_negative(a: &Raw) -> bool {
    a < &Raw::ZERO
}

pub(crate) fn to_f64(a: &Raw) -> f64 {
    a.to_f64().value()
}

pub(crate) fn to_decimal(a: &Raw, sig: usize) -> (bool, String, i64) {
    let d: Dec = a.clone().with_base_and_precision::<10>(sig).value();
    let neg = is_negative(a);
    let (significand, exponent) = d.into_repr().into_parts();
    let mut digits = significand.to_string().trim_start_matches('-').to_string();
    let exp = exponent as i64 + digits.len() as i64 - 1;
    while digits.len() < sig {
        digits.push('0');
    }
    (neg, digits, exp)
}
