//! Exact decimal arithmetic helpers.
//!
//! Profiler listings print fixed-point decimals. Values are kept as exact
//! rationals so that identities such as `avg == total / locked` can be
//! checked without floating-point drift.

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};

pub type Rational = Ratio<i128>;

/// Parses a C-locale decimal (`-12.345`, `7`, `.5`) into an exact rational.
///
/// Exponents, thousands separators and locale commas are rejected.
pub fn parse_decimal(text: &str) -> Option<Rational> {
    let (negative, body) = match text.as_bytes().first()? {
        b'-' => (true, &text[1..]),
        b'+' => (false, &text[1..]),
        _ => (false, text),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    // i128 holds 38 digits; anything longer is not a profiler value.
    if int_part.len() + frac_part.len() > 36 {
        return None;
    }
    let mut numer: i128 = 0;
    for b in int_part.bytes().chain(frac_part.bytes()) {
        numer = numer * 10 + i128::from(b - b'0');
    }
    let denom = 10i128.pow(frac_part.len() as u32);
    let value = Rational::new(numer, denom);
    Some(if negative { -value } else { value })
}

/// Formats with exactly `places` fractional digits, rounding half away from zero.
pub fn format_fixed(value: &Rational, places: u32) -> String {
    let scale = 10i128.pow(places);
    let scaled = value.abs() * Rational::from_integer(scale);
    let floor = scaled.floor().to_integer();
    let rem = scaled - Rational::from_integer(floor);
    let rounded = if rem * 2 >= Rational::from_integer(1) { floor + 1 } else { floor };
    let sign = if value.is_negative() && rounded != 0 { "-" } else { "" };
    if places == 0 {
        return format!("{sign}{rounded}");
    }
    let int = rounded / scale;
    let frac = rounded % scale;
    format!("{sign}{int}.{frac:0width$}", width = places as usize)
}

pub fn to_f64(value: &Rational) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}

/// Nanoseconds as an exact number of milliseconds.
pub fn ns_to_ms(ns: u64) -> Rational {
    Rational::new(i128::from(ns), 1_000_000)
}

/// Nanoseconds as an exact number of seconds.
pub fn ns_to_secs(ns: u64) -> Rational {
    Rational::new(i128::from(ns), 1_000_000_000)
}

pub fn is_zero(value: &Rational) -> bool {
    value.is_zero()
}
