//! Extended-precision real arithmetic.
//!
//! Every quantity in the crate is an [`XReal`], an MPFR float carrying a
//! fixed number of mantissa bits. A [`Precision`] context fixes the decimal
//! working precision once and is the only way values are created, so all
//! values in one run share the same mantissa width. Rounding is always to
//! nearest.

use rug::float::{Constant, Round};
use rug::Float;
use thiserror::Error;

/// Extended-precision real scalar.
pub type XReal = Float;

/// Smallest decimal precision accepted by [`Precision::new`].
pub const MIN_DIGITS: u32 = 16;

/// Decimal precision used when none is requested.
pub const DEFAULT_DIGITS: u32 = 120;

const LOG2_10: f64 = std::f64::consts::LOG2_10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum XnumError {
    #[error("working precision of {0} digits is below the minimum of {MIN_DIGITS}")]
    PrecisionTooLow(u32),
    #[error("malformed decimal literal {0:?}")]
    Parse(String),
    #[error("even root (n = {n}) of a negative number")]
    EvenRootOfNegative { n: u32 },
    #[error("root index must be positive")]
    ZeroRootIndex,
}

/// Working-precision context.
///
/// The mantissa carries `ceil(digits * log2 10) + 2` bits, enough for any
/// decimal literal of `digits` significant digits to survive a
/// parse/format round trip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Precision {
    digits: u32,
    bits: u32,
}

/// Establishes a working precision of `digits` decimal digits.
pub fn set_working_precision(digits: u32) -> Result<Precision, XnumError> {
    Precision::new(digits)
}

impl Default for Precision {
    fn default() -> Self {
        Precision::new(DEFAULT_DIGITS).expect("default precision is valid")
    }
}

impl Precision {
    pub fn new(digits: u32) -> Result<Self, XnumError> {
        if digits < MIN_DIGITS {
            return Err(XnumError::PrecisionTooLow(digits));
        }
        let bits = (f64::from(digits) * LOG2_10).ceil() as u32 + 2;
        Ok(Precision { digits, bits })
    }

    pub fn digits(&self) -> u32 {
        self.digits
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Number of significant decimal digits for which `parse(format(x)) == x`
    /// holds for every value at this precision.
    pub fn round_trip_digits(&self) -> usize {
        (f64::from(self.bits) * std::f64::consts::LOG10_2).ceil() as usize + 1
    }

    pub fn zero(&self) -> XReal {
        Float::new(self.bits)
    }

    pub fn one(&self) -> XReal {
        Float::with_val(self.bits, 1)
    }

    pub fn int(&self, v: i64) -> XReal {
        Float::with_val(self.bits, v)
    }

    /// `num / den`, correctly rounded.
    pub fn ratio(&self, num: i64, den: i64) -> XReal {
        let mut x = Float::with_val(self.bits, num);
        x /= den;
        x
    }

    pub fn pi(&self) -> XReal {
        Float::with_val(self.bits, Constant::Pi)
    }

    /// Rounds any value (possibly at another precision) to this context.
    pub fn round(&self, x: &XReal) -> XReal {
        Float::with_val(self.bits, x)
    }

    /// Parses a signed decimal literal with optional exponent.
    pub fn parse(&self, s: &str) -> Result<XReal, XnumError> {
        parse_decimal(self, s)
    }

    /// Formats with enough digits to reproduce `x` exactly when parsed back.
    pub fn format(&self, x: &XReal) -> String {
        format_digits(x, self.round_trip_digits())
    }

    /// `x^(1/n)`; see [`nth_root`].
    pub fn nth_root(&self, x: &XReal, n: u32) -> Result<XReal, XnumError> {
        nth_root(&self.round(x), n)
    }

    /// n! as an extended-precision value.
    pub fn factorial(&self, n: u32) -> XReal {
        Float::with_val(self.bits, Float::factorial(n))
    }
}

fn is_decimal_literal(s: &str) -> bool {
    let b = s.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        i += 1;
    }
    let int_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let mut mantissa_digits = i - int_start;
    if i < b.len() && b[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        mantissa_digits += i - frac_start;
    }
    if mantissa_digits == 0 {
        return false;
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        i += 1;
        if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
            i += 1;
        }
        let exp_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return false;
        }
    }
    i == b.len()
}

/// Parses `s` to the nearest representable value at `prec`.
pub fn parse_decimal(prec: &Precision, s: &str) -> Result<XReal, XnumError> {
    let s = s.trim();
    if !is_decimal_literal(s) {
        return Err(XnumError::Parse(s.to_string()));
    }
    let parsed = Float::parse(s).map_err(|_| XnumError::Parse(s.to_string()))?;
    Ok(Float::with_val(prec.bits, parsed))
}

/// Scientific notation with `digits` significant decimal digits, rounded to
/// nearest.
pub fn format_digits(x: &XReal, digits: usize) -> String {
    if x.is_zero() {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    x.to_string_radix_round(10, Some(digits.max(1)), Round::Nearest)
}

/// Real `n`-th root, correctly rounded.
pub fn nth_root(x: &XReal, n: u32) -> Result<XReal, XnumError> {
    if n == 0 {
        return Err(XnumError::ZeroRootIndex);
    }
    if n.is_multiple_of(2) && x.is_sign_negative() && !x.is_zero() {
        return Err(XnumError::EvenRootOfNegative { n });
    }
    Ok(x.clone().root(n))
}
