//! Signed fixed-point decimal with 18 fractional digits.
//!
//! Every currency amount, price, index value and ratio in the protocol is a
//! [`Fixed`]. Products and quotients go through a 256-bit intermediate so no
//! precision is lost before the final rounding step, and every rounding
//! direction is explicit at the call site (`*_floor` / `*_ceil`).

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

use ethnum::I256;
use num_bigint::BigInt;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of fractional decimal digits.
pub const DECIMALS: u32 = 18;
/// Raw units per whole unit.
pub const SCALE: i128 = 1_000_000_000_000_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseFixedError {
    #[error("empty decimal string")]
    Empty,
    #[error("invalid decimal `{0}`")]
    Invalid(String),
    #[error("decimal `{0}` out of range")]
    Overflow(String),
    #[error("non-finite float")]
    NonFinite,
}

#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fixed(i128);

#[inline]
fn wide(v: i128) -> I256 {
    I256::from(v)
}

fn narrow(v: I256) -> i128 {
    i128::try_from(v).expect("fixed-point overflow")
}

fn div_floor_wide(n: I256, d: I256) -> I256 {
    let q = n / d;
    if (n % d != 0) && ((n < 0) != (d < 0)) {
        q - 1
    } else {
        q
    }
}

fn div_ceil_wide(n: I256, d: I256) -> I256 {
    let q = n / d;
    if (n % d != 0) && ((n < 0) == (d < 0)) {
        q + 1
    } else {
        q
    }
}

impl Fixed {
    pub const ZERO: Fixed = Fixed(0);
    pub const ONE: Fixed = Fixed(SCALE);
    /// Smallest positive increment, 1e-18.
    pub const EPSILON: Fixed = Fixed(1);
    pub const MAX: Fixed = Fixed(i128::MAX);

    pub const fn from_raw(raw: i128) -> Self {
        Fixed(raw)
    }

    pub const fn raw(self) -> i128 {
        self.0
    }

    pub const fn from_int(v: i64) -> Self {
        Fixed(v as i128 * SCALE)
    }

    /// `num / den`, rounded toward negative infinity.
    pub fn ratio(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        Fixed(narrow(div_floor_wide(wide(num as i128) * wide(SCALE), wide(den as i128))))
    }

    /// Nearest representable value. Used at the boundary between behavioural
    /// float models and protocol arithmetic.
    pub fn from_f64(v: f64) -> Result<Self, ParseFixedError> {
        if !v.is_finite() {
            return Err(ParseFixedError::NonFinite);
        }
        let text = format!("{v}");
        parse_decimal(&text, true)
    }

    pub fn to_f64(self) -> f64 {
        let int = (self.0 / SCALE) as f64;
        let frac = (self.0 % SCALE) as f64 / SCALE as f64;
        int + frac
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub fn abs(self) -> Self {
        Fixed(self.0.checked_abs().expect("fixed-point overflow"))
    }

    pub fn checked_add(self, rhs: Fixed) -> Option<Fixed> {
        self.0.checked_add(rhs.0).map(Fixed)
    }

    pub fn checked_sub(self, rhs: Fixed) -> Option<Fixed> {
        self.0.checked_sub(rhs.0).map(Fixed)
    }

    /// `max(self - rhs, 0)`.
    pub fn saturating_sub_zero(self, rhs: Fixed) -> Fixed {
        if rhs >= self {
            Fixed::ZERO
        } else {
            self - rhs
        }
    }

    pub fn mul_floor(self, rhs: Fixed) -> Fixed {
        Fixed(narrow(div_floor_wide(wide(self.0) * wide(rhs.0), wide(SCALE))))
    }

    pub fn mul_ceil(self, rhs: Fixed) -> Fixed {
        Fixed(narrow(div_ceil_wide(wide(self.0) * wide(rhs.0), wide(SCALE))))
    }

    /// Panics on a zero divisor.
    pub fn div_floor(self, rhs: Fixed) -> Fixed {
        assert!(!rhs.is_zero(), "fixed-point division by zero");
        Fixed(narrow(div_floor_wide(wide(self.0) * wide(SCALE), wide(rhs.0))))
    }

    pub fn div_ceil(self, rhs: Fixed) -> Fixed {
        assert!(!rhs.is_zero(), "fixed-point division by zero");
        Fixed(narrow(div_ceil_wide(wide(self.0) * wide(SCALE), wide(rhs.0))))
    }

    pub fn checked_div_floor(self, rhs: Fixed) -> Option<Fixed> {
        if rhs.is_zero() {
            return None;
        }
        i128::try_from(div_floor_wide(wide(self.0) * wide(SCALE), wide(rhs.0)))
            .ok()
            .map(Fixed)
    }

    /// `self * mul / div` with a single rounding step.
    pub fn mul_div_floor(self, mul: Fixed, div: Fixed) -> Fixed {
        assert!(!div.is_zero(), "fixed-point division by zero");
        Fixed(narrow(div_floor_wide(wide(self.0) * wide(mul.0), wide(div.0))))
    }

    pub fn mul_int(self, n: i128) -> Fixed {
        Fixed(self.0.checked_mul(n).expect("fixed-point overflow"))
    }

    pub fn div_int_floor(self, n: i128) -> Fixed {
        assert!(n != 0, "fixed-point division by zero");
        Fixed(narrow(div_floor_wide(wide(self.0), wide(n))))
    }

    /// `self^n`, rounding down after every multiplication.
    pub fn pow_floor(self, n: u32) -> Fixed {
        (0..n).fold(Fixed::ONE, |acc, _| acc.mul_floor(self))
    }

    /// Midpoint of two values, rounded down. Always within `[min, max]`.
    pub fn midpoint(self, other: Fixed) -> Fixed {
        Fixed(narrow(div_floor_wide(wide(self.0) + wide(other.0), wide(2))))
    }

    /// Exact comparison of two products of fixed-point factors,
    /// `prod(lhs) <=> prod(rhs)`, with no intermediate rounding.
    pub fn cmp_products(lhs: &[Fixed], rhs: &[Fixed]) -> Ordering {
        let scale = BigInt::from(SCALE);
        let mut l = BigInt::from(1);
        for f in lhs {
            l *= BigInt::from(f.0);
        }
        let mut r = BigInt::from(1);
        for f in rhs {
            r *= BigInt::from(f.0);
        }
        // Bring both sides to the same implied scale.
        match lhs.len().cmp(&rhs.len()) {
            Ordering::Less => {
                for _ in 0..(rhs.len() - lhs.len()) {
                    l *= &scale;
                }
            }
            Ordering::Greater => {
                for _ in 0..(lhs.len() - rhs.len()) {
                    r *= &scale;
                }
            }
            Ordering::Equal => {}
        }
        l.cmp(&r)
    }

    /// Canonical 16-byte big-endian encoding of the raw value.
    pub fn to_be_bytes(self) -> [u8; 16] {
        self.0.to_be_bytes()
    }
}

fn parse_decimal(s: &str, round_nearest: bool) -> Result<Fixed, ParseFixedError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(ParseFixedError::Empty);
    }
    let invalid = || ParseFixedError::Invalid(s.to_string());
    let overflow = || ParseFixedError::Overflow(s.to_string());

    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(pos) => {
            let e: i32 = s[pos + 1..].parse().map_err(|_| invalid())?;
            (&s[..pos], e)
        }
        None => (s, 0),
    };
    let (neg, digits) = match mantissa.as_bytes().first() {
        Some(b'-') => (true, &mantissa[1..]),
        Some(b'+') => (false, &mantissa[1..]),
        _ => (false, mantissa),
    };
    let (int_part, frac_part) = match digits.find('.') {
        Some(pos) => (&digits[..pos], &digits[pos + 1..]),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(invalid());
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(invalid());
    }

    // All digits as one integer with `point` digits after the decimal point.
    let mut all: String = format!("{int_part}{frac_part}");
    let mut point = frac_part.len() as i64 - exp as i64;
    if point < 0 {
        all.extend(std::iter::repeat_n('0', (-point) as usize));
        point = 0;
    }
    let all = all.trim_start_matches('0');
    let point = point as usize;
    let keep = DECIMALS as usize;

    let (kept, dropped): (String, String) = if point > keep {
        let cut = all.len().saturating_sub(point - keep);
        (all[..cut].to_string(), all[cut..].to_string())
    } else {
        let mut k = all.to_string();
        k.extend(std::iter::repeat_n('0', keep - point));
        (k, String::new())
    };
    let mut raw: i128 = if kept.is_empty() {
        0
    } else {
        kept.parse().map_err(|_| overflow())?
    };
    if !dropped.is_empty() {
        // `dropped` may have fewer digits than the total cut when leading
        // zeros were trimmed; only its first digit matters for rounding.
        let full_cut = point - keep;
        let first = if dropped.len() == full_cut {
            dropped.as_bytes()[0]
        } else {
            b'0'
        };
        if !round_nearest && dropped.bytes().any(|b| b != b'0') {
            return Err(ParseFixedError::Invalid(format!("{s} (more than 18 decimals)")));
        }
        if first >= b'5' {
            raw = raw.checked_add(1).ok_or_else(overflow)?;
        }
    }
    Ok(Fixed(if neg { -raw } else { raw }))
}

impl FromStr for Fixed {
    type Err = ParseFixedError;

    /// Exact parse; more than 18 significant fractional digits is an error.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_decimal(s, false)
    }
}

impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let neg = self.0 < 0;
        let abs = self.0.unsigned_abs();
        let int = abs / SCALE as u128;
        let frac = abs % SCALE as u128;
        if neg {
            f.write_str("-")?;
        }
        if frac == 0 {
            write!(f, "{int}")
        } else {
            let digits = format!("{frac:018}");
            write!(f, "{int}.{}", digits.trim_end_matches('0'))
        }
    }
}

impl fmt::Debug for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fixed({self})")
    }
}

impl Add for Fixed {
    type Output = Fixed;
    fn add(self, rhs: Fixed) -> Fixed {
        self.checked_add(rhs).expect("fixed-point overflow")
    }
}

impl Sub for Fixed {
    type Output = Fixed;
    fn sub(self, rhs: Fixed) -> Fixed {
        self.checked_sub(rhs).expect("fixed-point overflow")
    }
}

impl AddAssign for Fixed {
    fn add_assign(&mut self, rhs: Fixed) {
        *self = *self + rhs;
    }
}

impl SubAssign for Fixed {
    fn sub_assign(&mut self, rhs: Fixed) {
        *self = *self - rhs;
    }
}

impl Neg for Fixed {
    type Output = Fixed;
    fn neg(self) -> Fixed {
        Fixed(self.0.checked_neg().expect("fixed-point overflow"))
    }
}

impl Sum for Fixed {
    fn sum<I: Iterator<Item = Fixed>>(iter: I) -> Fixed {
        iter.fold(Fixed::ZERO, |a, b| a + b)
    }
}

impl<'a> Sum<&'a Fixed> for Fixed {
    fn sum<I: Iterator<Item = &'a Fixed>>(iter: I) -> Fixed {
        iter.fold(Fixed::ZERO, |a, b| a + *b)
    }
}

impl Serialize for Fixed {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

struct FixedVisitor;

impl Visitor<'_> for FixedVisitor {
    type Value = Fixed;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a decimal string or number")
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Fixed, E> {
        v.parse().map_err(E::custom)
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Fixed, E> {
        Ok(Fixed::from_int(v))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Fixed, E> {
        i64::try_from(v)
            .map(Fixed::from_int)
            .map_err(|_| E::custom("integer out of range"))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Fixed, E> {
        Fixed::from_f64(v).map_err(E::custom)
    }
}

impl<'de> Deserialize<'de> for Fixed {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_any(FixedVisitor)
    }
}

impl schemars::JsonSchema for Fixed {
    fn schema_name() -> String {
        "Fixed".to_string()
    }

    fn json_schema(_: &mut schemars::gen::SchemaGenerator) -> schemars::schema::Schema {
        use schemars::schema::{InstanceType, Metadata, SchemaObject, SingleOrVec};
        SchemaObject {
            metadata: Some(Box::new(Metadata {
                description: Some(
                    "Decimal with up to 18 fractional digits, as a string (exact) or a JSON number"
                        .to_string(),
                ),
                ..Default::default()
            })),
            instance_type: Some(SingleOrVec::Vec(vec![InstanceType::String, InstanceType::Number])),
            ..Default::default()
        }
        .into()
    }
}

/// Shorthand for literals in tests and configuration code.
///
/// Panics if the literal is not a valid 18-decimal value.
pub fn fx(s: &str) -> Fixed {
    s.parse().unwrap_or_else(|e| panic!("bad fixed literal {s:?}: {e}"))
}
