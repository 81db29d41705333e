//! QM.N fixed-point arithmetic.
//!
//! A format `QM.N` stores a value in `M` bits of two's complement, `N` of which
//! are integer bits including the sign, leaving `F = M - N` fractional bits.
//! The representable range is `[-2^(N-1), 2^(N-1) - 2^-F]` with step `2^-F`.
//!
//! Conversions round half to even and saturate at the range bounds. Products
//! are accumulated exactly in a wide integer and only rounded when the
//! accumulator is requantized, which mirrors a MAC pipeline with a wide
//! intermediate register.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest table the tanh lookup is allowed to allocate (2^20 entries).
const MAX_TABLE_BITS: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QFormatSpec {
    total_bits: u32,
    integer_bits: u32,
}

impl QFormatSpec {
    pub fn new(total_bits: u32, integer_bits: u32) -> Result<Self> {
        if total_bits > 32 {
            return Err(Error::Format(format!(
                "Q{total_bits}.{integer_bits}: more than 32 total bits"
            )));
        }
        if integer_bits < 1 || integer_bits > total_bits {
            return Err(Error::Format(format!(
                "Q{total_bits}.{integer_bits}: integer bits must be in 1..=total bits"
            )));
        }
        Ok(Self {
            total_bits,
            integer_bits,
        })
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn integer_bits(&self) -> u32 {
        self.integer_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.total_bits - self.integer_bits
    }

    /// Value of one least-significant bit.
    pub fn lsb(&self) -> f64 {
        (-(self.frac_bits() as f64)).exp2()
    }

    pub fn min_raw(&self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    pub fn max_raw(&self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    pub fn min_value(&self) -> f64 {
        self.min_raw() as f64 * self.lsb()
    }

    pub fn max_value(&self) -> f64 {
        self.max_raw() as f64 * self.lsb()
    }

    /// Number of distinct mantissas, `2^M`.
    pub fn cardinality(&self) -> u64 {
        1u64 << self.total_bits
    }

    /// Every representable value in ascending order. Only sensible for small formats.
    pub fn iter_values(&self) -> impl Iterator<Item = QValue> + '_ {
        let spec = *self;
        (self.min_raw()..=self.max_raw()).map(move |raw| QValue {
            raw: raw as i32,
            spec,
        })
    }
}

impl fmt::Display for QFormatSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}.{}", self.total_bits, self.integer_bits)
    }
}

impl FromStr for QFormatSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("{s:?} is not of the form \"QM.N\""));
        let body = s.trim().strip_prefix('Q').ok_or_else(bad)?;
        let (m, n) = body.split_once('.').ok_or_else(bad)?;
        let m: u32 = m.parse().map_err(|_| bad())?;
        let n: u32 = n.parse().map_err(|_| bad())?;
        QFormatSpec::new(m, n)
    }
}

impl Serialize for QFormatSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QFormatSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A mantissa together with the format it is interpreted in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QValue {
    raw: i32,
    spec: QFormatSpec,
}

impl QValue {
    pub fn from_raw(raw: i64, spec: QFormatSpec) -> Result<Self> {
        if raw < spec.min_raw() || raw > spec.max_raw() {
            return Err(Error::Overflow(format!("mantissa {raw} does not fit {spec}")));
        }
        Ok(Self {
            raw: raw as i32,
            spec,
        })
    }

    pub fn zero(spec: QFormatSpec) -> Self {
        Self { raw: 0, spec }
    }

    pub fn raw(&self) -> i32 {
        self.raw
    }

    pub fn spec(&self) -> QFormatSpec {
        self.spec
    }

    pub fn value(&self) -> f64 {
        self.raw as f64 * self.spec.lsb()
    }

    pub fn neg(&self) -> Self {
        let raw = (-(self.raw as i64)).min(self.spec.max_raw());
        Self {
            raw: raw as i32,
            spec: self.spec,
        }
    }
}

/// Nearest representable value, ties to even, saturating at the range bounds.
///
/// Infinities saturate; NaN has no nearest value and is rejected.
pub fn quantize(x: f64, spec: QFormatSpec) -> Result<QValue> {
    if x.is_nan() {
        return Err(Error::Numeric("cannot quantize NaN".into()));
    }
    Ok(QValue {
        raw: quantize_raw(x, spec) as i32,
        spec,
    })
}

/// Mantissa of [`quantize`] for a finite or infinite input.
pub(crate) fn quantize_raw(x: f64, spec: QFormatSpec) -> i64 {
    // scaling by a power of two is exact, so the only rounding is the tie-to-even step
    let scaled = (x * (spec.frac_bits() as f64).exp2()).round_ties_even();
    scaled.clamp(spec.min_raw() as f64, spec.max_raw() as f64) as i64
}

/// `value(quantize(x, spec))` without the intermediate `Result`, for callers
/// that already guarantee a non-NaN input.
pub fn snap(x: f64, spec: QFormatSpec) -> f64 {
    quantize_raw(x, spec) as f64 * spec.lsb()
}

/// Shift a mantissa right by `shift` bits with round-half-to-even.
fn shift_round_even(raw: i128, shift: u32) -> i128 {
    if shift == 0 {
        return raw;
    }
    let floor = raw >> shift;
    let rem = raw - (floor << shift);
    let half = 1i128 << (shift - 1);
    if rem > half || (rem == half && floor & 1 == 1) {
        floor + 1
    } else {
        floor
    }
}

/// Exact sum of mantissa products, bounded by an intermediate result format.
///
/// The accumulator carries `frac_bits` fractional bits (the sum of the operand
/// formats' fractional bits) and is allowed to hold any value inside the
/// integer range of `limit`. Leaving that range is an overflow error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Accumulator {
    raw: i128,
    frac_bits: u32,
    limit: QFormatSpec,
}

impl Accumulator {
    pub fn new(frac_bits: u32, limit: QFormatSpec) -> Self {
        Self {
            raw: 0,
            frac_bits,
            limit,
        }
    }

    /// Accumulator with the format derived from two operand formats.
    pub fn for_operands(a: QFormatSpec, b: QFormatSpec, limit: QFormatSpec) -> Self {
        Self::new(a.frac_bits() + b.frac_bits(), limit)
    }

    pub fn raw(&self) -> i128 {
        self.raw
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn value(&self) -> f64 {
        self.raw as f64 * (-(self.frac_bits as f64)).exp2()
    }

    fn check(self) -> Result<Self> {
        let bound = 1i128 << (self.limit.integer_bits() - 1 + self.frac_bits);
        if self.raw < -bound || self.raw >= bound {
            return Err(Error::Overflow(format!(
                "accumulator value {} leaves the {} intermediate range",
                self.value(),
                self.limit
            )));
        }
        Ok(self)
    }

    /// Add a single value, aligned to the accumulator's fractional bits.
    pub fn add(mut self, v: QValue) -> Result<Self> {
        let f = v.spec().frac_bits();
        if f > self.frac_bits {
            return Err(Error::Format(format!(
                "{} has more fractional bits than the accumulator ({})",
                v.spec(),
                self.frac_bits
            )));
        }
        self.raw += (v.raw() as i128) << (self.frac_bits - f);
        self.check()
    }

    /// Round to `spec`, ties to even, saturating.
    pub fn requantize(&self, spec: QFormatSpec) -> QValue {
        let f = spec.frac_bits();
        let raw = if f >= self.frac_bits {
            self.raw << (f - self.frac_bits)
        } else {
            shift_round_even(self.raw, self.frac_bits - f)
        };
        let raw = raw.clamp(spec.min_raw() as i128, spec.max_raw() as i128);
        QValue {
            raw: raw as i32,
            spec,
        }
    }
}

/// Multiply-accumulate: adds the exact mantissa product `a * b` to `acc`.
pub fn qmul_acc(acc: Accumulator, a: QValue, b: QValue) -> Result<Accumulator> {
    let f = a.spec().frac_bits() + b.spec().frac_bits();
    if f != acc.frac_bits {
        return Err(Error::Format(format!(
            "{} x {} products carry {f} fractional bits, accumulator expects {}",
            a.spec(),
            b.spec(),
            acc.frac_bits
        )));
    }
    let mut acc = acc;
    acc.raw += a.raw() as i128 * b.raw() as i128;
    acc.check()
}

/// `quantize(tanh(value(x)), out_spec)`.
pub fn q_tanh(x: QValue, out_spec: QFormatSpec) -> QValue {
    QValue {
        raw: quantize_raw(x.value().tanh(), out_spec) as i32,
        spec: out_spec,
    }
}

/// Exhaustive tanh lookup over every mantissa of the input format.
#[derive(Debug, Clone)]
pub struct TanhTable {
    input: QFormatSpec,
    output: QFormatSpec,
    table: Vec<i32>,
}

impl TanhTable {
    pub fn new(input: QFormatSpec, output: QFormatSpec) -> Result<Self> {
        if input.total_bits() > MAX_TABLE_BITS {
            return Err(Error::Format(format!(
                "tanh table for {input} would need 2^{} entries",
                input.total_bits()
            )));
        }
        let table = input.iter_values().map(|x| q_tanh(x, output).raw()).collect();
        Ok(Self {
            input,
            output,
            table,
        })
    }

    pub fn input(&self) -> QFormatSpec {
        self.input
    }

    pub fn output(&self) -> QFormatSpec {
        self.output
    }

    pub fn lookup(&self, x: QValue) -> QValue {
        debug_assert_eq!(x.spec(), self.input);
        let idx = (x.raw() as i64 - self.input.min_raw()) as usize;
        QValue {
            raw: self.table[idx],
            spec: self.output,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(s: &str) -> QFormatSpec {
        s.parse().unwrap()
    }

    /// Nearest representable value by scanning every mantissa.
    fn brute_nearest(x: f64, spec: QFormatSpec) -> f64 {
        let mut best = f64::NAN;
        let mut best_err = f64::INFINITY;
        for v in spec.iter_values() {
            let err = (v.value() - x).abs();
            let tie_to_even = err == best_err && v.raw() % 2 == 0;
            if err < best_err || tie_to_even {
                best = v.value();
                best_err = err;
            }
        }
        best
    }

    #[test]
    fn parse_and_display() {
        let s = q("Q14.4");
        assert_eq!(s.total_bits(), 14);
        assert_eq!(s.integer_bits(), 4);
        assert_eq!(s.frac_bits(), 10);
        assert_eq!(s.to_string(), "Q14.4");
        assert!("Q4.5".parse::<QFormatSpec>().is_err());
        assert!("Q33.2".parse::<QFormatSpec>().is_err());
        assert!("Q8.0".parse::<QFormatSpec>().is_err());
        assert!("14.4".parse::<QFormatSpec>().is_err());
        assert!("Qx.4".parse::<QFormatSpec>().is_err());
    }

    #[test]
    fn range_matches_format() {
        let s = q("Q12.2");
        assert_eq!(s.min_value(), -2.0);
        assert_eq!(s.max_value(), 2.0 - 2f64.powi(-10));
        let s = q("Q32.32");
        assert_eq!(s.frac_bits(), 0);
        assert_eq!(s.max_raw(), i32::MAX as i64);
    }

    #[test]
    fn quantize_examples() {
        let zero = quantize(0.0, q("Q14.4")).unwrap();
        assert_eq!(zero.raw(), 0);
        assert_eq!(zero.value(), 0.0);

        let tenth = quantize(0.1, q("Q12.2")).unwrap();
        assert_eq!(tenth.raw(), 102);
        assert_eq!(tenth.value(), 0.099609375);
        assert_eq!(tenth.value(), brute_nearest(0.1, q("Q12.2")));

        let sat = quantize(10.0, q("Q12.2")).unwrap();
        assert_eq!(sat.value(), 1.9990234375);
        assert_eq!(quantize(-10.0, q("Q12.2")).unwrap().value(), -2.0);
        assert_eq!(quantize(f64::INFINITY, q("Q12.2")).unwrap().value(), 1.9990234375);
        assert!(quantize(f64::NAN, q("Q12.2")).is_err());
    }

    #[test]
    fn quantize_matches_brute_force_on_small_format() {
        let spec = q("Q8.3");
        let mut x = -5.0;
        while x < 5.0 {
            assert_eq!(snap(x, spec), brute_nearest(x, spec), "x = {x}");
            x += 0.0037;
        }
        // exact ties land on even mantissas
        assert_eq!(quantize(0.5 * spec.lsb(), spec).unwrap().raw(), 0);
        assert_eq!(quantize(1.5 * spec.lsb(), spec).unwrap().raw(), 2);
        assert_eq!(quantize(-1.5 * spec.lsb(), spec).unwrap().raw(), -2);
    }

    #[test]
    fn mac_identity_product() {
        let s = q("Q14.4");
        let one = quantize(1.0, s).unwrap();
        let acc = Accumulator::for_operands(s, s, q("Q18.8"));
        let acc = qmul_acc(acc, one, one).unwrap();
        assert_eq!(acc.raw(), 1i128 << 20);
    }

    #[test]
    fn mac_exact_negative_product() {
        let s = q("Q14.4");
        let a = quantize(0.5, s).unwrap();
        let b = quantize(-0.5, s).unwrap();
        let acc = qmul_acc(Accumulator::for_operands(s, s, q("Q18.8")), a, b).unwrap();
        assert_eq!(acc.requantize(s).value(), -0.25);
    }

    #[test]
    fn mac_matches_float_product_when_representable() {
        // coarse grid over both mantissa ranges
        let s = q("Q14.4");
        let out = q("Q14.4");
        let limit = q("Q18.8");
        let step = 37;
        for ra in (s.min_raw()..=s.max_raw()).step_by(step) {
            for rb in (s.min_raw()..=s.max_raw()).step_by(step * 3) {
                let a = QValue::from_raw(ra, s).unwrap();
                let b = QValue::from_raw(rb, s).unwrap();
                let exact = a.value() * b.value();
                let acc = qmul_acc(Accumulator::for_operands(s, s, limit), a, b).unwrap();
                let got = acc.requantize(out);
                if snap(exact, out) == exact {
                    assert_eq!(got, quantize(exact, out).unwrap());
                }
                // the rounding path also agrees when the product is not representable
                assert_eq!(got, quantize(exact, out).unwrap(), "{ra} x {rb}");
            }
        }
    }

    #[test]
    fn mac_overflow_is_an_error() {
        let s = q("Q14.4");
        let big = quantize(7.9, s).unwrap();
        let mut acc = Accumulator::for_operands(s, s, q("Q10.7"));
        acc = qmul_acc(acc, big, big).unwrap(); // 62.41 < 2^6
        assert!(matches!(qmul_acc(acc, big, big), Err(Error::Overflow(_))));
    }

    #[test]
    fn mac_rejects_mismatched_formats() {
        let acc = Accumulator::new(12, q("Q18.8"));
        let a = quantize(1.0, q("Q14.4")).unwrap();
        assert!(matches!(qmul_acc(acc, a, a), Err(Error::Format(_))));
    }

    #[test]
    fn requantize_rounds_half_to_even() {
        let acc = Accumulator::new(4, q("Q16.8"));
        let out = q("Q8.6"); // 2 fractional bits
        let mut a = acc;
        a.raw = 0b0010; // 0.125 -> tie between 0.0 and 0.25
        assert_eq!(a.requantize(out).raw(), 0);
        a.raw = 0b0110; // 0.375 -> tie between 0.25 and 0.5
        assert_eq!(a.requantize(out).raw(), 2);
        a.raw = -0b0110;
        assert_eq!(a.requantize(out).raw(), -2);
    }

    #[test]
    fn tanh_basics() {
        let s = q("Q12.1");
        assert_eq!(q_tanh(QValue::zero(s), s).raw(), 0);
        for x in s.iter_values().skip(1) {
            // skip the most negative mantissa, which has no positive counterpart
            assert_eq!(q_tanh(x.neg(), s), q_tanh(x, s).neg());
        }
    }

    #[test]
    fn tanh_table_matches_direct() {
        let input = q("Q12.1");
        let out = q("Q12.1");
        let table = TanhTable::new(input, out).unwrap();
        for x in input.iter_values() {
            assert_eq!(table.lookup(x), q_tanh(x, out));
        }
        assert!(TanhTable::new(q("Q24.8"), out).is_err());
    }
}
