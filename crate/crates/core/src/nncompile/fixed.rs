//! Q8.8 two's-complement fixed point held in 32-bit words.

use super::NnError;

pub const FRAC_BITS: u32 = 8;
pub const ONE: i32 = 1 << FRAC_BITS;
pub const MIN: i32 = i16::MIN as i32;
pub const MAX: i32 = i16::MAX as i32;

/// Clamps to the representable range.
pub fn saturate(v: i64) -> i32 {
    v.clamp(MIN as i64, MAX as i64) as i32
}

pub fn to_f64(raw: i32) -> f64 {
    raw as f64 / ONE as f64
}

/// Nearest representable value, saturating.
pub fn from_f64(v: f64) -> i32 {
    saturate((v * ONE as f64).round() as i64)
}

/// Parses a decimal such as `-1.25` or `0.0039`, rounding to the nearest
/// raw value (ties away from zero). Values outside the range are errors.
pub fn parse(s: &str) -> Result<i32, NnError> {
    let bad = || NnError::Number(s.to_string());
    let t = s.trim();
    let (neg, body) = match t.as_bytes().first() {
        Some(b'-') => (true, &t[1..]),
        Some(b'+') => (false, &t[1..]),
        _ => (false, t),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    if int.len() > 6 || frac.len() > 30 {
        return Err(bad());
    }
    let int_v: u128 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
    let (num, den) = if frac.is_empty() {
        (0u128, 1u128)
    } else {
        (frac.parse().map_err(|_| bad())?, 10u128.pow(frac.len() as u32))
    };
    // raw = round((int + num/den) * 256)
    let scaled = int_v * den * ONE as u128 + num * ONE as u128;
    let mut raw = scaled / den;
    if 2 * (scaled % den) >= den {
        raw += 1;
    }
    let raw = raw as i64;
    let v = if neg { -raw } else { raw };
    if v < MIN as i64 || v > MAX as i64 {
        return Err(NnError::Range(s.to_string()));
    }
    Ok(v as i32)
}

/// Exact decimal form; `parse(&format(v)) == v`.
pub fn format(raw: i32) -> String {
    let neg = raw < 0;
    let a = raw.unsigned_abs();
    let int = a >> FRAC_BITS;
    // 256 divides 10^8, so eight digits are always exact.
    let frac = (a & (ONE as u32 - 1)) as u64 * 100_000_000 / ONE as u64;
    let mut s = if neg { String::from("-") } else { String::new() };
    s.push_str(&int.to_string());
    if frac != 0 {
        let digits = format!("{frac:08}");
        s.push('.');
        s.push_str(digits.trim_end_matches('0'));
    }
    s
}
