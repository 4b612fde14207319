//! Exact conversions between user-facing micrometer strings and the
//! internal integer-nanometer coordinates.

use crate::error::{Error, Result};

/// Format integer nanometers as micrometers with three decimals (exact).
pub fn format_um(nm: i64) -> String {
    let sign = if nm < 0 { "-" } else { "" };
    let a = nm.unsigned_abs();
    format!("{sign}{}.{:03}", a / 1000, a % 1000)
}

/// Parse a decimal micrometer value into integer nanometers, exactly.
/// At most three fractional digits are allowed (1 nm resolution).
pub fn parse_um_to_nm(s: &str) -> Result<i64> {
    let t = s.trim();
    let (negative, rest) = match t.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let (int_part, frac_part) = match rest.split_once('.') {
        Some((a, b)) => (a, b),
        None => (rest, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(Error::Parse(format!("'{s}' is not a micrometer value")));
    }
    if frac_part.len() > 3 {
        return Err(Error::Parse(format!(
            "'{s}' is finer than 1 nm (at most 3 decimal digits)"
        )));
    }
    if !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return Err(Error::Parse(format!("'{s}' is not a micrometer value")));
    }
    let int_v: i64 = if int_part.is_empty() {
        0
    } else {
        int_part
            .parse()
            .map_err(|_| Error::Parse(format!("'{s}' is out of range")))?
    };
    let mut frac_v: i64 = if frac_part.is_empty() {
        0
    } else {
        frac_part.parse().expect("digits checked")
    };
    for _ in frac_part.len()..3 {
        frac_v *= 10;
    }
    let nm = int_v
        .checked_mul(1000)
        .and_then(|v| v.checked_add(frac_v))
        .ok_or_else(|| Error::Parse(format!("'{s}' is out of range")))?;
    Ok(if negative { -nm } else { nm })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        for nm in [0, 1, 999, 1000, 1500, -1500, 1_234_567, -3, i64::from(i32::MAX)] {
            assert_eq!(parse_um_to_nm(&format_um(nm)).unwrap(), nm);
        }
    }

    #[test]
    fn parse_forms() {
        assert_eq!(parse_um_to_nm("2").unwrap(), 2000);
        assert_eq!(parse_um_to_nm("2.5").unwrap(), 2500);
        assert_eq!(parse_um_to_nm(".25").unwrap(), 250);
        assert_eq!(parse_um_to_nm("-0.001").unwrap(), -1);
        assert_eq!(parse_um_to_nm("+3.14").unwrap(), 3140);
        assert!(parse_um_to_nm("0.0001").is_err());
        assert!(parse_um_to_nm("abc").is_err());
        assert!(parse_um_to_nm("").is_err());
        assert!(parse_um_to_nm("1e3").is_err());
    }
}
