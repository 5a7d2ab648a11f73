//! Decimal formatting for every float the toolkit writes.
//!
//! All persisted numbers use 17 significant digits in scientific notation,
//! which is enough for the decimal text to round-trip any f64 bit pattern,
//! so identical runs produce byte-identical files.

use std::fmt::Write;

/// One f64 as a JSON-parseable decimal with 17 significant digits.
pub fn f64_repr(v: f64) -> String {
    debug_assert!(v.is_finite(), "persisted values must be finite, got {v}");
    format!("{v:.16e}")
}

/// JSON array of floats, no spaces.
pub fn f64_array(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 24 + 2);
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v:.16e}");
    }
    out.push(']');
    out
}

/// JSON array of arrays of floats (row-major matrix), no spaces.
pub fn f64_matrix(rows: &[Vec<f64>]) -> String {
    let mut out = String::from("[");
    for (i, row) in rows.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&f64_array(row));
    }
    out.push(']');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repr_round_trips_bit_for_bit() {
        let cases = [
            0.0,
            -0.0,
            1.0,
            -1.0,
            0.1,
            1.0 / 3.0,
            std::f64::consts::PI,
            f64::MAX,
            f64::MIN_POSITIVE,
            2.2250738585072014e-308,
            -9.869604401089358e16,
        ];
        for v in cases {
            let s = f64_repr(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v} -> {s}");
        }
    }

    #[test]
    fn repr_has_17_significant_digits() {
        assert_eq!(f64_repr(1.0), "1.0000000000000000e0");
        assert_eq!(f64_repr(-0.001), "-1.0000000000000000e-3");
    }

    #[test]
    fn arrays_parse_as_json() {
        let s = f64_array(&[1.5, -2.25, 0.0]);
        let v: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(v, vec![1.5, -2.25, 0.0]);
        let m = f64_matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let mm: Vec<Vec<f64>> = serde_json::from_str(&m).unwrap();
        assert_eq!(mm, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }
}
