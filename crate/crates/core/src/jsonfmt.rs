//! Minimal JSON writing helpers.
//!
//! Report files are written by hand rather than through a serializer for one
//! reason: floats must be emitted with 17 significant digits so that reading
//! a file back reproduces bit-identical values, and rewriting it reproduces
//! identical bytes.

/// 17-significant-digit decimal form of `x`; non-finite values become `null`.
pub(crate) fn f64_repr(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".to_string()
    }
}

/// JSON array of floats in 17-digit form.
pub(crate) fn f64_array(values: &[f64]) -> String {
    let mut out = String::from("[");
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&f64_repr(*v));
    }
    out.push(']');
    out
}

/// JSON string literal with the mandatory escapes.
pub(crate) fn json_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}
