//! Decimal formatting rules shared by every file this crate writes.

use serde_json::Value;

/// Significant digits kept for floating point values on disk.
pub const SIGNIFICANT_DIGITS: usize = 9;

/// Rounds `x` to [`SIGNIFICANT_DIGITS`] significant decimal digits.
///
/// Non-finite values are returned unchanged.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .unwrap_or(x)
}

/// Rounds every floating point number inside a JSON tree in place.
pub fn round_json(value: &mut Value) {
    match value {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round_sig).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_json),
        Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

/// Serializes `value` to canonical JSON: sorted keys, no insignificant
/// whitespace, floats rounded to [`SIGNIFICANT_DIGITS`].
pub fn canonical_json<T: serde::Serialize>(value: &T) -> serde_json::Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_json(&mut v);
    serde_json::to_string(&v)
}
