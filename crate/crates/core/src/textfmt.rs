//! Text formatting shared by the CSV and certificate writers.

/// Formats a float with 17 significant digits, enough for an exact
/// round-trip of any f64. Output is locale-independent and byte-stable
/// for a given value.
pub fn sig17(v: f64) -> String {
    format!("{v:.16e}")
}
