//! Float formatting for machine-readable outputs.

/// Formats a float with 17 significant digits, enough for an exact
/// round-trip through `str::parse::<f64>`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Six-digit rounding for human-facing tables.
pub fn fmt_human(x: f64) -> String {
    format!("{x:.6}")
}
