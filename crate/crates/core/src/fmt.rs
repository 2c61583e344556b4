//! Text formatting shared by every file format the crate writes.

/// Number of significant digits used for all numeric text output.
pub const SIGNIFICANT_DIGITS: usize = 12;

/// Rounds `x` to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .unwrap_or(x)
}

/// Formats `x` with 12 significant digits using the shortest text that
/// parses back to the rounded value (`0.5`, `1.0`, `0.666666666667`).
pub fn fmt_sig(x: f64) -> String {
    format!("{:?}", round_sig(x))
}

pub fn fmt_list(values: &[f64]) -> String {
    values.iter().map(|&v| fmt_sig(v)).collect::<Vec<_>>().join(",")
}
