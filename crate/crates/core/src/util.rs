//! Small shared helpers for numeric formatting and CSV parsing.

/// Format a float with 9 significant digits in scientific notation.
///
/// All CSV output goes through this so that reruns diff cleanly.
pub fn fmt_g9(x: f64) -> String {
    format!("{:.8e}", x)
}

/// Parse one CSV line into fields, trimming surrounding whitespace.
pub fn split_csv_line(line: &str) -> Vec<String> {
    line.split(',').map(|s| s.trim().to_string()).collect()
}

/// Parse a required float field, with the column name in the error.
pub fn parse_f64_field(field: &str, name: &str) -> Result<f64, String> {
    field
        .parse::<f64>()
        .map_err(|e| format!("bad value for `{name}`: {e}"))
}
