//! Diff-stable number formatting for reports.

/// Rounds to 12 significant digits, then prints the shortest decimal that
/// reads back to the rounded value.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("valid float");
    format!("{rounded}")
}
