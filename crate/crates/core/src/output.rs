//! Plain-text number formatting shared by the CSV writers.

/// Format with 17 significant digits in scientific notation.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    format!("{x:.16e}")
}
