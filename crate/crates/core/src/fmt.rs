//! Real-number formatting shared by every text format the crate writes.

/// Formats `x` with 17 significant digits in scientific notation. The output
/// parses back to the identical `f64`.
pub fn real(x: f64) -> String {
    format!("{:.16e}", x)
}
