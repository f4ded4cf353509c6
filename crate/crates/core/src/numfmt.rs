//! Stable float formatting for CSV and trace output.

/// Formats `x` rounded to 9 significant digits, printed in the shortest form
/// that reads back to the rounded value.
pub fn float(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("scientific float parses");
    // Normalize negative zero.
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded}")
}

#[cfg(test)]
mod tests {
    use super::float;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(float(0.1 + 0.2), "0.3");
        assert_eq!(float(1.0 / 3.0), "0.333333333");
        assert_eq!(float(123456789012.0), "123456789000");
        assert_eq!(float(-0.0), "0");
        assert_eq!(float(2.5), "2.5");
    }
}
