//! Locale-independent number formatting for CSV emission.
//!
//! All floating values in output files are serialized with 12 significant
//! digits, '.' decimal separator, trailing zeros trimmed (printf `%.12g`
//! behaviour).

/// Formats `x` with 12 significant digits.
pub fn sig12(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    // Round to 12 significant digits via scientific notation, then choose the
    // fixed or scientific presentation from the decimal exponent.
    let sci = format!("{:.11e}", x);
    let (_, exp_str) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp_str.parse().expect("exponent");
    if exp < -4 || exp >= 12 {
        let (mant, _) = sci.split_once('e').unwrap();
        let mant = mant.trim_end_matches('0').trim_end_matches('.');
        format!("{mant}e{exp}")
    } else {
        let prec = (11 - exp).max(0) as usize;
        let fixed = format!("{:.*}", prec, x);
        if fixed.contains('.') {
            fixed
                .trim_end_matches('0')
                .trim_end_matches('.')
                .to_string()
        } else {
            fixed
        }
    }
}
