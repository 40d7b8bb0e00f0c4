//! Locale-independent number formatting with C `printf("%.*g")` semantics.

/// Formats `x` like C's `%.{precision}g`.
///
/// Trailing zeros are stripped, exponents carry a sign and at least two
/// digits, and non-finite values print as `nan`, `inf` or `-inf`.
pub fn fmt_g(x: f64, precision: usize) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let p = precision.max(1);
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    // Rounding to p significant digits decides the exponent, so let the
    // scientific formatter do the rounding first.
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -4 || exp >= p as i32 {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::fmt_g;

    #[test]
    fn matches_printf_g() {
        assert_eq!(fmt_g(0.0, 10), "0");
        assert_eq!(fmt_g(1.0, 10), "1");
        assert_eq!(fmt_g(-3.0, 10), "-3");
        assert_eq!(fmt_g(0.1, 10), "0.1");
        assert_eq!(fmt_g(1.0 / 3.0, 10), "0.3333333333");
        assert_eq!(fmt_g(123456.0, 3), "1.23e+05");
        assert_eq!(fmt_g(1e-5, 10), "1e-05");
        assert_eq!(fmt_g(0.0001, 10), "0.0001");
        assert_eq!(fmt_g(9.9999999999, 10), "10");
        assert_eq!(fmt_g(1e300, 17), "1.0000000000000001e+300");
        assert_eq!(fmt_g(f64::NAN, 10), "nan");
        assert_eq!(fmt_g(f64::NEG_INFINITY, 10), "-inf");
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for &x in &[0.1, 1.0 / 3.0, std::f64::consts::PI, 1e-300, -2.5e17, 6.02214076e23] {
            let s = fmt_g(x, 17);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }
}
