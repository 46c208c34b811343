/// Parses `125`, `125us`, `0.5ms` or `1s` into microseconds.
pub fn parse_us(text: &str) -> Result<f64, String> {
    let t = text.trim();
    let (number, scale) = if let Some(n) = t.strip_suffix("ms") {
        (n, 1e3)
    } else if let Some(n) = t.strip_suffix("us").or_else(|| t.strip_suffix("µs")) {
        (n, 1.0)
    } else if let Some(n) = t.strip_suffix('s') {
        (n, 1e6)
    } else {
        (t, 1.0)
    };
    let value: f64 = number
        .trim()
        .parse()
        .map_err(|_| format!("invalid duration {text:?} (expected e.g. 125, 125us, 0.5ms, 1s)"))?;
    let us = value * scale;
    if !(us.is_finite() && us > 0.0) {
        return Err(format!("duration {text:?} must be positive"));
    }
    Ok(us)
}

/// Like [`parse_us`] but the result must be a whole number of microseconds.
pub fn parse_whole_us(text: &str) -> Result<u64, String> {
    let us = parse_us(text)?;
    let rounded = us.round();
    if (us - rounded).abs() > 1e-6 || rounded < 1.0 {
        return Err(format!("duration {text:?} is not a whole number of microseconds"));
    }
    Ok(rounded as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffixes() {
        assert_eq!(parse_us("125").unwrap(), 125.0);
        assert_eq!(parse_us("125us").unwrap(), 125.0);
        assert_eq!(parse_us("0.5ms").unwrap(), 500.0);
        assert_eq!(parse_us("1s").unwrap(), 1e6);
        assert_eq!(parse_us("15.625").unwrap(), 15.625);
        assert!(parse_us("0").is_err());
        assert!(parse_us("fast").is_err());
        assert_eq!(parse_whole_us("1ms").unwrap(), 1000);
        assert!(parse_whole_us("15.6").is_err());
    }
}
