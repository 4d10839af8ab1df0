//! Flag value parsers. Every numeric flag accepts scientific notation.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Reals(pub Vec<f64>);

/// A real number, or `sqrt(x)`.
pub fn real(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let v = match s.strip_prefix("sqrt(").and_then(|r| r.strip_suffix(')')) {
        Some(inner) => inner.trim().parse::<f64>().map(f64::sqrt),
        None => s.parse::<f64>(),
    }
    .map_err(|_| format!("cannot parse {s:?} as a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s:?} is not finite"))
    }
}

pub fn reals(s: &str) -> Result<Reals, String> {
    s.split(',').map(real).collect::<Result<_, _>>().map(Reals)
}

/// Non-negative integer, possibly written as `1e3`.
pub fn count(s: &str) -> Result<usize, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("cannot parse {s:?} as a count"))?;
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(format!("{s:?} is not a non-negative integer"))
    }
}

/// 64-bit seed; plain integers are parsed exactly.
pub fn seed(s: &str) -> Result<u64, String> {
    s.trim()
        .parse::<u64>()
        .or_else(|_| count(s).map(|v| v as u64))
        .map_err(|_| format!("cannot parse {s:?} as a seed"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers() {
        assert_eq!(real("1e-6").unwrap(), 1e-6);
        assert_eq!(real("sqrt(2)").unwrap(), 2f64.sqrt());
        assert!(real("nan").is_err());
        assert_eq!(reals("1, sqrt(4)").unwrap().0, vec![1.0, 2.0]);
        assert_eq!(count("1e3").unwrap(), 1000);
        assert!(count("2.5").is_err());
        assert!(count("-1").is_err());
        assert_eq!(seed("18446744073709551615").unwrap(), u64::MAX);
    }
}
