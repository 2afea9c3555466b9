use crate::error::{Error, Result};

/// Hurley-Rickard Gini index of `|values|`, in `[0, 1 - 1/d]`.
pub fn gini(values: &[f64]) -> Result<f64> {
    let mut c: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("gini of a non-finite map"));
    }
    let total: f64 = c.iter().sum();
    if total == 0.0 {
        return Err(Error::invalid("gini is undefined for an all-zero map"));
    }
    c.sort_by(f64::total_cmp);
    let d = c.len() as f64;
    let s: f64 = c
        .iter()
        .enumerate()
        .map(|(i, v)| (v / total) * ((d - (i + 1) as f64 + 0.5) / d))
        .sum();
    Ok(1.0 - 2.0 * s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!(gini(&[2.0; 5]).unwrap().abs() < 1e-15);
        assert!((gini(&[0.0, 0.0, 0.0, 1.0]).unwrap() - 0.75).abs() < 1e-15);
        assert!((gini(&[0.0, 0.0, 1.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((gini(&[0.0, -3.0, 0.0, 0.0]).unwrap() - 0.75).abs() < 1e-15);
        assert!(gini(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn concentrating_mass_increases_gini() {
        assert!(gini(&[2.0, 0.0]).unwrap() > gini(&[1.0, 1.0]).unwrap());
        assert!(gini(&[3.0, 1.0, 0.0]).unwrap() > gini(&[2.0, 1.0, 1.0]).unwrap());
    }
}
