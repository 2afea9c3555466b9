use crate::error::{Error, Result};
use crate::saliency::fraction_count;

/// Flat indices of the `ceil(k_fraction * m)` largest `|values|` among the
/// `m` nonzero entries; ties go to the lowest index.
pub fn topk_mask(values: &[f64], k_fraction: f64) -> Result<Vec<usize>> {
    if !(k_fraction > 0.0 && k_fraction <= 1.0) {
        return Err(Error::invalid(format!("k fraction must be in (0, 1], got {k_fraction}")));
    }
    let mut nz: Vec<usize> = (0..values.len()).filter(|&i| values[i] != 0.0).collect();
    if nz.is_empty() {
        return Err(Error::invalid("map has no nonzero attributions"));
    }
    let k = fraction_count(k_fraction, nz.len()).max(1);
    nz.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    nz.truncate(k);
    nz.sort_unstable();
    Ok(nz)
}

fn masks(a: &[f64], b: &[f64], k: f64) -> Result<(Vec<usize>, Vec<usize>, usize)> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("maps of length {} and {}", a.len(), b.len())));
    }
    let ta = topk_mask(a, k)?;
    let tb = topk_mask(b, k)?;
    let common = ta.iter().filter(|i| tb.binary_search(i).is_ok()).count();
    Ok((ta, tb, common))
}

/// `|T_A ∩ T_B| / |T_A|` over the top-k masks of both maps.
pub fn topk_intersection(a: &[f64], b: &[f64], k_fraction: f64) -> Result<f64> {
    let (ta, _, common) = masks(a, b, k_fraction)?;
    Ok(common as f64 / ta.len() as f64)
}

/// Dice score `2|T_A ∩ T_B| / (|T_A| + |T_B|)` of the top-k masks.
pub fn topk_dice(a: &[f64], b: &[f64], k_fraction: f64) -> Result<f64> {
    let (ta, tb, common) = masks(a, b, k_fraction)?;
    Ok(2.0 * common as f64 / (ta.len() + tb.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        let a = [4.0, 3.0, 2.0, 1.0];
        let b = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(topk_intersection(&a, &a, 0.5).unwrap(), 1.0);
        assert_eq!(topk_intersection(&a, &b, 0.5).unwrap(), 0.0);
        assert_eq!(topk_dice(&a, &a, 0.3).unwrap(), 1.0);
        assert_eq!(topk_dice(&a, &b, 0.5).unwrap(), 0.0);
        let c = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(topk_dice(&a, &c, 0.5).unwrap(), 0.5);
        assert!(topk_intersection(&[0.0; 3], &a[..3], 0.5).is_err());
    }

    #[test]
    fn only_nonzero_pixels_count() {
        let a = [5.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(topk_mask(&a, 0.5).unwrap(), vec![0]);
        assert_eq!(topk_mask(&a, 1.0).unwrap(), vec![0, 4]);
        assert_eq!(topk_mask(&[-3.0, 2.0], 0.5).unwrap(), vec![0]);
    }
}
