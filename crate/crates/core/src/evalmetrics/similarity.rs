use crate::error::{Error, Result};
use crate::tensor::Tensor;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Min-max normalization to `[0, 1]`; a constant map becomes all zeros.
fn normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        v.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; v.len()]
    }
}

fn gaussian_window() -> Vec<f64> {
    let r = (WINDOW / 2) as f64;
    let g: Vec<f64> = (0..WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let mut w = Vec::with_capacity(WINDOW * WINDOW);
    for a in &g {
        for b in &g {
            w.push(a * b);
        }
    }
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// SSIM over one weighted window; `idx[k]` indexes both maps.
fn window_ssim(a: &[f64], b: &[f64], idx: impl Iterator<Item = (usize, f64)> + Clone) -> f64 {
    let (mut ma, mut mb) = (0.0, 0.0);
    for (i, w) in idx.clone() {
        ma += w * a[i];
        mb += w * b[i];
    }
    let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
    for (i, w) in idx {
        let (da, db) = (a[i] - ma, b[i] - mb);
        vaa += w * da * da;
        vbb += w * db * db;
        vab += w * (da * db);
    }
    ((2.0 * (ma * mb) + C1) * (2.0 * vab + C2)) / ((ma * ma + mb * mb + C1) * (vaa + vbb + C2))
}

/// Mean local SSIM with an 11x11 Gaussian window (std 1.5) over all valid
/// window positions, on maps min-max normalized to `[0, 1]`. Maps that are
/// not 2-D or are smaller than the window use one uniform global window.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "ssim of maps with shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::invalid("ssim of a non-finite map"));
    }
    let (na, nb) = (normalize(a.data()), normalize(b.data()));
    match *a.shape() {
        [h, w] if h >= WINDOW && w >= WINDOW => {
            let win = gaussian_window();
            let mut total = 0.0;
            let mut count = 0usize;
            for y in 0..=h - WINDOW {
                for x in 0..=w - WINDOW {
                    let idx = (0..WINDOW * WINDOW).map(|k| ((y + k / WINDOW) * w + x + k % WINDOW, win[k]));
                    total += window_ssim(&na, &nb, idx);
                    count += 1;
                }
            }
            Ok(total / count as f64)
        }
        _ => {
            let n = na.len();
            let w = 1.0 / n as f64;
            Ok(window_ssim(&na, &nb, (0..n).map(|i| (i, w))))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_map(seed: u64) -> Tensor {
        let mut r = rng::rng_from_seed(seed);
        Tensor::new(vec![32, 32], (0..1024).map(|_| r.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn identical_and_offset_maps() {
        let a = random_map(1);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let shifted = a.map(|v| v + 1e-6);
        assert!((ssim(&a, &shifted).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn independent_random_maps_are_dissimilar() {
        let s = ssim(&random_map(1), &random_map(2)).unwrap();
        assert!(s < 0.5, "{s}");
    }

    #[test]
    fn small_maps_use_a_global_window() {
        let a = Tensor::new(vec![2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&a, &b).unwrap() < 0.0);
        assert!(ssim(&a, &Tensor::zeros(&[4])).is_err());
    }

    #[test]
    fn symmetric() {
        let (a, b) = (random_map(3), random_map(4));
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    }
}
