use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BACKGROUND: u8 = 0;
pub const LOCALIZATION: u8 = 1;
pub const DISTINGUISHING: u8 = 2;

/// Per-pixel ground-truth labels: background, localization or distinguishing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TernaryMask {
    shape: Vec<usize>,
    labels: Vec<u8>,
}

impl TernaryMask {
    pub fn new(shape: Vec<usize>, labels: Vec<u8>) -> Result<Self> {
        if shape.iter().product::<usize>() != labels.len() {
            return Err(Error::Shape(format!("mask shape {shape:?} vs {} labels", labels.len())));
        }
        if let Some(l) = labels.iter().find(|&&l| l > DISTINGUISHING) {
            return Err(Error::invalid(format!("mask label {l} is not 0, 1 or 2")));
        }
        Ok(Self { shape, labels })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let labels = t
            .data()
            .iter()
            .map(|&v| match v {
                v if v == 0.0 => Ok(BACKGROUND),
                v if v == 1.0 => Ok(LOCALIZATION),
                v if v == 2.0 => Ok(DISTINGUISHING),
                _ => Err(Error::invalid(format!("mask value {v} is not 0, 1 or 2"))),
            })
            .collect::<Result<_>>()?;
        Self::new(t.shape().to_vec(), labels)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.shape.clone(), self.labels.iter().map(|&l| f64::from(l)).collect())
            .expect("validated shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Fractions of distinguishing and localization pixels: the default
/// `(q2, q1)` quantiles for [`five_band_scores`].
pub fn area_fractions(mask: &TernaryMask) -> (f64, f64) {
    let d = mask.labels().len() as f64;
    (
        mask.count(DISTINGUISHING) as f64 / d,
        mask.count(LOCALIZATION) as f64 / d,
    )
}

/// Scores in percent. Recall is averaged over classes present in the truth,
/// precision over classes present in the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct BandScores {
    pub pixel_acc: f64,
    pub recall: f64,
    pub precision: f64,
    pub fpr: f64,
    /// Per class; `None` where the class is absent from the truth.
    pub class_recall: Vec<Option<f64>>,
    /// Per class; `None` where the class is never predicted.
    pub class_precision: Vec<Option<f64>>,
}

fn ranked(map: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..map.len()).collect();
    idx.sort_by(|&a, &b| map[b].abs().total_cmp(&map[a].abs()).then(a.cmp(&b)));
    idx
}

fn check(map: &[f64], mask: &TernaryMask, q: &[f64]) -> Result<()> {
    if map.len() != mask.labels().len() {
        return Err(Error::Shape(format!(
            "map has {} pixels, mask has {}",
            map.len(),
            mask.labels().len()
        )));
    }
    if q.iter().any(|&v| !(0.0..=1.0).contains(&v)) || q.iter().sum::<f64>() > 1.0 + 1e-12 {
        return Err(Error::invalid("quantile fractions must lie in [0, 1] and sum to <= 1"));
    }
    Ok(())
}

fn count_of(fraction: f64, d: usize) -> usize {
    ((fraction * d as f64).round() as usize).min(d)
}

fn score(truth: &[u8], pred: &[u8], classes: u8, positive_from: u8) -> BandScores {
    let d = truth.len() as f64;
    let correct = truth.iter().zip(pred).filter(|(t, p)| t == p).count() as f64;
    let mut class_recall = Vec::new();
    let mut class_precision = Vec::new();
    for c in 0..classes {
        let tp = truth.iter().zip(pred).filter(|(&t, &p)| t == c && p == c).count() as f64;
        let t = truth.iter().filter(|&&t| t == c).count() as f64;
        let p = pred.iter().filter(|&&p| p == c).count() as f64;
        class_recall.push((t > 0.0).then(|| 100.0 * tp / t));
        class_precision.push((p > 0.0).then(|| 100.0 * tp / p));
    }
    let avg = |v: &[Option<f64>]| {
        let defined: Vec<f64> = v.iter().flatten().copied().collect();
        if defined.is_empty() {
            0.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        }
    };
    let negatives = truth.iter().filter(|&&t| t < positive_from).count() as f64;
    let false_pos = truth
        .iter()
        .zip(pred)
        .filter(|(&t, &p)| t < positive_from && p >= positive_from)
        .count() as f64;
    BandScores {
        pixel_acc: 100.0 * correct / d,
        recall: avg(&class_recall),
        precision: avg(&class_precision),
        fpr: if negatives > 0.0 { 100.0 * false_pos / negatives } else { 0.0 },
        class_recall,
        class_precision,
    }
}

/// Ternary scores: the top `round(q2 d)` pixels by `|map|` are predicted
/// distinguishing, the next `round(q1 d)` localization, the rest background.
/// Scores are macro-averaged over the three classes; FPR is the share of
/// true background predicted as non-background.
pub fn five_band_scores(map: &[f64], mask: &TernaryMask, q2: f64, q1: f64) -> Result<BandScores> {
    check(map, mask, &[q2, q1])?;
    let d = map.len();
    let n2 = count_of(q2, d);
    let n1 = count_of(q1, d).min(d - n2);
    let mut pred = vec![BACKGROUND; d];
    for (rank, i) in ranked(map).into_iter().enumerate() {
        if rank < n2 {
            pred[i] = DISTINGUISHING;
        } else if rank < n2 + n1 {
            pred[i] = LOCALIZATION;
        }
    }
    Ok(score(mask.labels(), &pred, 3, LOCALIZATION))
}

/// Binary scores with distinguishing pixels as positives and the top
/// `round(q d)` pixels predicted positive. Recall and precision refer to the
/// positive class; an empty positive prediction has precision 0.
pub fn binary_scores(map: &[f64], mask: &TernaryMask, q: f64) -> Result<BandScores> {
    check(map, mask, &[q])?;
    let d = map.len();
    let n = count_of(q, d);
    let truth: Vec<u8> = mask.labels().iter().map(|&l| u8::from(l == DISTINGUISHING)).collect();
    let mut pred = vec![0u8; d];
    for &i in ranked(map).iter().take(n) {
        pred[i] = 1;
    }
    let mut s = score(&truth, &pred, 2, 1);
    s.recall = s.class_recall[1].unwrap_or(0.0);
    s.precision = s.class_precision[1].unwrap_or(0.0);
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(labels: Vec<u8>) -> TernaryMask {
        TernaryMask::new(vec![labels.len()], labels).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let m = mask(vec![2, 1, 1, 0, 0, 0]);
        let map = [9.0, 5.0, 4.0, 1.0, 0.5, 0.0];
        let (q2, q1) = area_fractions(&m);
        let s = five_band_scores(&map, &m, q2, q1).unwrap();
        assert_eq!((s.pixel_acc, s.recall, s.precision, s.fpr), (100.0, 100.0, 100.0, 0.0));
        let b = binary_scores(&map, &m, q2).unwrap();
        assert_eq!((b.pixel_acc, b.recall, b.precision, b.fpr), (100.0, 100.0, 100.0, 0.0));
    }

    #[test]
    fn all_background_prediction() {
        let m = mask(vec![2, 1, 0, 0]);
        let s = five_band_scores(&[1.0; 4], &m, 0.0, 0.0).unwrap();
        assert_eq!(s.class_recall[1], Some(0.0));
        assert_eq!(s.class_recall[2], Some(0.0));
        assert_eq!(s.fpr, 0.0);
        let b = binary_scores(&[1.0; 4], &m, 0.0).unwrap();
        assert_eq!(b.recall, 0.0);
    }

    #[test]
    fn two_by_two_hand_case() {
        let m = TernaryMask::new(vec![2, 2], vec![2, 0, 0, 0]).unwrap();
        let s = five_band_scores(&[9.0, 1.0, 1.0, 1.0], &m, 0.25, 0.0).unwrap();
        assert_eq!(s.pixel_acc, 100.0);
    }

    #[test]
    fn inverted_map_has_zero_precision() {
        let m = mask(vec![2, 0]);
        let b = binary_scores(&[0.0, 1.0], &m, 0.5).unwrap();
        assert_eq!((b.pixel_acc, b.recall, b.precision, b.fpr), (0.0, 0.0, 0.0, 100.0));
    }

    #[test]
    fn mask_validation() {
        assert!(TernaryMask::new(vec![2], vec![0, 3]).is_err());
        assert!(TernaryMask::new(vec![3], vec![0, 1]).is_err());
        let t = Tensor::vector(vec![0.0, 2.0, 1.0]);
        assert_eq!(TernaryMask::from_tensor(&t).unwrap().to_tensor(), t);
        assert!(TernaryMask::from_tensor(&Tensor::vector(vec![0.5])).is_err());
        assert!(five_band_scores(&[1.0], &mask(vec![0]), 0.7, 0.7).is_err());
    }
}
