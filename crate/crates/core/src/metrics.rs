//! Pixel accuracy and IoU from a streaming confusion matrix.

use std::fmt;

use crate::error::{Error, Result};

/// `K x K` counts, rows are ground truth and columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one labelled image. Pixels whose ground truth equals `ignore` are skipped.
    pub fn update(&mut self, gt: &[u16], pred: &[u16], ignore: Option<u16>) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::shape(
                "confusion_update",
                format!("{} labels vs {} predictions", gt.len(), pred.len()),
            ));
        }
        let k = self.num_classes;
        for (&g, &p) in gt.iter().zip(pred) {
            if Some(g) == ignore {
                continue;
            }
            for label in [g, p] {
                if label as usize >= k {
                    return Err(Error::LabelOutOfRange { label, num_classes: k });
                }
            }
            self.counts[g as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::shape(
                "confusion_merge",
                format!("{} vs {} classes", self.num_classes, other.num_classes),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn metrics(&self) -> Metrics {
        Metrics::from_confusion(self.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub pix_acc: f64,
    /// `None` for classes absent from both ground truth and prediction.
    pub per_class_iou: Vec<Option<f64>>,
    pub mean_iou: f64,
    pub confusion: ConfusionMatrix,
}

impl Metrics {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        let k = confusion.num_classes();
        let total = confusion.total();
        let trace: u64 = (0..k).map(|c| confusion.get(c, c)).sum();
        let per_class_iou: Vec<Option<f64>> = (0..k)
            .map(|c| {
                let tp = confusion.get(c, c);
                let row: u64 = (0..k).map(|p| confusion.get(c, p)).sum();
                let col: u64 = (0..k).map(|g| confusion.get(g, c)).sum();
                let union = row + col - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect();
        let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
        Self {
            pix_acc: if total == 0 { 0.0 } else { trace as f64 / total as f64 },
            mean_iou: if present.is_empty() {
                0.0
            } else {
                present.iter().sum::<f64>() / present.len() as f64
            },
            per_class_iou,
            confusion,
        }
    }
}

/// `pixAcc / mIoU` in percent with one decimal, e.g. `74.7 / 28.9`.
impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1} / {:.1}", 100.0 * self.pix_acc, 100.0 * self.mean_iou)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let mut cm = ConfusionMatrix::new(3);
        let gt = [0, 1, 2, 2, 1];
        cm.update(&gt, &gt, None).unwrap();
        let m = cm.metrics();
        assert_eq!(m.pix_acc, 1.0);
        assert_eq!(m.mean_iou, 1.0);
    }

    #[test]
    fn two_by_two_hand_case() {
        let mut cm = ConfusionMatrix::new(2);
        cm.update(&[0, 0, 1, 1], &[0, 1, 1, 1], None).unwrap();
        let m = cm.metrics();
        assert_eq!(m.pix_acc, 0.75);
        assert_eq!(m.per_class_iou, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((m.mean_iou - 0.583_333_333).abs() < 1e-8);
        assert_eq!(m.to_string(), "75.0 / 58.3");
    }

    #[test]
    fn absent_classes_are_excluded() {
        let mut cm = ConfusionMatrix::new(4);
        cm.update(&[0, 0, 1], &[0, 0, 1], None).unwrap();
        let m = cm.metrics();
        assert_eq!(m.per_class_iou[2], None);
        assert_eq!(m.mean_iou, 1.0);
    }

    #[test]
    fn ignore_and_range_checks() {
        let mut cm = ConfusionMatrix::new(2);
        cm.update(&[255, 0], &[1, 0], Some(255)).unwrap();
        assert_eq!(cm.total(), 1);
        assert!(matches!(
            cm.update(&[2], &[0], None),
            Err(Error::LabelOutOfRange { label: 2, .. })
        ));
        assert!(cm.update(&[0, 1], &[0], None).is_err());
    }

    #[test]
    fn merge_is_addition() {
        let mut a = ConfusionMatrix::new(2);
        a.update(&[0, 1], &[1, 1], None).unwrap();
        let mut b = ConfusionMatrix::new(2);
        b.update(&[0, 0], &[0, 1], None).unwrap();
        let mut both = ConfusionMatrix::new(2);
        both.update(&[0, 1, 0, 0], &[1, 1, 0, 1], None).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a, both);
    }
}
