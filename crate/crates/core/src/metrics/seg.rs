use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{LabelGrid, Tensor};

/// One-vs-rest pixel counts for a single class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    pub dice: f64,
    pub jaccard: f64,
    pub precision: f64,
    pub recall: f64,
    pub counts: ConfusionCounts,
}

/// Per-pixel argmax over the class axis; ties resolve to the lowest class.
pub fn argmax_labels<T: Scalar>(logits: &Tensor<T>) -> LabelGrid {
    let [n, k, h, w] = logits.shape().dims();
    let plane = h * w;
    let xs = logits.data();
    let mut labels = vec![0; n * plane];
    for b in 0..n {
        for p in 0..plane {
            let mut best = 0;
            for c in 1..k {
                if xs[(b * k + c) * plane + p] > xs[(b * k + best) * plane + p] {
                    best = c;
                }
            }
            labels[b * plane + p] = best;
        }
    }
    LabelGrid::new(n, h, w, labels).expect("label count matches logits")
}

pub fn confusion_counts(pred: &LabelGrid, gt: &LabelGrid, k: usize) -> Result<Vec<ConfusionCounts>> {
    if (pred.n(), pred.h(), pred.w()) != (gt.n(), gt.h(), gt.w()) {
        return Err(Error::data(format!(
            "prediction {}x{}x{} and ground truth {}x{}x{} differ in shape",
            pred.n(),
            pred.h(),
            pred.w(),
            gt.n(),
            gt.h(),
            gt.w()
        )));
    }
    pred.check_range(k)?;
    gt.check_range(k)?;
    let mut counts = vec![ConfusionCounts::default(); k];
    let total = pred.labels().len() as u64;
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if p == g {
            counts[p].tp += 1;
        } else {
            counts[p].fp += 1;
            counts[g].fn_ += 1;
        }
    }
    for c in &mut counts {
        c.tn = total - c.tp - c.fp - c.fn_;
    }
    Ok(counts)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassMetrics {
    /// A class absent from both masks scores 1 everywhere; otherwise any
    /// metric with a zero denominator scores 0.
    pub fn from_counts(class: usize, c: ConfusionCounts) -> Self {
        let (dice, jaccard, precision, recall) = if c.tp + c.fp + c.fn_ == 0 {
            (1.0, 1.0, 1.0, 1.0)
        } else {
            (
                ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
                ratio(c.tp, c.tp + c.fp + c.fn_),
                ratio(c.tp, c.tp + c.fp),
                ratio(c.tp, c.tp + c.fn_),
            )
        };
        ClassMetrics {
            class,
            dice,
            jaccard,
            precision,
            recall,
            counts: c,
        }
    }
}

/// Dice, Jaccard, precision and recall for every class `0..k`.
pub fn segmentation_metrics(pred: &LabelGrid, gt: &LabelGrid, k: usize) -> Result<Vec<ClassMetrics>> {
    Ok(confusion_counts(pred, gt, k)?
        .into_iter()
        .enumerate()
        .map(|(class, c)| ClassMetrics::from_counts(class, c))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassSummary {
    pub class: usize,
    pub dice: f64,
    pub jaccard: f64,
    pub precision: f64,
    pub recall: f64,
    pub images: usize,
}

/// Mean of per-image metrics for each class, accumulated in image order.
pub fn mean_metrics(per_image: &[Vec<ClassMetrics>]) -> Vec<ClassSummary> {
    let k = per_image.first().map_or(0, Vec::len);
    (0..k)
        .map(|class| {
            let mut s = ClassSummary {
                class,
                dice: 0.0,
                jaccard: 0.0,
                precision: 0.0,
                recall: 0.0,
                images: 0,
            };
            for m in per_image.iter().filter_map(|img| img.get(class)) {
                s.dice += m.dice;
                s.jaccard += m.jaccard;
                s.precision += m.precision;
                s.recall += m.recall;
                s.images += 1;
            }
            if s.images > 0 {
                let n = s.images as f64;
                s.dice /= n;
                s.jaccard /= n;
                s.precision /= n;
                s.recall /= n;
            }
            s
        })
        .collect()
}
