//! Loss and segmentation metrics.

use std::fmt::Write as _;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Mean softmax cross-entropy over the non-ignored points of a batch, and
/// its gradient with respect to the logits.
pub fn cross_entropy(logits: &[Array2<f64>], labels: &[&[u32]], ignore: Option<u32>) -> Result<(f64, Vec<Array2<f64>>)> {
    if logits.len() != labels.len() {
        return Err(Error::shape("label batch", logits.len(), labels.len()));
    }
    let mut count = 0usize;
    for (z, y) in logits.iter().zip(labels) {
        if z.nrows() != y.len() {
            return Err(Error::shape("labels per item", z.nrows(), y.len()));
        }
        for &l in y.iter() {
            if Some(l) == ignore {
                continue;
            }
            if l as usize >= z.ncols() {
                return Err(Error::LabelRange {
                    label: l,
                    n_classes: z.ncols(),
                });
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::AllIgnored);
    }
    let scale = 1.0 / count as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, y) in logits.iter().zip(labels) {
        let mut g = Array2::zeros(z.dim());
        for (i, row) in z.rows().into_iter().enumerate() {
            if Some(y[i]) == ignore {
                continue;
            }
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            let log_sum = max + sum.ln();
            loss += log_sum - row[y[i] as usize];
            for (c, &v) in row.iter().enumerate() {
                g[[i, c]] = (v - log_sum).exp() * scale;
            }
            g[[i, y[i] as usize]] -= scale;
        }
        grads.push(g);
    }
    Ok((loss * scale, grads))
}

/// Accumulated confusion counts for IoU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    pub n_classes: usize,
    pub ignore: Option<u32>,
    /// `matrix[truth][pred]`
    pub matrix: Vec<Vec<u64>>,
}

impl Confusion {
    pub fn new(n_classes: usize, ignore: Option<u32>) -> Self {
        Confusion {
            n_classes,
            ignore,
            matrix: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn add(&mut self, predictions: &[u32], labels: &[u32]) -> Result<()> {
        if predictions.len() != labels.len() {
            return Err(Error::shape("predictions", labels.len(), predictions.len()));
        }
        for (&p, &t) in predictions.iter().zip(labels) {
            if Some(t) == self.ignore {
                continue;
            }
            for v in [p, t] {
                if v as usize >= self.n_classes {
                    return Err(Error::LabelRange {
                        label: v,
                        n_classes: self.n_classes,
                    });
                }
            }
            self.matrix[t as usize][p as usize] += 1;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.matrix.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.n_classes).map(|c| self.matrix[c][c]).sum();
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        }
    }

    /// Per-class IoU; `None` for classes absent from the ground truth.
    pub fn iou(&self) -> Vec<Option<f64>> {
        (0..self.n_classes)
            .map(|c| {
                let tp = self.matrix[c][c];
                let fn_: u64 = self.matrix[c].iter().sum::<u64>() - tp;
                let fp: u64 = (0..self.n_classes).map(|t| self.matrix[t][c]).sum::<u64>() - tp;
                (tp + fn_ > 0).then(|| tp as f64 / (tp + fp + fn_) as f64)
            })
            .collect()
    }

    /// Mean IoU over classes present in the ground truth.
    pub fn miou(&self) -> f64 {
        let present: Vec<f64> = self.iou().into_iter().flatten().collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }

    /// `class,iou` rows followed by `mean`.
    pub fn csv(&self) -> String {
        let mut s = String::from("class,iou\n");
        for (c, iou) in self.iou().into_iter().enumerate() {
            match iou {
                Some(v) => writeln!(s, "{c},{v:.6}").unwrap(),
                None => writeln!(s, "{c},").unwrap(),
            }
        }
        writeln!(s, "mean,{:.6}", self.miou()).unwrap();
        s
    }
}

/// Per-class IoU and mean IoU of one prediction set.
pub fn evaluate_miou(predictions: &[u32], labels: &[u32], n_classes: usize, ignore: Option<u32>) -> Result<(Vec<Option<f64>>, f64)> {
    let mut conf = Confusion::new(n_classes, ignore);
    conf.add(predictions, labels)?;
    Ok((conf.iou(), conf.miou()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        let z = Array2::zeros((5, 4));
        let (loss, _) = cross_entropy(&[z], &[&[0, 1, 2, 3, 0]], None).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn all_ignored_is_an_error() {
        let z = Array2::zeros((2, 3));
        assert!(matches!(cross_entropy(&[z], &[&[7, 7]], Some(7)), Err(Error::AllIgnored)));
    }

    #[test]
    fn absent_class_excluded() {
        let (iou, miou) = evaluate_miou(&[0, 1, 1], &[0, 1, 1], 3, None).unwrap();
        assert_eq!(iou, vec![Some(1.0), Some(1.0), None]);
        assert_eq!(miou, 1.0);
    }
}
