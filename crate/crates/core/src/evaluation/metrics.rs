//! Confusion matrices, balanced accuracy and error maps.

use crate::error::{Error, Result};
use crate::types::LabelRaster;

/// `K × K` counts; rows are truth, columns are prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rasters(pred: &LabelRaster, truth: &LabelRaster) -> Result<Self> {
        check_shapes(pred, truth)?;
        let k = pred.num_classes().max(truth.num_classes());
        let mut m = Self::new(k);
        for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
            m.counts[t as usize * k + p as usize] += 1;
        }
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Recall of class `c`, or `None` if `c` never occurs in the truth.
    pub fn recall(&self, c: usize) -> Option<f64> {
        let row = &self.counts[c * self.k..(c + 1) * self.k];
        let n: u64 = row.iter().sum();
        (n > 0).then(|| row[c] as f64 / n as f64)
    }

    /// Mean recall over the classes present in the truth.
    pub fn balanced_accuracy(&self) -> Result<f64> {
        let recalls: Vec<f64> = (0..self.k).filter_map(|c| self.recall(c)).collect();
        if recalls.is_empty() {
            return Err(Error::Evaluation("truth raster is empty".into()));
        }
        Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
    }
}

fn check_shapes(pred: &LabelRaster, truth: &LabelRaster) -> Result<()> {
    if !pred.same_shape(truth) {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, truth is {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    Ok(())
}

pub fn balanced_accuracy(pred: &LabelRaster, truth: &LabelRaster) -> Result<f64> {
    ConfusionMatrix::from_rasters(pred, truth)?.balanced_accuracy()
}

/// Binary raster with 1 wherever the prediction is wrong.
pub fn error_map(pred: &LabelRaster, truth: &LabelRaster) -> Result<LabelRaster> {
    check_shapes(pred, truth)?;
    let errors = pred
        .labels()
        .iter()
        .zip(truth.labels())
        .map(|(p, t)| u8::from(p != t))
        .collect();
    LabelRaster::new(pred.width(), pred.height(), 2, errors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster(labels: &[u8], k: usize) -> LabelRaster {
        LabelRaster::new(labels.len(), 1, k, labels.to_vec()).unwrap()
    }

    #[test]
    fn perfect_and_constant() {
        let t = raster(&[0, 1, 0, 1], 2);
        assert_eq!(balanced_accuracy(&t, &t).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&raster(&[0; 4], 2), &t).unwrap(), 0.5);
    }

    #[test]
    fn mean_of_recalls() {
        // class 1 recall 8/10, class 0 recall 9/10
        let mut truth = vec![1u8; 10];
        truth.extend([0u8; 10]);
        let mut pred = vec![1u8; 8];
        pred.extend([0, 0]);
        pred.extend([0u8; 9]);
        pred.push(1);
        let ba = balanced_accuracy(&raster(&pred, 2), &raster(&truth, 2)).unwrap();
        assert!((ba - 0.85).abs() < 1e-12);
    }

    #[test]
    fn absent_classes_are_skipped() {
        let truth = raster(&[0, 0, 2, 2], 3);
        let pred = raster(&[0, 1, 2, 2], 3);
        assert!((balanced_accuracy(&pred, &truth).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn error_maps() {
        let a = raster(&[0, 1, 1, 0], 2);
        let b = raster(&[1, 0, 0, 1], 2);
        assert_eq!(error_map(&a, &a).unwrap().labels(), &[0, 0, 0, 0]);
        assert_eq!(error_map(&a, &b).unwrap().labels(), &[1, 1, 1, 1]);
        let c = raster(&[0, 1, 0, 0], 2);
        assert_eq!(error_map(&a, &c).unwrap().labels().iter().filter(|&&v| v == 1).count(), 1);
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(
            balanced_accuracy(&raster(&[0, 1], 2), &raster(&[0, 1, 1], 2)),
            Err(Error::Shape(_))
        ));
    }
}
