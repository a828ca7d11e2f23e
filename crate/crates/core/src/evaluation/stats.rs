//! Boxplot statistics.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BoxplotStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Most extreme data points within 1.5 IQR of the box.
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    pub outliers: Vec<f64>,
}

/// Quantile of sorted data with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize_distribution(values: &[f64]) -> Result<BoxplotStats> {
    if values.is_empty() {
        return Err(Error::Evaluation("cannot summarize an empty list".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Evaluation("values contain NaN".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = sorted.iter().copied().filter(|v| (lo..=hi).contains(v));
    let lower_whisker = inside.clone().fold(f64::INFINITY, f64::min);
    let upper_whisker = inside.fold(f64::NEG_INFINITY, f64::max);
    Ok(BoxplotStats {
        median: quantile(&sorted, 0.5),
        q1,
        q3,
        lower_whisker,
        upper_whisker,
        outliers: sorted.iter().copied().filter(|v| !(lo..=hi).contains(v)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_quartiles() {
        let s = summarize_distribution(&[5.0, 1.0, 4.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.median, s.q1, s.q3), (3.0, 2.0, 4.0));
        assert!(s.outliers.is_empty());
    }

    #[test]
    fn constant_list() {
        let s = summarize_distribution(&[0.7; 6]).unwrap();
        assert_eq!(s.q3 - s.q1, 0.0);
        assert!(s.outliers.is_empty());
    }

    #[test]
    fn outlier() {
        let s = summarize_distribution(&[1.0, 1.0, 1.0, 1.0, 100.0]).unwrap();
        assert_eq!(s.outliers, vec![100.0]);
        assert_eq!(s.upper_whisker, 1.0);
    }

    #[test]
    fn empty() {
        assert!(summarize_distribution(&[]).is_err());
    }
}
