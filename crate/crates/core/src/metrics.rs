//! Evaluation summaries: accuracy bookkeeping, #ODP, AUROC, smoothed curves.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Mean of end-of-task accuracies.
pub fn average_accuracy(per_task: &[f64]) -> Result<f64> {
    if per_task.is_empty() {
        return Err(Error::Empty("per-task accuracies"));
    }
    Ok(per_task.iter().sum::<f64>() / per_task.len() as f64)
}

/// Number of distinct samples sent to the labelling oracle. Re-labelling the
/// same id does not count twice.
pub fn count_odp<I: IntoIterator<Item = u64>>(labelled_ids: I) -> usize {
    labelled_ids.into_iter().collect::<HashSet<_>>().len()
}

/// Area under the ROC curve for separating `outliers` from `inliers`, as the
/// Mann-Whitney statistic with ties counted one half. With
/// `higher_is_outlier` false, lower scores are taken to indicate outliers.
pub fn auroc(inliers: &[f64], outliers: &[f64], higher_is_outlier: bool) -> Result<f64> {
    if inliers.is_empty() || outliers.is_empty() {
        return Err(Error::Empty("AUROC needs both inlier and outlier scores"));
    }
    if inliers.iter().chain(outliers).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("NaN score in AUROC input".into()));
    }
    let sign = if higher_is_outlier { 1.0 } else { -1.0 };
    // Rank-sum over the pooled sample with midranks for ties.
    let mut pooled: Vec<(f64, bool)> = inliers
        .iter()
        .map(|&v| (sign * v, false))
        .chain(outliers.iter().map(|&v| (sign * v, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * pooled[i..=j].iter().filter(|p| p.1).count() as f64;
        i = j + 1;
    }
    let (n_out, n_in) = (outliers.len() as f64, inliers.len() as f64);
    Ok((rank_sum - n_out * (n_out + 1.0) / 2.0) / (n_out * n_in))
}

/// Smoothing used for query-volume curves when none is given.
pub const DEFAULT_EMA_DECAY: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    Raw,
    Ema,
}

/// A named curve with strictly increasing x.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    name: String,
    points: Vec<(f64, f64)>,
    kind: SeriesKind,
}

impl MetricSeries {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Result<Self> {
        if points
            .windows(2)
            .any(|w| w[0].0.partial_cmp(&w[1].0) != Some(std::cmp::Ordering::Less))
        {
            return Err(Error::InvalidArgument(
                "series x values must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            points,
            kind: SeriesKind::Raw,
        })
    }

    /// Points at x = 0, 1, 2, ...
    pub fn from_values(name: impl Into<String>, values: &[f64]) -> Self {
        Self {
            name: name.into(),
            points: values
                .iter()
                .enumerate()
                .map(|(i, &y)| (i as f64, y))
                .collect(),
            kind: SeriesKind::Raw,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn kind(&self) -> SeriesKind {
        self.kind
    }

    pub fn ys(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }
}

/// `y'_k = decay * y_k + (1 - decay) * y'_{k-1}`, starting from `y'_0 = y_0`.
pub fn ema(series: &MetricSeries, decay: f64) -> Result<MetricSeries> {
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "EMA decay {decay} outside (0, 1]"
        )));
    }
    let mut prev: Option<f64> = None;
    let points = series
        .points
        .iter()
        .map(|&(x, y)| {
            let v = prev.map_or(y, |p| decay * y + (1.0 - decay) * p);
            prev = Some(v);
            (x, v)
        })
        .collect();
    Ok(MetricSeries {
        name: format!("{}_ema", series.name),
        points,
        kind: SeriesKind::Ema,
    })
}

/// Long-format CSV with columns `series,x,y`.
pub fn series_csv(series: &[MetricSeries]) -> String {
    let mut s = String::from("series,x,y\n");
    for m in series {
        for &(x, y) in &m.points {
            let _ = writeln!(s, "{},{},{}", m.name, fmt_num(x), fmt_num(y));
        }
    }
    s
}

/// Fixed six-decimal rendering so CSV output is byte-stable.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.6}")
    }
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_known_values() {
        assert_eq!(auroc(&[0.0, 1.0], &[2.0, 3.0], true).unwrap(), 1.0);
        assert_eq!(auroc(&[0.0, 1.0], &[2.0, 3.0], false).unwrap(), 0.0);
        assert_eq!(auroc(&[1.0], &[1.0], true).unwrap(), 0.5);
        assert_eq!(auroc(&[0.0, 2.0], &[1.0], true).unwrap(), 0.5);
        assert!(auroc(&[], &[1.0], true).is_err());
    }

    #[test]
    fn odp_counts_unique_ids() {
        assert_eq!(count_odp([3, 4, 3, 9]), 3);
        assert_eq!(count_odp(Vec::<u64>::new()), 0);
    }

    #[test]
    fn ema_and_average() {
        let m = MetricSeries::from_values("q", &[1.0, 3.0, 3.0]);
        assert_eq!(ema(&m, 0.5).unwrap().ys(), vec![1.0, 2.0, 2.5]);
        assert_eq!(ema(&m, 1.0).unwrap().ys(), m.ys());
        assert!(ema(&m, 0.0).is_err());
        assert_eq!(average_accuracy(&[0.5, 1.0]).unwrap(), 0.75);
        assert!(average_accuracy(&[]).is_err());
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 2f64.sqrt()));
    }

    #[test]
    fn csv_layout() {
        let m = MetricSeries::new("acc", vec![(0.0, 0.5), (2.0, 0.125)]).unwrap();
        assert!(MetricSeries::new("bad", vec![(1.0, 0.0), (1.0, 0.0)]).is_err());
        assert_eq!(
            series_csv(&[m]),
            "series,x,y\nacc,0,0.500000\nacc,2,0.125000\n"
        );
    }
}
