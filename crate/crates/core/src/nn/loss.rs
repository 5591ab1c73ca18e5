use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-wise softmax in f64.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<Vec<f64>> {
    let k = logits.row_len();
    (0..logits.rows())
        .map(|i| {
            let row = &logits.data()[i * k..(i + 1) * k];
            let max = row
                .iter()
                .map(|v| v.as_f64())
                .fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect()
        })
        .collect()
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[usize],
) -> Result<(f64, Tensor<T>)> {
    let n = logits.rows();
    let k = logits.row_len();
    if targets.len() != n {
        return Err(Error::Shape(format!(
            "{} targets for {n} rows",
            targets.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::InvalidArgument(format!(
            "target {t} outside {k} outputs"
        )));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * k);
    for (i, (p, &t)) in softmax_rows(logits).into_iter().zip(targets).enumerate() {
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row
            .iter()
            .map(|v| v.as_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + row
                .iter()
                .map(|v| (v.as_f64() - max).exp())
                .sum::<f64>()
                .ln();
        loss += lse - row[t].as_f64();
        for (j, pj) in p.into_iter().enumerate() {
            let onehot = if j == t { 1.0 } else { 0.0 };
            grad.push(T::of((pj - onehot) / n as f64));
        }
    }
    Ok((loss / n as f64, Tensor::new(vec![n, k], grad)?))
}
