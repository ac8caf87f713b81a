//! Unit-weight sign kernel classifier: `y_i = sgn(Σ_k Y_k K(x_i, X_k))`.
//!
//! Labels are `±1`. A zero score predicts `+1`.

use crate::linalg::Mat;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct LabeledKernel {
    /// `m × n` cross kernel: eval points by rows, training points by columns.
    pub k_eval: Mat,
    /// Training labels in `{-1, +1}`, length `n`.
    pub train_labels: Vec<i8>,
}

impl LabeledKernel {
    pub fn new(k_eval: Mat, train_labels: Vec<i8>) -> Result<Self> {
        if k_eval.cols() != train_labels.len() {
            return Err(Error::shape(format!(
                "kernel has {} training columns, {} labels given",
                k_eval.cols(),
                train_labels.len()
            )));
        }
        check_signs(&train_labels)?;
        Ok(Self { k_eval, train_labels })
    }
}

fn check_signs(labels: &[i8]) -> Result<()> {
    match labels.iter().find(|&&y| y != 1 && y != -1) {
        Some(&bad) => Err(Error::InvalidLabel(bad as f64)),
        None => Ok(()),
    }
}

/// Maps `{0, 1}` labels to `{-1, +1}`.
pub fn signed_labels(labels: &[u8]) -> Result<Vec<i8>> {
    labels
        .iter()
        .map(|&y| match y {
            0 => Ok(-1),
            1 => Ok(1),
            other => Err(Error::InvalidLabel(other as f64)),
        })
        .collect()
}

/// Raw scores `Σ_k Y_k K[i, k]`.
pub fn kernel_scores(lk: &LabeledKernel) -> Result<Vec<f64>> {
    let k = &lk.k_eval;
    if k.cols() != lk.train_labels.len() {
        return Err(Error::shape("kernel columns and labels differ"));
    }
    let mut scores = vec![0.0; k.rows()];
    for (col, &y) in lk.train_labels.iter().enumerate() {
        let y = y as f64;
        for (s, &v) in scores.iter_mut().zip(k.col(col)) {
            *s += y * v;
        }
    }
    Ok(scores)
}

pub fn kernel_predict(lk: &LabeledKernel) -> Result<Vec<i8>> {
    Ok(kernel_scores(lk)?
        .into_iter()
        .map(|s| if s >= 0.0 { 1 } else { -1 })
        .collect())
}

/// Fraction of eval points whose predicted sign matches `true_labels`.
pub fn kernel_accuracy(lk: &LabeledKernel, true_labels: &[i8]) -> Result<f64> {
    if true_labels.len() != lk.k_eval.rows() {
        return Err(Error::shape(format!(
            "{} eval rows, {} true labels",
            lk.k_eval.rows(),
            true_labels.len()
        )));
    }
    check_signs(true_labels)?;
    let pred = kernel_predict(lk)?;
    let hits = pred.iter().zip(true_labels).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / true_labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lk(rows: &[[f64; 2]], labels: [i8; 2]) -> LabeledKernel {
        LabeledKernel::new(Mat::from_rows(rows).unwrap(), labels.to_vec()).unwrap()
    }

    #[test]
    fn two_point_kernel() {
        let k = lk(&[[2.0, 1.0], [1.0, 2.0]], [1, -1]);
        assert_eq!(kernel_predict(&k).unwrap(), vec![1, -1]);
        assert_eq!(kernel_accuracy(&k, &[1, -1]).unwrap(), 1.0);
        assert_eq!(kernel_accuracy(&k, &[-1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn ties_predict_positive() {
        let k = lk(&[[1.0, 1.0], [1.0, 1.0]], [1, -1]);
        assert_eq!(kernel_predict(&k).unwrap(), vec![1, 1]);
    }

    #[test]
    fn validation() {
        assert!(LabeledKernel::new(Mat::ones(2, 2), vec![1]).is_err());
        assert!(matches!(LabeledKernel::new(Mat::ones(2, 2), vec![1, 0]), Err(Error::InvalidLabel(_))));
        let k = lk(&[[1.0, 0.0], [0.0, 1.0]], [1, -1]);
        assert!(kernel_accuracy(&k, &[1]).is_err());
        assert_eq!(signed_labels(&[0, 1, 1]).unwrap(), vec![-1, 1, 1]);
        assert!(signed_labels(&[2]).is_err());
    }
}
