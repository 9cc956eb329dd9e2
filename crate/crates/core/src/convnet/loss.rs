//! Batch losses and their gradients at the logits. All losses are means
//! over the batch, evaluated in `f64`.

use crate::error::{Error, Result};
use crate::linalg::{softmax_row, Matrix, Real};

/// Mean cross-entropy of `softmax(logits)` against hard labels, and its
/// gradient with respect to the logits.
pub fn cross_entropy<T: Real>(logits: &Matrix<T>, labels: &[usize]) -> Result<(f64, Matrix<T>)> {
    let parts = distill_loss(logits, labels, None, 1.0, 1.0)?;
    Ok((parts.0.total, parts.1))
}

/// The two terms of the distillation objective for one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    /// Mean cross-entropy against hard labels (temperature 1).
    pub ce: f64,
    /// Mean `KL(teacher ∥ student)` at the configured temperature.
    pub kl: f64,
    /// `α·ce + (1−α)·kl`.
    pub total: f64,
}

/// `α·CE(student, labels) + (1−α)·KL(p_teacher ∥ p_student)`.
///
/// `teacher` holds one probability row per batch row (already softened by
/// the temperature). When it is `None` the KL term is skipped and reported
/// as 0; `alpha` must then be 1.
pub fn distill_loss<T: Real>(
    logits: &Matrix<T>,
    labels: &[usize],
    teacher: Option<&[Vec<f64>]>,
    alpha: f64,
    temperature: f64,
) -> Result<(LossParts, Matrix<T>)> {
    let (b, k) = (logits.rows, logits.cols);
    if labels.len() != b || b == 0 {
        return Err(Error::Shape(format!("{} labels for a batch of {b}", labels.len())));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must be in [0, 1], got {alpha}")));
    }
    if let Some(t) = teacher {
        if t.len() != b || t.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("teacher probabilities do not match the batch".into()));
        }
    } else if alpha != 1.0 {
        return Err(Error::Config("a soft-label term needs teacher probabilities".into()));
    }
    let inv_b = 1.0 / b as f64;
    let mut grad = Matrix::zeros(b, k);
    let (mut ce, mut kl) = (0.0, 0.0);
    for (i, row) in logits.rows_iter().enumerate() {
        let y = labels[i];
        if y >= k {
            return Err(Error::Validation(format!("label {y} out of range for {k} classes")));
        }
        let p = softmax_row(row, 1.0);
        ce -= log_softmax_at(row, y, 1.0);
        let mut g: Vec<f64> = p.iter().enumerate().map(|(j, &pj)| alpha * (pj - if j == y { 1.0 } else { 0.0 })).collect();
        if let Some(t) = teacher {
            let q = softmax_row(row, temperature);
            for (j, &pt) in t[i].iter().enumerate() {
                if pt > 0.0 {
                    kl += pt * (pt.ln() - log_softmax_at(row, j, temperature));
                }
                g[j] += (1.0 - alpha) * (q[j] - pt) / temperature;
            }
        }
        for (dst, gj) in grad.row_mut(i).iter_mut().zip(g) {
            *dst = T::from_f64_lossy(gj * inv_b);
        }
    }
    let (ce, kl) = (ce * inv_b, kl * inv_b);
    let total = if teacher.is_some() { alpha * ce + (1.0 - alpha) * kl } else { ce };
    Ok((LossParts { ce, kl, total }, grad))
}

fn log_softmax_at<T: Real>(row: &[T], j: usize, temperature: f64) -> f64 {
    let z: Vec<f64> = row.iter().map(|v| v.to_f64_lossy() / temperature).collect();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z[j] - lse
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits() -> Matrix<f64> {
        Matrix::from_vec(2, 3, vec![0.5, -1.0, 2.0, 0.0, 0.3, -0.7])
    }

    #[test]
    fn cross_entropy_by_hand() {
        let (l, g) = cross_entropy(&logits(), &[2, 0]).unwrap();
        let lse = |r: &[f64]| r.iter().map(|v| v.exp()).sum::<f64>().ln();
        let want = ((lse(&[0.5, -1.0, 2.0]) - 2.0) + (lse(&[0.0, 0.3, -0.7]) - 0.0)) / 2.0;
        assert!((l - want).abs() < 1e-12);
        for r in 0..2 {
            assert!(g.row(r).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let lg = logits();
        let teacher = vec![vec![0.2, 0.3, 0.5], vec![0.6, 0.0, 0.4]];
        let f = |m: &Matrix<f64>| distill_loss(m, &[1, 2], Some(&teacher), 0.3, 2.0).unwrap().0.total;
        let (_, g) = distill_loss(&lg, &[1, 2], Some(&teacher), 0.3, 2.0).unwrap();
        for i in 0..lg.data.len() {
            let mut a = lg.clone();
            let mut b = lg.clone();
            a.data[i] += 1e-6;
            b.data[i] -= 1e-6;
            let num = (f(&a) - f(&b)) / 2e-6;
            assert!((num - g.data[i]).abs() < 1e-7, "{i}: {num} vs {}", g.data[i]);
        }
    }

    #[test]
    fn alpha_one_is_plain_cross_entropy_and_kl_vanishes_on_self() {
        let lg = logits();
        let own: Vec<Vec<f64>> = lg.rows_iter().map(|r| softmax_row(r, 1.0)).collect();
        let (parts, _) = distill_loss(&lg, &[0, 1], Some(&own), 1.0, 1.0).unwrap();
        let (ce, _) = cross_entropy(&lg, &[0, 1]).unwrap();
        assert!((parts.total - ce).abs() < 1e-12);
        assert!(parts.kl.abs() < 1e-12);
    }

    #[test]
    fn bad_alpha_is_config_error() {
        assert!(matches!(distill_loss(&logits(), &[0, 0], None, 1.5, 1.0), Err(Error::Config(_))));
    }
}
