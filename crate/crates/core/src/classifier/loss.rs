use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Mean soft-target cross-entropy and its gradient `(softmax - target) / n`.
///
/// Each target row should sum to one.
pub fn softmax_ce_soft(logits: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    if logits.rows() != targets.rows() || logits.cols() != targets.cols() {
        return Err(Error::validation("logits and targets differ in shape"));
    }
    if let Some(pos) = logits.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite logit at row {}", pos / logits.cols().max(1))));
    }
    let n = logits.rows();
    let mut grad = Matrix::zeros(n, logits.cols());
    if n == 0 {
        return Ok((0.0, grad));
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        let s = logits.row(i);
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = s.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        let t = targets.row(i);
        let g = grad.row_mut(i);
        for ((gk, &sk), &tk) in g.iter_mut().zip(s).zip(t) {
            let log_p = sk - log_z;
            if tk != 0.0 {
                total -= tk * log_p;
            }
            *gk = (log_p.exp() - tk) * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

/// Mean cross-entropy against integer labels.
pub fn softmax_ce_loss(logits: &Matrix, labels: &[u32]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() {
        return Err(Error::validation(format!("{} labels for {} logit rows", labels.len(), logits.rows())));
    }
    let k = logits.cols();
    let mut targets = Matrix::zeros(labels.len(), k);
    for (i, &l) in labels.iter().enumerate() {
        if l as usize >= k {
            return Err(Error::validation(format!("label {l} at row {i} is outside [0, {k})")));
        }
        targets[(i, l as usize)] = 1.0;
    }
    softmax_ce_soft(logits, &targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Matrix::from_fn(3, 7, |_, _| 0.25);
        let (loss, _) = softmax_ce_loss(&logits, &[0, 3, 6]).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dominant_true_logit_drives_loss_to_zero() {
        let logits = Matrix::from_rows(&[[1e4, 0.0, -3.0]]).unwrap();
        let (loss, g) = softmax_ce_loss(&logits, &[0]).unwrap();
        assert!(loss < 1e-300 || loss == 0.0);
        assert!(g.as_slice().iter().all(|v| v.abs() < 1e-300));
    }

    #[test]
    fn errors() {
        let logits = Matrix::from_rows(&[[f64::NAN, 0.0]]).unwrap();
        assert!(matches!(softmax_ce_loss(&logits, &[0]), Err(Error::Numerical(_))));
        let logits = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        assert!(softmax_ce_loss(&logits, &[2]).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let logits = Matrix::from_fn(5, 4, |_, _| rng.random_range(-3.0..3.0));
        let labels = [0, 3, 1, 1, 2];
        let (_, g) = softmax_ce_loss(&logits, &labels).unwrap();
        let h = 1e-6;
        for idx in 0..20 {
            let mut p = logits.clone();
            p.as_mut_slice()[idx] += h;
            let mut m = logits.clone();
            m.as_mut_slice()[idx] -= h;
            let fd = (softmax_ce_loss(&p, &labels).unwrap().0 - softmax_ce_loss(&m, &labels).unwrap().0) / (2.0 * h);
            let a = g.as_slice()[idx];
            assert!((a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1e-2), "{idx}: {a} vs {fd}");
        }
    }
}
