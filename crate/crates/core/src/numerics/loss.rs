//! Per-pixel softmax cross-entropy over a class axis.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn logit_dims(logits: &Tensor) -> Result<[usize; 3]> {
    match *logits.shape() {
        [l, w, k] if k >= 2 => Ok([l, w, k]),
        _ => Err(Error::shape("softmax_ce", format!("expected logits [l,w,K] with K >= 2, got {:?}", logits.shape()))),
    }
}

/// Softmax along the last axis of `[l,w,K]` logits.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let [_, _, k] = logit_dims(logits)?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(out)
}

/// Mean cross-entropy over pixels and its gradient `(softmax - onehot) / n`.
///
/// `labels` is row-major `[l,w]` with entries in `0..K`.
pub fn softmax_ce(logits: &Tensor, labels: &[u8]) -> Result<(f64, Tensor)> {
    let [l, w, k] = logit_dims(logits)?;
    if labels.len() != l * w {
        return Err(Error::shape("softmax_ce", format!("{} labels for a {l}x{w} map", labels.len())));
    }
    if let Some(p) = labels.iter().position(|&c| c as usize >= k) {
        return Err(Error::InvalidArgument(format!(
            "softmax_ce: label {} at pixel ({}, {}) is outside 0..{k}",
            labels[p],
            p / w,
            p % w
        )));
    }
    let n = (l * w) as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (row, &c) in grad.data_mut().chunks_exact_mut(k).zip(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let lse = m + z.ln();
        loss += lse - row[c as usize];
        for v in row.iter_mut() {
            *v = (*v - lse).exp() / n;
        }
        row[c as usize] -= 1.0 / n;
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln2() {
        let (loss, grad) = softmax_ce(&Tensor::zeros(&[3, 2, 2]), &[0, 1, 1, 0, 0, 1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((grad.data()[0] + 0.5 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_logits_give_near_zero_loss() {
        let logits = Tensor::from_vec(&[1, 1, 3], vec![60.0, 0.0, -5.0]).unwrap();
        let (loss, _) = softmax_ce(&logits, &[0]).unwrap();
        assert!(loss >= 0.0 && loss < 1e-20);
    }

    #[test]
    fn out_of_range_label_reports_pixel() {
        let err = softmax_ce(&Tensor::zeros(&[2, 3, 2]), &[0, 0, 0, 0, 2, 0]).unwrap_err().to_string();
        assert!(err.contains("(1, 1)"), "{err}");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&Tensor::from_vec(&[1, 2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 700.0]).unwrap()).unwrap();
        for row in p.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
