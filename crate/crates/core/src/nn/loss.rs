//! Softmax cross-entropy over one-hot targets.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Loss value plus everything backpropagation and reporting need.
pub struct LossResult<T: Scalar> {
    /// Mean cross-entropy over the batch.
    pub loss: T,
    /// Row-wise softmax of the logits, `[batch, classes]`.
    pub probabilities: Tensor<T>,
    /// d(loss)/d(logits) = (p - l) / batch.
    pub logit_grad: Tensor<T>,
}

/// Numerically stable softmax + cross-entropy with its logit gradient.
///
/// `labels` must be one-hot rows: exactly one 1.0 per row, 0.0 elsewhere.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &Tensor<T>,
) -> Result<LossResult<T>> {
    let s = logits.shape();
    if s.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "softmax_cross_entropy expects [batch, classes] logits, got {s:?}"
        )));
    }
    if labels.shape() != s {
        return Err(Error::ShapeMismatch(format!(
            "labels shape {:?} does not match logits {s:?}",
            labels.shape()
        )));
    }
    let (batch, classes) = (s[0], s[1]);
    if batch == 0 {
        return Err(Error::EmptyInput("softmax_cross_entropy batch"));
    }
    for (row_idx, row) in labels.data().chunks_exact(classes).enumerate() {
        let ones = row.iter().filter(|&&v| v == T::ONE).count();
        let zeros = row.iter().filter(|&&v| v == T::ZERO).count();
        if ones != 1 || ones + zeros != classes {
            return Err(Error::InvalidLabel(row_idx));
        }
    }

    let mut probs = Tensor::zeros(s);
    let mut grad = Tensor::zeros(s);
    let inv_batch = T::from_f64(1.0 / batch as f64);
    let mut total = T::ZERO;
    for b in 0..batch {
        let lrow = &logits.data()[b * classes..(b + 1) * classes];
        let trow = &labels.data()[b * classes..(b + 1) * classes];
        let mut maxv = lrow[0];
        for &v in lrow.iter() {
            maxv = maxv.max_val(v);
        }
        // log-sum-exp with the max subtracted out.
        let mut denom = T::ZERO;
        for &v in lrow.iter() {
            denom += (v - maxv).exp();
        }
        let log_denom = denom.ln();
        let prow = &mut probs.data_mut()[b * classes..(b + 1) * classes];
        for (p, &v) in prow.iter_mut().zip(lrow) {
            *p = (v - maxv - log_denom).exp();
        }
        for (j, &t) in trow.iter().enumerate() {
            if t == T::ONE {
                total += -(lrow[j] - maxv - log_denom);
            }
        }
        let grow = &mut grad.data_mut()[b * classes..(b + 1) * classes];
        for ((g, &p), &t) in grow.iter_mut().zip(prow.iter()).zip(trow) {
            *g = (p - t) * inv_batch;
        }
    }

    Ok(LossResult {
        loss: total * inv_batch,
        probabilities: probs,
        logit_grad: grad,
    })
}

/// One-hot encodes integer class labels.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("one_hot labels"));
    }
    let mut out = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::UnknownLabel(l));
        }
        out.data_mut()[i * classes + l] = T::ONE;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        let logits = Tensor::zeros(&[2, 28]);
        let labels = one_hot::<f64>(&[3, 17], 28).unwrap();
        let r = softmax_cross_entropy(&logits, &labels).unwrap();
        assert!((r.loss - (28.0f64).ln()).abs() < 1e-12);
        assert!((r.loss - 3.3322).abs() < 1e-4);
    }

    #[test]
    fn saturated_correct_prediction_has_tiny_loss() {
        let mut logits = Tensor::zeros(&[1, 4]);
        logits.data_mut()[2] = 1e6f64;
        let labels = one_hot::<f64>(&[2], 4).unwrap();
        let r = softmax_cross_entropy(&logits, &labels).unwrap();
        assert!(r.loss < 1e-6);
    }

    #[test]
    fn closed_form_two_class_case() {
        // logits [0, ln 3], true class 2 -> p = [0.25, 0.75], loss = -ln 0.75
        let logits = Tensor::from_vec(vec![1, 2], vec![0.0f64, 3.0f64.ln()]).unwrap();
        let labels = one_hot::<f64>(&[1], 2).unwrap();
        let r = softmax_cross_entropy(&logits, &labels).unwrap();
        assert!((r.probabilities.data()[0] - 0.25).abs() < 1e-12);
        assert!((r.probabilities.data()[1] - 0.75).abs() < 1e-12);
        assert!((r.loss - 0.2877).abs() < 1e-4);
        assert!((r.loss + 0.75f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rows_sum_to_one_and_grad_is_p_minus_l_over_t() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let t = 5;
        let c = 7;
        let logits = Tensor::from_vec(
            vec![t, c],
            (0..t * c).map(|_| rng.gen_range(-4.0..4.0)).collect(),
        )
        .unwrap();
        let ids: Vec<usize> = (0..t).map(|_| rng.gen_range(0..c)).collect();
        let labels = one_hot::<f64>(&ids, c).unwrap();
        let r = softmax_cross_entropy(&logits, &labels).unwrap();
        for row in r.probabilities.data().chunks_exact(c) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        for b in 0..t {
            for j in 0..c {
                let p = r.probabilities.data()[b * c + j];
                let l = labels.data()[b * c + j];
                let g = r.logit_grad.data()[b * c + j];
                assert!((g - (p - l) / t as f64).abs() < 1e-12);
            }
        }
        assert!(r.loss >= 0.0);
    }

    #[test]
    fn non_one_hot_rows_are_rejected() {
        let logits = Tensor::zeros(&[1, 3]);
        let bad = Tensor::from_vec(vec![1, 3], vec![0.5f64, 0.5, 0.0]).unwrap();
        assert!(matches!(
            softmax_cross_entropy(&logits, &bad),
            Err(Error::InvalidLabel(0))
        ));
        let two_hot = Tensor::from_vec(vec![1, 3], vec![1.0f64, 1.0, 0.0]).unwrap();
        assert!(softmax_cross_entropy(&logits, &two_hot).is_err());
    }
}
