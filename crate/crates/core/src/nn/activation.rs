use crate::error::{Error, Result};
use crate::nn::tensor::SampleFrameTensor;
use crate::real::Real;

pub fn relu<T: Real>(x: &SampleFrameTensor<T>) -> SampleFrameTensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gradient of `relu` given its input `x`; the subgradient at 0 is taken as 0.
pub fn relu_backward<T: Real>(x: &SampleFrameTensor<T>, dy: &SampleFrameTensor<T>) -> SampleFrameTensor<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

#[inline]
pub(crate) fn relu_in_place<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

pub fn log_sum_exp<T: Real>(logits: &[T]) -> T {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = logits.iter().map(|&l| (l - m).exp()).sum();
    m + s.ln()
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut p: Vec<T> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: T = p.iter().copied().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// Categorical cross-entropy in nats and its gradient with respect to the logits.
pub fn softmax_xent<T: Real>(logits: &[T], target: usize) -> Result<(T, Vec<T>)> {
    if target >= logits.len() {
        return Err(Error::Domain(format!(
            "target class {target} outside [0, {})",
            logits.len()
        )));
    }
    let mut grad = softmax(logits);
    let loss = log_sum_exp(logits) - logits[target];
    grad[target] -= T::one();
    Ok((loss, grad))
}

/// Loss and gradient written into `grad`, with one exponential per class.
#[inline]
pub(crate) fn xent_into<T: Real>(logits: &[T], target: usize, grad: &mut [T]) -> T {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for (g, &l) in grad.iter_mut().zip(logits) {
        *g = (l - m).exp();
        s += *g;
    }
    let inv = T::one() / s;
    grad.iter_mut().for_each(|g| *g *= inv);
    grad[target] -= T::one();
    m + s.ln() - logits[target]
}

/// Loss only, without allocating the gradient.
pub(crate) fn xent_loss<T: Real>(logits: &[T], target: usize) -> T {
    log_sum_exp(logits) - logits[target]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_examples() {
        let x = SampleFrameTensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let neg = SampleFrameTensor::new(&[4], vec![-1.0, -0.1, -3.0, -1e-9]).unwrap();
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_gradient_matches_finite_differences() {
        let eps = 1e-4;
        for &x0 in &[-2.0f64, -0.5, 0.7, 3.0] {
            let x = SampleFrameTensor::new(&[1], vec![x0]).unwrap();
            let dy = SampleFrameTensor::new(&[1], vec![1.0]).unwrap();
            let analytic = relu_backward(&x, &dy).data()[0];
            let fd = ((x0 + eps).max(0.0) - (x0 - eps).max(0.0)) / (2.0 * eps);
            assert!((analytic - fd).abs() < 1e-9);
            assert_eq!(analytic, if x0 > 0.0 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn uniform_logits_give_ln_q() {
        let (loss, grad) = softmax_xent(&[0.0f64; 256], 17).unwrap();
        assert!((loss - 256f64.ln()).abs() < 1e-12);
        assert!((grad.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn dominant_target_gives_near_zero_loss() {
        let mut logits = vec![0.0f64; 8];
        logits[3] = 1e3;
        let (loss, _) = softmax_xent(&logits, 3).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn three_class_against_direct_formula() {
        // -ln(e^3 / (e^1 + e^2 + e^3)) evaluated term by term
        let direct = -(3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        let (loss, _) = softmax_xent(&[1.0f64, 2.0, 3.0], 2).unwrap();
        assert!((loss - direct).abs() < 1e-14);
        assert!((loss - 0.407_605_964_444_380_3).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_target_is_an_error() {
        assert!(softmax_xent(&[0.0f64; 3], 3).is_err());
    }
}
