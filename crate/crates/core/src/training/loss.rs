use crate::scalar::Real;

/// Mean squared error and its gradient w.r.t. `pred`.
pub fn mse<T: Real>(pred: &[T], target: &[T]) -> (T, Vec<T>) {
    assert_eq!(pred.len(), target.len(), "mse operand lengths");
    let inv = T::one() / T::from_usize_lossy(pred.len().max(1));
    let mut loss = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let r = p - t;
            loss = loss + r * r;
            T::two() * r * inv
        })
        .collect();
    (loss * inv, grad)
}

/// Softmax cross-entropy of `logits` against class `label`, with the
/// gradient w.r.t. the logits.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let max = logits.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total = exps.iter().fold(T::zero(), |a, &x| a + x);
    let loss = total.ln() + max - logits[label];
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, &e)| e / total - if i == label { T::one() } else { T::zero() })
        .collect();
    (loss, grad)
}

pub fn argmax<T: Real>(xs: &[T]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_values() {
        let (l, g) = mse(&[1.0f64, 2.0], &[0.0, 4.0]);
        assert_eq!(l, 2.5);
        assert_eq!(g, vec![1.0, -2.0]);
    }

    #[test]
    fn cross_entropy_matches_definition() {
        let logits = [0.3f64, -1.2, 2.0];
        let (l, g) = softmax_cross_entropy(&logits, 2);
        let z: f64 = logits.iter().map(|x| x.exp()).sum();
        assert!((l - (z.ln() - 2.0)).abs() < 1e-14);
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
        let (big, _) = softmax_cross_entropy(&[1000.0f64, 0.0], 1);
        assert!((big - 1000.0).abs() < 1e-9);
        assert_eq!(argmax(&logits), 2);
    }
}
