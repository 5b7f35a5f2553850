/// Per-class F1, support-weighted. A class with no true and no predicted
/// members scores 0 and, having no support, carries no weight.
pub fn weighted_f1(y_true: &[usize], y_pred: &[usize]) -> f64 {
    assert_eq!(y_true.len(), y_pred.len(), "label vectors differ in length");
    if y_true.is_empty() {
        return 0.0;
    }
    let k = y_true.iter().chain(y_pred).copied().max().unwrap_or(0) + 1;
    let f1 = per_class_f1(y_true, y_pred, k);
    let mut support = vec![0usize; k];
    for &t in y_true {
        support[t] += 1;
    }
    let n = y_true.len() as f64;
    f1.iter().zip(&support).map(|(f, &s)| f * s as f64 / n).sum()
}

pub fn per_class_f1(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Vec<f64> {
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fnc = vec![0usize; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fnc[t] += 1;
        }
    }
    (0..n_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fnc[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect()
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> f64 {
    if y_true.is_empty() {
        return 0.0;
    }
    y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count() as f64 / y_true.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures() {
        assert_eq!(weighted_f1(&[0, 1, 2, 1], &[0, 1, 2, 1]), 1.0);
        assert_eq!(weighted_f1(&[0, 0, 1, 1], &[1, 1, 0, 0]), 0.0);
        let f = weighted_f1(&[0, 0, 0, 1], &[0, 0, 1, 1]);
        assert!((f - (0.75 * 0.8 + 0.25 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn majority_predictor_closed_form() {
        let y = [0, 0, 0, 1, 1, 2, 0, 0];
        let pred = [0; 8];
        // Majority class 0: precision 5/8, recall 1; others score 0.
        let p: f64 = 5.0 / 8.0;
        let expected = p * (2.0 * p / (p + 1.0));
        assert!((weighted_f1(&y, &pred) - expected).abs() < 1e-12);
    }
}
