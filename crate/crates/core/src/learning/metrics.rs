use super::{Example, LearningError, Mlp};
use crate::model::LayeredParams;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub macro_f1: f64,
    pub accuracy: f64,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
}

/// Macro-averaged F1 from a confusion matrix. Undefined precision or recall
/// (0/0) is scored as 0, and so is F1 when `P + R = 0`.
pub fn metrics_from_predictions(
    truth: &[usize],
    predicted: &[usize],
    num_classes: usize,
) -> Result<EvalMetrics, LearningError> {
    if truth.is_empty() {
        return Err(LearningError::EmptyEval);
    }
    let mut tp = vec![0usize; num_classes];
    let mut pred_count = vec![0usize; num_classes];
    let mut true_count = vec![0usize; num_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        true_count[t] += 1;
        pred_count[p] += 1;
        if t == p {
            tp[t] += 1;
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision: Vec<f64> = (0..num_classes)
        .map(|c| ratio(tp[c], pred_count[c]))
        .collect();
    let recall: Vec<f64> = (0..num_classes)
        .map(|c| ratio(tp[c], true_count[c]))
        .collect();
    let mut f1_sum = 0.0;
    for c in 0..num_classes {
        let (p, r) = (precision[c], recall[c]);
        if p + r == 0.0 {
            if true_count[c] == 0 && pred_count[c] == 0 {
                log::debug!("class {c} absent from truth and predictions; F1 counted as 0");
            }
            continue;
        }
        f1_sum += 2.0 * p * r / (p + r);
    }
    Ok(EvalMetrics {
        macro_f1: f1_sum / num_classes as f64,
        accuracy: ratio(tp.iter().sum(), truth.len()),
        per_class_precision: precision,
        per_class_recall: recall,
    })
}

/// Scores `model` on a validation split.
pub fn evaluate(
    model: &LayeredParams,
    val: &[Example],
    num_classes: usize,
) -> Result<EvalMetrics, LearningError> {
    if val.is_empty() {
        return Err(LearningError::EmptyEval);
    }
    let mlp = Mlp::from_params(model)?;
    if mlp.output_dim() != num_classes {
        return Err(LearningError::Config(format!(
            "model has {} outputs, task has {num_classes} classes",
            mlp.output_dim()
        )));
    }
    let truth: Vec<usize> = val.iter().map(|e| e.label).collect();
    let predicted: Vec<usize> = val
        .iter()
        .map(|e| mlp.predict(model, &e.features))
        .collect();
    metrics_from_predictions(&truth, &predicted, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let t = [0, 1, 2, 1, 0];
        let m = metrics_from_predictions(&t, &t, 3).unwrap();
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn constant_predictor_on_balanced_pair() {
        let m = metrics_from_predictions(&[0, 0, 1, 1], &[0, 0, 0, 0], 2).unwrap();
        // class 0: P = 0.5, R = 1 -> F1 = 2/3; class 1 scores 0.
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.per_class_precision, vec![0.5, 0.0]);
        assert_eq!(m.per_class_recall, vec![1.0, 0.0]);
    }

    #[test]
    fn all_wrong() {
        let m = metrics_from_predictions(&[0, 1, 0, 1], &[1, 0, 1, 0], 2).unwrap();
        assert_eq!(m.macro_f1, 0.0);
    }

    #[test]
    fn absent_class_counts_zero() {
        let m = metrics_from_predictions(&[0, 1], &[0, 1], 3).unwrap();
        assert!((m.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_split() {
        assert_eq!(
            metrics_from_predictions(&[], &[], 2),
            Err(LearningError::EmptyEval)
        );
        let model = Mlp::new(2, &[3], 2).init(0);
        assert_eq!(evaluate(&model, &[], 2), Err(LearningError::EmptyEval));
    }

    #[test]
    fn evaluation_is_order_invariant() {
        let model = Mlp::new(2, &[4], 3).init(4);
        let mut val: Vec<Example> = (0..30)
            .map(|i| Example {
                id: i,
                features: vec![(i as f64 * 0.37).sin() * 3.0, (i as f64 * 0.11).cos() * 3.0],
                label: i % 3,
            })
            .collect();
        let a = evaluate(&model, &val, 3).unwrap();
        val.reverse();
        val.swap(3, 17);
        let b = evaluate(&model, &val, 3).unwrap();
        assert_eq!(a, b);
    }
}
