//! Classification metrics and conditional utilization rates.

use std::fmt;
use std::str::FromStr;

use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MetricKind {
    #[default]
    Accuracy,
    MacroF1,
}

impl MetricKind {
    pub fn evaluate(self, predictions: &[usize], labels: &[usize], classes: usize) -> Result<f64> {
        match self {
            MetricKind::Accuracy => accuracy(predictions, labels),
            MetricKind::MacroF1 => macro_f1(predictions, labels, classes),
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::MacroF1 => "macro_f1",
        })
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "accuracy" | "acc" => Ok(MetricKind::Accuracy),
            "macro_f1" | "f1" | "macro-f1" => Ok(MetricKind::MacroF1),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

fn check_lengths(predictions: &[usize], labels: &[usize]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Input("metrics need at least one sample".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    Ok(())
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Unweighted mean of per-class F1 over all `classes`. A class that is never
/// predicted and never present scores 0.
pub fn macro_f1(predictions: &[usize], labels: &[usize], classes: usize) -> Result<f64> {
    check_lengths(predictions, labels)?;
    if classes < 2 {
        return Err(Error::Input(format!(
            "macro F1 needs at least 2 classes, got {classes}"
        )));
    }
    let mut tp = vec![0usize; classes];
    let mut predicted = vec![0usize; classes];
    let mut actual = vec![0usize; classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p >= classes || y >= classes {
            return Err(Error::Input(format!("class index out of range for {classes} classes")));
        }
        predicted[p] += 1;
        actual[y] += 1;
        if p == y {
            tp[p] += 1;
        }
    }
    let total: f64 = (0..classes)
        .map(|c| {
            // F1 = 2TP / (2TP + FP + FN) = 2TP / (predicted + actual)
            let denom = predicted[c] + actual[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / classes as f64)
}

/// Relative drop of the fused metric when each modality's contribution is
/// removed: `u_a = (m_ab - m_b) / m_ab`, `u_b = (m_ab - m_a) / m_ab`.
///
/// A fused metric of exactly zero yields `(0, 0)`.
pub fn conditional_utilization<T: Float>(m_ab: T, m_a: T, m_b: T) -> (T, T) {
    if m_ab == T::zero() {
        return (T::zero(), T::zero());
    }
    ((m_ab - m_b) / m_ab, (m_ab - m_a) / m_ab)
}

pub fn utilization_delta<T: Float>(u_a: T, u_b: T) -> T {
    (u_a - u_b).abs()
}

/// Metric of the designated stronger encoder minus the other, sign kept.
pub fn encoder_gap<T: Float>(stronger: T, weaker: T) -> T {
    stronger - weaker
}

/// Which evaluation split drives the utilization computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Split {
    Train,
    #[default]
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn index(self) -> usize {
        match self {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" | "training" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilizationRecord {
    pub u_a: f64,
    pub u_b: f64,
    pub delta: f64,
    pub split: Split,
}

impl UtilizationRecord {
    pub fn from_metrics(m_ab: f64, m_a: f64, m_b: f64, split: Split) -> Self {
        let (u_a, u_b) = conditional_utilization(m_ab, m_a, m_b);
        Self {
            u_a,
            u_b,
            delta: utilization_delta(u_a, u_b),
            split,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 1, 3], &[0, 1, 2, 3]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        let f = macro_f1(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert_relative_eq!(f, 11.0 / 15.0, max_relative = 1e-15);

        // class 2 absent and never predicted
        let f = macro_f1(&[0, 1, 1, 1], &[0, 0, 1, 1], 3).unwrap();
        assert_relative_eq!(f, (2.0 / 3.0 + 0.8 + 0.0) / 3.0, max_relative = 1e-15);

        assert!(macro_f1(&[], &[], 3).is_err());
        assert!(macro_f1(&[0], &[0], 1).is_err());
    }

    #[test]
    fn utilization_examples() {
        let (ua, ub) = conditional_utilization(0.8, 0.6, 0.4);
        assert_relative_eq!(ua, 0.5, max_relative = 1e-15);
        assert_relative_eq!(ub, 0.25, max_relative = 1e-15);
        assert_eq!(conditional_utilization(0.9, 0.9, 0.9), (0.0, 0.0));
        let (ua, ub) = conditional_utilization(0.5, 0.7, 0.6);
        assert_relative_eq!(ua, -0.2, max_relative = 1e-14);
        assert_relative_eq!(ub, -0.4, max_relative = 1e-14);
        assert_eq!(conditional_utilization(0.0, 0.3, 0.7), (0.0, 0.0));

        assert_eq!(utilization_delta(0.5, 0.25), 0.25);
        assert_eq!(utilization_delta(0.37, 0.37), 0.0);
        assert_relative_eq!(utilization_delta(-0.2, -0.4), 0.2, max_relative = 1e-15);

        // delta is not clamped to 1
        let r = UtilizationRecord::from_metrics(0.4, 1.0, 0.0, Split::Validation);
        assert_relative_eq!(r.delta, 2.5, max_relative = 1e-15);
    }

    #[test]
    fn encoder_gap_keeps_sign() {
        assert_relative_eq!(encoder_gap(0.6, 0.4), 0.2, max_relative = 1e-14);
        assert_eq!(encoder_gap(0.5, 0.5), 0.0);
        assert_relative_eq!(encoder_gap(0.599, 0.608), -0.009, max_relative = 1e-9);
    }

    proptest! {
        #[test]
        fn macro_f1_in_unit_interval_and_one_iff_perfect(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..40)
        ) {
            let (preds, labels): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let f = macro_f1(&preds, &labels, 4).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
            let all_present = (0..4).all(|c| labels.contains(&c));
            let perfect = preds == labels && all_present;
            prop_assert_eq!(f == 1.0, perfect);
        }

        #[test]
        fn metrics_are_permutation_invariant(
            pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..30),
            seed in any::<u64>()
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (p1, l1): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let (p2, l2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            prop_assert_eq!(accuracy(&p1, &l1).unwrap(), accuracy(&p2, &l2).unwrap());
            prop_assert!((macro_f1(&p1, &l1, 3).unwrap() - macro_f1(&p2, &l2, 3).unwrap()).abs() < 1e-15);
        }
    }
}
