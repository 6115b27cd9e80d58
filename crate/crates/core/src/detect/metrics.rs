use crate::error::{Error, Result};

/// Area under the ROC curve via the Mann-Whitney rank sum, with average
/// ranks for tied scores (half credit per tied pair).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&l| l != 0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start..end (1-based: start+1 ..= end) share their mean.
        let mean_rank = (start + 1 + end) as f64 / 2.0;
        rank_sum += mean_rank
            * order[start..end]
                .iter()
                .filter(|&&i| labels[i] != 0)
                .count() as f64;
        start = end;
    }
    let (p, q) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Unweighted mean of the per-class F1 scores. A class absent from both
/// predictions and labels scores 1.
pub fn macro_f1(pred: &[u8], labels: &[u8]) -> Result<f64> {
    let m = Metrics::confusion(pred, labels)?;
    Ok((f1(m[1][1], m[0][1], m[1][0]) + f1(m[0][0], m[1][0], m[0][1])) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub auc: f64,
    pub macro_f1: f64,
    /// Indexed by class: 0 normal, 1 anomalous.
    pub precision: [f64; 2],
    pub recall: [f64; 2],
}

impl Metrics {
    /// `m[truth][pred]` counts.
    fn confusion(pred: &[u8], labels: &[u8]) -> Result<[[usize; 2]; 2]> {
        if pred.len() != labels.len() {
            return Err(Error::LengthMismatch(pred.len(), labels.len()));
        }
        let mut m = [[0usize; 2]; 2];
        for (&p, &l) in pred.iter().zip(labels) {
            m[usize::from(l != 0)][usize::from(p != 0)] += 1;
        }
        Ok(m)
    }

    pub fn evaluate(scores: &[f64], pred: &[u8], labels: &[u8]) -> Result<Self> {
        let m = Self::confusion(pred, labels)?;
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        Ok(Self {
            auc: auc(scores, labels)?,
            macro_f1: macro_f1(pred, labels)?,
            precision: [
                ratio(m[0][0], m[0][0] + m[1][0]),
                ratio(m[1][1], m[1][1] + m[0][1]),
            ],
            recall: [
                ratio(m[0][0], m[0][0] + m[0][1]),
                ratio(m[1][1], m[1][1] + m[1][0]),
            ],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    pairs += 1.0;
                    wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Less => 0.0,
                    };
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[3.0, 1.0, 2.0, 2.0], &[1, 0, 1, 0]).unwrap(), 0.875);
        assert_eq!(auc(&[0.9, 0.8, 0.1], &[1, 1, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.2, 0.9], &[1, 1, 0]).unwrap(), 0.0);
        assert!(matches!(auc(&[1.0, 2.0], &[1, 1]), Err(Error::SingleClass)));
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap(), 1.0);
        assert_eq!(
            macro_f1(&[1, 0, 0, 0], &[1, 1, 0, 0]).unwrap(),
            (2.0 / 3.0 + 4.0 / 5.0) / 2.0
        );
        let all_normal = macro_f1(&[0, 0, 0, 0], &[1, 0, 0, 0]).unwrap();
        assert_eq!(all_normal, (0.0 + f1(3, 1, 0)) / 2.0);
        assert!(matches!(
            macro_f1(&[0], &[0, 1]),
            Err(Error::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn evaluate_precision_recall() {
        let m = Metrics::evaluate(&[0.9, 0.2, 0.4, 0.1], &[1, 0, 0, 0], &[1, 1, 0, 0]).unwrap();
        assert_eq!(m.precision, [2.0 / 3.0, 1.0]);
        assert_eq!(m.recall, [1.0, 0.5]);
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise(
            data in prop::collection::vec((0u8..20, any::<bool>()), 2..200)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| f64::from(*s) / 4.0).collect();
            let labels: Vec<u8> = data.iter().map(|(_, l)| u8::from(*l)).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            prop_assert!((auc(&scores, &labels).unwrap() - pairwise(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn auc_is_scale_invariant(
            data in prop::collection::vec((-50i32..50, any::<bool>()), 2..100),
            c in 0.01f64..100.0
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| f64::from(*s)).collect();
            let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
            let labels: Vec<u8> = data.iter().map(|(_, l)| u8::from(*l)).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&scaled, &labels).unwrap());
        }
    }
}
