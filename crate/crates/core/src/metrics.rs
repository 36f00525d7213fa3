//! Confusion matrices, macro-averaged F1 and linear-weight Expected Cost.
//!
//! Both challenge metrics are computed from a square count matrix `M` where
//! `M[i][j]` is the number of samples with true class `i` predicted as `j`.
//! Values are fractions in `[0, 1]`; percent formatting is left to callers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while building or scoring confusion matrices.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("label space needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("truths and preds differ in length ({truths} vs {preds})")]
    LengthMismatch { truths: usize, preds: usize },
    #[error("{which} label {value} at position {position} is outside 0..{num_classes}")]
    LabelOutOfRange {
        which: &'static str,
        position: usize,
        value: usize,
        num_classes: usize,
    },
    #[error("count matrix must be {expected}x{expected}")]
    NotSquare { expected: usize },
    #[error("empty confusion matrix")]
    EmptyMatrix,
}

/// Number of ordinal classes; indices run `0..num_classes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    num_classes: usize,
}

impl LabelSpace {
    /// Six appendicitis grades, 0 through 5.
    pub const CHALLENGE: LabelSpace = LabelSpace { num_classes: 6 };

    pub fn new(num_classes: usize) -> Result<Self, MetricsError> {
        if num_classes < 2 {
            return Err(MetricsError::TooFewClasses(num_classes));
        }
        Ok(Self { num_classes })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn contains(&self, label: usize) -> bool {
        label < self.num_classes
    }
}

impl Default for LabelSpace {
    fn default() -> Self {
        Self::CHALLENGE
    }
}

/// How to score a class that appears in neither truths nor predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum F1Convention {
    /// The class scores F1 = 0 and still counts in the macro average.
    #[default]
    Zero,
    /// The class is left out of the macro average.
    ExcludeAbsent,
}

impl std::str::FromStr for F1Convention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero" => Ok(Self::Zero),
            "exclude-absent" => Ok(Self::ExcludeAbsent),
            other => Err(format!(
                "unknown F1 convention `{other}` (expected `zero` or `exclude-absent`)"
            )),
        }
    }
}

/// Square matrix of counts, row = true class, column = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: LabelSpace,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(labels: LabelSpace) -> Self {
        let c = labels.num_classes();
        Self {
            labels,
            counts: vec![0; c * c],
        }
    }

    /// Builds a matrix from nested rows, e.g. `[[3, 1], [2, 4]]`.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self, MetricsError> {
        let labels = LabelSpace::new(rows.len())?;
        let c = labels.num_classes();
        if rows.iter().any(|r| r.len() != c) {
            return Err(MetricsError::NotSquare { expected: c });
        }
        Ok(Self {
            labels,
            counts: rows.iter().flatten().copied().collect(),
        })
    }

    /// Tallies paired labels into a matrix.
    pub fn build(
        truths: &[usize],
        preds: &[usize],
        labels: LabelSpace,
    ) -> Result<Self, MetricsError> {
        if truths.len() != preds.len() {
            return Err(MetricsError::LengthMismatch {
                truths: truths.len(),
                preds: preds.len(),
            });
        }
        let c = labels.num_classes();
        let mut cm = Self::zeros(labels);
        for (position, (&t, &p)) in truths.iter().zip(preds).enumerate() {
            for (which, value) in [("true", t), ("predicted", p)] {
                if value >= c {
                    return Err(MetricsError::LabelOutOfRange {
                        which,
                        position,
                        value,
                        num_classes: c,
                    });
                }
            }
            cm.counts[t * c + p] += 1;
        }
        Ok(cm)
    }

    pub fn labels(&self) -> LabelSpace {
        self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.num_classes()
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes() + pred]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks(self.num_classes())
            .map(|r| r.to_vec())
            .collect()
    }

    /// Total number of samples `N`.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.get(class, class)
    }

    /// Column sum minus the diagonal.
    pub fn false_positives(&self, class: usize) -> u64 {
        (0..self.num_classes())
            .filter(|&i| i != class)
            .map(|i| self.get(i, class))
            .sum()
    }

    /// Row sum minus the diagonal.
    pub fn false_negatives(&self, class: usize) -> u64 {
        (0..self.num_classes())
            .filter(|&j| j != class)
            .map(|j| self.get(class, j))
            .sum()
    }

    /// Row sums: number of samples whose true class is `c`.
    pub fn support(&self) -> Vec<u64> {
        self.counts
            .chunks(self.num_classes())
            .map(|r| r.iter().sum())
            .collect()
    }

    /// A class is absent when it occurs neither as truth nor as prediction.
    pub fn is_absent(&self, class: usize) -> bool {
        2 * self.true_positives(class) + self.false_positives(class) + self.false_negatives(class)
            == 0
    }
}

/// Per-class F1 = 2·TP / (2·TP + FP + FN); absent classes score 0.
pub fn per_class_f1(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.num_classes())
        .map(|c| {
            let tp = cm.true_positives(c) as f64;
            let denom = 2.0 * tp + cm.false_positives(c) as f64 + cm.false_negatives(c) as f64;
            if denom == 0.0 {
                0.0
            } else {
                2.0 * tp / denom
            }
        })
        .collect()
}

/// Macro F1 under the default convention (absent classes count as 0).
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    macro_f1_with(cm, F1Convention::Zero)
}

pub fn macro_f1_with(cm: &ConfusionMatrix, convention: F1Convention) -> f64 {
    let f1 = per_class_f1(cm);
    match convention {
        F1Convention::Zero => f1.iter().sum::<f64>() / f1.len() as f64,
        F1Convention::ExcludeAbsent => {
            let present: Vec<f64> = f1
                .iter()
                .enumerate()
                .filter(|(c, _)| !cm.is_absent(*c))
                .map(|(_, v)| *v)
                .collect();
            if present.is_empty() {
                0.0
            } else {
                present.iter().sum::<f64>() / present.len() as f64
            }
        }
    }
}

/// Mean linear misclassification cost, `|i - j| / (C - 1)` per sample.
pub fn expected_cost(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let n = cm.total();
    if n == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let c = cm.num_classes();
    let scale = (c - 1) as f64;
    let mut weighted = 0.0;
    for i in 0..c {
        for j in 0..c {
            let count = cm.get(i, j);
            if count > 0 {
                weighted += count as f64 * (i.abs_diff(j) as f64 / scale);
            }
        }
    }
    Ok(weighted / n as f64)
}

/// Both challenge metrics plus per-class detail for one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub f1_per_class: Vec<f64>,
    pub f1_macro: f64,
    pub expected_cost: f64,
    pub support: Vec<u64>,
}

pub fn metric_report(cm: &ConfusionMatrix) -> Result<MetricReport, MetricsError> {
    metric_report_with(cm, F1Convention::Zero)
}

/// Under [`F1Convention::ExcludeAbsent`] `f1_macro` is the mean over present
/// classes only, so it may differ from the plain mean of `f1_per_class`.
pub fn metric_report_with(
    cm: &ConfusionMatrix,
    convention: F1Convention,
) -> Result<MetricReport, MetricsError> {
    let expected_cost = expected_cost(cm)?;
    Ok(MetricReport {
        f1_per_class: per_class_f1(cm),
        f1_macro: macro_f1_with(cm, convention),
        expected_cost,
        support: cm.support(),
    })
}

/// Convenience wrapper: tally then score.
pub fn score_labels(
    truths: &[usize],
    preds: &[usize],
    labels: LabelSpace,
    convention: F1Convention,
) -> Result<MetricReport, MetricsError> {
    let cm = ConfusionMatrix::build(truths, preds, labels)?;
    metric_report_with(&cm, convention)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Expands a matrix back into label pairs and evaluates the metric
    /// definitions sample by sample.
    fn brute_force(rows: &[Vec<u64>]) -> (f64, Option<f64>) {
        let c = rows.len();
        let mut pairs = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            for (j, &n) in row.iter().enumerate() {
                for _ in 0..n {
                    pairs.push((i, j));
                }
            }
        }
        let mut f1_sum = 0.0;
        for class in 0..c {
            let tp = pairs.iter().filter(|&&(t, p)| t == class && p == class).count();
            let fp = pairs.iter().filter(|&&(t, p)| t != class && p == class).count();
            let fn_ = pairs.iter().filter(|&&(t, p)| t == class && p != class).count();
            let denom = 2 * tp + fp + fn_;
            if denom > 0 {
                f1_sum += 2.0 * tp as f64 / denom as f64;
            }
        }
        let ec = if pairs.is_empty() {
            None
        } else {
            let cost: f64 = pairs
                .iter()
                .map(|&(t, p)| (t as f64 - p as f64).abs() / (c - 1) as f64)
                .sum();
            Some(cost / pairs.len() as f64)
        };
        (f1_sum / c as f64, ec)
    }

    #[test]
    fn builds_perfect_and_empty_matrices() {
        let two = LabelSpace::new(2).unwrap();
        let cm = ConfusionMatrix::build(&[0, 1], &[0, 1], two).unwrap();
        assert_eq!(cm.rows(), vec![vec![1, 0], vec![0, 1]]);

        let cm = ConfusionMatrix::build(&[], &[], LabelSpace::new(3).unwrap()).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(cm.rows().iter().flatten().all(|&v| v == 0));
    }

    #[test]
    fn builds_tally_fixture() {
        let truths = [0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
        let preds = [0, 0, 0, 1, 0, 0, 1, 1, 1, 1];
        let cm = ConfusionMatrix::build(&truths, &preds, LabelSpace::new(2).unwrap()).unwrap();
        assert_eq!(cm.rows(), vec![vec![3, 1], vec![2, 4]]);
        assert_eq!(cm.total(), 10);
    }

    #[test]
    fn build_rejects_bad_input() {
        let two = LabelSpace::new(2).unwrap();
        assert!(matches!(
            ConfusionMatrix::build(&[0], &[0, 1], two),
            Err(MetricsError::LengthMismatch { .. })
        ));
        let err = ConfusionMatrix::build(&[0, 1, 2], &[0, 1, 1], two).unwrap_err();
        assert_eq!(
            err,
            MetricsError::LabelOutOfRange {
                which: "true",
                position: 2,
                value: 2,
                num_classes: 2
            }
        );
        assert!(err.to_string().contains("position 2"));
        assert!(LabelSpace::new(1).is_err());
    }

    #[test]
    fn f1_fixture_values() {
        let diag = ConfusionMatrix::from_rows(&[vec![4, 0, 0], vec![0, 1, 0], vec![0, 0, 9]]).unwrap();
        assert_eq!(macro_f1(&diag), 1.0);

        let cm = ConfusionMatrix::from_rows(&[vec![3, 1], vec![2, 4]]).unwrap();
        let per = per_class_f1(&cm);
        assert!(close(per[0], 2.0 / 3.0, 1e-15));
        assert!(close(per[1], 8.0 / 11.0, 1e-15));
        assert!(close(macro_f1(&cm), 0.696_969_696_969_697, 1e-12));

        let swapped = ConfusionMatrix::from_rows(&[vec![0, 5], vec![5, 0]]).unwrap();
        assert_eq!(macro_f1(&swapped), 0.0);
    }

    #[test]
    fn expected_cost_fixture_values() {
        let diag = ConfusionMatrix::from_rows(&[vec![2, 0], vec![0, 3]]).unwrap();
        assert_eq!(expected_cost(&diag).unwrap(), 0.0);

        let swapped = ConfusionMatrix::from_rows(&[vec![0, 5], vec![5, 0]]).unwrap();
        assert_eq!(expected_cost(&swapped).unwrap(), 1.0);

        let six = LabelSpace::CHALLENGE;
        let cm = ConfusionMatrix::build(&[2], &[3], six).unwrap();
        assert!(close(expected_cost(&cm).unwrap(), 0.2, 1e-15));
        let cm = ConfusionMatrix::build(&[0], &[5], six).unwrap();
        assert_eq!(expected_cost(&cm).unwrap(), 1.0);

        let cm = ConfusionMatrix::from_rows(&[vec![3, 1], vec![2, 4]]).unwrap();
        assert!(close(expected_cost(&cm).unwrap(), 0.3, 1e-15));

        let empty = ConfusionMatrix::zeros(six);
        assert_eq!(expected_cost(&empty), Err(MetricsError::EmptyMatrix));
        assert_eq!(MetricsError::EmptyMatrix.to_string(), "empty confusion matrix");
    }

    #[test]
    fn report_bundles_metrics() {
        let eye: Vec<Vec<u64>> = (0..6)
            .map(|i| (0..6).map(|j| u64::from(i == j)).collect())
            .collect();
        let report = metric_report(&ConfusionMatrix::from_rows(&eye).unwrap()).unwrap();
        assert_eq!(report.f1_macro, 1.0);
        assert_eq!(report.expected_cost, 0.0);
        assert_eq!(report.support, vec![1; 6]);

        let cm = ConfusionMatrix::from_rows(&[vec![3, 1], vec![2, 4]]).unwrap();
        let report = metric_report(&cm).unwrap();
        assert!(close(report.f1_macro, 0.69697, 1e-5));
        assert!(close(report.expected_cost, 0.3, 1e-12));
        assert_eq!(report.support, vec![4, 6]);

        // class 5 never occurs and is never predicted
        let truths = [0, 1, 2, 3, 4];
        let report = score_labels(&truths, &truths, LabelSpace::CHALLENGE, F1Convention::Zero).unwrap();
        assert_eq!(report.f1_per_class[5], 0.0);
        assert!(close(report.f1_macro, 5.0 / 6.0, 1e-15));
        let mean = report.f1_per_class.iter().sum::<f64>() / 6.0;
        assert_eq!(report.f1_macro, mean);

        let report =
            score_labels(&truths, &truths, LabelSpace::CHALLENGE, F1Convention::ExcludeAbsent).unwrap();
        assert_eq!(report.f1_macro, 1.0);
    }

    #[test]
    fn convention_parses() {
        assert_eq!("zero".parse::<F1Convention>().unwrap(), F1Convention::Zero);
        assert_eq!(
            "exclude-absent".parse::<F1Convention>().unwrap(),
            F1Convention::ExcludeAbsent
        );
        assert!("other".parse::<F1Convention>().is_err());
    }

    fn matrix_strategy() -> impl Strategy<Value = Vec<Vec<u64>>> {
        (2usize..=8).prop_flat_map(|c| {
            proptest::collection::vec(proptest::collection::vec(0u64..=20, c), c)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn metrics_agree_with_brute_force(rows in matrix_strategy()) {
            let cm = ConfusionMatrix::from_rows(&rows).unwrap();
            let (f1, ec) = brute_force(&rows);
            prop_assert!(close(macro_f1(&cm), f1, 1e-12));
            match ec {
                Some(ec) => prop_assert!(close(expected_cost(&cm).unwrap(), ec, 1e-12)),
                None => prop_assert!(expected_cost(&cm).is_err()),
            }
        }

        #[test]
        fn expected_cost_bounds(rows in matrix_strategy()) {
            let cm = ConfusionMatrix::from_rows(&rows).unwrap();
            prop_assume!(cm.total() > 0);
            let c = cm.num_classes();
            let ec = expected_cost(&cm).unwrap();
            prop_assert!((0.0..=1.0).contains(&ec));
            let off_diag: u64 = (0..c).flat_map(|i| (0..c).map(move |j| (i, j)))
                .filter(|(i, j)| i != j).map(|(i, j)| cm.get(i, j)).sum();
            prop_assert_eq!(ec == 0.0, off_diag == 0);
            let extreme = cm.get(0, c - 1) + cm.get(c - 1, 0);
            prop_assert_eq!(ec == 1.0, extreme == cm.total());
        }

        #[test]
        fn sample_order_does_not_matter(
            pairs in proptest::collection::vec((0usize..5, 0usize..5), 0..60),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let labels = LabelSpace::new(5).unwrap();
            let (t, p): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let a = ConfusionMatrix::build(&t, &p, labels).unwrap();
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (t, p): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            prop_assert_eq!(a, ConfusionMatrix::build(&t, &p, labels).unwrap());
        }

        #[test]
        fn macro_f1_invariant_under_relabeling(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60),
            perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
        ) {
            let labels = LabelSpace::new(4).unwrap();
            let (t, p): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let a = ConfusionMatrix::build(&t, &p, labels).unwrap();
            let t2: Vec<_> = t.iter().map(|&x| perm[x]).collect();
            let p2: Vec<_> = p.iter().map(|&x| perm[x]).collect();
            let b = ConfusionMatrix::build(&t2, &p2, labels).unwrap();
            prop_assert!(close(macro_f1(&a), macro_f1(&b), 1e-12));
            let fa = per_class_f1(&a);
            let fb = per_class_f1(&b);
            for c in 0..4 {
                prop_assert!(close(fa[c], fb[perm[c]], 1e-15));
            }
        }
    }
}
