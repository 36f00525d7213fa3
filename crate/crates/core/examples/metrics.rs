//! Scores a small ordinal confusion matrix both ways.

use fedsurg::metrics::{expected_cost, macro_f1_with, metric_report, score_labels, ConfusionMatrix, F1Convention, LabelSpace};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // rows are true grades, columns predicted grades; grade 3 never occurs
    let cm = ConfusionMatrix::from_rows(&[
        vec![4, 1, 0, 0],
        vec![2, 5, 1, 0],
        vec![0, 3, 2, 0],
        vec![0, 0, 0, 0],
    ])?;
    let report = metric_report(&cm)?;
    println!("per-class F1      {:?}", report.f1_per_class);
    println!("macro F1 (zero)   {:.4}", report.f1_macro);
    println!("macro F1 (absent) {:.4}", macro_f1_with(&cm, F1Convention::ExcludeAbsent));
    println!("expected cost     {:.4}", expected_cost(&cm)?);

    // the same scores straight from label vectors
    let truths = [0, 1, 2, 3, 4, 5, 2, 3];
    let preds = [0, 2, 2, 3, 3, 5, 1, 3];
    let r = score_labels(&truths, &preds, LabelSpace::CHALLENGE, F1Convention::Zero)?;
    println!("six grades: F1 {:.4}, EC {:.4}", r.f1_macro, r.expected_cost);
    Ok(())
}
