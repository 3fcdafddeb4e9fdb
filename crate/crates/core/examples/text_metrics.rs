//! Generation metrics and ROC analysis on hand-made inputs.
//!
//! ```bash
//! cargo run --example text_metrics
//! ```

use pplm::attacks::roc_curve;
use pplm::evalmetrics::{bleu, rouge, RougeVariant};

fn main() -> pplm::Result<()> {
    let reference: Vec<&str> = "the patient was seen in clinic today".split(' ').collect();
    let candidates = [
        "the patient was seen in clinic today",
        "the patient was seen today",
        "patient seen in the clinic",
        "no overlap at all",
    ];
    println!("{:<38} {:>6} {:>8} {:>8} {:>8}", "candidate", "BLEU", "ROUGE-1", "ROUGE-2", "ROUGE-L");
    for c in candidates {
        let cand: Vec<&str> = c.split(' ').collect();
        let r = |v| rouge(&cand, &reference, v).unwrap_or(0.0);
        println!(
            "{c:<38} {:>6.3} {:>8.3} {:>8.3} {:>8.3}",
            bleu(&cand, &reference, 4),
            r(RougeVariant::N(1)),
            r(RougeVariant::N(2)),
            r(RougeVariant::L)
        );
    }

    // attack scores with membership labels; ties move together on the curve
    let scores = [
        (0.9, true),
        (0.8, true),
        (0.8, false),
        (0.6, true),
        (0.4, false),
        (0.3, true),
        (0.2, false),
        (0.1, false),
    ];
    let roc = roc_curve(&scores)?;
    println!("\nAUC {:.4}, TPR at 25% FPR {:.3}", roc.auc, roc.tpr_at(0.25));
    for (fpr, tpr) in &roc.points {
        println!("  fpr {fpr:.3}  tpr {tpr:.3}");
    }
    Ok(())
}
