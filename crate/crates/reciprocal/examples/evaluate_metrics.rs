//! Why per-side accuracy is not enough for two-sided recommendation: two
//! runs with identical Recall / Precision / NDCG on both sides but opposite
//! coverage and stability profiles.
//!
//! Run with: `cargo run --example evaluate_metrics`

use reciprocal::metrics::{compute_report, MatchSet, MetricReport, RecommendationRun};
use reciprocal::Side;

fn print_overall(label: &str, report: &MetricReport) {
    println!(
        "{label}: recall_avg {:.2} | crecall {:.2} cprecision {:.2} | srecall {:.2} sprecision {:.2} | rndcg {:.3} | covered pairs {}",
        report.recall_avg,
        report.crecall,
        report.cprecision,
        report.srecall,
        report.sprecision,
        report.rndcg,
        report.true_positive_pairs
    );
}

fn main() -> reciprocal::Result<()> {
    // Two matched pairs: (a0, b0) and (a1, b1). Every list holds one slot.
    let matches = MatchSet::from_pairs([(0, 0), (1, 1)]);

    // Run 1 spreads its four hits across the two pairs: a0 and b0 each hit
    // their partner... but never simultaneously. Every pair is covered from
    // one side (crecall 1) yet no pair is recommended on both sides at once
    // (srecall 0), so no match can actually form.
    let mut crossed = RecommendationRun::new(1)?;
    crossed.insert_list(Side::A, 0, vec![0])?;
    crossed.insert_list(Side::A, 1, vec![0])?; // a1 points at the wrong user
    crossed.insert_list(Side::B, 0, vec![1])?; // b0 points at the wrong user
    crossed.insert_list(Side::B, 1, vec![1])?;

    // Run 2 concentrates on pair (0, 0): both endpoints see each other
    // (srecall 0.5, a match can form) while pair (1, 1) is ignored.
    let mut mirrored = RecommendationRun::new(1)?;
    mirrored.insert_list(Side::A, 0, vec![0])?;
    mirrored.insert_list(Side::A, 1, vec![0])?;
    mirrored.insert_list(Side::B, 0, vec![0])?;
    mirrored.insert_list(Side::B, 1, vec![0])?;

    let crossed_report = compute_report(&crossed, &matches);
    let mirrored_report = compute_report(&mirrored, &matches);

    // Same one-sided quality either way...
    assert_eq!(crossed_report.recall_a, mirrored_report.recall_a);
    assert_eq!(crossed_report.recall_b, mirrored_report.recall_b);
    println!(
        "both runs: recall_a {:.2}, recall_b {:.2} — indistinguishable per side\n",
        crossed_report.recall_a, crossed_report.recall_b
    );

    // ...but the pair-level metrics tell the two behaviours apart.
    print_overall("crossed ", &crossed_report);
    print_overall("mirrored", &mirrored_report);

    // Reports serialize to a two-line TSV or a JSON object.
    println!("\nTSV form of the mirrored run:\n{}", mirrored_report.to_tsv());
    Ok(())
}
