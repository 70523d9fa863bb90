//! Reference band × outcome counts fed back through `banded_report`.

use uaware_core::losses::Outcome;
use uaware_core::uncertainty::{banded_report, BAND_LABELS};
use uaware_core::{ConfidenceResult, UncertaintyKind};

type Table = [[usize; 4]; 3];

// rows are bands 0-30, 31-70, 71-100; columns TP, FN, FP, TN
const EPISTEMIC_BASELINE: Table = [[1, 3, 10, 6], [11, 5, 2, 7], [23, 2, 0, 3]];
const EPISTEMIC_UNCERTAINTY_AWARE: Table = [[3, 5, 14, 4], [6, 1, 0, 7], [27, 3, 0, 3]];
const ALEATORIC_BASELINE: Table = [[3, 4, 11, 6], [6, 0, 1, 4], [26, 6, 0, 6]];
const ALEATORIC_UNCERTAINTY_AWARE: Table = [[3, 5, 13, 7], [3, 0, 0, 4], [30, 4, 1, 3]];

/// Agreeing votes out of 20 that land in each band.
const AGREEING: [std::ops::RangeInclusive<usize>; 3] = [1..=6, 7..=14, 15..=20];

/// Synthetic per-subject results whose banded counts are `table`.
fn results_for(table: &Table, kind: UncertaintyKind) -> Vec<ConfidenceResult> {
    let mut out = Vec::new();
    for (band, row) in table.iter().enumerate() {
        for (&outcome, &count) in Outcome::ALL.iter().zip(row) {
            let predicted = matches!(outcome, Outcome::TruePositive | Outcome::FalsePositive);
            let label = matches!(outcome, Outcome::TruePositive | Outcome::FalseNegative);
            let choices: Vec<usize> = AGREEING[band].clone().collect();
            for k in 0..count {
                let agree = choices[k % choices.len()];
                let votes: Vec<bool> = (0..20).map(|i| if i < agree { predicted } else { !predicted }).collect();
                let id = format!("{}-{band}-{k}", outcome.abbrev());
                out.push(ConfidenceResult::from_samples(id, label, kind, votes).unwrap());
            }
        }
    }
    out
}

#[test]
fn reference_tables_are_reconstructed_exactly() {
    for (table, kind) in [
        (EPISTEMIC_BASELINE, UncertaintyKind::Epistemic),
        (EPISTEMIC_UNCERTAINTY_AWARE, UncertaintyKind::Epistemic),
        (ALEATORIC_BASELINE, UncertaintyKind::Aleatoric),
        (ALEATORIC_UNCERTAINTY_AWARE, UncertaintyKind::Aleatoric),
    ] {
        let results = results_for(&table, kind);
        assert_eq!(results.len(), 73);
        for r in &results {
            assert_eq!(r.confidence % 5.0, 0.0);
            let positive = r.positive_confidence();
            let expected = if r.predicted { positive } else { 100.0 - positive };
            assert_eq!(r.confidence, expected);
        }
        let report = banded_report(&results, kind).unwrap();
        assert_eq!(report.counts, table);
        assert_eq!(report.total(), 73);

        let rendered = report.render_table();
        let lines: Vec<&str> = rendered.lines().collect();
        assert_eq!(lines.len(), 5);
        for (b, label) in BAND_LABELS.iter().enumerate() {
            let cells: Vec<&str> = lines[b + 2].split_whitespace().collect();
            let expected: Vec<String> = std::iter::once(label.to_string())
                .chain(table[b].iter().map(usize::to_string))
                .collect();
            assert_eq!(cells, expected);
        }
    }
}

#[test]
fn reference_epistemic_deltas() {
    let base = banded_report(
        &results_for(&EPISTEMIC_BASELINE, UncertaintyKind::Epistemic),
        UncertaintyKind::Epistemic,
    )
    .unwrap();
    let ua = banded_report(
        &results_for(&EPISTEMIC_UNCERTAINTY_AWARE, UncertaintyKind::Epistemic),
        UncertaintyKind::Epistemic,
    )
    .unwrap();
    let delta = base.delta(&ua);
    // TP in the top band 23 -> 27, FP in the bottom band 10 -> 14
    assert_eq!(delta[2][Outcome::TruePositive.index()], 4);
    assert_eq!(delta[0][Outcome::FalsePositive.index()], 4);
    assert_eq!(delta.iter().flatten().sum::<i64>(), 0);
}
