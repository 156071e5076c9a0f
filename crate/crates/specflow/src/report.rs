//! JSON and plain-text renderings of an evaluation.

use std::fmt::Write as _;

use serde_json::{json, Value};
use specflow_core::eval::{EvalReport, SpectrumEval, TopK};

fn topk(t: &TopK) -> Value {
    json!({ "hit": t.hit, "min_mces": t.min_mces, "max_tanimoto": t.max_tanimoto })
}

fn spectrum(s: &SpectrumEval) -> Value {
    json!({
        "id": s.id,
        "top1": topk(&s.top1),
        "top10": topk(&s.top10),
        "kept": s.kept,
        "discarded": s.discarded,
    })
}

/// Unavailable MCES values are `null`.
pub fn to_json(r: &EvalReport) -> String {
    let a = &r.aggregate;
    let v = json!({
        "spectra": r.spectra.iter().map(spectrum).collect::<Vec<_>>(),
        "aggregate": {
            "top1_accuracy": a.top1_accuracy,
            "top1_mces": a.top1_mces,
            "top1_tanimoto": a.top1_tanimoto,
            "top10_accuracy": a.top10_accuracy,
            "top10_mces": a.top10_mces,
            "top10_tanimoto": a.top10_tanimoto,
            "no_candidate_count": a.no_candidate_count,
        },
    });
    let mut s = serde_json::to_string_pretty(&v).expect("json values serialize");
    s.push('\n');
    s
}

fn mces_cell(m: Option<f64>) -> String {
    m.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

pub fn summary_table(r: &EvalReport) -> String {
    let a = &r.aggregate;
    let mut out = String::new();
    writeln!(out, "{:<8} {:>9} {:>8} {:>9}", "", "accuracy", "MCES", "Tanimoto").expect("string write");
    writeln!(
        out,
        "{:<8} {:>8.2}% {:>8} {:>9.3}",
        "top-1",
        a.top1_accuracy,
        mces_cell(a.top1_mces),
        a.top1_tanimoto
    )
    .expect("string write");
    writeln!(
        out,
        "{:<8} {:>8.2}% {:>8} {:>9.3}",
        "top-10",
        a.top10_accuracy,
        mces_cell(a.top10_mces),
        a.top10_tanimoto
    )
    .expect("string write");
    writeln!(out, "spectra: {}, without candidates: {}", r.spectra.len(), a.no_candidate_count).expect("string write");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use specflow_core::eval::aggregate;

    fn report() -> EvalReport {
        let hit = TopK { hit: true, min_mces: Some(0), max_tanimoto: 1.0 };
        let none = TopK { hit: false, min_mces: None, max_tanimoto: 0.0 };
        let spectra = vec![
            SpectrumEval { id: "a".into(), top1: hit, top10: hit, kept: 3, discarded: 1 },
            SpectrumEval { id: "b".into(), top1: none, top10: none, kept: 0, discarded: 4 },
        ];
        EvalReport { aggregate: aggregate(&spectra), spectra }
    }

    #[test]
    fn json_uses_null_for_missing_mces() {
        let v: Value = serde_json::from_str(&to_json(&report())).unwrap();
        assert_eq!(v["aggregate"]["top1_accuracy"], 50.0);
        assert_eq!(v["aggregate"]["top1_mces"], 0.0);
        assert_eq!(v["aggregate"]["no_candidate_count"], 1);
        assert!(v["spectra"][1]["top1"]["min_mces"].is_null());
    }

    #[test]
    fn table_lists_both_cutoffs() {
        let t = summary_table(&report());
        assert!(t.contains("top-1 "));
        assert!(t.contains("top-10"));
        assert!(t.contains("50.00%"));
    }
}
