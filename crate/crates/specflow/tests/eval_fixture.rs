use std::path::Path;

use serde_json::Value;
use specflow::config::RunConfig;
use specflow::pipeline::cmd_evaluate;
use specflow_core::params::Sequential;

/// Scores worked out by hand from environment counts:
///
/// | id | top-1 | hit | MCES | Tanimoto | top-10 hit |
/// |----|-------|-----|------|----------|------------|
/// | s1 | CCO   | yes | 0 | 1       | yes |
/// | s2 | CCN   | no  | 2 | 3/15    | yes |
/// | s3 | (all disconnected) | no | - | 0 | no |
/// | s4 | CCCC  | no  | 2 | 1/11    | yes |
/// | s5 | C#CN  | no  | 4 | 1/17    | yes |
fn expected() -> [(&'static str, bool, Option<u64>, f64, bool); 5] {
    [
        ("s1", true, Some(0), 1.0, true),
        ("s2", false, Some(2), 3.0 / 15.0, true),
        ("s3", false, None, 0.0, false),
        ("s4", false, Some(2), 1.0 / 11.0, true),
        ("s5", false, Some(4), 1.0 / 17.0, true),
    ]
}

fn run(out: &Path) -> (Value, String) {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/eval5");
    let mut cfg = RunConfig::new();
    cfg.set("candidates", dir.join("candidates.tsv").display());
    cfg.set("pairing", dir.join("truth.tsv").display());
    cfg.set("out", out.display());
    let e = cmd_evaluate(&cfg, &Sequential).unwrap();
    let json = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    (json, e.table)
}

#[test]
fn per_spectrum_scores_match_hand_computation() {
    let dir = tempfile::tempdir().unwrap();
    let (json, _) = run(&dir.path().join("report.json"));
    let spectra = json["spectra"].as_array().unwrap();
    assert_eq!(spectra.len(), 5);
    for (s, (id, hit, mces, tan, hit10)) in spectra.iter().zip(expected()) {
        assert_eq!(s["id"], id);
        assert_eq!(s["top1"]["hit"], hit, "{id}");
        assert_eq!(s["top1"]["min_mces"].as_u64(), mces, "{id}");
        assert!((s["top1"]["max_tanimoto"].as_f64().unwrap() - tan).abs() < 1e-12, "{id}: {}", s["top1"]["max_tanimoto"]);
        assert_eq!(s["top10"]["hit"], hit10, "{id}");
    }
    assert_eq!(spectra[2]["kept"], 0);
    assert_eq!(spectra[2]["discarded"], 2);
    assert_eq!(spectra[0]["kept"], 4);
}

#[test]
fn aggregate_matches_hand_summation() {
    let dir = tempfile::tempdir().unwrap();
    let (json, table) = run(&dir.path().join("report.json"));
    let a = &json["aggregate"];
    let close = |key: &str, want: f64| {
        let got = a[key].as_f64().unwrap();
        assert!((got - want).abs() < 1e-12, "{key}: {got} vs {want}");
    };
    close("top1_accuracy", 20.0);
    close("top1_mces", (0.0 + 2.0 + 2.0 + 4.0) / 4.0);
    close("top1_tanimoto", (1.0 + 0.2 + 0.0 + 1.0 / 11.0 + 1.0 / 17.0) / 5.0);
    close("top10_accuracy", 80.0);
    close("top10_mces", 0.0);
    close("top10_tanimoto", 0.8);
    assert_eq!(a["no_candidate_count"], 1);
    assert!(table.contains("20.00%") && table.contains("80.00%"), "{table}");
}

#[test]
fn report_has_documented_shape() {
    let dir = tempfile::tempdir().unwrap();
    let (json, _) = run(&dir.path().join("report.json"));
    let keys: Vec<&str> = json["aggregate"].as_object().unwrap().keys().map(String::as_str).collect();
    for k in [
        "top1_accuracy",
        "top1_mces",
        "top1_tanimoto",
        "top10_accuracy",
        "top10_mces",
        "top10_tanimoto",
        "no_candidate_count",
    ] {
        assert!(keys.contains(&k), "missing {k}");
    }
    for s in json["spectra"].as_array().unwrap() {
        for k in ["id", "top1", "top10", "kept", "discarded"] {
            assert!(s.get(k).is_some(), "missing {k}");
        }
    }
}

#[test]
fn perfect_candidates_score_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let truth = "a\tCCO\tC2H6O\nb\tc1ccccc1\tC6H6\n";
    let cands = "a\t0\tOCC\nb\t0\tc1ccccc1\n";
    std::fs::write(dir.path().join("t.tsv"), truth).unwrap();
    std::fs::write(dir.path().join("c.tsv"), cands).unwrap();
    let mut cfg = RunConfig::new();
    cfg.set("candidates", dir.path().join("c.tsv").display());
    cfg.set("pairing", dir.path().join("t.tsv").display());
    let r = cmd_evaluate(&cfg, &Sequential).unwrap().report.aggregate;
    assert_eq!(r.top1_accuracy, 100.0);
    assert_eq!(r.top1_mces, Some(0.0));
    assert_eq!(r.top1_tanimoto, 1.0);
}

#[test]
fn id_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.tsv"), "a\tCCO\tC2H6O\n").unwrap();
    std::fs::write(dir.path().join("c.tsv"), "z\t0\tCCO\n").unwrap();
    let mut cfg = RunConfig::new();
    cfg.set("candidates", dir.path().join("c.tsv").display());
    cfg.set("pairing", dir.path().join("t.tsv").display());
    let err = cmd_evaluate(&cfg, &Sequential).err().unwrap();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("[z]") && err.to_string().contains("[a]"), "{err}");
}
