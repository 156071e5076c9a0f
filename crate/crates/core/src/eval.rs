//! Candidate filtering, frequency ranking and top-k metrics.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::fingerprint::{default_fingerprint, tanimoto};
use crate::mces::{mces_with, McesError, McesOptions};
use crate::molgraph::{is_same_molecule, validate, write_canonical, MolecularGraph};
use crate::params::Executor;

/// Keep valence-valid, connected graphs; returns the kept list and the discard count.
pub fn filter_candidates(samples: &[MolecularGraph]) -> (Vec<MolecularGraph>, usize) {
    let kept: Vec<MolecularGraph> = samples
        .iter()
        .filter(|g| {
            let r = validate(g);
            r.valence_ok && r.connected
        })
        .cloned()
        .collect();
    let discarded = samples.len() - kept.len();
    (kept, discarded)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub graph: MolecularGraph,
    pub canonical: String,
    pub count: usize,
    /// Index of the first sample with this canonical form.
    pub first_seen: usize,
}

/// Distinct candidates, most frequent first, ties by earliest appearance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedCandidates {
    pub entries: Vec<RankedEntry>,
}

impl RankedCandidates {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn rank_by_frequency(samples: &[MolecularGraph]) -> RankedCandidates {
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut entries: Vec<RankedEntry> = Vec::new();
    for (pos, g) in samples.iter().enumerate() {
        let canonical = write_canonical(g);
        match index.get(&canonical) {
            Some(&k) => entries[k].count += 1,
            None => {
                index.insert(canonical.clone(), entries.len());
                entries.push(RankedEntry {
                    graph: g.clone(),
                    canonical,
                    count: 1,
                    first_seen: pos,
                });
            }
        }
    }
    entries.sort_by(|a, b| b.count.cmp(&a.count).then(a.first_seen.cmp(&b.first_seen)));
    RankedCandidates { entries }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopK {
    pub hit: bool,
    /// `None` when there is no candidate to compare.
    pub min_mces: Option<usize>,
    pub max_tanimoto: f64,
}

/// Metrics over the first `min(k, len)` ranked entries.
pub fn topk_metrics(
    ranked: &RankedCandidates,
    truth: &MolecularGraph,
    k: usize,
    mces: &McesOptions,
) -> Result<TopK, McesError> {
    assert!(k >= 1, "k must be at least 1");
    let truth_fp = default_fingerprint(truth);
    let mut out = TopK {
        hit: false,
        min_mces: None,
        max_tanimoto: 0.0,
    };
    for e in ranked.entries.iter().take(k) {
        out.hit |= is_same_molecule(&e.graph, truth);
        let d = mces_with(&e.graph, truth, mces)?.distance;
        out.min_mces = Some(out.min_mces.map_or(d, |m| m.min(d)));
        let s = tanimoto(&default_fingerprint(&e.graph), &truth_fp).expect("equal lengths");
        out.max_tanimoto = out.max_tanimoto.max(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumEval {
    pub id: String,
    pub top1: TopK,
    pub top10: TopK,
    pub kept: usize,
    pub discarded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    /// Percent of spectra with a hit.
    pub top1_accuracy: f64,
    /// Mean over spectra with at least one candidate; `None` if there are none.
    pub top1_mces: Option<f64>,
    pub top1_tanimoto: f64,
    pub top10_accuracy: f64,
    pub top10_mces: Option<f64>,
    pub top10_tanimoto: f64,
    pub no_candidate_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub spectra: Vec<SpectrumEval>,
    pub aggregate: Aggregate,
}

/// One spectrum's truth and raw samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub truth: MolecularGraph,
    pub samples: Vec<MolecularGraph>,
}

pub fn evaluate_one(item: &EvalItem, mces: &McesOptions) -> Result<SpectrumEval, McesError> {
    let (kept, discarded) = filter_candidates(&item.samples);
    let ranked = rank_by_frequency(&kept);
    Ok(SpectrumEval {
        id: item.id.clone(),
        top1: topk_metrics(&ranked, &item.truth, 1, mces)?,
        top10: topk_metrics(&ranked, &item.truth, 10, mces)?,
        kept: kept.len(),
        discarded,
    })
}

/// Evaluate every item; records come back sorted by id.
pub fn evaluate_dataset<E: Executor + ?Sized>(
    items: &[EvalItem],
    mces: &McesOptions,
    exec: &E,
) -> Result<EvalReport, McesError> {
    let mut spectra = exec
        .map(items, &|item| evaluate_one(item, mces))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    spectra.sort_by(|a, b| a.id.cmp(&b.id));
    let aggregate = aggregate(&spectra);
    Ok(EvalReport { spectra, aggregate })
}

pub fn aggregate(spectra: &[SpectrumEval]) -> Aggregate {
    let n = spectra.len();
    let pct = |f: &dyn Fn(&SpectrumEval) -> bool| {
        if n == 0 {
            0.0
        } else {
            100.0 * spectra.iter().filter(|s| f(s)).count() as f64 / n as f64
        }
    };
    let mean = |xs: Vec<f64>| {
        if xs.is_empty() {
            None
        } else {
            Some(xs.iter().sum::<f64>() / xs.len() as f64)
        }
    };
    let mces = |f: &dyn Fn(&SpectrumEval) -> Option<usize>| mean(spectra.iter().filter_map(f).map(|d| d as f64).collect());
    let tan = |f: &dyn Fn(&SpectrumEval) -> f64| mean(spectra.iter().map(f).collect()).unwrap_or(0.0);
    Aggregate {
        top1_accuracy: pct(&|s| s.top1.hit),
        top1_mces: mces(&|s| s.top1.min_mces),
        top1_tanimoto: tan(&|s| s.top1.max_tanimoto),
        top10_accuracy: pct(&|s| s.top10.hit),
        top10_mces: mces(&|s| s.top10.min_mces),
        top10_tanimoto: tan(&|s| s.top10.max_tanimoto),
        no_candidate_count: spectra.iter().filter(|s| s.kept == 0).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;
    use crate::params::Sequential;
    use alloc::vec;
    use alloc::vec::Vec;

    fn g(s: &str) -> MolecularGraph {
        parse_smiles(s).unwrap()
    }

    fn repeat(s: &str, n: usize) -> Vec<MolecularGraph> {
        vec![g(s); n]
    }

    #[test]
    fn filter_drops_disconnected_and_invalid() {
        let (kept, dropped) = filter_candidates(&[g("c1ccccc1"), g("CC.O"), g("C(C)(C)(C)(C)C")]);
        assert_eq!(kept, vec![g("c1ccccc1")]);
        assert_eq!(dropped, 2);
        assert_eq!(filter_candidates(&kept), (kept.clone(), 0));
    }

    #[test]
    fn ranking_order_and_ties() {
        let mut s = repeat("CCO", 60);
        s.extend(repeat("CCN", 30));
        s.extend(repeat("CCC", 10));
        let r = rank_by_frequency(&s);
        let counts: Vec<_> = r.entries.iter().map(|e| e.count).collect();
        assert_eq!(counts, vec![60, 30, 10]);
        assert_eq!(r.entries[0].canonical, write_canonical(&g("OCC")));

        let mut tie = repeat("CCN", 1);
        tie.extend(repeat("CCO", 50));
        tie.extend(repeat("CCN", 49));
        let r = rank_by_frequency(&tie);
        assert_eq!(r.entries[0].canonical, write_canonical(&g("CCN")));

        assert_eq!(rank_by_frequency(&repeat("CC", 100)).entries[0].count, 100);
    }

    #[test]
    fn perfect_candidates() {
        let truth = g("CC(=O)O");
        let ranked = rank_by_frequency(&[g("OC(C)=O")]);
        let m = topk_metrics(&ranked, &truth, 1, &McesOptions::default()).unwrap();
        assert_eq!(m, TopK { hit: true, min_mces: Some(0), max_tanimoto: 1.0 });
    }

    #[test]
    fn empty_candidates_are_misses() {
        let items = vec![
            EvalItem { id: "b".into(), truth: g("CCO"), samples: vec![g("CC.O")] },
            EvalItem { id: "a".into(), truth: g("CCO"), samples: vec![g("OCC")] },
        ];
        let r = evaluate_dataset(&items, &McesOptions::default(), &Sequential).unwrap();
        assert_eq!(r.spectra[0].id, "a");
        assert_eq!(r.aggregate.top1_accuracy, 50.0);
        assert_eq!(r.aggregate.top1_mces, Some(0.0));
        assert_eq!(r.aggregate.top1_tanimoto, 0.5);
        assert_eq!(r.aggregate.no_candidate_count, 1);
        assert_eq!(r.spectra[1].top1.min_mces, None);
    }
}
