mod common;

use common::{graph_strategy, perturbed, random_graph, random_permutation, rng, small_config};
use proptest::prelude::*;
use rand::Rng;
use specflow_core::eval::{rank_by_frequency, topk_metrics};
use specflow_core::fingerprint::{default_fingerprint, morgan_fingerprint, tanimoto};
use specflow_core::flow::{sample_noisy, ConditioningVector, InitialDistribution, NoisyGraphState};
use specflow_core::mces::McesOptions;
use specflow_core::molgraph::{is_same_molecule, parse_smiles, write_canonical, BondType};
use specflow_core::spectrum::{bin_spectrum, Spectrum};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_form_ignores_atom_order(g in graph_strategy(14), seed: u64) {
        let mut r = rng(seed);
        let want = write_canonical(&g);
        for _ in 0..5 {
            let p = random_permutation(&mut r, g.atom_count());
            prop_assert_eq!(write_canonical(&g.permute(&p)), want.clone());
        }
    }

    #[test]
    fn canonical_smiles_round_trips(g in graph_strategy(14)) {
        let back = parse_smiles(&write_canonical(&g)).unwrap();
        prop_assert!(is_same_molecule(&back, &g));
        prop_assert_eq!(write_canonical(&back), write_canonical(&g));
    }

    #[test]
    fn fingerprint_is_permutation_invariant(g in graph_strategy(16), seed: u64) {
        let p = random_permutation(&mut rng(seed), g.atom_count());
        prop_assert_eq!(default_fingerprint(&g.permute(&p)), default_fingerprint(&g));
    }

    #[test]
    fn self_similarity_is_one(g in graph_strategy(16)) {
        let f = default_fingerprint(&g);
        prop_assert_eq!(tanimoto(&f, &f).unwrap(), 1.0);
    }

    #[test]
    fn larger_radius_only_adds_bits(g in graph_strategy(16), r in 0usize..4) {
        let small = morgan_fingerprint(&g, r, 2048);
        let large = morgan_fingerprint(&g, r + 1, 2048);
        prop_assert!(small.is_subset_of(&large));
    }

    #[test]
    fn tanimoto_is_symmetric_and_bounded(a in graph_strategy(10), b in graph_strategy(10)) {
        let (fa, fb) = (default_fingerprint(&a), default_fingerprint(&b));
        let s = tanimoto(&fa, &fb).unwrap();
        prop_assert_eq!(s, tanimoto(&fb, &fa).unwrap());
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn binning_ignores_peak_order(peaks in prop::collection::vec((0.0f64..120.0, 0.0f64..100.0), 1..30), seed: u64) {
        let mut shuffled = peaks.clone();
        let p = random_permutation(&mut rng(seed), peaks.len());
        for (i, &j) in p.iter().enumerate() {
            shuffled[j] = peaks[i];
        }
        let a = bin_spectrum(&Spectrum::new("a", 150.0, peaks).unwrap(), 1.0, 100.0).unwrap();
        let b = bin_spectrum(&Spectrum::new("a", 150.0, shuffled).unwrap(), 1.0, 100.0).unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn top10_dominates_top1(seed: u64, len in 1usize..30) {
        let mut r = rng(seed);
        let truth = random_graph(&mut r, 6, 0.4);
        let samples: Vec<_> = (0..len)
            .map(|_| if r.random::<f64>() < 0.2 { truth.clone() } else { random_graph(&mut r, 6, 0.4) })
            .collect();
        let ranked = rank_by_frequency(&samples);
        let opts = McesOptions::default();
        let one = topk_metrics(&ranked, &truth, 1, &opts).unwrap();
        let ten = topk_metrics(&ranked, &truth, 10, &opts).unwrap();
        prop_assert!(ten.hit >= one.hit);
        prop_assert!(ten.min_mces.unwrap() <= one.min_mces.unwrap());
        prop_assert!(ten.max_tanimoto >= one.max_tanimoto);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn forward_outputs_valid_symmetric_equivariant(seed: u64, n in 1usize..=64, t in 0.0f64..1.0) {
        let model = perturbed(small_config(12), seed % 7);
        let mut r = rng(seed);
        let clean = random_graph(&mut r, n, 3.0 / n as f64);
        let graph = sample_noisy(&clean, t, &InitialDistribution::uniform(), seed).unwrap();
        let condition = ConditioningVector((0..12).map(|_| r.random_range(0..2) as f64).collect());
        let state = NoisyGraphState { graph, condition, t };
        let out = model.forward(&state).unwrap();
        for i in 0..n {
            prop_assert_eq!(out.get(i, i).get(BondType::None), 1.0);
            for j in 0..n {
                let d = out.get(i, j);
                prop_assert!(d.probs().iter().all(|&p| p >= 0.0));
                prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-6);
                prop_assert_eq!(d, out.get(j, i));
            }
        }
        let p = random_permutation(&mut r, n);
        let moved = model.forward(&state.permute(&p)).unwrap();
        let expect = out.permute(&p);
        for (a, b) in moved.cells().iter().zip(expect.cells()) {
            for (x, y) in a.probs().iter().zip(b.probs()) {
                prop_assert!((x - y).abs() < 1e-5);
            }
        }
    }
}
