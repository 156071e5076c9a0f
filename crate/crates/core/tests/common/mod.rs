#![allow(dead_code)]

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specflow_core::denoiser::{parameter_specs, DenoiserConfig, DenoiserParams};
use specflow_core::molgraph::{BondType, Element, MolecularGraph};
use specflow_core::params::{Init, ParamSet};

pub const ELEMENTS: [Element; 4] = [Element::C, Element::N, Element::O, Element::S];

/// Random heavy-atom graph with roughly `density` of the pairs bonded.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, density: f64) -> MolecularGraph {
    let atoms = (0..n).map(|_| ELEMENTS[rng.random_range(0..ELEMENTS.len())]).collect();
    let mut g = MolecularGraph::new(atoms);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < density {
                g.set_bond(i, j, BondType::ALL[rng.random_range(1..BondType::COUNT)]);
            }
        }
    }
    g
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.random_range(0..=i));
    }
    p
}

/// Strategy over graphs with `1..=max_atoms` atoms.
pub fn graph_strategy(max_atoms: usize) -> impl Strategy<Value = MolecularGraph> {
    (1..=max_atoms, any::<u64>(), 0.1f64..0.6).prop_map(|(n, seed, density)| random_graph(&mut rng(seed), n, density))
}

pub fn small_config(cond_dim: usize) -> DenoiserConfig {
    DenoiserConfig {
        layers: 2,
        heads: 2,
        node_dim: 16,
        edge_dim: 16,
        cond_hidden: 16,
        time_dim: 8,
        cond_dim,
    }
}

/// Freshly initialized parameters plus fan-in noise everywhere, so the
/// zero-initialized head does not hide upstream gradients.
pub fn perturbed(cfg: DenoiserConfig, seed: u64) -> DenoiserParams {
    let mut p = DenoiserParams::init(cfg, seed).unwrap();
    let specs: Vec<_> = parameter_specs(&cfg).into_iter().map(|(n, r, c, _)| (n, r, c, Init::FanIn)).collect();
    let noise = ParamSet::initialize(&specs, seed ^ 0x5eed);
    for (t, z) in p.params_mut().tensors_mut().iter_mut().zip(noise.tensors()) {
        for (x, y) in t.data.iter_mut().zip(&z.data) {
            *x += 0.5 * y;
        }
    }
    p
}
