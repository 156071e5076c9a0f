use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DenoiserError, DenoiserParams};
use crate::autodiff::{Tape, Var};
use crate::flow::{sample_noisy, ConditioningVector, EdgeGrid, InitialDistribution, NoisyGraphState};
use crate::molgraph::MolecularGraph;
use crate::params::{clip_global_norm, cosine_lr, AdamW, Executor, OptimConfig, ParamSet};
use crate::rng::{mix, shuffle};

/// Summed cross-entropy over the upper-triangular edges.
pub fn edge_loss(pred: &EdgeGrid, target: &MolecularGraph) -> Result<f64, DenoiserError> {
    let n = target.atom_count();
    if pred.size() != n {
        return Err(DenoiserError::ShapeMismatch {
            what: "prediction grid",
            expected: n,
            got: pred.size(),
        });
    }
    let mut loss = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let p = pred.get(i, j).get(target.bond(i, j));
            loss -= libm::log(p.max(1e-12));
        }
    }
    Ok(loss)
}

/// Upper-triangular cell indices of an `n x n` grid.
pub(crate) fn upper_cells(n: usize) -> Vec<usize> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| i * n + j)).collect()
}

/// One training example: a noisy state and the clean graph behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub state: NoisyGraphState,
    pub target: MolecularGraph,
}

impl DenoiserParams {
    /// Loss node for one item, given the conditioning node `cond`.
    pub fn tape_loss(&self, tape: &mut Tape<'_>, vars: &[Var], item: &BatchItem, cond: Var) -> Result<Var, DenoiserError> {
        let n = item.target.atom_count();
        if item.state.atom_count() != n {
            return Err(DenoiserError::ShapeMismatch {
                what: "noisy state",
                expected: n,
                got: item.state.atom_count(),
            });
        }
        let logits = self.logits(tape, vars, &item.state.graph, item.state.t, cond);
        let cells = upper_cells(n);
        let targets = cells.iter().map(|&c| item.target.bond(c / n, c % n).index()).collect();
        let upper = tape.gather_rows(logits, cells);
        Ok(tape.softmax_xent(upper, targets))
    }

    /// Loss and gradient of a single item.
    pub fn item_gradient(&self, item: &BatchItem) -> Result<(f64, ParamSet), DenoiserError> {
        self.check_condition(&item.state.condition)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, true);
        let cond = tape.constant(1, self.config.cond_dim, item.state.condition.0.clone());
        let loss = self.tape_loss(&mut tape, &vars, item, cond)?;
        let mut grads = tape.backward(loss);
        let out = self.params.take_gradients(&mut grads, &vars);
        Ok((tape.value(loss)[0], out))
    }
}

/// Mean loss and mean gradient over `batch`.
pub fn batch_gradient<E: Executor + ?Sized>(
    params: &DenoiserParams,
    batch: &[BatchItem],
    exec: &E,
) -> Result<(f64, ParamSet), DenoiserError> {
    if batch.is_empty() {
        return Err(DenoiserError::EmptyBatch);
    }
    let parts = exec.map(batch, &|item| params.item_gradient(item));
    let mut parts = parts.into_iter();
    let (mut loss, mut total) = parts.next().expect("non-empty batch")?;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        total.add_assign(&g);
    }
    let scale = 1.0 / batch.len() as f64;
    total.scale(scale);
    if !total.all_finite() || !loss.is_finite() {
        return Err(DenoiserError::NonFiniteGradient);
    }
    Ok((loss * scale, total))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Independent corruptions of every example per epoch.
    pub noise_draws: usize,
    pub optim: OptimConfig,
    pub seed: u64,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        DenoiserTrainConfig {
            epochs: 200,
            batch_size: 8,
            noise_draws: 1,
            optim: OptimConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-example loss of each epoch.
    pub epoch_loss: Vec<f64>,
}

/// Shuffled mini-batch training with a fresh `t ~ U[0, 1)` per example.
pub fn train<E: Executor + ?Sized>(
    params: &mut DenoiserParams,
    corpus: &[(MolecularGraph, ConditioningVector)],
    cfg: &DenoiserTrainConfig,
    exec: &E,
) -> Result<TrainReport, DenoiserError> {
    if corpus.is_empty() {
        return Err(DenoiserError::EmptyCorpus);
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 || cfg.noise_draws == 0 {
        return Err(DenoiserError::InvalidConfig("epochs, batch_size and noise_draws must be positive"));
    }
    for (_, c) in corpus {
        params.check_condition(c)?;
    }
    let p0 = InitialDistribution::uniform();
    let per_epoch = corpus.len() * cfg.noise_draws;
    let steps_per_epoch = per_epoch.div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut opt = AdamW::new(&params.params, cfg.optim.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..per_epoch).map(|k| k % corpus.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        shuffle(&mut order, &mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<BatchItem> = chunk
                .iter()
                .map(|&i| {
                    let (g, c) = &corpus[i];
                    let t: f64 = rng.random();
                    let noise_seed = mix(cfg.seed, rng.random());
                    let graph = sample_noisy(g, t, &p0, noise_seed).expect("t in [0, 1)");
                    BatchItem {
                        state: NoisyGraphState {
                            graph,
                            condition: c.clone(),
                            t,
                        },
                        target: g.clone(),
                    }
                })
                .collect();
            let (loss, mut grads) = batch_gradient(params, &batch, exec)?;
            sum += loss * batch.len() as f64;
            clip_global_norm(&mut grads, cfg.optim.clip_norm);
            let lr = cosine_lr(&cfg.optim, step, total);
            opt.step(&mut params.params, &grads, lr);
            step += 1;
        }
        epoch_loss.push(sum / per_epoch as f64);
    }
    Ok(TrainReport { epoch_loss })
}

#[cfg(test)]
mod tests {
    use super::super::tests::{perturbed, small_config};
    use super::*;
    use crate::flow::BondDistribution;
    use crate::molgraph::{parse_smiles, BondType};
    use crate::params::Sequential;
    use alloc::vec;

    fn cond(c: usize, salt: u64) -> ConditioningVector {
        ConditioningVector((0..c).map(|k| (k as u64 * 7 + salt).is_multiple_of(3) as u8 as f64).collect())
    }

    #[test]
    fn loss_closed_forms() {
        let g = parse_smiles("CCO").unwrap();
        assert_eq!(edge_loss(&EdgeGrid::from_graph(&g), &g).unwrap(), 0.0);
        let uniform = EdgeGrid::constant(3, BondDistribution::uniform());
        let l = edge_loss(&uniform, &g).unwrap();
        assert!((l - 3.0 * libm::log(5.0)).abs() < 1e-12);
        assert!((l - 4.8283).abs() < 1e-4);
    }

    #[test]
    fn loss_clamps_zero_probability() {
        let g = parse_smiles("CC").unwrap();
        let wrong = EdgeGrid::constant(2, BondDistribution::one_hot(BondType::Triple));
        let l = edge_loss(&wrong, &g).unwrap();
        assert!((l + libm::log(1e-12)).abs() < 1e-9);
    }

    #[test]
    fn tape_loss_matches_forward_loss() {
        let p = perturbed(small_config(), 9);
        let g = parse_smiles("CC(=O)N").unwrap();
        let noisy = sample_noisy(&g, 0.4, &InitialDistribution::uniform(), 3).unwrap();
        let item = BatchItem {
            state: NoisyGraphState { graph: noisy, condition: cond(6, 1), t: 0.4 },
            target: g.clone(),
        };
        let (l, _) = p.item_gradient(&item).unwrap();
        let direct = edge_loss(&p.forward(&item.state).unwrap(), &g).unwrap();
        assert!((l - direct).abs() < 1e-10);
    }

    #[test]
    fn duplicated_item_keeps_mean_gradient() {
        let p = perturbed(small_config(), 2);
        let g = parse_smiles("OCCN").unwrap();
        let item = BatchItem {
            state: NoisyGraphState { graph: g.clone(), condition: cond(6, 0), t: 0.2 },
            target: g,
        };
        let (l1, g1) = batch_gradient(&p, core::slice::from_ref(&item), &Sequential).unwrap();
        let (l2, g2) = batch_gradient(&p, &[item.clone(), item], &Sequential).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn training_errors() {
        let mut p = DenoiserParams::init(small_config(), 0).unwrap();
        let cfg = DenoiserTrainConfig::default();
        assert_eq!(train(&mut p, &[], &cfg, &Sequential), Err(DenoiserError::EmptyCorpus));
        assert_eq!(batch_gradient(&p, &[], &Sequential).unwrap_err(), DenoiserError::EmptyBatch);
        let corpus = vec![(parse_smiles("CC").unwrap(), cond(5, 0))];
        assert!(matches!(
            train(&mut p, &corpus, &cfg, &Sequential),
            Err(DenoiserError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let corpus: Vec<_> = ["CCO", "C=CC#N", "c1ccccc1", "OC(=O)C"]
            .iter()
            .enumerate()
            .map(|(k, s)| (parse_smiles(s).unwrap(), cond(6, k as u64)))
            .collect();
        let cfg = DenoiserTrainConfig {
            epochs: 30,
            batch_size: 2,
            noise_draws: 1,
            optim: OptimConfig { lr: 3e-3, ..OptimConfig::default() },
            seed: 11,
        };
        let run = || {
            let mut p = DenoiserParams::init(small_config(), 4).unwrap();
            let r = train(&mut p, &corpus, &cfg, &Sequential).unwrap();
            (p, r)
        };
        let (pa, ra) = run();
        let (pb, rb) = run();
        assert_eq!(ra, rb);
        assert_eq!(pa, pb);
        let head: f64 = ra.epoch_loss[..5].iter().sum();
        let tail: f64 = ra.epoch_loss[25..].iter().sum();
        assert!(tail < head, "{:?}", ra.epoch_loss);
    }
}
