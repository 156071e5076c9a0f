//! Named parameter tensors and the shared optimizer.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Tape, Var};

#[cfg(not(any(feature = "std", test)))]
use libm::sqrt;

/// Intrinsic square root in std builds.
#[cfg(any(feature = "std", test))]
#[inline]
fn sqrt(x: f64) -> f64 {
    x.sqrt()
}

/// Row-major matrix of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// How a parameter starts out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `[-1/sqrt(rows), 1/sqrt(rows)]`.
    FanIn,
    Zeros,
    Ones,
}

/// Ordered, named collection of tensors. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    /// Build from `(name, rows, cols, init)` specs with a seeded generator.
    pub fn initialize(specs: &[(String, usize, usize, Init)], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParamSet::new();
        for (name, rows, cols, init) in specs {
            let t = match init {
                Init::Zeros => Tensor::zeros(*rows, *cols),
                Init::Ones => Tensor::filled(*rows, *cols, 1.0),
                Init::FanIn => {
                    let bound = 1.0 / libm::sqrt(*rows as f64);
                    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
                    Tensor {
                        rows: *rows,
                        cols: *cols,
                        data,
                    }
                }
            };
            set.push(name.clone(), t);
        }
        set
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total scalar count.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect(),
        }
    }

    /// Same names and shapes as `other`.
    pub fn congruent(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.rows == b.rows && a.cols == b.cols)
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        libm::sqrt(self.tensors.iter().flat_map(|t| &t.data).map(|x| x * x).sum())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flat_map(|t| &t.data).all(|x| x.is_finite())
    }

    /// Register every tensor on `tape`, trainable or frozen.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.rows, t.cols, &t.data)
                } else {
                    tape.frozen(t.rows, t.cols, &t.data)
                }
            })
            .collect()
    }

    /// Tape gradients of `vars` (bound from `self`), zero where absent.
    pub fn take_gradients(&self, grads: &mut Gradients, vars: &[Var]) -> ParamSet {
        ParamSet {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .zip(vars)
                .map(|(t, &v)| match grads.take(v) {
                    Some(data) => Tensor {
                        rows: t.rows,
                        cols: t.cols,
                        data,
                    },
                    None => Tensor::zeros(t.rows, t.cols),
                })
                .collect(),
        }
    }

    /// Add the tape gradients of `vars` (bound from `self`) into `out`.
    pub fn accumulate(&self, grads: &Gradients, vars: &[Var], out: &mut ParamSet) {
        for (dst, &v) in out.tensors.iter_mut().zip(vars) {
            if let Some(g) = grads.get(v) {
                dst.data.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
        }
    }
}

/// Optimizer and schedule settings shared by every trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 3e-4,
            min_lr: 1e-6,
            weight_decay: 1e-12,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

/// Cosine annealing from `lr` at step 0 to `min_lr` at `total`.
pub fn cosine_lr(cfg: &OptimConfig, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return cfg.lr;
    }
    let frac = (step as f64 / (total - 1) as f64).min(1.0);
    cfg.min_lr + 0.5 * (cfg.lr - cfg.min_lr) * (1.0 + libm::cos(core::f64::consts::PI * frac))
}

/// Scale `grads` so its global norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut ParamSet, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: OptimConfig,
    m: ParamSet,
    v: ParamSet,
    step: u64,
}

impl AdamW {
    pub fn new(params: &ParamSet, cfg: OptimConfig) -> Self {
        AdamW {
            cfg,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet, lr: f64) {
        self.step += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - libm::pow(c.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.step as f64);
        let (b1, b2) = (c.beta1, c.beta2);
        let step_size = lr / bc1;
        let inv_sqrt_bc2 = 1.0 / sqrt(bc2);
        let decay = lr * c.weight_decay;
        for (((p, g), m), v) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.m.tensors)
            .zip(&mut self.v.tensors)
        {
            let n = p.data.len();
            let (p, g, m, v) = (&mut p.data[..n], &g.data[..n], &mut m.data[..n], &mut v.data[..n]);
            for k in 0..n {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let denom = sqrt(v[k]) * inv_sqrt_bc2 + c.eps;
                p[k] -= step_size * m[k] / denom + decay * p[k];
            }
        }
    }
}

/// Runs independent per-item work; implementations must return results in input order.
pub trait Executor {
    fn map<T: Sync, R: Send>(&self, items: &[T], f: &(dyn Fn(&T) -> R + Sync)) -> Vec<R>;
}

/// In-order, single-threaded executor.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T: Sync, R: Send>(&self, items: &[T], f: &(dyn Fn(&T) -> R + Sync)) -> Vec<R> {
        items.iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn cosine_endpoints() {
        let cfg = OptimConfig::default();
        assert_eq!(cosine_lr(&cfg, 0, 100), cfg.lr);
        assert!((cosine_lr(&cfg, 99, 100) - cfg.min_lr).abs() < 1e-18);
        let mid = cosine_lr(&cfg, 50, 101);
        assert!((mid - 0.5 * (cfg.lr + cfg.min_lr)).abs() < 1e-15);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = ParamSet::new();
        g.push("a", Tensor { rows: 1, cols: 2, data: vec![3.0, 4.0] });
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-15);
        let mut small = ParamSet::new();
        small.push("a", Tensor { rows: 1, cols: 1, data: vec![0.5] });
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small.get(0).data, vec![0.5]);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut p = ParamSet::new();
        p.push("w", Tensor { rows: 1, cols: 2, data: vec![1.0, -1.0] });
        let mut g = p.zeros_like();
        g.tensors_mut()[0].data = vec![0.5, -2.0];
        let mut opt = AdamW::new(&p, OptimConfig { weight_decay: 0.0, ..OptimConfig::default() });
        opt.step(&mut p, &g, 0.1);
        // Bias-corrected first step is lr * sign(g).
        assert!((p.get(0).data[0] - 0.9).abs() < 1e-6);
        assert!((p.get(0).data[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let specs = [("w".to_string(), 4, 3, Init::FanIn), ("b".to_string(), 1, 3, Init::Zeros)];
        let a = ParamSet::initialize(&specs, 1);
        let b = ParamSet::initialize(&specs, 1);
        assert_eq!(a, b);
        assert!(a.get(0).data.iter().all(|x| x.abs() <= 0.5));
        assert!(a.get(1).data.iter().all(|&x| x == 0.0));
        assert_ne!(a, ParamSet::initialize(&specs, 2));
    }
}
