//! Graph-transformer edge denoiser.
//!
//! Maps a noisy state `(A_t, X, y, t)` to a distribution over clean bond
//! categories for every atom pair. Node, edge and condition inputs each pass
//! through a two-layer MLP; every block then runs multi-head node attention
//! whose query-key products are gated and shifted by edge features, adds
//! mean-pooled incident edge features to the nodes, applies a node
//! feed-forward layer, updates edges from the attention products, the edge
//! itself and its two endpoint states, and applies FiLM modulation to nodes
//! and edges from `[condition || time embedding]`. Logits are averaged over
//! `(i, j)` and `(j, i)` so predictions are symmetric.

mod train;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::flow::{BondDistribution, ConditioningVector, EdgeGrid, EdgePredictor, NoisyGraphState};
use crate::molgraph::{BondType, Element, MolecularGraph};
use crate::params::{Init, ParamSet};

pub use train::{
    batch_gradient, edge_loss, train, BatchItem, DenoiserTrainConfig, TrainReport,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DenoiserError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("gradient contains NaN or infinity")]
    NonFiniteGradient,
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("parameter `{0}` missing or misshapen")]
    BadParameter(String),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub layers: usize,
    pub heads: usize,
    pub node_dim: usize,
    pub edge_dim: usize,
    /// Width of the encoded condition.
    pub cond_hidden: usize,
    /// Sinusoidal time embedding width (even).
    pub time_dim: usize,
    /// Length of the raw conditioning vector.
    pub cond_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            layers: 4,
            heads: 8,
            node_dim: 128,
            edge_dim: 128,
            cond_hidden: 128,
            time_dim: 64,
            cond_dim: 2048,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<(), DenoiserError> {
        let dims = [self.heads, self.node_dim, self.edge_dim, self.cond_hidden, self.time_dim, self.cond_dim];
        if dims.contains(&0) {
            return Err(DenoiserError::InvalidConfig("dimensions must be positive"));
        }
        if !self.node_dim.is_multiple_of(self.heads) {
            return Err(DenoiserError::InvalidConfig("node_dim must be divisible by heads"));
        }
        if !self.time_dim.is_multiple_of(2) {
            return Err(DenoiserError::InvalidConfig("time_dim must be even"));
        }
        Ok(())
    }

    fn film_in(&self) -> usize {
        self.cond_hidden + self.time_dim
    }
}

// Global parameter slots; each encoder is a `w1, b1, w2, b2` run.
const NODE_ENC: usize = 0;
const EDGE_ENC: usize = 4;
const COND_ENC: usize = 8;
const GLOBAL_SLOTS: usize = 12;

// Per-block slots, relative to the block offset.
const FILM_NODE_W: usize = 0;
const FILM_NODE_B: usize = 1;
const FILM_EDGE_W: usize = 2;
const FILM_EDGE_B: usize = 3;
const ATTN_Q: usize = 4;
const ATTN_K: usize = 5;
const ATTN_V: usize = 6;
const ATTN_O: usize = 7;
const ATTN_BO: usize = 8;
const ATTN_EDGE_MUL: usize = 9;
const ATTN_EDGE_ADD: usize = 10;
const ATTN_EDGE_OUT: usize = 11;
const LN1_G: usize = 12;
const LN1_B: usize = 13;
const FFN_W1: usize = 14;
const FFN_B1: usize = 15;
const FFN_W2: usize = 16;
const FFN_B2: usize = 17;
const LN2_G: usize = 18;
const LN2_B: usize = 19;
const UPD_EDGE: usize = 20;
const UPD_SRC: usize = 21;
const UPD_DST: usize = 22;
const UPD_B1: usize = 23;
const UPD_OUT: usize = 24;
const UPD_BO: usize = 25;
const LNE_G: usize = 26;
const LNE_B: usize = 27;
const AGG_W: usize = 28;
const BLOCK_SLOTS: usize = 29;

// Head slots, relative to the head offset.
const HEAD_W1: usize = 0;
const HEAD_B1: usize = 1;
const HEAD_W2: usize = 2;
const HEAD_B2: usize = 3;

/// Parameter names, shapes and initializers in storage order.
pub fn parameter_specs(cfg: &DenoiserConfig) -> Vec<(String, usize, usize, Init)> {
    let (dn, de, dy, c, fi) = (cfg.node_dim, cfg.edge_dim, cfg.cond_hidden, cfg.cond_dim, cfg.film_in());
    let k = BondType::COUNT;
    let mut s: Vec<(String, usize, usize, Init)> = Vec::new();
    let mut add = |name: String, r: usize, c: usize, init: Init| s.push((name, r, c, init));
    add("node_enc.w1".into(), Element::COUNT, dn, Init::FanIn);
    add("node_enc.b1".into(), 1, dn, Init::Zeros);
    add("node_enc.w2".into(), dn, dn, Init::FanIn);
    add("node_enc.b2".into(), 1, dn, Init::Zeros);
    add("edge_enc.w1".into(), k, de, Init::FanIn);
    add("edge_enc.b1".into(), 1, de, Init::Zeros);
    add("edge_enc.w2".into(), de, de, Init::FanIn);
    add("edge_enc.b2".into(), 1, de, Init::Zeros);
    add("cond_enc.w1".into(), c, dy, Init::FanIn);
    add("cond_enc.b1".into(), 1, dy, Init::Zeros);
    add("cond_enc.w2".into(), dy, dy, Init::FanIn);
    add("cond_enc.b2".into(), 1, dy, Init::Zeros);
    for l in 0..cfg.layers {
        let p = |n: &str| format!("block{l}.{n}");
        add(p("film_node.w"), fi, 2 * dn, Init::FanIn);
        add(p("film_node.b"), 1, 2 * dn, Init::Zeros);
        add(p("film_edge.w"), fi, 2 * de, Init::FanIn);
        add(p("film_edge.b"), 1, 2 * de, Init::Zeros);
        add(p("attn.wq"), dn, dn, Init::FanIn);
        add(p("attn.wk"), dn, dn, Init::FanIn);
        add(p("attn.wv"), dn, dn, Init::FanIn);
        add(p("attn.wo"), dn, dn, Init::FanIn);
        add(p("attn.bo"), 1, dn, Init::Zeros);
        add(p("attn.edge_mul"), de, dn, Init::FanIn);
        add(p("attn.edge_add"), de, dn, Init::FanIn);
        add(p("attn.edge_out"), dn, de, Init::FanIn);
        add(p("ln1.g"), 1, dn, Init::Ones);
        add(p("ln1.b"), 1, dn, Init::Zeros);
        add(p("ffn.w1"), dn, 2 * dn, Init::FanIn);
        add(p("ffn.b1"), 1, 2 * dn, Init::Zeros);
        add(p("ffn.w2"), 2 * dn, dn, Init::FanIn);
        add(p("ffn.b2"), 1, dn, Init::Zeros);
        add(p("ln2.g"), 1, dn, Init::Ones);
        add(p("ln2.b"), 1, dn, Init::Zeros);
        add(p("edge_upd.w_edge"), de, de, Init::FanIn);
        add(p("edge_upd.w_src"), dn, de, Init::FanIn);
        add(p("edge_upd.w_dst"), dn, de, Init::FanIn);
        add(p("edge_upd.b1"), 1, de, Init::Zeros);
        add(p("edge_upd.w_out"), de, de, Init::FanIn);
        add(p("edge_upd.b_out"), 1, de, Init::Zeros);
        add(p("ln_edge.g"), 1, de, Init::Ones);
        add(p("ln_edge.b"), 1, de, Init::Zeros);
        add(p("edge_agg.w"), de, dn, Init::FanIn);
    }
    add("head.w1".into(), de, de, Init::FanIn);
    add("head.b1".into(), 1, de, Init::Zeros);
    add("head.w2".into(), de, k, Init::Zeros);
    add("head.b2".into(), 1, k, Init::Zeros);
    debug_assert_eq!(s.len(), GLOBAL_SLOTS + cfg.layers * BLOCK_SLOTS + 4);
    s
}

/// Trainable weights plus the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    config: DenoiserConfig,
    params: ParamSet,
}

impl DenoiserParams {
    /// Fresh weights; the output layer starts at zero so the first
    /// prediction is uniform.
    pub fn init(config: DenoiserConfig, seed: u64) -> Result<Self, DenoiserError> {
        config.validate()?;
        let params = ParamSet::initialize(&parameter_specs(&config), seed);
        Ok(DenoiserParams { config, params })
    }

    /// Wrap loaded tensors, checking names and shapes against `config`.
    pub fn from_parts(config: DenoiserConfig, params: ParamSet) -> Result<Self, DenoiserError> {
        config.validate()?;
        let specs = parameter_specs(&config);
        if specs.len() != params.len() {
            return Err(DenoiserError::ShapeMismatch {
                what: "parameter count",
                expected: specs.len(),
                got: params.len(),
            });
        }
        for ((name, r, c, _), (got_name, t)) in specs.iter().zip(params.iter()) {
            if name != got_name || t.rows != *r || t.cols != *c || t.data.len() != r * c {
                return Err(DenoiserError::BadParameter(name.clone()));
            }
        }
        if !params.all_finite() {
            return Err(DenoiserError::BadParameter("non-finite value".into()));
        }
        Ok(DenoiserParams { config, params })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Distribution over clean bonds for every atom pair.
    pub fn forward(&self, state: &NoisyGraphState) -> Result<EdgeGrid, DenoiserError> {
        self.check_condition(&state.condition)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let cond = tape.constant(1, self.config.cond_dim, state.condition.0.clone());
        let logits = self.logits(&mut tape, &vars, &state.graph, state.t, cond);
        Ok(grid_from_logits(state.atom_count(), tape.value(logits)))
    }

    pub(crate) fn check_condition(&self, c: &ConditioningVector) -> Result<(), DenoiserError> {
        if c.len() != self.config.cond_dim {
            return Err(DenoiserError::ShapeMismatch {
                what: "conditioning vector",
                expected: self.config.cond_dim,
                got: c.len(),
            });
        }
        Ok(())
    }

    /// Symmetrized `n^2 x 5` edge logits on `tape`.
    ///
    /// `vars` are this model's tensors bound on the same tape; `cond` is a
    /// `1 x cond_dim` node, which may itself depend on trainable weights.
    pub fn logits(&self, tape: &mut Tape<'_>, vars: &[Var], graph: &MolecularGraph, t: f64, cond: Var) -> Var {
        let cfg = &self.config;
        let n = graph.atom_count();
        let dn = cfg.node_dim;
        let dh = dn / cfg.heads;

        let mut x = vec![0.0; n * Element::COUNT];
        for (i, a) in graph.atoms().iter().enumerate() {
            x[i * Element::COUNT + a.index()] = 1.0;
        }
        let x = tape.constant(n, Element::COUNT, x);
        let e_in = tape.constant(n * n, BondType::COUNT, graph.one_hot());
        let temb = tape.constant(1, cfg.time_dim, time_embedding(t, cfg.time_dim));

        let mut h = mlp2(tape, x, &vars[NODE_ENC..NODE_ENC + 4]);
        let mut e = mlp2(tape, e_in, &vars[EDGE_ENC..EDGE_ENC + 4]);
        let y = mlp2(tape, cond, &vars[COND_ENC..COND_ENC + 4]);
        let g = tape.concat_cols(&[y, temb]);

        // Row i of `neighbor_sum` sums pair rows (i, j) over j.
        let mut sum = vec![0.0; n * n * n];
        for i in 0..n {
            sum[i * n * n + i * n..i * n * n + (i + 1) * n].fill(1.0);
        }
        let pool = tape.constant(n, n * n, sum.iter().map(|x| x / n as f64).collect());
        let neighbor_sum = tape.constant(n, n * n, sum);
        // Feature-to-head summation and its transpose.
        let mut hs = vec![0.0; dn * cfg.heads];
        for f in 0..dn {
            hs[f * cfg.heads + f / dh] = 1.0;
        }
        let mut hx = vec![0.0; cfg.heads * dn];
        for f in 0..dn {
            hx[(f / dh) * dn + f] = 1.0;
        }
        let head_sum = tape.constant(dn, cfg.heads, hs);
        let head_spread = tape.constant(cfg.heads, dn, hx);
        let src: Vec<usize> = (0..n * n).map(|k| k / n).collect();
        let dst: Vec<usize> = (0..n * n).map(|k| k % n).collect();
        let inv_sqrt_dh = 1.0 / libm::sqrt(dh as f64);

        for l in 0..cfg.layers {
            let b = &vars[GLOBAL_SLOTS + l * BLOCK_SLOTS..GLOBAL_SLOTS + (l + 1) * BLOCK_SLOTS];

            let film_n = tape.matmul(g, b[FILM_NODE_W]);
            let film_n = tape.add_row(film_n, b[FILM_NODE_B]);
            let film_e = tape.matmul(g, b[FILM_EDGE_W]);
            let film_e = tape.add_row(film_e, b[FILM_EDGE_B]);

            // Multi-head attention. Per-feature query-key products are gated
            // and shifted by the edge features, summed per head into scores,
            // and also passed on to the edge update.
            let q = tape.matmul(h, b[ATTN_Q]);
            let q = tape.scale(q, inv_sqrt_dh);
            let k = tape.matmul(h, b[ATTN_K]);
            let v = tape.matmul(h, b[ATTN_V]);
            let qg = tape.gather_rows(q, src.clone());
            let kg = tape.gather_rows(k, dst.clone());
            let qk = tape.mul(qg, kg);
            let gate = tape.matmul(e, b[ATTN_EDGE_MUL]);
            let gated = tape.mul(qk, gate);
            let shift = tape.matmul(e, b[ATTN_EDGE_ADD]);
            let pair = tape.add_n(&[qk, gated, shift]);
            let scores = tape.matmul(pair, head_sum);
            let attn = tape.softmax_groups(scores, n);
            let attn = tape.matmul(attn, head_spread);
            let vg = tape.gather_rows(v, dst.clone());
            let msg = tape.mul(attn, vg);
            let o = tape.matmul(neighbor_sum, msg);
            let o = tape.matmul(o, b[ATTN_O]);
            let o = tape.add_row(o, b[ATTN_BO]);
            let agg = tape.matmul(pool, e);
            let agg = tape.matmul(agg, b[AGG_W]);
            let o = tape.add(o, agg);
            let hr = tape.add(h, o);
            h = tape.layer_norm(hr, b[LN1_G], b[LN1_B]);

            let f = tape.matmul(h, b[FFN_W1]);
            let f = tape.add_row(f, b[FFN_B1]);
            let f = tape.relu(f);
            let f = tape.matmul(f, b[FFN_W2]);
            let f = tape.add_row(f, b[FFN_B2]);
            let hr = tape.add(h, f);
            h = tape.layer_norm(hr, b[LN2_G], b[LN2_B]);
            h = tape.film(h, film_n);

            // Edge update from the edge and both endpoints.
            let pe = tape.matmul(e, b[UPD_EDGE]);
            let ps = tape.matmul(h, b[UPD_SRC]);
            let ps = tape.gather_rows(ps, src.clone());
            let pd = tape.matmul(h, b[UPD_DST]);
            let pd = tape.gather_rows(pd, dst.clone());
            let pp = tape.mul(ps, pd);
            let pa = tape.matmul(pair, b[ATTN_EDGE_OUT]);
            let u = tape.add_n(&[pe, pa, ps, pd, pp]);
            let u = tape.add_row(u, b[UPD_B1]);
            let u = tape.relu(u);
            let u = tape.matmul(u, b[UPD_OUT]);
            let u = tape.add_row(u, b[UPD_BO]);
            let er = tape.add(e, u);
            e = tape.layer_norm(er, b[LNE_G], b[LNE_B]);
            e = tape.film(e, film_e);
        }

        let head = &vars[GLOBAL_SLOTS + cfg.layers * BLOCK_SLOTS..];
        let z = tape.matmul(e, head[HEAD_W1]);
        let z = tape.add_row(z, head[HEAD_B1]);
        let z = tape.relu(z);
        let z = tape.matmul(z, head[HEAD_W2]);
        let logits = tape.add_row(z, head[HEAD_B2]);

        let transpose: Vec<usize> = (0..n * n).map(|k| (k % n) * n + k / n).collect();
        let lt = tape.gather_rows(logits, transpose);
        let sym = tape.add(logits, lt);
        tape.scale(sym, 0.5)
    }
}

impl EdgePredictor for DenoiserParams {
    type Error = DenoiserError;

    fn predict(&self, state: &NoisyGraphState) -> Result<EdgeGrid, DenoiserError> {
        self.forward(state)
    }
}

fn mlp2(tape: &mut Tape<'_>, x: Var, w: &[Var]) -> Var {
    let z = tape.matmul(x, w[0]);
    let z = tape.add_row(z, w[1]);
    let z = tape.relu(z);
    let z = tape.matmul(z, w[2]);
    tape.add_row(z, w[3])
}

/// Sinusoidal embedding of `t` (scaled to a 1000-step range).
pub fn time_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = libm::exp(-libm::log(10_000.0) * k as f64 / half as f64);
        let angle = 1000.0 * t * freq;
        out[k] = libm::sin(angle);
        out[half + k] = libm::cos(angle);
    }
    out
}

/// Softmax every row of symmetrized logits; the diagonal is forced to `none`.
pub(crate) fn grid_from_logits(n: usize, logits: &[f64]) -> EdgeGrid {
    let k = BondType::COUNT;
    let cells = (0..n * n)
        .map(|idx| {
            if idx / n == idx % n {
                return BondDistribution::one_hot(BondType::None);
            }
            let row = &logits[idx * k..(idx + 1) * k];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut p = [0.0; BondType::COUNT];
            let mut s = 0.0;
            for (pk, &x) in p.iter_mut().zip(row) {
                *pk = libm::exp(x - m);
                s += *pk;
            }
            p.iter_mut().for_each(|x| *x /= s);
            BondDistribution::new(p).expect("softmax is a distribution")
        })
        .collect();
    EdgeGrid::new(n, cells).expect("n x n cells")
}
