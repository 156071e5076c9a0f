//! Discrete flow matching over bond categories.
//!
//! Each upper-triangular edge follows the linear path
//! `p_t(x | a1) = t * [x == a1] + (1 - t) * p0(x)` from the noise
//! distribution `p0` at `t = 0` to the clean bond at `t = 1`. Generation runs
//! the matching continuous-time Markov chain forward with Euler steps, using
//! rates averaged over a predictor's estimate of the clean bond.

use alloc::vec;
use alloc::vec::Vec;

use crate::molgraph::{BondType, Element, MolecularGraph};
use crate::rng::{categorical, mix, EdgeStreams};

const K: usize = BondType::COUNT;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlowError {
    #[error("{what} out of domain: {value}")]
    Domain { what: &'static str, value: f64 },
    #[error("rates are singular at t = {0}")]
    SingularTime(f64),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(&'static str),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
}

/// Probability vector over the five bond categories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BondDistribution([f64; K]);

impl BondDistribution {
    pub fn new(probs: [f64; K]) -> Result<Self, FlowError> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(FlowError::InvalidDistribution("negative or non-finite entry"));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(FlowError::InvalidDistribution("entries do not sum to 1"));
        }
        Ok(BondDistribution(probs))
    }

    pub fn one_hot(b: BondType) -> Self {
        let mut p = [0.0; K];
        p[b.index()] = 1.0;
        BondDistribution(p)
    }

    pub fn uniform() -> Self {
        BondDistribution([1.0 / K as f64; K])
    }

    pub fn probs(&self) -> &[f64; K] {
        &self.0
    }

    pub fn get(&self, b: BondType) -> f64 {
        self.0[b.index()]
    }
}

/// Noise distribution shared by every edge; strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialDistribution(BondDistribution);

impl InitialDistribution {
    pub fn new(d: BondDistribution) -> Result<Self, FlowError> {
        if d.0.iter().any(|&p| p <= 0.0) {
            return Err(FlowError::InvalidDistribution("initial distribution must be strictly positive"));
        }
        Ok(InitialDistribution(d))
    }

    pub fn uniform() -> Self {
        InitialDistribution(BondDistribution::uniform())
    }

    pub fn dist(&self) -> &BondDistribution {
        &self.0
    }

    /// Number of categories with non-zero probability along the path for `t < 1`.
    pub fn support(&self) -> usize {
        K
    }
}

impl Default for InitialDistribution {
    fn default() -> Self {
        Self::uniform()
    }
}

/// Off-diagonal transition rates out of `from`; the diagonal is implicit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub from: BondType,
    pub rates: [f64; K],
}

impl RateRow {
    pub fn get(&self, to: BondType) -> f64 {
        self.rates[to.index()]
    }

    /// Total rate of leaving the current category.
    pub fn exit_rate(&self) -> f64 {
        self.rates.iter().sum()
    }
}

/// Conditioning signal `y` (fingerprint bits or an encoder output).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningVector(pub Vec<f64>);

impl ConditioningVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// `(A_t, X, y, t)`: noisy bonds over fixed atoms plus conditioning and time.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyGraphState {
    pub graph: MolecularGraph,
    pub condition: ConditioningVector,
    pub t: f64,
}

impl NoisyGraphState {
    pub fn atom_count(&self) -> usize {
        self.graph.atom_count()
    }

    pub fn permute(&self, perm: &[usize]) -> NoisyGraphState {
        NoisyGraphState {
            graph: self.graph.permute(perm),
            condition: self.condition.clone(),
            t: self.t,
        }
    }
}

/// Dense `n x n` grid of per-edge distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGrid {
    n: usize,
    cells: Vec<BondDistribution>,
}

impl EdgeGrid {
    /// Grid from row-major cells; checks symmetry of the cells.
    pub fn new(n: usize, cells: Vec<BondDistribution>) -> Result<Self, FlowError> {
        if cells.len() != n * n {
            return Err(FlowError::ShapeMismatch {
                expected: n * n,
                got: cells.len(),
            });
        }
        Ok(EdgeGrid { n, cells })
    }

    /// Every off-diagonal edge at the same distribution; diagonal at `none`.
    pub fn constant(n: usize, d: BondDistribution) -> Self {
        let cells = (0..n * n)
            .map(|k| {
                if k / n == k % n {
                    BondDistribution::one_hot(BondType::None)
                } else {
                    d
                }
            })
            .collect();
        EdgeGrid { n, cells }
    }

    /// One-hot at the bonds of `g`.
    pub fn from_graph(g: &MolecularGraph) -> Self {
        let cells = g.bond_matrix().iter().map(|&b| BondDistribution::one_hot(b)).collect();
        EdgeGrid {
            n: g.atom_count(),
            cells,
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> &BondDistribution {
        &self.cells[i * self.n + j]
    }

    pub fn cells(&self) -> &[BondDistribution] {
        &self.cells
    }

    pub fn permute(&self, perm: &[usize]) -> EdgeGrid {
        let n = self.n;
        let mut cells = vec![BondDistribution::uniform(); n * n];
        for i in 0..n {
            for j in 0..n {
                cells[perm[i] * n + perm[j]] = self.cells[i * n + j];
            }
        }
        EdgeGrid { n, cells }
    }
}

/// Predictor of clean-bond distributions `p(a1 | M_t)`.
pub trait EdgePredictor {
    type Error;

    fn predict(&self, state: &NoisyGraphState) -> Result<EdgeGrid, Self::Error>;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SampleError<E> {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("predictor failed: {0}")]
    Predictor(E),
}

fn check_unit(what: &'static str, t: f64) -> Result<(), FlowError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(FlowError::Domain { what, value: t });
    }
    Ok(())
}

/// Marginal of the noising path at time `t` given clean bond `a1`.
pub fn noise_prob(a1: BondType, t: f64, p0: &InitialDistribution) -> Result<BondDistribution, FlowError> {
    check_unit("t", t)?;
    let mut p = [0.0; K];
    for (x, px) in p.iter_mut().enumerate() {
        *px = (1.0 - t) * p0.0 .0[x] + if x == a1.index() { t } else { 0.0 };
    }
    Ok(BondDistribution(p))
}

/// Time derivative of the linear path: `[x == a1] - p0(x)`.
fn path_velocity(x: usize, a1: BondType, p0: &InitialDistribution) -> f64 {
    f64::from(u8::from(x == a1.index())) - p0.0 .0[x]
}

/// Corrupt every upper-triangular edge of `g` independently and mirror.
pub fn sample_noisy(
    g: &MolecularGraph,
    t: f64,
    p0: &InitialDistribution,
    seed: u64,
) -> Result<MolecularGraph, FlowError> {
    check_unit("t", t)?;
    let n = g.atom_count();
    let mut out = MolecularGraph::new(g.atoms().to_vec());
    let mut streams = EdgeStreams::new(seed);
    let mut edge = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = noise_prob(g.bond(i, j), t, p0)?;
            let k = categorical(&d.0, streams.uniform(edge));
            out.set_bond(i, j, BondType::ALL[k]);
            edge += 1;
        }
    }
    Ok(out)
}

/// Conditional rate row out of `a_t` toward clean bond `a1`.
///
/// `R(a_t -> x) = max(0, d/dt p_t(x|a1) - d/dt p_t(a_t|a1)) / (Z * p_t(a_t|a1))`
/// for `x != a_t`, where `Z` is the number of categories with support.
pub fn conditional_rate(
    a_t: BondType,
    a1: BondType,
    t: f64,
    p0: &InitialDistribution,
) -> Result<RateRow, FlowError> {
    if !(0.0..1.0).contains(&t) {
        if t >= 1.0 {
            return Err(FlowError::SingularTime(t));
        }
        return Err(FlowError::Domain { what: "t", value: t });
    }
    let p_current = noise_prob(a1, t, p0)?.0[a_t.index()];
    let v_current = path_velocity(a_t.index(), a1, p0);
    let z = p0.support() as f64;
    let mut rates = [0.0; K];
    for (x, r) in rates.iter_mut().enumerate() {
        if x == a_t.index() {
            continue;
        }
        let num = (path_velocity(x, a1, p0) - v_current).max(0.0);
        *r = num / (z * p_current);
    }
    Ok(RateRow { from: a_t, rates })
}

/// Rate row averaged over a predicted clean-bond distribution.
pub fn expected_rate(
    a_t: BondType,
    p1: &BondDistribution,
    t: f64,
    p0: &InitialDistribution,
) -> Result<RateRow, FlowError> {
    let mut rates = [0.0; K];
    for a1 in BondType::ALL {
        let w = p1.get(a1);
        if w == 0.0 {
            continue;
        }
        let row = conditional_rate(a_t, a1, t, p0)?;
        for (r, c) in rates.iter_mut().zip(row.rates) {
            *r += w * c;
        }
    }
    Ok(RateRow { from: a_t, rates })
}

/// First-order transition probabilities over a step of length `dt`.
///
/// If the off-diagonal mass exceeds one it is rescaled to one and the stay
/// probability is zero.
pub fn transition_probs(row: &RateRow, dt: f64) -> [f64; K] {
    let mut q = [0.0; K];
    let from = row.from.index();
    for (x, qx) in q.iter_mut().enumerate() {
        if x != from {
            *qx = row.rates[x] * dt;
        }
    }
    let off: f64 = q.iter().sum();
    if off > 1.0 {
        for qx in q.iter_mut() {
            *qx /= off;
        }
        q[from] = 0.0;
    } else {
        q[from] = 1.0 - off;
    }
    q
}

/// One Euler step of the denoising chain for every edge.
pub fn euler_step(
    state: &NoisyGraphState,
    pred: &EdgeGrid,
    dt: f64,
    p0: &InitialDistribution,
    seed: u64,
) -> Result<NoisyGraphState, FlowError> {
    let n = state.atom_count();
    if pred.size() != n {
        return Err(FlowError::ShapeMismatch {
            expected: n,
            got: pred.size(),
        });
    }
    if !(dt > 0.0) {
        return Err(FlowError::Domain { what: "dt", value: dt });
    }
    if state.t + dt > 1.0 + 1e-12 {
        return Err(FlowError::Domain {
            what: "t + dt",
            value: state.t + dt,
        });
    }
    let mut graph = state.graph.clone();
    let mut streams = EdgeStreams::new(seed);
    let mut edge = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            let a_t = state.graph.bond(i, j);
            let row = expected_rate(a_t, pred.get(i, j), state.t, p0)?;
            let q = transition_probs(&row, dt);
            let k = categorical(&q, streams.uniform(edge));
            graph.set_bond(i, j, BondType::ALL[k]);
            edge += 1;
        }
    }
    Ok(NoisyGraphState {
        graph,
        condition: state.condition.clone(),
        t: (state.t + dt).min(1.0),
    })
}

/// Draw every upper-triangular edge directly from `pred`.
fn jump_to_prediction(state: &NoisyGraphState, pred: &EdgeGrid, seed: u64) -> MolecularGraph {
    let n = state.atom_count();
    let mut graph = MolecularGraph::new(state.graph.atoms().to_vec());
    let mut streams = EdgeStreams::new(seed);
    let mut edge = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            let k = categorical(&pred.get(i, j).0, streams.uniform(edge));
            graph.set_bond(i, j, BondType::ALL[k]);
            edge += 1;
        }
    }
    graph
}

/// Noise adjacency drawn i.i.d. from `p0` over the given atoms.
pub fn sample_initial(atoms: &[Element], p0: &InitialDistribution, seed: u64) -> MolecularGraph {
    let n = atoms.len();
    let mut graph = MolecularGraph::new(atoms.to_vec());
    let mut streams = EdgeStreams::new(seed);
    let mut edge = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            let k = categorical(&p0.0 .0, streams.uniform(edge));
            graph.set_bond(i, j, BondType::ALL[k]);
            edge += 1;
        }
    }
    graph
}

/// Per-step seed: step 0 is the initial draw, step `k + 1` the `k`-th update.
fn step_seed(seed: u64, step: usize) -> u64 {
    mix(seed, step as u64)
}

/// Generate one molecule over a fixed atom list.
///
/// Runs `steps - 1` Euler updates on the uniform grid `t_k = k / steps`, then
/// at `t = 1 - 1/steps` draws each edge straight from the prediction, since
/// the rates diverge as `t -> 1`.
pub fn sample_molecule<P: EdgePredictor + ?Sized>(
    predictor: &P,
    atoms: &[Element],
    condition: &ConditioningVector,
    steps: usize,
    p0: &InitialDistribution,
    seed: u64,
) -> Result<MolecularGraph, SampleError<P::Error>> {
    if steps == 0 {
        return Err(FlowError::Domain {
            what: "steps",
            value: 0.0,
        }
        .into());
    }
    let mut state = NoisyGraphState {
        graph: sample_initial(atoms, p0, step_seed(seed, 0)),
        condition: condition.clone(),
        t: 0.0,
    };
    let dt = 1.0 / steps as f64;
    for k in 0..steps {
        let pred = predictor.predict(&state).map_err(SampleError::Predictor)?;
        if k + 1 == steps {
            return Ok(jump_to_prediction(&state, &pred, step_seed(seed, k + 1)));
        }
        state = euler_step(&state, &pred, dt, p0, step_seed(seed, k + 1))?;
        state.t = (k + 1) as f64 / steps as f64;
    }
    unreachable!("the final step returns")
}

/// Predictor that always returns the bonds of a fixed target graph.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    grid: EdgeGrid,
}

impl OraclePredictor {
    pub fn new(target: &MolecularGraph) -> Self {
        OraclePredictor {
            grid: EdgeGrid::from_graph(target),
        }
    }
}

impl EdgePredictor for OraclePredictor {
    type Error = FlowError;

    fn predict(&self, state: &NoisyGraphState) -> Result<EdgeGrid, FlowError> {
        if state.atom_count() != self.grid.size() {
            return Err(FlowError::ShapeMismatch {
                expected: self.grid.size(),
                got: state.atom_count(),
            });
        }
        Ok(self.grid.clone())
    }
}
