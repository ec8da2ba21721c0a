//! Simulated K-worker estimation of the single-index direction: shard plans,
//! message accounting, and the multi-round distributed Newton update.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AqrError, Result};
use crate::kernel_cde::{partial_sums, Bandwidth, Dataset, EvalPoint, Order, PartialSums, SortedView};
use crate::numeric::ExactSum;
use crate::psis_index::{
    accumulate_row, fit_full, newton_direction, normalize_beta, ols_direction, psis_eval, IndexModel, PsisPartial,
};

/// How rows are split over workers. Worker 0 is the central machine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardPlan {
    sizes: Vec<usize>,
}

impl ShardPlan {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(AqrError::PlanMismatch("no workers".into()));
        }
        if let Some(k) = sizes.iter().position(|&s| s < 2) {
            return Err(AqrError::PlanMismatch(format!("worker {k} has fewer than 2 rows")));
        }
        Ok(Self { sizes })
    }

    /// `k` workers with `size` rows each.
    pub fn equal(k: usize, size: usize) -> Result<Self> {
        Self::new(vec![size; k])
    }

    pub fn workers(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn central(&self) -> usize {
        0
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        if self.total() != data.n() {
            return Err(AqrError::PlanMismatch(format!("plan covers {} rows, data has {}", self.total(), data.n())));
        }
        Ok(())
    }

    fn check_labels(&self, data: &Dataset) -> Result<()> {
        self.check(data)?;
        let mut counts = vec![0usize; self.workers()];
        for &k in data.shard_of() {
            match counts.get_mut(k) {
                Some(c) => *c += 1,
                None => return Err(AqrError::PlanMismatch(format!("row assigned to unknown worker {k}"))),
            }
        }
        if counts != self.sizes {
            return Err(AqrError::PlanMismatch(format!("shard sizes {counts:?} differ from plan {:?}", self.sizes)));
        }
        Ok(())
    }
}

/// Assigns rows to workers by a seeded random permutation.
pub fn partition(data: &Dataset, plan: &ShardPlan, seed: u64) -> Result<Dataset> {
    plan.check(data)?;
    let mut perm: Vec<usize> = (0..data.n()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut labels = vec![0; data.n()];
    let mut next = perm.into_iter();
    for (k, &size) in plan.sizes.iter().enumerate() {
        for row in next.by_ref().take(size) {
            labels[row] = k;
        }
    }
    data.clone().with_shards(labels)
}

/// Pilot estimate from the central shard alone. Without `init` the search
/// starts from the least-squares direction on that shard.
pub fn local_init(data: &Dataset, plan: &ShardPlan, h1: Bandwidth, init: Option<&[f64]>) -> Result<Vec<f64>> {
    plan.check_labels(data)?;
    let shard = data.subset(&data.shard_rows(plan.central()))?;
    let start = match init {
        Some(b) => b.to_vec(),
        None => ols_direction(&shard)?,
    };
    Ok(fit_full(&shard, h1, &start)?.beta)
}

/// Round count from the rate condition `q ≥ ln(n/n₁) / ln(n₁h₁⁵ / ln n₁)`.
/// Returns the rounded-up count (at least 1) and the raw ratio.
pub fn default_rounds(n: usize, n1: usize, h1: f64) -> (usize, f64) {
    let (n, n1) = (n as f64, n1 as f64);
    let raw = (n / n1).ln() / (n1 * h1.powi(5) / n1.ln()).ln();
    let q = if raw.is_finite() && raw > 1.0 { raw.ceil() as usize } else { 1 };
    (q, raw)
}

/// Mean absolute coordinate error.
pub fn aae(beta_hat: &[f64], beta0: &[f64]) -> Result<f64> {
    if beta_hat.len() != beta0.len() {
        return Err(AqrError::ShapeMismatch { expected: beta0.len(), got: beta_hat.len() });
    }
    if beta0.is_empty() {
        return Err(AqrError::EmptyInput);
    }
    Ok(beta_hat.iter().zip(beta0).map(|(a, b)| (a - b).abs()).sum::<f64>() / beta0.len() as f64)
}

/// What a message carries.
#[derive(Debug, Clone)]
pub enum Payload {
    /// Current direction, broadcast by the central machine.
    Beta(Vec<f64>),
    /// A worker's share of the global PSIS gradient, one exact accumulator per
    /// coordinate.
    Gradient(Vec<ExactSum>),
    /// Kernel sums `S1..S4` of one worker's rows for a batch of evaluation points.
    KernelStats(Vec<PartialSums>),
}

impl Payload {
    fn scalars(&self) -> usize {
        match self {
            Payload::Beta(b) => b.len(),
            Payload::Gradient(g) => g.len(),
            Payload::KernelStats(parts) => parts.iter().map(PartialSums::scalar_count).sum(),
        }
    }
}

/// Traffic of one round.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundComm {
    /// Broadcast plus gradient scalars: the `O(K·p)` part of the protocol.
    pub scalars_sent: usize,
    pub messages: usize,
    pub broadcast_scalars: usize,
    pub gradient_scalars: usize,
    /// Cross-worker kernel sums exchanged to evaluate `F̂` at remote points.
    pub kernel_stat_scalars: usize,
    pub kernel_stat_messages: usize,
    /// Doubles actually used to carry the exact gradient accumulators.
    pub gradient_words: usize,
    /// Largest single gradient or broadcast payload.
    pub max_vector_payload: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommTotal {
    pub scalars_sent: usize,
    pub messages: usize,
    pub kernel_stat_scalars: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommReport {
    pub rounds: Vec<RoundComm>,
    pub total: CommTotal,
}

impl CommReport {
    fn push(&mut self, r: RoundComm) {
        self.total.scalars_sent += r.scalars_sent;
        self.total.messages += r.messages + r.kernel_stat_messages;
        self.total.kernel_stat_scalars += r.kernel_stat_scalars;
        self.rounds.push(r);
    }
}

/// Synchronous message layer for one round. Every cross-worker value passes
/// through [`MessageBus::send`], which counts it and hands it to the receiver.
#[derive(Debug, Default)]
pub struct MessageBus {
    round: RoundComm,
}

impl MessageBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(&mut self, from: usize, to: usize, payload: Payload) -> Payload {
        let n = payload.scalars();
        match &payload {
            Payload::Beta(_) => {
                self.round.broadcast_scalars += n;
                self.round.scalars_sent += n;
                self.round.messages += 1;
                self.round.max_vector_payload = self.round.max_vector_payload.max(n);
            }
            Payload::Gradient(g) => {
                self.round.gradient_scalars += n;
                self.round.scalars_sent += n;
                self.round.messages += 1;
                self.round.gradient_words += g.iter().map(|s| s.components().max(1)).sum::<usize>();
                self.round.max_vector_payload = self.round.max_vector_payload.max(n);
            }
            Payload::KernelStats(parts) => {
                debug_assert!(parts.iter().all(|s| s.order < Order::Hessian), "second-order sums never leave a worker");
                if from != to {
                    self.round.kernel_stat_scalars += n;
                    self.round.kernel_stat_messages += 1;
                }
            }
        }
        payload
    }

    pub fn finish(self) -> RoundComm {
        self.round
    }
}

/// Central-machine state between rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistFitState {
    pub beta_q: Vec<f64>,
    pub q: usize,
    pub h: Bandwidth,
    pub h1: Bandwidth,
    pub comm: CommReport,
}

impl DistFitState {
    pub fn new(beta: &[f64], h: Bandwidth, h1: Bandwidth) -> Result<Self> {
        Ok(Self { beta_q: normalize_beta(beta)?, q: 0, h, h1, comm: CommReport::default() })
    }
}

/// The two quantities a round needs: the aggregated global gradient (with its
/// traffic routed through the bus) and the central Hessian.
pub trait RoundOracle {
    fn global_gradient(&self, beta: &[f64], bus: &mut MessageBus) -> Result<Vec<f64>>;
    fn central_hessian(&self, beta: &[f64]) -> Result<DMatrix<f64>>;
}

/// The PSIS objective split over the shards of `data`.
pub struct PsisOracle<'a> {
    data: &'a Dataset,
    plan: &'a ShardPlan,
    central: Dataset,
    h: Bandwidth,
    h1: Bandwidth,
}

impl<'a> PsisOracle<'a> {
    pub fn new(data: &'a Dataset, plan: &'a ShardPlan, h: Bandwidth, h1: Bandwidth) -> Result<Self> {
        plan.check_labels(data)?;
        let central = data.subset(&data.shard_rows(plan.central()))?;
        Ok(Self { data, plan, central, h, h1 })
    }
}

impl RoundOracle for PsisOracle<'_> {
    fn global_gradient(&self, beta: &[f64], bus: &mut MessageBus) -> Result<Vec<f64>> {
        let data = self.data;
        let k_count = self.plan.workers();
        let central = self.plan.central();
        let p = data.p();
        for k in 0..k_count {
            if k != central {
                bus.send(central, k, Payload::Beta(beta.to_vec()));
            }
        }
        let index = data.index(beta)?;
        let view = SortedView::new(data.y());
        let shard_rows: Vec<Vec<usize>> = (0..k_count).map(|k| data.shard_rows(k)).collect();
        let shard_order: Vec<Vec<usize>> = shard_rows.iter().map(|r| view.restrict(r, data.n())).collect();

        // Phase 1: every worker computes its kernel sums at every evaluation
        // point owned by every worker and ships them to the owner.
        let mut inbox: Vec<Vec<Vec<PartialSums>>> = vec![Vec::with_capacity(k_count); k_count];
        for (owner, rows) in shard_rows.iter().enumerate() {
            for (from, order) in shard_order.iter().enumerate() {
                let batch: Vec<PartialSums> = rows
                    .par_iter()
                    .map(|&i| {
                        let ep = EvalPoint { x: data.row(i), u: index[i], exclude: None };
                        partial_sums(data, &index, &view, order, ep, self.h.h, Order::Gradient)
                    })
                    .collect();
                match bus.send(from, owner, Payload::KernelStats(batch)) {
                    Payload::KernelStats(b) => inbox[owner].push(b),
                    _ => unreachable!(),
                }
            }
        }

        // Phase 2: each owner merges the sums in worker order, finishes F̂ and
        // its gradient, and accumulates its rows' pair terms.
        let mut total = vec![ExactSum::new(); p];
        for (owner, rows) in shard_rows.iter().enumerate() {
            let parts: Vec<Result<PsisPartial>> = rows
                .par_iter()
                .enumerate()
                .map(|(slot, &i)| {
                    let mut merged = inbox[owner][0][slot].clone();
                    for from in 1..k_count {
                        merged.merge(&inbox[owner][from][slot]);
                    }
                    let d = merged.finalize(index[i])?;
                    let mut acc = PsisPartial::new(p, Order::Gradient);
                    accumulate_row(&view, i, &d, &mut acc);
                    Ok(acc)
                })
                .collect();
            let mut local = PsisPartial::new(p, Order::Gradient);
            for part in parts {
                local.merge(&part?);
            }
            match bus.send(owner, central, Payload::Gradient(local.gradient)) {
                Payload::Gradient(g) => total.iter_mut().zip(&g).for_each(|(a, b)| a.merge(b)),
                _ => unreachable!(),
            }
        }
        let scale = 1.0 / (data.n() as f64 * data.n() as f64);
        Ok(total.iter().map(|s| s.value() * scale).collect())
    }

    fn central_hessian(&self, beta: &[f64]) -> Result<DMatrix<f64>> {
        Ok(psis_eval(&self.central, beta, self.h1, Order::Hessian)?.hessian.expect("hessian requested"))
    }
}

/// One undamped round `β ← normalize(β - H₁⁻¹ ∇L̄)` with ridge repair on `H₁`.
pub fn newton_round_with(oracle: &dyn RoundOracle, state: &DistFitState) -> Result<DistFitState> {
    let mut bus = MessageBus::new();
    let grad = oracle.global_gradient(&state.beta_q, &mut bus)?;
    let hess = oracle.central_hessian(&state.beta_q)?;
    let d = newton_direction(&grad, &hess)?;
    let next: Vec<f64> = state.beta_q.iter().zip(&d).map(|(b, s)| b + s).collect();
    let mut out = state.clone();
    out.beta_q = normalize_beta(&next)?;
    out.q += 1;
    out.comm.push(bus.finish());
    Ok(out)
}

pub fn newton_round(data: &Dataset, plan: &ShardPlan, state: &DistFitState) -> Result<DistFitState> {
    let oracle = PsisOracle::new(data, plan, state.h, state.h1)?;
    newton_round_with(&oracle, state)
}

/// Result of [`run_distributed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistFit {
    pub model: IndexModel,
    pub comm: CommReport,
    pub init: Vec<f64>,
    /// Iterates after each round.
    pub path: Vec<Vec<f64>>,
    pub rounds: usize,
}

/// `rounds` Newton rounds starting from `init`, or from [`local_init`] when
/// `init` is `None`.
pub fn run_distributed(
    data: &Dataset,
    plan: &ShardPlan,
    rounds: usize,
    h: Bandwidth,
    h1: Bandwidth,
    init: Option<&[f64]>,
) -> Result<DistFit> {
    if rounds == 0 {
        return Err(AqrError::InvalidParameter("at least one round is required".into()));
    }
    let oracle = PsisOracle::new(data, plan, h, h1)?;
    let init = match init {
        Some(b) => normalize_beta(b)?,
        None => local_init(data, plan, h1, None)?,
    };
    let mut state = DistFitState::new(&init, h, h1)?;
    let mut path = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        state = newton_round_with(&oracle, &state)?;
        path.push(state.beta_q.clone());
    }
    Ok(DistFit { model: IndexModel { beta: state.beta_q, h }, comm: state.comm, init, path, rounds })
}
