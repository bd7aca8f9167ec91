use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Routing, RunConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fm::{self, Hyperparams, Task};
use crate::partition::{ParamToken, Phase, RowBlock};

use super::next_queue;

/// Per-worker synchronization terms over the worker's local examples.
///
/// `g` and `a` are the values used by the update phase. The accumulate phase
/// rebuilds `a` from scratch together with the two partial sums, and
/// [`WorkerState::finalize_aux`] turns them into fresh multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxState {
    k: usize,
    pub g: Vec<f64>,
    /// Row-major `n_local x K`.
    pub a: Vec<f64>,
    pub linear_partial: Vec<f64>,
    /// Row-major `n_local x K`, accumulates `(v_jk x_ij)^2`.
    pub sumsq_partial: Vec<f64>,
}

impl AuxState {
    fn new(n: usize, k: usize) -> Self {
        AuxState {
            k,
            g: vec![0.0; n],
            a: vec![0.0; n * k],
            linear_partial: vec![0.0; n],
            sumsq_partial: vec![0.0; n * k],
        }
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn a_row(&self, i: usize) -> &[f64] {
        &self.a[i * self.k..(i + 1) * self.k]
    }
}

/// Loss and metric sums over one worker's block, reported after each
/// accumulate phase.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BlockReport {
    pub examples: usize,
    pub loss_sum: f64,
    pub sq_err_sum: f64,
    pub correct: usize,
}

impl BlockReport {
    pub fn merge(self, other: BlockReport) -> BlockReport {
        BlockReport {
            examples: self.examples + other.examples,
            loss_sum: self.loss_sum + other.loss_sum,
            sq_err_sum: self.sq_err_sum + other.sq_err_sum,
            correct: self.correct + other.correct,
        }
    }
}

/// Where a processed token goes next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Destination {
    Worker(usize),
    /// The token has finished its last phase of the epoch.
    Gather,
}

/// One worker: an exclusive row block, its synchronization terms, and the
/// bookkeeping for the phase it is in.
pub struct WorkerState<'a> {
    id: usize,
    workers: usize,
    block: RowBlock,
    data: &'a Dataset,
    k: usize,
    hyper: Hyperparams,
    routing: Routing,
    local_a_refresh: bool,
    rng: ChaCha8Rng,
    /// CSC view of the block: entries of dimension `j` live in
    /// `col_entries[col_start[j]..col_start[j + 1]]` as (local row, value),
    /// ascending in local row.
    col_start: Vec<usize>,
    col_entries: Vec<(u32, f64)>,
    w0: f64,
    aux: AuxState,
    epoch: usize,
    phase: Phase,
    eta: f64,
    processed: usize,
    accumulate_rounds: usize,
    finalized: bool,
    started: bool,
    deferred: Vec<ParamToken>,
    ready: std::collections::VecDeque<ParamToken>,
}

impl<'a> WorkerState<'a> {
    pub fn new(
        id: usize,
        workers: usize,
        block: RowBlock,
        data: &'a Dataset,
        config: &RunConfig,
    ) -> Self {
        let dim = data.dim();
        let rows = &data.examples()[block.start..block.end];
        let mut counts = vec![0usize; dim + 2];
        for x in rows {
            for &(j, _) in x.features() {
                counts[j as usize + 1] += 1;
            }
        }
        for j in 1..counts.len() {
            counts[j] += counts[j - 1];
        }
        let mut fill = counts.clone();
        let mut col_entries = vec![(0u32, 0.0); counts[dim + 1]];
        for (i, x) in rows.iter().enumerate() {
            for &(j, v) in x.features() {
                col_entries[fill[j as usize]] = (i as u32, v);
                fill[j as usize] += 1;
            }
        }
        let seed = config
            .seed
            .wrapping_add((id as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        WorkerState {
            id,
            workers,
            block,
            data,
            k: config.k,
            hyper: config.hyperparams(),
            routing: config.routing,
            local_a_refresh: config.local_a_refresh,
            rng: ChaCha8Rng::seed_from_u64(seed),
            col_start: counts,
            col_entries,
            w0: 0.0,
            aux: AuxState::new(block.len(), config.k),
            epoch: 0,
            phase: Phase::Accumulate,
            eta: config.eta,
            processed: 0,
            accumulate_rounds: 0,
            finalized: true,
            started: false,
            deferred: Vec::new(),
            ready: Default::default(),
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn block(&self) -> RowBlock {
        self.block
    }

    pub fn aux(&self) -> &AuxState {
        &self.aux
    }

    /// Latest bias value seen during an accumulate pass.
    pub fn w0(&self) -> f64 {
        self.w0
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Tokens processed in the current phase.
    pub fn processed(&self) -> usize {
        self.processed
    }

    pub fn accumulate_rounds(&self) -> usize {
        self.accumulate_rounds
    }

    fn tokens_per_phase(&self) -> usize {
        self.data.dim() + 1
    }

    pub fn phase_complete(&self) -> bool {
        self.processed == self.tokens_per_phase()
    }

    /// Enters `(epoch, phase)`. Entering an accumulate phase clears the
    /// partial sums and the projection matrix. Deferred tokens tagged for the
    /// new phase become available through [`Self::pop_ready`].
    pub fn begin_phase(&mut self, epoch: usize, phase: Phase) -> Result<()> {
        if self.phase == Phase::Accumulate && !self.finalized {
            return Err(Error::Engine(format!(
                "worker {} left accumulate phase without finalizing",
                self.id
            )));
        }
        if self.started && !self.phase_complete() {
            return Err(Error::Engine(format!(
                "worker {} left {:?} phase after {} of {} tokens",
                self.id,
                self.phase,
                self.processed,
                self.tokens_per_phase()
            )));
        }
        if self.started && (epoch, phase) <= (self.epoch, self.phase) {
            return Err(Error::Engine(format!(
                "worker {} asked to move backwards to epoch {epoch} {phase:?}",
                self.id
            )));
        }
        self.started = true;
        self.epoch = epoch;
        self.phase = phase;
        self.eta = self.hyper.eta_at(epoch);
        self.processed = 0;
        if phase == Phase::Accumulate {
            self.accumulate_rounds = 0;
            self.finalized = false;
            self.aux.linear_partial.fill(0.0);
            self.aux.sumsq_partial.fill(0.0);
            self.aux.a.fill(0.0);
        }
        let (now, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.deferred)
            .into_iter()
            .partition(|t| (t.epoch, t.phase) == (epoch, phase));
        self.deferred = later;
        self.ready.extend(now);
        Ok(())
    }

    /// A deferred token that matches the current phase, if any.
    pub fn pop_ready(&mut self) -> Option<ParamToken> {
        self.ready.pop_front()
    }

    /// Hands a token to the worker. Tokens for the current phase are
    /// processed and returned with their next destination; tokens tagged for
    /// a later phase are held back until that phase begins.
    pub fn offer(&mut self, token: ParamToken) -> Result<Option<(ParamToken, Destination)>> {
        let tag = (token.epoch, token.phase);
        let mine = (self.epoch, self.phase);
        if !self.started || tag > mine {
            self.deferred.push(token);
            return Ok(None);
        }
        if tag < mine || self.phase_complete() {
            return Err(Error::Engine(format!(
                "worker {} at epoch {} {:?} received stale token {} tagged epoch {} {:?}",
                self.id, self.epoch, self.phase, token.dim, token.epoch, token.phase
            )));
        }
        let token = match self.phase {
            Phase::Update => self.worker_update_step(token)?,
            Phase::Accumulate => self.worker_accumulate_step(token)?,
        };
        Ok(Some(self.route(token)))
    }

    fn check_token(&self, token: &ParamToken, phase: Phase) -> Result<()> {
        if token.phase != phase || self.phase != phase || token.epoch != self.epoch {
            return Err(Error::Engine(format!(
                "worker {} in epoch {} {:?} cannot run a {phase:?} step on token {} tagged epoch {} {:?}",
                self.id, self.epoch, self.phase, token.dim, token.epoch, token.phase
            )));
        }
        if token.has_visited(self.id) {
            return Err(Error::Engine(format!(
                "token {} visited worker {} twice in one phase",
                token.dim, self.id
            )));
        }
        if !token.is_bias() && token.v.len() != self.k {
            return Err(Error::Engine(format!(
                "token {} carries {} latent values, expected {}",
                token.dim,
                token.v.len(),
                self.k
            )));
        }
        Ok(())
    }

    /// Stochastic updates of the token's parameters against every local
    /// example where its feature is nonzero, in ascending local order, using
    /// the stored `G` and `a`. The bias token steps once per local example.
    pub fn worker_update_step(&mut self, mut token: ParamToken) -> Result<ParamToken> {
        self.check_token(&token, Phase::Update)?;
        let eta = self.eta;
        let (lw, lv, k) = (self.hyper.lambda_w, self.hyper.lambda_v, self.k);
        if token.is_bias() {
            for &g in &self.aux.g {
                token.w -= eta * fm::grad_w0(g);
            }
        } else {
            let range = self.col_start[token.dim as usize]..self.col_start[token.dim as usize + 1];
            for &(i, x) in &self.col_entries[range] {
                let i = i as usize;
                let g = self.aux.g[i];
                token.w -= eta * fm::grad_wj(g, x, token.w, lw);
                let a_row = &mut self.aux.a[i * k..(i + 1) * k];
                for (vk, ak) in token.v.iter_mut().zip(a_row.iter_mut()) {
                    let old = *vk;
                    *vk -= eta * fm::grad_vjk(g, x, *ak, old, lv);
                    if self.local_a_refresh {
                        *ak += (*vk - old) * x;
                    }
                }
            }
        }
        self.processed += 1;
        token.mark_visited(self.id);
        Ok(token)
    }

    /// Adds the token's contribution to the partial sums of every local
    /// example where its feature is nonzero. The bias token adds `w0` to
    /// every local linear sum. Token parameters are only read.
    pub fn worker_accumulate_step(&mut self, mut token: ParamToken) -> Result<ParamToken> {
        self.check_token(&token, Phase::Accumulate)?;
        let k = self.k;
        if token.is_bias() {
            self.w0 = token.w;
            for lp in &mut self.aux.linear_partial {
                *lp += token.w;
            }
        } else {
            let range = self.col_start[token.dim as usize]..self.col_start[token.dim as usize + 1];
            for &(i, x) in &self.col_entries[range] {
                let i = i as usize;
                self.aux.linear_partial[i] += token.w * x;
                let a_row = &mut self.aux.a[i * k..(i + 1) * k];
                let s_row = &mut self.aux.sumsq_partial[i * k..(i + 1) * k];
                for ((ak, sk), &vk) in a_row.iter_mut().zip(s_row.iter_mut()).zip(&token.v) {
                    let t = vk * x;
                    *ak += t;
                    *sk += t * t;
                }
            }
        }
        self.processed += 1;
        self.accumulate_rounds += 1;
        token.mark_visited(self.id);
        Ok(token)
    }

    /// Turns completed partial sums into scores and fresh multipliers,
    /// keeps the rebuilt projections, and clears the partial sums.
    pub fn finalize_aux(&mut self) -> Result<BlockReport> {
        if self.phase != Phase::Accumulate || !self.phase_complete() || self.finalized {
            return Err(Error::Engine(format!(
                "worker {} finalize called after {} of {} accumulate visits",
                self.id,
                self.accumulate_rounds,
                self.tokens_per_phase()
            )));
        }
        let k = self.k;
        let rows = &self.data.examples()[self.block.start..self.block.end];
        let mut report = BlockReport {
            examples: rows.len(),
            ..Default::default()
        };
        for (i, x) in rows.iter().enumerate() {
            let a = &self.aux.a[i * k..(i + 1) * k];
            let s = &self.aux.sumsq_partial[i * k..(i + 1) * k];
            let pair: f64 = a.iter().zip(s).map(|(ak, sk)| ak * ak - sk).sum();
            let f = self.aux.linear_partial[i] + 0.5 * pair;
            let y = x.label();
            self.aux.g[i] = fm::loss_multiplier(self.hyper.loss, f, y)?;
            report.loss_sum += fm::loss_value(self.hyper.loss, f, y)?;
            report.sq_err_sum += (f - y) * (f - y);
            if fm::hard_prediction(f, Task::Classification) == y {
                report.correct += 1;
            }
        }
        self.aux.linear_partial.fill(0.0);
        self.aux.sumsq_partial.fill(0.0);
        self.finalized = true;
        Ok(report)
    }

    fn route(&mut self, mut token: ParamToken) -> (ParamToken, Destination) {
        if token.visits() < self.workers {
            let q = match self.routing {
                Routing::Ring => next_queue(self.id, self.workers, Routing::Ring, &mut self.rng),
                Routing::Random => {
                    let open: Vec<usize> = (0..self.workers)
                        .filter(|&w| !token.has_visited(w))
                        .collect();
                    open[self.rng.random_range(0..open.len())]
                }
            };
            return (token, Destination::Worker(q));
        }
        match token.phase {
            Phase::Update => {
                token.retag(token.epoch, Phase::Accumulate);
                let q = next_queue(self.id, self.workers, self.routing, &mut self.rng);
                (token, Destination::Worker(q))
            }
            Phase::Accumulate => (token, Destination::Gather),
        }
    }
}
