//! Hybrid-parallel trainer.
//!
//! `P` workers each own a contiguous block of training rows. Model
//! parameters travel between workers as [`ParamToken`]s, one per feature
//! dimension plus one for the bias, so every worker eventually touches every
//! parameter without a central server. An epoch has two phases:
//!
//! 1. **Update.** Each worker processes every token once and applies the
//!    stochastic updates for its local examples, using the multipliers `G`
//!    and projections `a` computed at the end of the previous epoch.
//! 2. **Accumulate.** Each token visits every worker again. Workers add the
//!    token's contribution to per-example partial sums (linear term, `a`,
//!    and squared term), then turn the completed sums into fresh `G` and `a`.
//!
//! Tokens carry an `(epoch, phase)` tag. A token that reaches a worker still
//! in an earlier phase waits in that worker's deferral buffer. All workers
//! meet at each phase boundary; after the accumulate phase the tokens are
//! gathered to assemble the model snapshot recorded in the trace, then sent
//! back to their home queues for the next epoch.
//!
//! Workers run on their own threads and exchange tokens over unbounded
//! multi-producer single-consumer channels, or, with
//! [`RunConfig::deterministic`], round-robin on the calling thread.

mod worker;

use std::collections::VecDeque;
use std::thread;
use std::time::Instant;

use crossbeam_channel::{unbounded, Receiver, Sender};
use rand::Rng;

use crate::config::{Routing, RunConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fm::{self, FmModel, Task};
use crate::metrics::{self, TraceRow, TrainTrace};
use crate::partition::{self, ParamToken, Phase, RowBlock};

pub use worker::{AuxState, BlockReport, Destination, WorkerState};

/// Queue a worker forwards to when a token starts a phase. Ring routing
/// returns `(worker + 1) mod P`; random routing draws uniformly from the
/// other workers. A single worker always forwards to itself.
pub fn next_queue<R: Rng + ?Sized>(
    worker: usize,
    workers: usize,
    routing: Routing,
    rng: &mut R,
) -> usize {
    match routing {
        Routing::Ring => (worker + 1) % workers,
        Routing::Random if workers == 1 => 0,
        Routing::Random => {
            let q = rng.random_range(0..workers - 1);
            if q >= worker {
                q + 1
            } else {
                q
            }
        }
    }
}

/// What one worker hands back at the end of an epoch.
#[derive(Debug, Clone)]
pub struct WorkerReport {
    pub worker: usize,
    /// Tokens processed in the update phase (0 for the initial pass).
    pub update_visits: usize,
    pub accumulate_visits: usize,
    pub block: BlockReport,
    /// Present when [`RunOptions::capture_aux`] is set.
    pub aux: Option<AuxState>,
}

/// State at an epoch barrier, passed to the run observer. Epoch 0 is the
/// initial synchronization pass before any update.
pub struct EpochSnapshot<'s> {
    pub epoch: usize,
    pub model: &'s FmModel,
    pub blocks: &'s [RowBlock],
    /// Ordered by worker id.
    pub reports: &'s [WorkerReport],
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Copy every worker's [`AuxState`] into the epoch reports.
    pub capture_aux: bool,
}

/// Trains from the seeded initial model.
pub fn run(
    config: &RunConfig,
    train: &Dataset,
    test: Option<&Dataset>,
) -> Result<(FmModel, TrainTrace)> {
    let model = config.init_model(train.dim())?;
    run_with(
        config,
        model,
        train,
        test,
        RunOptions::default(),
        &mut |_| Ok(()),
    )
}

/// Trains from `model`, calling `observer` at every epoch barrier.
pub fn run_with(
    config: &RunConfig,
    model: FmModel,
    train: &Dataset,
    test: Option<&Dataset>,
    options: RunOptions,
    observer: &mut dyn FnMut(&EpochSnapshot) -> Result<()>,
) -> Result<(FmModel, TrainTrace)> {
    config.validate()?;
    if model.dim() != train.dim() {
        return Err(Error::DimensionMismatch {
            model: model.dim(),
            data: train.dim(),
        });
    }
    if model.k() != config.k {
        return Err(Error::invalid(format!(
            "model has K={}, config has K={}",
            model.k(),
            config.k
        )));
    }
    if let Some(t) = test {
        if t.dim() != train.dim() {
            return Err(Error::DimensionMismatch {
                model: train.dim(),
                data: t.dim(),
            });
        }
    }
    if config.epochs == 0 {
        return Ok((model, TrainTrace::new()));
    }

    let blocks = partition::partition_rows(train.len(), config.workers)?;
    let queues = partition::make_tokens(&model, config.workers, config.seed ^ 0x70c3_75ee)?;
    let mut home = vec![0usize; model.dim() + 1];
    let mut initial = Vec::with_capacity(queues.len());
    for (q, tokens) in queues.into_iter().enumerate() {
        let mut tokens: VecDeque<ParamToken> = tokens.into();
        for t in tokens.iter_mut() {
            home[t.dim as usize] = q;
            t.retag(0, Phase::Accumulate);
        }
        initial.push(tokens);
    }

    let mut coord = Coordinator {
        config,
        train,
        test,
        blocks: &blocks,
        home,
        trace: TrainTrace::new(),
        started: None,
        capture_aux: options.capture_aux,
        observer,
    };
    let model = if config.deterministic {
        run_deterministic(&mut coord, initial)?
    } else {
        run_threaded(&mut coord, initial)?
    };
    Ok((model, coord.trace))
}

fn phases(epoch: usize) -> &'static [Phase] {
    if epoch == 0 {
        &[Phase::Accumulate]
    } else {
        &[Phase::Update, Phase::Accumulate]
    }
}

struct Coordinator<'c> {
    config: &'c RunConfig,
    train: &'c Dataset,
    test: Option<&'c Dataset>,
    blocks: &'c [RowBlock],
    home: Vec<usize>,
    trace: TrainTrace,
    started: Option<Instant>,
    capture_aux: bool,
    observer: &'c mut dyn FnMut(&EpochSnapshot) -> Result<()>,
}

impl Coordinator<'_> {
    fn tokens_per_phase(&self) -> usize {
        self.train.dim() + 1
    }

    /// Assembles the snapshot, records the trace row, notifies the observer,
    /// and returns the snapshot plus the tokens (with their home queues) for
    /// the next epoch, if there is one.
    fn end_epoch(
        &mut self,
        epoch: usize,
        mut tokens: Vec<ParamToken>,
        mut reports: Vec<WorkerReport>,
    ) -> Result<(FmModel, Vec<(usize, ParamToken)>)> {
        tokens.sort_unstable_by_key(|t| t.dim);
        let model = partition::assemble_model(&tokens, self.train.dim(), self.config.k)?;
        reports.sort_unstable_by_key(|r| r.worker);
        let total = reports
            .iter()
            .fold(BlockReport::default(), |acc, r| acc.merge(r.block));
        if total.examples != self.train.len() {
            return Err(Error::Engine(format!(
                "workers reported {} examples, expected {}",
                total.examples,
                self.train.len()
            )));
        }
        for r in &reports {
            let expected = self.tokens_per_phase();
            let ok_update = epoch == 0 || r.update_visits == expected;
            if !ok_update || r.accumulate_visits != expected {
                return Err(Error::Engine(format!(
                    "worker {} processed {} update and {} accumulate tokens in epoch {epoch}, expected {expected}",
                    r.worker, r.update_visits, r.accumulate_visits
                )));
            }
        }

        if epoch >= 1 {
            let started = self.started.get_or_insert_with(Instant::now);
            let elapsed_secs = started.elapsed().as_secs_f64();
            let n = self.train.len() as f64;
            let hyper = self.config.hyperparams();
            let train_metric = match self.train.task() {
                Task::Regression => (total.sq_err_sum / n).sqrt(),
                Task::Classification => total.correct as f64 / n,
            };
            self.trace.push(TraceRow {
                epoch,
                objective: total.loss_sum / n + fm::regularizer(&model, &hyper),
                elapsed_secs,
                train_metric,
                test_metric: self
                    .test
                    .map(|t| metrics::evaluate(&model, t))
                    .transpose()?,
            });
        }

        (self.observer)(&EpochSnapshot {
            epoch,
            model: &model,
            blocks: self.blocks,
            reports: &reports,
        })?;

        let mut next = Vec::new();
        if epoch < self.config.epochs {
            for mut t in tokens {
                t.retag(epoch + 1, Phase::Update);
                next.push((self.home[t.dim as usize], t));
            }
        }
        if epoch == 0 {
            self.started = Some(Instant::now());
        }
        Ok((model, next))
    }
}

fn run_deterministic(
    coord: &mut Coordinator,
    initial: Vec<VecDeque<ParamToken>>,
) -> Result<FmModel> {
    let config = coord.config;
    let mut workers: Vec<WorkerState> = coord
        .blocks
        .iter()
        .map(|b| WorkerState::new(b.worker, config.workers, *b, coord.train, config))
        .collect();
    let mut queues = initial;
    let mut model = None;

    for epoch in 0..=config.epochs {
        let mut gathered = Vec::with_capacity(coord.tokens_per_phase());
        let mut update_visits = vec![0usize; workers.len()];
        for &phase in phases(epoch) {
            for w in workers.iter_mut() {
                w.begin_phase(epoch, phase)?;
            }
            while !workers.iter().all(WorkerState::phase_complete) {
                let mut progressed = false;
                for p in 0..workers.len() {
                    let Some(tok) = workers[p].pop_ready().or_else(|| queues[p].pop_front()) else {
                        continue;
                    };
                    progressed = true;
                    match workers[p].offer(tok)? {
                        Some((tok, Destination::Worker(q))) => queues[q].push_back(tok),
                        Some((tok, Destination::Gather)) => gathered.push(tok),
                        None => {}
                    }
                }
                if !progressed {
                    return Err(Error::Engine(format!(
                        "no worker can make progress in epoch {epoch} {phase:?}"
                    )));
                }
            }
            if phase == Phase::Update {
                for (u, w) in update_visits.iter_mut().zip(&workers) {
                    *u = w.processed();
                }
            }
        }
        let mut reports = Vec::with_capacity(workers.len());
        for (w, &u) in workers.iter_mut().zip(&update_visits) {
            let block = w.finalize_aux()?;
            reports.push(WorkerReport {
                worker: w.id(),
                update_visits: u,
                accumulate_visits: w.accumulate_rounds(),
                block,
                aux: coord.capture_aux.then(|| w.aux().clone()),
            });
        }
        let (snapshot, next) = coord.end_epoch(epoch, gathered, reports)?;
        for (q, t) in next {
            queues[q].push_back(t);
        }
        model = Some(snapshot);
    }
    Ok(model.expect("at least one epoch"))
}

enum Inbox {
    Token(ParamToken),
    Go(usize, Phase),
    Stop,
}

enum Outbox {
    Token(ParamToken),
    PhaseDone { worker: usize, processed: usize },
    Report(Box<WorkerReport>),
    Failed { worker: usize, msg: String },
}

/// Reports a panicking worker so the coordinator can shut the others down.
struct PanicGuard {
    worker: usize,
    out: Sender<Outbox>,
}

impl Drop for PanicGuard {
    fn drop(&mut self) {
        if thread::panicking() {
            let _ = self.out.send(Outbox::Failed {
                worker: self.worker,
                msg: "worker panicked".into(),
            });
        }
    }
}

fn run_threaded(coord: &mut Coordinator, initial: Vec<VecDeque<ParamToken>>) -> Result<FmModel> {
    let config = coord.config;
    let p = config.workers;
    let (inbox_tx, inbox_rx): (Vec<Sender<Inbox>>, Vec<Receiver<Inbox>>) =
        (0..p).map(|_| unbounded()).unzip();
    let (out_tx, out_rx) = unbounded::<Outbox>();
    let capture = coord.capture_aux;
    let train = coord.train;
    let blocks = coord.blocks;

    thread::scope(|s| {
        for (id, rx) in inbox_rx.into_iter().enumerate() {
            let peers = inbox_tx.clone();
            let out = out_tx.clone();
            let block = blocks[id];
            thread::Builder::new()
                .name(format!("dsfacto-worker-{id}"))
                .spawn_scoped(s, move || {
                    let _guard = PanicGuard {
                        worker: id,
                        out: out.clone(),
                    };
                    let state = WorkerState::new(id, p, block, train, config);
                    if let Err(e) = worker_loop(state, &rx, &peers, &out, capture) {
                        let _ = out.send(Outbox::Failed {
                            worker: id,
                            msg: e.to_string(),
                        });
                    }
                })
                .expect("spawn worker thread");
        }
        drop(out_tx);

        let result = coordinate(coord, initial, &inbox_tx, &out_rx);
        for tx in &inbox_tx {
            let _ = tx.send(Inbox::Stop);
        }
        result
    })
}

fn worker_loop(
    mut w: WorkerState,
    inbox: &Receiver<Inbox>,
    peers: &[Sender<Inbox>],
    out: &Sender<Outbox>,
    capture: bool,
) -> Result<()> {
    let mut update_visits = 0;
    loop {
        let (epoch, phase) = match inbox.recv() {
            Ok(Inbox::Go(e, ph)) => (e, ph),
            Ok(Inbox::Token(t)) => {
                if w.offer(t)?.is_some() {
                    return Err(Error::Engine(format!(
                        "worker {} processed a token outside a phase",
                        w.id()
                    )));
                }
                continue;
            }
            Ok(Inbox::Stop) | Err(_) => return Ok(()),
        };
        w.begin_phase(epoch, phase)?;
        while !w.phase_complete() {
            let tok = match w.pop_ready() {
                Some(t) => t,
                None => match inbox.recv() {
                    Ok(Inbox::Token(t)) => t,
                    Ok(Inbox::Go(..)) => {
                        return Err(Error::Engine(format!(
                            "worker {} told to start a phase mid-phase",
                            w.id()
                        )))
                    }
                    Ok(Inbox::Stop) | Err(_) => return Ok(()),
                },
            };
            let sent = match w.offer(tok)? {
                Some((t, Destination::Worker(q))) => peers[q].send(Inbox::Token(t)).is_ok(),
                Some((t, Destination::Gather)) => out.send(Outbox::Token(t)).is_ok(),
                None => true,
            };
            if !sent {
                return Ok(());
            }
        }
        let msg = match phase {
            Phase::Update => {
                update_visits = w.processed();
                Outbox::PhaseDone {
                    worker: w.id(),
                    processed: update_visits,
                }
            }
            Phase::Accumulate => {
                let block = w.finalize_aux()?;
                let report = WorkerReport {
                    worker: w.id(),
                    update_visits: if epoch == 0 { 0 } else { update_visits },
                    accumulate_visits: w.accumulate_rounds(),
                    block,
                    aux: capture.then(|| w.aux().clone()),
                };
                Outbox::Report(Box::new(report))
            }
        };
        if out.send(msg).is_err() {
            return Ok(());
        }
    }
}

fn coordinate(
    coord: &mut Coordinator,
    initial: Vec<VecDeque<ParamToken>>,
    inboxes: &[Sender<Inbox>],
    out: &Receiver<Outbox>,
) -> Result<FmModel> {
    let send = |q: usize, msg: Inbox| {
        inboxes[q]
            .send(msg)
            .map_err(|_| Error::Engine(format!("worker {q} hung up")))
    };
    for (q, tokens) in initial.into_iter().enumerate() {
        for t in tokens {
            send(q, Inbox::Token(t))?;
        }
    }
    let p = inboxes.len();
    let expected_tokens = coord.tokens_per_phase();
    let mut model = None;

    for epoch in 0..=coord.config.epochs {
        let mut gathered = Vec::with_capacity(expected_tokens);
        let mut reports = Vec::with_capacity(p);
        for &phase in phases(epoch) {
            for q in 0..p {
                send(q, Inbox::Go(epoch, phase))?;
            }
            let mut done = 0;
            loop {
                let finished = match phase {
                    Phase::Update => done == p,
                    Phase::Accumulate => reports.len() == p && gathered.len() == expected_tokens,
                };
                if finished {
                    break;
                }
                match out.recv() {
                    Ok(Outbox::Token(t)) => gathered.push(t),
                    Ok(Outbox::PhaseDone { worker, processed }) => {
                        if processed != expected_tokens {
                            return Err(Error::Engine(format!(
                                "worker {worker} finished an update phase after {processed} tokens"
                            )));
                        }
                        done += 1;
                    }
                    Ok(Outbox::Report(r)) => reports.push(*r),
                    Ok(Outbox::Failed { worker, msg }) => {
                        return Err(Error::Engine(format!("worker {worker}: {msg}")))
                    }
                    Err(_) => return Err(Error::Engine("all workers exited early".into())),
                }
            }
        }
        let (snapshot, next) = coord.end_epoch(epoch, gathered, reports)?;
        for (q, t) in next {
            send(q, Inbox::Token(t))?;
        }
        model = Some(snapshot);
    }
    Ok(model.expect("at least one epoch"))
}
