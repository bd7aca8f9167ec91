//! Single-worker reference optimizers: full-batch gradient descent and
//! incremental (cyclic-order) stochastic descent.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Mode, RunConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fm::{self, FmModel, Hyperparams};
use crate::metrics::{self, TraceRow, TrainTrace};

fn check_dims(model: &FmModel, train: &Dataset) -> Result<()> {
    if model.dim() != train.dim() {
        return Err(Error::DimensionMismatch {
            model: model.dim(),
            data: train.dim(),
        });
    }
    Ok(())
}

/// One full-batch gradient step on the normalized objective at rate
/// `hyper.eta`. All multipliers and projections are evaluated at the
/// incoming parameters and every coordinate moves simultaneously.
pub fn batch_epoch(model: &FmModel, train: &Dataset, hyper: &Hyperparams) -> Result<FmModel> {
    check_dims(model, train)?;
    let k = model.k();
    let n = train.len() as f64;
    let mut grad_w0 = 0.0;
    let mut grad_w = vec![0.0; model.dim()];
    let mut grad_v = vec![0.0; model.v().len()];
    let mut a = vec![0.0; k];

    for x in train.examples() {
        let f = fm::score_with_a(model, x, &mut a);
        let g = fm::loss_multiplier(hyper.loss, f, x.label())?;
        grad_w0 += fm::grad_w0(g);
        for &(j, xj) in x.features() {
            let row = j as usize - 1;
            grad_w[row] += fm::grad_wj(g, xj, 0.0, 0.0);
            let vj = model.v_row(j);
            for kk in 0..k {
                grad_v[row * k + kk] += fm::grad_vjk(g, xj, a[kk], vj[kk], 0.0);
            }
        }
    }

    let eta = hyper.eta;
    let mut next = model.clone();
    next.set_w0(model.w0() - eta * grad_w0 / n);
    for (wj, gj) in next.w_mut().iter_mut().zip(&grad_w) {
        *wj -= eta * (gj / n + hyper.lambda_w * *wj);
    }
    for (vjk, gjk) in next.v_mut().iter_mut().zip(&grad_v) {
        *vjk -= eta * (gjk / n + hyper.lambda_v * *vjk);
    }
    Ok(next)
}

/// Applies the stochastic updates for one example given its loss multiplier
/// `g` and projection `a`. Only coordinates where the example is nonzero
/// move; the regularizer applies at full strength on each visit.
pub(crate) fn apply_example_update(
    model: &mut FmModel,
    x: &crate::fm::SparseExample,
    g: f64,
    a: &[f64],
    hyper: &Hyperparams,
) {
    let eta = hyper.eta;
    model.set_w0(model.w0() - eta * fm::grad_w0(g));
    for &(j, xj) in x.features() {
        let wj = &mut model.w_mut()[j as usize - 1];
        *wj -= eta * fm::grad_wj(g, xj, *wj, hyper.lambda_w);
        for (vjk, &ak) in model.v_row_mut(j).iter_mut().zip(a) {
            *vjk -= eta * fm::grad_vjk(g, xj, ak, *vjk, hyper.lambda_v);
        }
    }
}

fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(Error::invalid(format!(
            "visit order has {} entries for {n} examples",
            order.len()
        )));
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::invalid(format!(
                "visit order is not a permutation (at {i})"
            )));
        }
    }
    Ok(())
}

/// One pass over `train` in the given 0-based `order`.
///
/// Multipliers `G_i` and projections `a_i` are recomputed from the current
/// parameters every `refresh_period` visits, for the block of examples about
/// to be visited. `refresh_period = 1` gives fresh per-example values;
/// `refresh_period = N` fixes them at the start of the epoch, which is what
/// the distributed engine does between its synchronization passes.
pub fn incremental_epoch(
    model: &mut FmModel,
    train: &Dataset,
    hyper: &Hyperparams,
    order: &[usize],
    refresh_period: usize,
) -> Result<()> {
    check_dims(model, train)?;
    check_permutation(order, train.len())?;
    if refresh_period < 1 {
        return Err(Error::invalid("refresh_period must be >= 1"));
    }
    let k = model.k();
    let examples = train.examples();
    let mut g_cache = vec![0.0; refresh_period.min(order.len())];
    let mut a_cache = vec![0.0; g_cache.len() * k];

    for block in order.chunks(refresh_period) {
        for (slot, &i) in block.iter().enumerate() {
            let x = &examples[i];
            let a = &mut a_cache[slot * k..(slot + 1) * k];
            let f = fm::score_with_a(model, x, a);
            g_cache[slot] = fm::loss_multiplier(hyper.loss, f, x.label())?;
        }
        for (slot, &i) in block.iter().enumerate() {
            let a = &a_cache[slot * k..(slot + 1) * k];
            apply_example_update(model, &examples[i], g_cache[slot], a, hyper);
        }
    }
    Ok(())
}

/// Objective, train metric and optional test metric for one trace row.
pub(crate) fn trace_row(
    model: &FmModel,
    epoch: usize,
    started: Instant,
    train: &Dataset,
    test: Option<&Dataset>,
    hyper: &Hyperparams,
) -> Result<TraceRow> {
    let elapsed_secs = started.elapsed().as_secs_f64();
    Ok(TraceRow {
        epoch,
        objective: fm::objective(model, train.examples(), hyper)?,
        elapsed_secs,
        train_metric: metrics::evaluate(model, train)?,
        test_metric: test.map(|t| metrics::evaluate(model, t)).transpose()?,
    })
}

/// Runs `config.epochs` serial epochs from the seeded initial model.
/// `config.mode` picks batch or incremental descent; the incremental order
/// is reshuffled every epoch from the run seed.
pub fn train(
    config: &RunConfig,
    train: &Dataset,
    test: Option<&Dataset>,
) -> Result<(FmModel, TrainTrace)> {
    config.validate()?;
    if let Some(t) = test {
        if t.dim() != train.dim() {
            return Err(Error::DimensionMismatch {
                model: train.dim(),
                data: t.dim(),
            });
        }
    }
    let mut model = config.init_model(train.dim())?;
    let mut trace = TrainTrace::new();
    let base = config.hyperparams();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let started = Instant::now();

    for epoch in 1..=config.epochs {
        let hyper = Hyperparams {
            eta: base.eta_at(epoch),
            ..base
        };
        match config.mode {
            Mode::SerialBatch => model = batch_epoch(&model, train, &hyper)?,
            Mode::SerialIncremental => {
                order.shuffle(&mut rng);
                incremental_epoch(&mut model, train, &hyper, &order, 1)?;
            }
            Mode::Dsfacto => {
                return Err(Error::invalid("serial trainer cannot run dsfacto mode"));
            }
        }
        trace.push(trace_row(&model, epoch, started, train, test, &base)?);
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_fm, SynthSpec};
    use crate::fm::{LossKind, SparseExample, Task};

    fn one_example() -> Dataset {
        let x = SparseExample::new(vec![(1, 1.0)], 1.0).unwrap();
        Dataset::new(vec![x], 1, Task::Regression).unwrap()
    }

    fn synth(n: usize) -> Dataset {
        synth_fm(&SynthSpec {
            n,
            dim: 10,
            k: 3,
            density: 0.5,
            noise_sd: 0.1,
            task: Task::Regression,
            seed: 5,
        })
        .unwrap()
        .0
    }

    fn random_model(dim: usize, k: usize, seed: u64) -> FmModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FmModel::init_random(dim, k, 0.3, &mut rng).unwrap()
    }

    #[test]
    fn batch_zero_rate_is_identity() {
        let ds = synth(30);
        let m = random_model(10, 3, 1);
        let h = Hyperparams::new(0.0, 0.0, 0.0, LossKind::Squared);
        let next = batch_epoch(&m, &ds, &h).unwrap();
        assert_eq!(next.max_abs_diff(&m), 0.0);
    }

    #[test]
    fn batch_single_step_hand_oracle() {
        // f = 0, G = -1, a = 0: w0 = 0 + 1, w1 = 0 + 1, v untouched
        let m = FmModel::zeros(1, 1).unwrap();
        let h = Hyperparams::new(1.0, 0.0, 0.0, LossKind::Squared);
        let next = batch_epoch(&m, &one_example(), &h).unwrap();
        assert_eq!(next.w0(), 1.0);
        assert_eq!(next.w(), &[1.0]);
        assert_eq!(next.v(), &[0.0]);
    }

    #[test]
    fn batch_rejects_dimension_mismatch() {
        let m = FmModel::zeros(3, 1).unwrap();
        let h = Hyperparams::new(0.1, 0.0, 0.0, LossKind::Squared);
        assert!(matches!(
            batch_epoch(&m, &one_example(), &h),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn batch_decreases_objective_at_small_rate() {
        let ds = synth(100);
        let m = random_model(10, 3, 2);
        let h = Hyperparams::new(1e-3, 1e-3, 1e-3, LossKind::Squared);
        let before = fm::objective(&m, ds.examples(), &h).unwrap();
        let next = batch_epoch(&m, &ds, &h).unwrap();
        assert!(fm::objective(&next, ds.examples(), &h).unwrap() < before);
    }

    #[test]
    fn batch_descent_is_monotone() {
        let ds = synth(100);
        let mut m = random_model(10, 3, 3);
        let h = Hyperparams::new(1e-4, 0.0, 0.0, LossKind::Squared);
        let mut prev = fm::objective(&m, ds.examples(), &h).unwrap();
        for _ in 0..20 {
            m = batch_epoch(&m, &ds, &h).unwrap();
            let obj = fm::objective(&m, ds.examples(), &h).unwrap();
            assert!(obj <= prev + 1e-12, "{obj} > {prev}");
            prev = obj;
        }
    }

    #[test]
    fn incremental_zero_rate_is_identity() {
        let ds = synth(20);
        let mut m = random_model(10, 3, 4);
        let orig = m.clone();
        let h = Hyperparams::new(0.0, 0.0, 0.0, LossKind::Squared);
        let order: Vec<usize> = (0..20).rev().collect();
        incremental_epoch(&mut m, &ds, &h, &order, 1).unwrap();
        assert_eq!(m.max_abs_diff(&orig), 0.0);
    }

    #[test]
    fn single_example_incremental_equals_batch() {
        let ds = one_example();
        let m = random_model(1, 2, 5);
        let h = Hyperparams::new(0.3, 0.1, 0.2, LossKind::Squared);
        let b = batch_epoch(&m, &ds, &h).unwrap();
        let mut s = m.clone();
        incremental_epoch(&mut s, &ds, &h, &[0], 1).unwrap();
        assert!(b.max_abs_diff(&s) < 1e-15);
    }

    #[test]
    fn incremental_rejects_bad_order() {
        let ds = synth(3);
        let mut m = random_model(10, 3, 6);
        let h = Hyperparams::new(0.1, 0.0, 0.0, LossKind::Squared);
        assert!(incremental_epoch(&mut m, &ds, &h, &[0, 1], 1).is_err());
        assert!(incremental_epoch(&mut m, &ds, &h, &[0, 1, 1], 1).is_err());
        assert!(incremental_epoch(&mut m, &ds, &h, &[0, 1, 3], 1).is_err());
        assert!(incremental_epoch(&mut m, &ds, &h, &[0, 1, 2], 0).is_err());
    }

    #[test]
    fn full_refresh_period_uses_epoch_start_values() {
        // with the period equal to N and no shrinkage the linear weights get
        // a plain sum of stale gradient terms, so visiting order is irrelevant
        let ds = synth(25);
        let m = random_model(10, 3, 7);
        let h = Hyperparams::new(0.01, 0.0, 0.0, LossKind::Squared);
        let fwd: Vec<usize> = (0..25).collect();
        let rev: Vec<usize> = (0..25).rev().collect();
        let (mut a, mut b) = (m.clone(), m.clone());
        incremental_epoch(&mut a, &ds, &h, &fwd, 25).unwrap();
        incremental_epoch(&mut b, &ds, &h, &rev, 25).unwrap();
        assert!((a.w0() - b.w0()).abs() < 1e-12);
        for (x, y) in a.w().iter().zip(b.w()) {
            assert!((x - y).abs() < 1e-12);
        }
        let mut c = m.clone();
        incremental_epoch(&mut c, &ds, &h, &fwd, 1).unwrap();
        assert!(a.max_abs_diff(&c) > 1e-9);
    }

    fn cfg(mode: Mode, epochs: usize) -> RunConfig {
        RunConfig {
            mode,
            epochs,
            k: 3,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn train_zero_epochs_returns_init() {
        let ds = synth(20);
        let c = cfg(Mode::SerialIncremental, 0);
        let (m, trace) = train(&c, &ds, None).unwrap();
        assert!(trace.is_empty());
        assert_eq!(m, c.init_model(10).unwrap());
    }

    #[test]
    fn train_trace_rows_and_determinism() {
        let ds = synth(40);
        for mode in [Mode::SerialBatch, Mode::SerialIncremental] {
            let c = cfg(mode, 4);
            let (m1, t1) = train(&c, &ds, Some(&ds)).unwrap();
            let (m2, t2) = train(&c, &ds, Some(&ds)).unwrap();
            assert_eq!(m1, m2);
            let epochs: Vec<usize> = t1.rows().iter().map(|r| r.epoch).collect();
            assert_eq!(epochs, vec![1, 2, 3, 4]);
            for (a, b) in t1.rows().iter().zip(t2.rows()) {
                assert_eq!(a.objective, b.objective);
                assert_eq!(a.test_metric, b.test_metric);
            }
        }
        assert!(train(&cfg(Mode::Dsfacto, 1), &ds, None).is_err());
    }

    #[test]
    fn train_halves_objective_on_synth_regression() {
        let (ds, _) = synth_fm(&SynthSpec {
            n: 500,
            dim: 20,
            k: 4,
            density: 0.3,
            noise_sd: 0.1,
            task: Task::Regression,
            seed: 1,
        })
        .unwrap();
        let c = RunConfig {
            mode: Mode::SerialIncremental,
            epochs: 50,
            eta: 0.01,
            k: 4,
            ..Default::default()
        };
        let (_, trace) = train(&c, &ds, None).unwrap();
        let first = trace.rows()[0].objective;
        let last = trace.last().unwrap().objective;
        assert!(last <= 0.5 * first, "{first} -> {last}");
    }
}
