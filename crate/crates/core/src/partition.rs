//! Hybrid partitioning: contiguous row blocks of examples per worker, and
//! one circulating parameter token per feature dimension plus a bias token.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fm::FmModel;

/// Contiguous 0-based example range `start..end` owned by one worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowBlock {
    pub worker: usize,
    pub start: usize,
    pub end: usize,
}

impl RowBlock {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Balanced contiguous blocks; the first `N mod P` blocks get one extra row.
pub fn partition_rows(n: usize, p: usize) -> Result<Vec<RowBlock>> {
    if p < 1 {
        return Err(Error::invalid("need at least one worker"));
    }
    if p > n {
        return Err(Error::invalid(format!(
            "{p} workers for {n} examples would leave a worker without rows"
        )));
    }
    let (base, extra) = (n / p, n % p);
    let mut start = 0;
    Ok((0..p)
        .map(|worker| {
            let len = base + usize::from(worker < extra);
            let block = RowBlock {
                worker,
                start,
                end: start + len,
            };
            start += len;
            block
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Update,
    Accumulate,
}

/// Ownership unit for one dimension. `dim == 0` is the bias token and carries
/// `w0` in `w` with an empty `v`; `dim >= 1` carries `(w_j, v_j)`.
///
/// `visited` records which workers have processed the token in its current
/// phase.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamToken {
    pub dim: u32,
    pub w: f64,
    pub v: Vec<f64>,
    pub epoch: usize,
    pub phase: Phase,
    visited: Vec<u64>,
    visits: usize,
}

impl ParamToken {
    pub fn new(dim: u32, w: f64, v: Vec<f64>, epoch: usize, phase: Phase, workers: usize) -> Self {
        ParamToken {
            dim,
            w,
            v,
            epoch,
            phase,
            visited: vec![0; workers.div_ceil(64)],
            visits: 0,
        }
    }

    pub fn is_bias(&self) -> bool {
        self.dim == 0
    }

    /// Number of distinct workers that processed the token this phase.
    pub fn visits(&self) -> usize {
        self.visits
    }

    pub fn has_visited(&self, worker: usize) -> bool {
        self.visited[worker / 64] & (1 << (worker % 64)) != 0
    }

    pub(crate) fn mark_visited(&mut self, worker: usize) {
        debug_assert!(!self.has_visited(worker));
        self.visited[worker / 64] |= 1 << (worker % 64);
        self.visits += 1;
    }

    /// Moves the token to `(epoch, phase)` with an empty visit record.
    pub(crate) fn retag(&mut self, epoch: usize, phase: Phase) {
        self.epoch = epoch;
        self.phase = phase;
        self.visited.fill(0);
        self.visits = 0;
    }
}

/// One token per dimension of `model` plus the bias token, all tagged
/// `(epoch 1, update)`, each placed on a queue drawn uniformly from the seed.
/// Within a queue tokens appear in increasing dimension order.
pub fn make_tokens(model: &FmModel, p: usize, seed: u64) -> Result<Vec<Vec<ParamToken>>> {
    if p < 1 {
        return Err(Error::invalid("need at least one worker"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queues: Vec<Vec<ParamToken>> = vec![Vec::new(); p];
    let bias = ParamToken::new(0, model.w0(), Vec::new(), 1, Phase::Update, p);
    queues[rng.random_range(0..p)].push(bias);
    for j in 1..=model.dim() as u32 {
        let tok = ParamToken::new(
            j,
            model.w()[j as usize - 1],
            model.v_row(j).to_vec(),
            1,
            Phase::Update,
            p,
        );
        queues[rng.random_range(0..p)].push(tok);
    }
    Ok(queues)
}

/// Rebuilds a model from a full token set, checking that every dimension
/// `0..=dim` appears exactly once.
pub fn assemble_model<'a, I>(tokens: I, dim: usize, k: usize) -> Result<FmModel>
where
    I: IntoIterator<Item = &'a ParamToken>,
{
    let mut model = FmModel::zeros(dim, k)?;
    let mut seen = vec![false; dim + 1];
    for tok in tokens {
        let d = tok.dim as usize;
        if d > dim {
            return Err(Error::Engine(format!("token for unknown dimension {d}")));
        }
        if std::mem::replace(&mut seen[d], true) {
            return Err(Error::Engine(format!("duplicate token for dimension {d}")));
        }
        if d == 0 {
            model.set_w0(tok.w);
        } else {
            if tok.v.len() != k {
                return Err(Error::Engine(format!(
                    "token {d} carries {} latent values, expected {k}",
                    tok.v.len()
                )));
            }
            model.w_mut()[d - 1] = tok.w;
            model.v_row_mut(tok.dim).copy_from_slice(&tok.v);
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Engine(format!(
            "token for dimension {missing} is missing"
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sizes(n: usize, p: usize) -> Vec<usize> {
        partition_rows(n, p)
            .unwrap()
            .iter()
            .map(RowBlock::len)
            .collect()
    }

    #[test]
    fn row_block_examples() {
        assert_eq!(sizes(10, 4), vec![3, 3, 2, 2]);
        assert_eq!(sizes(10, 1), vec![10]);
        assert_eq!(sizes(5, 5), vec![1; 5]);
        assert!(partition_rows(3, 0).is_err());
        assert!(partition_rows(3, 4).is_err());
    }

    fn model(dim: usize) -> FmModel {
        let v = (0..dim * 2).map(|i| i as f64).collect();
        FmModel::from_parts(0.5, (0..dim).map(|i| i as f64).collect(), v, 2).unwrap()
    }

    #[test]
    fn token_examples() {
        let m = model(7);
        let q = make_tokens(&m, 3, 1).unwrap();
        assert_eq!(q.iter().map(Vec::len).sum::<usize>(), 8);
        let q1 = make_tokens(&m, 1, 1).unwrap();
        assert_eq!(q1.len(), 1);
        let dims: Vec<u32> = q1[0].iter().map(|t| t.dim).collect();
        assert_eq!(dims, (0..=7).collect::<Vec<_>>());
        assert_eq!(make_tokens(&m, 3, 1).unwrap(), q);
        assert!(q
            .iter()
            .flatten()
            .all(|t| t.epoch == 1 && t.phase == Phase::Update));
        assert!(q
            .iter()
            .flatten()
            .all(|t| t.v.len() == if t.is_bias() { 0 } else { 2 }));
    }

    #[test]
    fn assemble_round_trips_and_checks_conservation() {
        let m = model(5);
        let q = make_tokens(&m, 2, 9).unwrap();
        let back = assemble_model(q.iter().flatten(), 5, 2).unwrap();
        assert_eq!(back, m);

        let mut dup: Vec<ParamToken> = q.iter().flatten().cloned().collect();
        dup.push(dup[0].clone());
        assert!(assemble_model(&dup, 5, 2).is_err());
        dup.truncate(dup.len() - 2);
        assert!(assemble_model(&dup, 5, 2).is_err());
    }

    #[test]
    fn visit_marks() {
        let mut t = ParamToken::new(1, 0.0, vec![0.0], 1, Phase::Update, 130);
        t.mark_visited(0);
        t.mark_visited(129);
        assert!(t.has_visited(129) && t.has_visited(0) && !t.has_visited(64));
        assert_eq!(t.visits(), 2);
        t.retag(2, Phase::Accumulate);
        assert_eq!(t.visits(), 0);
        assert!(!t.has_visited(0));
    }

    proptest! {
        #[test]
        fn blocks_cover_rows_disjointly(n in 1usize..300, p in 1usize..40) {
            prop_assume!(p <= n);
            let blocks = partition_rows(n, p).unwrap();
            let mut next = 0;
            for b in &blocks {
                prop_assert_eq!(b.start, next);
                next = b.end;
            }
            prop_assert_eq!(next, n);
            let lens: Vec<usize> = blocks.iter().map(RowBlock::len).collect();
            prop_assert!(lens.iter().max().unwrap() - lens.iter().min().unwrap() <= 1);
        }

        #[test]
        fn each_dimension_gets_one_token(dim in 1usize..60, p in 1usize..9, seed: u64) {
            let q = make_tokens(&model(dim), p, seed).unwrap();
            let mut dims: Vec<u32> = q.iter().flatten().map(|t| t.dim).collect();
            dims.sort_unstable();
            prop_assert_eq!(dims, (0..=dim as u32).collect::<Vec<_>>());
        }
    }
}
