//! Factorization machine model, score functions, losses and per-coordinate
//! gradients.
//!
//! A second-order factorization machine scores a sparse input `x` as
//!
//! ```text
//! f(x) = w0 + sum_j w_j x_j + sum_{j < j'} <v_j, v_j'> x_j x_j'
//! ```
//!
//! The pairwise sum is evaluated in `O(K * nnz(x))` through the identity
//! `sum_{j<j'} <v_j, v_j'> x_j x_j' = 1/2 sum_k [(sum_d v_dk x_d)^2 - sum_j v_jk^2 x_j^2]`.
//! The inner sum `a_k = sum_d v_dk x_d` is the per-example synchronization
//! term that the distributed engine maintains incrementally.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Loss attached to the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `1/2 (f - y)^2`
    Squared,
    /// `log(1 + exp(-y f))`, labels in {+1, -1}
    Logistic,
}

/// Learning task; decides label validation and hard predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification,
}

impl Task {
    pub fn default_loss(self) -> LossKind {
        match self {
            Task::Regression => LossKind::Squared,
            Task::Classification => LossKind::Logistic,
        }
    }
}

/// One observation: strictly increasing 1-based feature indices with their
/// nonzero values, plus a label.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseExample {
    features: Vec<(u32, f64)>,
    label: f64,
}

impl SparseExample {
    /// Builds an example, checking that indices are 1-based and strictly
    /// increasing and that no stored value is zero or non-finite.
    pub fn new(features: Vec<(u32, f64)>, label: f64) -> Result<Self> {
        if !label.is_finite() {
            return Err(Error::invalid(format!("non-finite label {label}")));
        }
        let mut prev = 0u32;
        for &(idx, val) in &features {
            if idx == 0 {
                return Err(Error::invalid("feature index must be >= 1"));
            }
            if idx <= prev {
                return Err(Error::invalid(format!(
                    "feature indices not strictly increasing at {idx}"
                )));
            }
            if val == 0.0 || !val.is_finite() {
                return Err(Error::invalid(format!(
                    "feature {idx} has stored value {val}"
                )));
            }
            prev = idx;
        }
        Ok(SparseExample { features, label })
    }

    pub fn features(&self) -> &[(u32, f64)] {
        &self.features
    }

    pub fn label(&self) -> f64 {
        self.label
    }

    pub fn nnz(&self) -> usize {
        self.features.len()
    }

    /// Largest feature index, or 0 for an empty example.
    pub fn max_index(&self) -> u32 {
        self.features.last().map_or(0, |&(i, _)| i)
    }

    /// Value of feature `j`, zero when absent.
    pub fn value(&self, j: u32) -> f64 {
        self.features
            .binary_search_by_key(&j, |&(i, _)| i)
            .map_or(0.0, |pos| self.features[pos].1)
    }
}

/// Model parameters: global bias `w0`, linear weights `w` (length D) and the
/// latent factor matrix `V` (D x K, row-major, row `j` is `v_j`).
#[derive(Debug, Clone, PartialEq)]
pub struct FmModel {
    w0: f64,
    w: Vec<f64>,
    v: Vec<f64>,
    k: usize,
}

impl FmModel {
    pub fn zeros(dim: usize, k: usize) -> Result<Self> {
        Self::check_shape(dim, k)?;
        Ok(FmModel {
            w0: 0.0,
            w: vec![0.0; dim],
            v: vec![0.0; dim * k],
            k,
        })
    }

    /// Builds a model from explicit parameters. `v` is row-major D x K.
    pub fn from_parts(w0: f64, w: Vec<f64>, v: Vec<f64>, k: usize) -> Result<Self> {
        Self::check_shape(w.len(), k)?;
        if v.len() != w.len() * k {
            return Err(Error::invalid(format!(
                "latent matrix has {} entries, expected {}",
                v.len(),
                w.len() * k
            )));
        }
        let finite = w0.is_finite() && w.iter().chain(&v).all(|x| x.is_finite());
        if !finite {
            return Err(Error::invalid("model parameters must be finite"));
        }
        Ok(FmModel { w0, w, v, k })
    }

    /// Zero bias and linear weights, latent factors drawn i.i.d. from
    /// `N(0, init_sd^2)`.
    pub fn init_random<R: Rng + ?Sized>(
        dim: usize,
        k: usize,
        init_sd: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeros(dim, k)?;
        let normal = Normal::new(0.0, init_sd)
            .map_err(|e| Error::invalid(format!("init_sd {init_sd}: {e}")))?;
        for x in model.v.iter_mut() {
            *x = normal.sample(rng);
        }
        Ok(model)
    }

    fn check_shape(dim: usize, k: usize) -> Result<()> {
        if dim < 1 || k < 1 {
            return Err(Error::invalid(format!(
                "model needs D >= 1 and K >= 1, got D={dim}, K={k}"
            )));
        }
        Ok(())
    }

    /// Number of feature dimensions D.
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// Number of latent factors K.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn w0(&self) -> f64 {
        self.w0
    }

    pub fn set_w0(&mut self, w0: f64) {
        self.w0 = w0;
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn w_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    /// Row-major latent matrix.
    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn v_mut(&mut self) -> &mut [f64] {
        &mut self.v
    }

    /// Latent vector of 1-based feature `j`.
    pub fn v_row(&self, j: u32) -> &[f64] {
        let start = (j as usize - 1) * self.k;
        &self.v[start..start + self.k]
    }

    pub fn v_row_mut(&mut self, j: u32) -> &mut [f64] {
        let start = (j as usize - 1) * self.k;
        &mut self.v[start..start + self.k]
    }

    pub fn is_finite(&self) -> bool {
        self.w0.is_finite() && self.w.iter().chain(&self.v).all(|x| x.is_finite())
    }

    /// Largest absolute coordinate-wise difference over `w0`, `w` and `V`.
    pub fn max_abs_diff(&self, other: &FmModel) -> f64 {
        assert_eq!(self.dim(), other.dim());
        assert_eq!(self.k, other.k);
        let mut d = (self.w0 - other.w0).abs();
        for (a, b) in self
            .w
            .iter()
            .zip(&other.w)
            .chain(self.v.iter().zip(&other.v))
        {
            d = d.max((a - b).abs());
        }
        d
    }

    pub(crate) fn check_example(&self, x: &SparseExample) -> Result<()> {
        let idx = x.max_index();
        if idx as usize > self.dim() {
            return Err(Error::IndexOutOfRange {
                index: idx,
                dim: self.dim(),
            });
        }
        Ok(())
    }
}

/// Hyperparameters shared by the serial trainers and the distributed engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub eta: f64,
    pub lambda_w: f64,
    pub lambda_v: f64,
    pub loss: LossKind,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub decay: f64,
}

impl Hyperparams {
    pub fn new(eta: f64, lambda_w: f64, lambda_v: f64, loss: LossKind) -> Self {
        Hyperparams {
            eta,
            lambda_w,
            lambda_v,
            loss,
            decay: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!("eta must be > 0, got {}", self.eta)));
        }
        if !(self.lambda_w >= 0.0 && self.lambda_w.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda_w must be >= 0, got {}",
                self.lambda_w
            )));
        }
        if !(self.lambda_v >= 0.0 && self.lambda_v.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda_v must be >= 0, got {}",
                self.lambda_v
            )));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::invalid(format!(
                "decay must lie in (0, 1], got {}",
                self.decay
            )));
        }
        Ok(())
    }

    /// Learning rate in effect during 1-based `epoch`.
    pub fn eta_at(&self, epoch: usize) -> f64 {
        self.eta * self.decay.powi(epoch.saturating_sub(1) as i32)
    }
}

/// Direct evaluation of the pairwise sum by a double loop over nonzeros.
/// Quadratic in `nnz(x)`; kept as a reference for [`score`].
pub fn score_naive(model: &FmModel, x: &SparseExample) -> Result<f64> {
    model.check_example(x)?;
    let feats = x.features();
    let mut f = model.w0();
    for &(j, xj) in feats {
        f += model.w[j as usize - 1] * xj;
    }
    for (p, &(j, xj)) in feats.iter().enumerate() {
        let vj = model.v_row(j);
        for &(jp, xjp) in &feats[p + 1..] {
            let dot: f64 = vj.iter().zip(model.v_row(jp)).map(|(a, b)| a * b).sum();
            f += dot * xj * xjp;
        }
    }
    Ok(f)
}

/// Linear-time score. Equals [`score_naive`] up to rounding.
pub fn score(model: &FmModel, x: &SparseExample) -> Result<f64> {
    model.check_example(x)?;
    let mut a = vec![0.0; model.k()];
    Ok(score_with_a(model, x, &mut a))
}

/// Computes the score and writes `a_k = sum_d v_dk x_d` into `a`.
/// Caller guarantees the example is in range and `a.len() == K`.
pub(crate) fn score_with_a(model: &FmModel, x: &SparseExample, a: &mut [f64]) -> f64 {
    let k = model.k();
    debug_assert_eq!(a.len(), k);
    a.fill(0.0);
    let mut sumsq = vec![0.0; k];
    let mut linear = model.w0();
    for &(j, xj) in x.features() {
        linear += model.w[j as usize - 1] * xj;
        for (kk, &vjk) in model.v_row(j).iter().enumerate() {
            let t = vjk * xj;
            a[kk] += t;
            sumsq[kk] += t * t;
        }
    }
    let pair: f64 = a.iter().zip(&sumsq).map(|(ak, sk)| ak * ak - sk).sum();
    linear + 0.5 * pair
}

/// Per-example latent projection `a_k = sum_d v_dk x_d`.
pub fn compute_a(model: &FmModel, x: &SparseExample) -> Result<Vec<f64>> {
    model.check_example(x)?;
    let mut a = vec![0.0; model.k()];
    for &(j, xj) in x.features() {
        for (ak, &vjk) in a.iter_mut().zip(model.v_row(j)) {
            *ak += vjk * xj;
        }
    }
    Ok(a)
}

fn check_binary_label(y: f64) -> Result<()> {
    if y == 1.0 || y == -1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLabel(y))
    }
}

/// Derivative of the loss with respect to the score, `G = dl/df`.
pub fn loss_multiplier(loss: LossKind, f: f64, y: f64) -> Result<f64> {
    match loss {
        LossKind::Squared => Ok(f - y),
        LossKind::Logistic => {
            check_binary_label(y)?;
            // -y * sigmoid(-y f), branch keeps exp() argument non-positive
            let z = y * f;
            Ok(if z >= 0.0 {
                let e = (-z).exp();
                -y * e / (1.0 + e)
            } else {
                -y / (1.0 + z.exp())
            })
        }
    }
}

/// Loss value; its derivative in `f` is [`loss_multiplier`].
pub fn loss_value(loss: LossKind, f: f64, y: f64) -> Result<f64> {
    match loss {
        LossKind::Squared => {
            let r = f - y;
            Ok(0.5 * r * r)
        }
        LossKind::Logistic => {
            check_binary_label(y)?;
            let z = y * f;
            Ok(if z > 0.0 {
                (-z).exp().ln_1p()
            } else {
                -z + z.exp().ln_1p()
            })
        }
    }
}

/// `lambda_w/2 ||w||^2 + lambda_v/2 ||V||^2`. The bias is not penalized.
pub fn regularizer(model: &FmModel, hyper: &Hyperparams) -> f64 {
    let w2: f64 = model.w().iter().map(|x| x * x).sum();
    let v2: f64 = model.v().iter().map(|x| x * x).sum();
    0.5 * hyper.lambda_w * w2 + 0.5 * hyper.lambda_v * v2
}

/// Normalized regularized objective over `examples`.
pub fn objective(model: &FmModel, examples: &[SparseExample], hyper: &Hyperparams) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for x in examples {
        total += loss_value(hyper.loss, score(model, x)?, x.label())?;
    }
    Ok(total / examples.len() as f64 + regularizer(model, hyper))
}

/// Per-example gradient for the bias.
pub fn grad_w0(g: f64) -> f64 {
    g
}

/// Per-example gradient for `w_j`, regularizer included.
pub fn grad_wj(g: f64, x_ij: f64, w_j: f64, lambda_w: f64) -> f64 {
    g * x_ij + lambda_w * w_j
}

/// Per-example gradient for `v_jk`, regularizer included.
pub fn grad_vjk(g: f64, x_ij: f64, a_ik: f64, v_jk: f64, lambda_v: f64) -> f64 {
    g * (x_ij * a_ik - v_jk * x_ij * x_ij) + lambda_v * v_jk
}

/// Regression returns the score; classification returns its sign with ties
/// going to +1.
pub fn predict(model: &FmModel, x: &SparseExample, task: Task) -> Result<f64> {
    let f = score(model, x)?;
    Ok(hard_prediction(f, task))
}

pub(crate) fn hard_prediction(f: f64, task: Task) -> f64 {
    match task {
        Task::Regression => f,
        Task::Classification => {
            if f >= 0.0 {
                1.0
            } else {
                -1.0
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ex(feats: &[(u32, f64)], y: f64) -> SparseExample {
        SparseExample::new(feats.to_vec(), y).unwrap()
    }

    fn example_one() -> (FmModel, SparseExample) {
        let m = FmModel::from_parts(0.5, vec![1.0, -1.0], vec![1.0, 2.0], 1).unwrap();
        (m, ex(&[(1, 1.0), (2, 1.0)], 2.0))
    }

    /// Pairwise term written as the full polynomial-regression sum with
    /// `w_jj' = <v_j, v_j'>` over dense indices.
    fn score_dense_poly(m: &FmModel, x: &SparseExample) -> f64 {
        let d = m.dim();
        let dense: Vec<f64> = (1..=d as u32).map(|j| x.value(j)).collect();
        let mut f = m.w0();
        for j in 0..d {
            f += m.w()[j] * dense[j];
            for jp in j + 1..d {
                let wjj: f64 = m
                    .v_row(j as u32 + 1)
                    .iter()
                    .zip(m.v_row(jp as u32 + 1))
                    .map(|(a, b)| a * b)
                    .sum();
                f += wjj * dense[j] * dense[jp];
            }
        }
        f
    }

    #[test]
    fn example_validation() {
        assert!(SparseExample::new(vec![(0, 1.0)], 1.0).is_err());
        assert!(SparseExample::new(vec![(2, 1.0), (1, 1.0)], 1.0).is_err());
        assert!(SparseExample::new(vec![(1, 1.0), (1, 2.0)], 1.0).is_err());
        assert!(SparseExample::new(vec![(1, 0.0)], 1.0).is_err());
        assert!(SparseExample::new(vec![(1, f64::NAN)], 1.0).is_err());
        assert!(SparseExample::new(vec![], 1.0).is_ok());
    }

    #[test]
    fn model_shape_checks() {
        assert!(FmModel::zeros(0, 1).is_err());
        assert!(FmModel::zeros(1, 0).is_err());
        assert!(FmModel::from_parts(0.0, vec![0.0; 2], vec![0.0; 3], 2).is_err());
        assert!(FmModel::from_parts(f64::INFINITY, vec![0.0], vec![0.0], 1).is_err());
    }

    #[test]
    fn naive_score_examples() {
        let (m, x) = example_one();
        assert_eq!(score_naive(&m, &x).unwrap(), 2.5);
        assert_eq!(score_naive(&m, &ex(&[], 0.0)).unwrap(), 0.5);
        let lin = FmModel::from_parts(0.0, vec![2.0, 3.0], vec![0.0; 2], 1).unwrap();
        assert_eq!(score_naive(&lin, &x).unwrap(), 5.0);
        assert_eq!(score_dense_poly(&m, &x), 2.5);
    }

    #[test]
    fn score_examples() {
        let (m, x) = example_one();
        assert_eq!(score(&m, &x).unwrap(), 2.5);
        assert_eq!(score(&m, &ex(&[], 0.0)).unwrap(), 0.5);
        assert_eq!(score(&m, &ex(&[(2, 3.0)], 0.0)).unwrap(), 0.5 - 3.0);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let (m, _) = example_one();
        let x = ex(&[(3, 1.0)], 0.0);
        assert!(matches!(
            score(&m, &x),
            Err(Error::IndexOutOfRange { index: 3, dim: 2 })
        ));
        assert!(score_naive(&m, &x).is_err());
        assert!(compute_a(&m, &x).is_err());
    }

    #[test]
    fn compute_a_examples() {
        let (m, x) = example_one();
        assert_eq!(compute_a(&m, &x).unwrap(), vec![3.0]);
        assert_eq!(compute_a(&m, &ex(&[], 0.0)).unwrap(), vec![0.0]);
        // v_jk = 1 iff k = 1
        let v = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let m3 = FmModel::from_parts(0.0, vec![0.0; 2], v, 3).unwrap();
        let a = compute_a(&m3, &ex(&[(1, 2.0), (2, 5.0)], 0.0)).unwrap();
        assert_eq!(a, vec![7.0, 0.0, 0.0]);
    }

    #[test]
    fn loss_multiplier_examples() {
        assert_eq!(loss_multiplier(LossKind::Squared, 2.5, 2.0).unwrap(), 0.5);
        assert_eq!(loss_multiplier(LossKind::Logistic, 0.0, 1.0).unwrap(), -0.5);
        let g = loss_multiplier(LossKind::Logistic, 40.0, 1.0).unwrap();
        // -1/(1+e^40) evaluated at 50 digits
        let expected = -4.248_354_255_291_589e-18;
        assert!(g.is_finite());
        assert!(((g - expected) / expected).abs() < 1e-12, "{g}");
        let g = loss_multiplier(LossKind::Logistic, -800.0, 1.0).unwrap();
        assert_eq!(g, -1.0);
        assert!(loss_multiplier(LossKind::Logistic, 0.0, 0.5).is_err());
    }

    #[test]
    fn loss_value_examples() {
        assert_eq!(loss_value(LossKind::Squared, 2.5, 2.0).unwrap(), 0.125);
        let ln2 = std::f64::consts::LN_2;
        assert_eq!(loss_value(LossKind::Logistic, 0.0, 1.0).unwrap(), ln2);
        assert_eq!(loss_value(LossKind::Logistic, 0.0, -1.0).unwrap(), ln2);
        // log(1+e^-40) and log(1+e^800) at 50 digits
        let small = loss_value(LossKind::Logistic, 40.0, 1.0).unwrap();
        assert!(((small - 4.248_354_255_291_589e-18) / small).abs() < 1e-12);
        assert_eq!(loss_value(LossKind::Logistic, -800.0, 1.0).unwrap(), 800.0);
        assert!(loss_value(LossKind::Logistic, 1.0, 2.0).is_err());
    }

    #[test]
    fn loss_multiplier_is_derivative() {
        let h = 1e-6;
        for loss in [LossKind::Squared, LossKind::Logistic] {
            let (f, y) = (0.7, 1.0);
            let fd = (loss_value(loss, f + h, y).unwrap() - loss_value(loss, f - h, y).unwrap())
                / (2.0 * h);
            let g = loss_multiplier(loss, f, y).unwrap();
            assert!(((fd - g) / g).abs() < 1e-6, "{loss:?}: fd={fd} g={g}");
        }
    }

    #[test]
    fn objective_examples() {
        let zero = FmModel::zeros(2, 1).unwrap();
        let data = vec![ex(&[(1, 1.0)], 1.0), ex(&[(2, 1.0)], -1.0), ex(&[], 1.0)];
        let sq = Hyperparams::new(0.1, 0.0, 0.0, LossKind::Squared);
        assert_eq!(objective(&zero, &data, &sq).unwrap(), 0.5);
        let lg = Hyperparams::new(0.1, 0.0, 0.0, LossKind::Logistic);
        assert_eq!(
            objective(&zero, &data, &lg).unwrap(),
            std::f64::consts::LN_2
        );
        assert!(matches!(
            objective(&zero, &[], &sq),
            Err(Error::EmptyDataset)
        ));

        // labels match score exactly so only the penalty remains
        let m = FmModel::from_parts(0.0, vec![3.0, 4.0], vec![0.0; 2], 1).unwrap();
        let fit = vec![ex(&[(1, 1.0)], 3.0)];
        let reg = Hyperparams::new(0.1, 2.0, 0.0, LossKind::Squared);
        assert_eq!(objective(&m, &fit, &reg).unwrap(), 25.0);
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(grad_wj(0.5, 2.0, 1.0, 0.0), 1.0);
        assert!((grad_wj(0.0, 7.0, 3.0, 0.1) - 0.3).abs() < 1e-15);
        assert_eq!(grad_vjk(1.0, 1.0, 3.0, 1.0, 0.0), 2.0);
        assert_eq!(grad_vjk(0.9, 0.0, 3.0, 2.0, 0.25), 0.5);
        // single nonzero with K = 1: a = v x, data part cancels
        let (v, x) = (0.7, 1.3);
        assert_eq!(grad_vjk(2.0, x, v * x, v, 0.1), 0.1 * v);
        assert_eq!(grad_w0(-0.25), -0.25);
    }

    #[test]
    fn grad_vjk_matches_finite_difference_of_example_one() {
        // d/dv_11 of 1/2 (f - y)^2 at the example-1 model, y = 1.5 so G = 1
        let (m, _) = example_one();
        let x = ex(&[(1, 1.0), (2, 1.0)], 1.5);
        let h = 1e-6;
        let loss_at = |dv: f64| {
            let mut mm = m.clone();
            mm.v_row_mut(1)[0] += dv;
            loss_value(LossKind::Squared, score(&mm, &x).unwrap(), 1.5).unwrap()
        };
        let fd = (loss_at(h) - loss_at(-h)) / (2.0 * h);
        assert!((fd - 2.0).abs() < 1e-6, "{fd}");
    }

    #[test]
    fn predict_examples() {
        let (m, x) = example_one();
        assert_eq!(predict(&m, &x, Task::Regression).unwrap(), 2.5);
        assert_eq!(hard_prediction(-0.3, Task::Classification), -1.0);
        assert_eq!(hard_prediction(0.0, Task::Classification), 1.0);
        assert_eq!(predict(&m, &x, Task::Classification).unwrap(), 1.0);
    }

    #[test]
    fn eta_schedule() {
        let mut h = Hyperparams::new(0.1, 0.0, 0.0, LossKind::Squared);
        h.decay = 0.5;
        assert_eq!(h.eta_at(1), 0.1);
        assert_eq!(h.eta_at(3), 0.025);
        h.decay = 0.0;
        assert!(h.validate().is_err());
    }

    fn arb_model_and_example() -> impl Strategy<Value = (FmModel, SparseExample)> {
        (1usize..=20, 1usize..=6).prop_flat_map(|(d, k)| {
            (
                -2.0..2.0f64,
                prop::collection::vec(-2.0..2.0f64, d),
                prop::collection::vec(-1.0..1.0f64, d * k),
                prop::collection::vec(prop::option::of(0.1..3.0f64), d),
            )
                .prop_map(move |(w0, w, v, xs)| {
                    let m = FmModel::from_parts(w0, w, v, k).unwrap();
                    let feats = xs
                        .iter()
                        .enumerate()
                        .filter_map(|(j, x)| x.map(|x| (j as u32 + 1, x)))
                        .collect();
                    (m, SparseExample::new(feats, 0.0).unwrap())
                })
        })
    }

    proptest! {
        #[test]
        fn rewrite_matches_dense_polynomial((m, x) in arb_model_and_example()) {
            let fast = score(&m, &x).unwrap();
            let poly = score_dense_poly(&m, &x);
            prop_assert!((fast - poly).abs() <= 1e-10 * (1.0 + poly.abs()));
        }

        #[test]
        fn single_nonzero_cancels((m, _) in arb_model_and_example(), c in -3.0..3.0f64) {
            prop_assume!(c != 0.0);
            let j = m.dim() as u32;
            let x = SparseExample::new(vec![(j, c)], 0.0).unwrap();
            let f = score(&m, &x).unwrap();
            let lin = m.w0() + m.w()[j as usize - 1] * c;
            prop_assert!((f - lin).abs() <= 1e-12 * (1.0 + lin.abs()));
        }
    }
}
