use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fm::{FmModel, Hyperparams, LossKind, Task};

/// Which optimizer drives a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    SerialBatch,
    SerialIncremental,
    Dsfacto,
}

/// Where a worker forwards a token after processing it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Routing {
    /// `(worker + 1) mod P`
    Ring,
    /// Uniform over the other workers (restricted to those the token has not
    /// yet visited in the current phase).
    Random,
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub out_path: Option<PathBuf>,
    pub task: Task,
    pub loss: LossKind,
    pub dim: Option<usize>,
    pub k: usize,
    pub epochs: usize,
    pub eta: f64,
    pub decay: f64,
    pub lambda_w: f64,
    pub lambda_v: f64,
    pub workers: usize,
    pub routing: Routing,
    pub seed: u64,
    /// Standard deviation of the initial latent factors.
    pub init_sd: f64,
    /// Patch `a_ik` locally after each latent update in the update phase.
    pub local_a_refresh: bool,
    /// Run the engine's workers round-robin on the calling thread.
    pub deterministic: bool,
    pub mode: Mode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train_path: None,
            test_path: None,
            out_path: None,
            task: Task::Regression,
            loss: LossKind::Squared,
            dim: None,
            k: 4,
            epochs: 10,
            eta: 0.01,
            decay: 1.0,
            lambda_w: 1e-4,
            lambda_v: 1e-4,
            workers: 1,
            routing: Routing::Ring,
            seed: 0,
            init_sd: 0.01,
            local_a_refresh: false,
            deterministic: false,
            mode: Mode::Dsfacto,
        }
    }
}

impl RunConfig {
    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            eta: self.eta,
            lambda_w: self.lambda_w,
            lambda_v: self.lambda_v,
            loss: self.loss,
            decay: self.decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyperparams().validate()?;
        if self.k < 1 {
            return Err(Error::invalid("K must be >= 1"));
        }
        if self.workers < 1 {
            return Err(Error::invalid("worker count must be >= 1"));
        }
        if !(self.init_sd >= 0.0 && self.init_sd.is_finite()) {
            return Err(Error::invalid(format!(
                "init_sd must be >= 0, got {}",
                self.init_sd
            )));
        }
        if self.task == Task::Regression && self.loss == LossKind::Logistic {
            return Err(Error::invalid("logistic loss needs a classification task"));
        }
        Ok(())
    }

    /// Seeded starting point: zero bias and weights, latent factors drawn
    /// from `N(0, init_sd^2)`. Serial and distributed runs with the same seed
    /// start from the same model.
    pub fn init_model(&self, dim: usize) -> Result<FmModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        FmModel::init_random(dim, self.k, self.init_sd, &mut rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_ranges() {
        let bad = [
            RunConfig {
                k: 0,
                ..Default::default()
            },
            RunConfig {
                workers: 0,
                ..Default::default()
            },
            RunConfig {
                eta: 0.0,
                ..Default::default()
            },
            RunConfig {
                decay: 1.5,
                ..Default::default()
            },
            RunConfig {
                lambda_v: -1.0,
                ..Default::default()
            },
            RunConfig {
                init_sd: -0.1,
                ..Default::default()
            },
            RunConfig {
                loss: LossKind::Logistic,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn init_is_seeded() {
        let cfg = RunConfig {
            seed: 3,
            ..Default::default()
        };
        let a = cfg.init_model(5).unwrap();
        assert_eq!(a, cfg.init_model(5).unwrap());
        assert_eq!(a.w0(), 0.0);
        assert!(a.w().iter().all(|&x| x == 0.0));
        assert!(a.v().iter().any(|&x| x != 0.0));
    }
}
