//! Factorization machines trained with a hybrid data- and model-parallel
//! engine. Workers own contiguous row blocks; parameters circulate between
//! them as per-dimension tokens, and the per-example synchronization terms
//! are rebuilt incrementally as the tokens pass through.
//!
//! ```
//! use dsfacto::{data, engine, RunConfig, SynthSpec, Task};
//!
//! let (train, _) = data::synth_fm(&SynthSpec {
//!     n: 100,
//!     dim: 10,
//!     k: 2,
//!     density: 0.3,
//!     noise_sd: 0.1,
//!     task: Task::Regression,
//!     seed: 1,
//! })
//! .unwrap();
//! let config = RunConfig { workers: 2, k: 2, epochs: 3, ..RunConfig::default() };
//! let (model, trace) = engine::run(&config, &train, None).unwrap();
//! assert_eq!(trace.len(), 3);
//! assert!(model.is_finite());
//! ```

pub mod cli;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod fm;
pub mod metrics;
pub mod partition;
pub mod serial;

pub use config::{Mode, Routing, RunConfig};
pub use data::{Dataset, SynthSpec};
pub use error::{Error, Result};
pub use fm::{FmModel, Hyperparams, LossKind, SparseExample, Task};
pub use metrics::{TraceRow, TrainTrace};
