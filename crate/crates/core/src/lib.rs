//! Learning N:M semi-structured sparsity masks by policy-gradient descent on
//! per-group categorical logits.
//!
//! Each group of `M` weights carries `M` logits. A mask is drawn by sampling
//! `N` positions per group without replacement from the group softmax, so the
//! parameter count stays linear in the number of weights. Training needs only
//! forward loss evaluations: the update is a score-function estimate using the
//! loss difference against a fixed baseline mask, optionally minus a moving
//! average of that difference.
//!
//! Modules:
//! - [`mask`]: patterns, the probabilistic-sum operator, mask enumeration and I/O
//! - [`sampling`]: softmax groups, sampling, exact `p(m | π)` and its score
//! - [`pge`]: estimators, smoothing tracker, the training loop, mask extraction
//! - [`oracle`]: brute-force objective and gradient, Monte Carlo estimator statistics
//! - [`tasks`]: forward-only toy objectives and the magnitude baseline
//! - [`harness`]: run configuration, CLI commands and reports

pub mod error;
pub mod harness;
pub mod mask;
pub mod oracle;
pub mod par;
pub mod pge;
pub mod rng;
pub mod sampling;
pub mod tasks;

pub use error::{Error, Result};
pub use mask::{NMMask, SparsityPattern};
pub use pge::EstimatorKind;
pub use sampling::GroupLogits;
pub use tasks::ToyTask;
