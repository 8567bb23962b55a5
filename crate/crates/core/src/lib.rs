//! Sketched second-order online learning.
//!
//! Learners follow a strict predict-then-learn protocol through
//! [`OnlineLearner`]. Sketched Online Newton is generic over a [`Sketch`]
//! (Frequent Directions, Oja, exact); [`sparse`] has variants whose cost
//! per round depends on the number of nonzeros rather than the dimension.

pub mod baselines;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fd;
pub mod linalg;
pub mod loss;
pub mod oja;
pub mod projection;
pub mod sketch;
pub mod son;
pub mod sparse;
pub mod sparse_vec;

pub use error::{Error, Result};
pub use loss::LossSpec;
pub use sketch::Sketch;
pub use son::{EtaMode, Feedback, FullOns, OnlineLearner, SonConfig, SonLearner};
pub use sparse_vec::SparseVec;
