//! KL-regularized finite-horizon control on tabular and Gaussian-linear models.
//!
//! The forward problem ([`foc`]) finds the randomized policy minimizing
//! `KL(p_{0:N} || q_{0:N}) + sum_k E[c_k(X_k)]` through a backward
//! log-partition recursion. The inverse problem ([`ioc`]) reconstructs a
//! linear-in-features stage cost from observed state/action pairs by
//! minimizing a convex negative log-likelihood.
//!
//! Supporting pieces: discrete probability primitives ([`prob`], [`grid`],
//! [`kernel`]), histogram kernel estimation ([`estimation`]), a limited-memory
//! quasi-Newton solver ([`solver`]), the closed-form Gaussian policy ([`lqg`]),
//! benchmark environments ([`sim`]) and the text formats ([`format`]).

pub mod error;
pub mod estimation;
pub mod foc;
pub mod format;
pub mod grid;
pub mod instances;
pub mod ioc;
pub mod kernel;
pub mod lqg;
pub mod numeric;
pub mod par;
pub mod prob;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{Axis, GridSpace};
pub use kernel::{CostTable, PolicyKernel, SparseRows, TransitionKernel};
pub use par::Execution;
pub use prob::{DiscreteDistribution, ExtendedReal};
