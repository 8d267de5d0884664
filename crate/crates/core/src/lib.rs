//! Risk-aware individualized decision rules.
//!
//! A decision rule `d(x) = sign(beta^T x + beta0)` is estimated by maximizing an
//! optimized certainty equivalent of the outcome under the rule, with a
//! covariate-dependent (affine) allocation `alpha(x) = b^T x + b0`. The empirical
//! problem has indicator functions of the functional margin in its objective;
//! these are encoded exactly through epigraph/hypograph variables, which turns
//! the problem into a difference-of-convex program with reverse-convex
//! piecewise-affine constraints. The program is solved by a proximal DC
//! algorithm whose convex subproblems are quadratic programs, handled by the
//! sparse interior-point solver in [`qp`].
//!
//! Module map:
//!
//! * [`model`]: datasets, utilities, actions and linear rules.
//! * [`oce`]: empirical OCE / CVaR / quantile calculators and the explicit
//!   optimal action for finite per-action samples.
//! * [`epigraph`]: indicator epigraph/hypograph encodings and the expansion of
//!   `max - max <= 0` constraints into `max >= 0` constraints.
//! * [`qp`]: convex QP model, interior-point solver, variable-split builder.
//! * [`dc`]: the proximal DC algorithm and A-stationarity certificates.
//! * [`fit`]: the empirical rule-learning program and the end-to-end fit.
//! * [`eval`]: evaluation criteria and cross-validation.
//! * [`lasso`]: weighted penalized least squares by coordinate descent.
//! * [`bench`]: synthetic scenarios, baselines and the replication harness.
//! * [`io`]: dataset CSV reading and writing.

pub mod affine;
pub mod bench;
pub mod dc;
pub mod epigraph;
pub mod error;
pub mod eval;
pub mod fit;
pub mod io;
pub mod lasso;
pub mod model;
pub mod oce;
pub mod qp;
pub mod seed;

pub use error::{Error, Result};
pub use model::{Action, Dataset, LinearRule, UtilitySpec};
