//! Superquantile (CVaR) constrained optimization by a semismooth Newton
//! augmented Lagrangian method.
//!
//! Problems have the form
//!
//! ```text
//! minimize f(x)  subject to  T_k(A_l x + b_l) <= 0,  l = 1..L,   p <= x <= q
//! ```
//!
//! where `T_k` sums the `k` largest entries. `T_k(g) <= 0` is the same as the
//! empirical superquantile of `g` at level `1 - k/m` being nonpositive.
//!
//! ```
//! use superq_core::{alm_solve, AlmSettings, BoxConstraint, ConstraintBlock, Objective, Problem, RowMatrix};
//!
//! // minimize x1 + x2  s.t.  max(x1, x2) <= 0,  -1 <= x <= 1
//! let block = ConstraintBlock::new(RowMatrix::identity(2), vec![0.0, 0.0], 1).unwrap();
//! let prob = Problem::new(
//!     Objective::linear(vec![1.0, 1.0]),
//!     vec![block],
//!     BoxConstraint::uniform(2, -1.0, 1.0).unwrap(),
//! )
//! .unwrap();
//! let res = alm_solve(&prob, &AlmSettings::default(), None).unwrap();
//! assert!(res.converged);
//! assert!((res.state.x[0] + 1.0).abs() < 1e-6);
//! ```

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected; the dense
// kernels read better with explicit indices.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod alm;
pub mod error;
pub mod instances;
pub mod jacobian;
pub mod model;
pub mod oracle;
pub mod projection;
pub mod ssn;
pub mod topk;
pub mod trace;

pub use alm::{alm_solve, dual_feasibility_check, update_sigma, AlmResult, AlmSettings, AlmTrace, IterateState, OuterRecord};
pub use error::{Error, Result};
pub use instances::{
    build_quantile_regression, generate_synthetic, solve_path, solve_path_with, synthetic_qr_data, ObjectiveKind,
    PathEntry, QrProblem, QrSolution, QrSpec, SynthSpec,
};
pub use jacobian::{build_reduced_factor, classify, jacobian_apply, JacobianCase, QBlocks, ReducedFactor};
pub use model::{
    dual_objective, empirical_superquantile, kkt_residuals, objective_grad, objective_hess_diag, objective_value,
    ConstraintBlock, Objective, Problem, Residuals, RowMatrix,
};
pub use projection::{project_bk, project_bk_with_hint, project_box, BoxConstraint, TopKProjection};
pub use ssn::{
    assemble_newton, phi_grad, phi_value, solve_newton, ssn_solve, NewtonSystem, ProxPolicy, SsnSettings,
    SubproblemContext,
};
pub use topk::{partial_sort_desc, partition_of, sort_desc, topk_sum, IndexPair, Partition, SortedView};
pub use trace::{TimingBreakdown, Timings};
