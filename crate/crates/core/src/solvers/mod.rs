//! Optimal-transport solvers: the exact LP oracle, balanced and unbalanced
//! Sinkhorn scaling, 1-D OT, exact patch OT and the sliced Wasserstein
//! distance with its gradients.

pub mod exact;
pub mod patch;
pub mod sinkhorn;
pub mod sliced;

pub use exact::{exact_ot, exact_ot_capped, exact_ot_with_duals, ExactSolution, DEFAULT_ORACLE_CAP};
pub use patch::{exact_patch_ot, exact_patch_ot_grad, PatchOtGrad};
pub use sinkhorn::{kl_div, sinkhorn, unbalanced_objective, unbalanced_sinkhorn, SinkhornConfig};
pub use sliced::{ot_1d, swd, swd_grad, ProjectionSet, SortedProjections, SwdGrad};
