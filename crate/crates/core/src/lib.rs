//! Hierarchical optimal transport for unsupervised domain adaptation.
//!
//! Images are treated as grids of patch embeddings. Two images are compared
//! with a sliced Wasserstein distance between their patch clouds, and the
//! resulting image-level distances form the ground cost of a mini-batch
//! unbalanced OT problem between a labeled source batch and an unlabeled
//! target batch.

pub mod data;
pub mod error;
pub mod harness;
pub mod hot;
pub mod measures;
pub mod model;
pub mod solvers;

pub use error::{Error, Result};
pub use hot::{
    build_cost_matrix, deephot_loss, domain_distance, frozen_plan_loss, ground_cost, hierarchical_distance,
    solve_domain, DeepHotConfig, DeepHotOutput, DomainSolver, GroundCostParams, HotResult, ImageOt, TermTriple,
};
pub use measures::{CostMatrix, DiscreteMeasure, TransportPlan};
pub use model::{ModelDims, ModelParams, PatchGrid};
pub use solvers::{exact_ot, sinkhorn, swd, unbalanced_sinkhorn, ProjectionSet, SinkhornConfig};
