//! Viscous flow through dyadic pipe trees: resistance matrices, dissipated
//! energy, both boundary-condition regimes, and energy-optimal geometries
//! under a volume constraint.
//!
//! A tree with `N` levels carries a fluid in the Poiseuille regime: every
//! branch obeys `pressure drop = resistance * flow` with resistance
//! `r0 / xi_{i,j}`, where the cumulative reduction ratios `xi` describe the
//! geometry. The crate provides
//!
//! - [`topology`]: branch indexing, root-to-branch paths, and the change of
//!   variables between per-bifurcation and cumulative ratios;
//! - [`TreeGeometry`] and the resistance matrix `A_N(xi)` mapping outlet
//!   flows to pressure drops, `p0 u - p = A_N(xi) q`;
//! - [`pressures_from_flows`] / [`flows_from_pressures`] for the two ways of
//!   closing the system;
//! - closed-form optimal geometries ([`optimal_xi_case1`],
//!   [`equal_pressure_optimum`]), the shared optimal value
//!   [`infimum_energy`], and the pipe-collapse family
//!   ([`minimizing_sequence_element`]) that approaches it when no optimum
//!   exists;
//! - an augmented Lagrangian optimizer ([`optimize_case1`],
//!   [`optimize_case2`]) cross-validated against the closed forms.
//!
//! The mdbook guide under `book/` walks through the same material with
//! narrative; its code snippets mirror the doc-tests in this crate.
//!
//! # Quick start
//!
//! ```
//! use pipetree::{equal_pressure_optimum, flows_from_pressures, TreeGeometry};
//!
//! // The symmetric optimum for 2 levels under volume cap lambda = 5:
//! // xi_{i,j} = (lambda - 1) / (N 2^i), energy = r0 Phi^2 (1 + N^2/(lambda-1)).
//! let report = equal_pressure_optimum(2, 5.0, 1.0, 1.0)?;
//! assert!((report.energy - 2.0).abs() < 1e-12);
//!
//! // Feeding that geometry with equal outlet pressures splits the flow
//! // evenly: q = Phi / 2^N at every outlet.
//! let geometry = TreeGeometry::new(2, 1.0, report.xi_star.clone())?;
//! let state = flows_from_pressures(&geometry, &[0.0; 4], 1.0)?;
//! for q in state.outlet_flows() {
//!     assert!((q - 0.25).abs() < 1e-12);
//! }
//! # Ok::<(), pipetree::Error>(())
//! ```

pub mod auglag;
mod csvfmt;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod network;
pub mod optima;
pub mod topology;

pub use auglag::{
    augmented_lagrangian, optimize_case1, optimize_case2, volume_gap, write_run_csv, AugLagConfig,
    Iterate, OptimizationRun,
};
pub use error::{Error, Result};
pub use flow::{flows_from_pressures, pressures_from_flows, BoundaryConditions, FlowState};
pub use geometry::{TreeGeometry, Volume, DEFAULT_LEVEL_CAP, XI_FLOOR};
pub use network::{
    energy_branchwise, energy_quadratic, mixed_system, propagate_branch_flows, resistance_matrix,
    resistance_matrix_with_cap, tilde_a1, ResistanceMatrix,
};
pub use optima::{
    aux_inner_flows, aux_reduced_energy, equal_pressure_optimum, infimum_energy,
    minimizing_sequence_element, minimizing_sequence_max_epsilon, optimal_xi_case1, sweep_epsilon,
    sweep_point, write_sweep_csv, EpsilonSchedule, MinimizingSequenceElement, OptimalityReport,
    SweepRow,
};
