//! The two boundary-condition regimes.
//!
//! Case 1 prescribes the inlet pressure and the outlet flows; the outlet
//! pressures then follow directly from `p0 * u - p = A_N(xi) q`. Case 2
//! prescribes the inlet flow and the outlet pressures; the outlet flows are
//! the unique solution of the mixed system `M_N(xi) q = b_N`, which is
//! deliberately posed without the (unknown) root pressure.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::geometry::TreeGeometry;
use crate::network::{
    energy_from_branch_flows, mixed_system, propagate_branch_flows, resistance_matrix,
};
use crate::topology::{outlet_count, path_to, BranchIndex};

/// Relative residual above which the mixed-system solve runs one pass of
/// iterative refinement.
const REFINEMENT_THRESHOLD: f64 = 1e-10;

/// Tolerance for agreement of the inlet pressure reconstructed along
/// different root-to-outlet paths.
const INLET_PRESSURE_TOL: f64 = 1e-10;

/// Boundary data for a flow solve, in the documented JSON schema
/// `{"type": "outlet_flows"|"outlet_pressures", "values": [...], "p0"|"phi": f}`.
///
/// Outlet flows are positive when the fluid exits the tree.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryConditions {
    /// Prescribed outlet flows plus the inlet pressure.
    OutletFlows { values: Vec<f64>, p0: f64 },
    /// Prescribed outlet pressures plus the inlet flow.
    OutletPressures { values: Vec<f64>, phi: f64 },
}

impl BoundaryConditions {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Length of the outlet vector; must equal `2^N` for the paired tree.
    pub fn len(&self) -> usize {
        match self {
            BoundaryConditions::OutletFlows { values, .. } => values.len(),
            BoundaryConditions::OutletPressures { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Complete flow picture of a tree under one set of boundary conditions.
///
/// `branch_flows` covers the non-root branches in level-major order; the
/// root carries `total_flow`. Conservation holds at every bifurcation and
/// every branch satisfies Poiseuille's law with resistance `r0 / xi`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub levels: usize,
    pub branch_flows: Vec<f64>,
    pub outlet_pressures: Vec<f64>,
    pub inlet_pressure: f64,
    pub total_flow: f64,
    pub energy: f64,
}

impl FlowState {
    /// Flow through one branch.
    pub fn branch_flow(&self, branch: BranchIndex) -> f64 {
        self.branch_flows[branch.storage_index()]
    }

    /// Outlet flows (the deepest level of `branch_flows`).
    pub fn outlet_flows(&self) -> &[f64] {
        let m = outlet_count(self.levels);
        &self.branch_flows[self.branch_flows.len() - m..]
    }

    /// Pressure at the outlet of every branch, computed by cascading
    /// Poiseuille drops down from the inlet. The returned vector is
    /// level-major, like `branch_flows`.
    pub fn branch_outlet_pressures(&self, geometry: &TreeGeometry) -> Vec<f64> {
        let root_outlet = self.inlet_pressure - geometry.r0() * self.total_flow;
        let mut pressures = vec![0.0; self.branch_flows.len()];
        for (index, &q) in self.branch_flows.iter().enumerate() {
            let branch = BranchIndex::from_storage_index(index);
            let upstream = branch
                .parent()
                .map_or(root_outlet, |p| pressures[p.storage_index()]);
            pressures[index] = upstream - geometry.resistance_at(branch) * q;
        }
        pressures
    }

    /// Serializes to JSON with branch flows keyed `"i,j"` (the root pipe
    /// under key `"0"`). `Serialize` goes through the same representation.
    pub fn to_json(&self) -> Value {
        let mut flows = Map::new();
        flows.insert("0".to_string(), json!(self.total_flow));
        for (index, &q) in self.branch_flows.iter().enumerate() {
            let b = BranchIndex::from_storage_index(index);
            flows.insert(format!("{},{}", b.level(), b.position()), json!(q));
        }
        json!({
            "levels": self.levels,
            "branch_flows": flows,
            "outlet_pressures": self.outlet_pressures,
            "inlet_pressure": self.inlet_pressure,
            "total_flow": self.total_flow,
            "energy": self.energy,
        })
    }
}

impl Serialize for FlowState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

/// Case 1: outlet flows and the inlet pressure are known; outlet pressures
/// follow from the resistance matrix.
///
/// # Examples
///
/// ```
/// use pipetree::{pressures_from_flows, TreeGeometry};
///
/// let g = TreeGeometry::new(1, 1.0, vec![1.0, 1.0])?;
/// // All flow leaves through the first outlet.
/// let state = pressures_from_flows(&g, &[1.0, 0.0], 0.0)?;
/// assert_eq!(state.outlet_pressures, vec![-2.0, -1.0]);
/// assert_eq!(state.total_flow, 1.0);
/// # Ok::<(), pipetree::Error>(())
/// ```
pub fn pressures_from_flows(
    geometry: &TreeGeometry,
    outlet_flows: &[f64],
    inlet_pressure: f64,
) -> Result<FlowState> {
    let (branch_flows, total_flow) = propagate_branch_flows(geometry.levels(), outlet_flows)?;
    let a = resistance_matrix(geometry)?;
    let q = DVector::from_column_slice(outlet_flows);
    let drops = a.matrix() * &q;
    let outlet_pressures: Vec<f64> = drops.iter().map(|d| inlet_pressure - d).collect();
    let energy = energy_from_branch_flows(&branch_flows, total_flow, geometry);
    Ok(FlowState {
        levels: geometry.levels(),
        branch_flows,
        outlet_pressures,
        inlet_pressure,
        total_flow,
        energy,
    })
}

/// Case 2: outlet pressures and the inlet flow are known; the outlet flows
/// solve the mixed system, and the inlet pressure is reconstructed by
/// cascading the pressure drops back up one path (all paths must agree).
pub fn flows_from_pressures(
    geometry: &TreeGeometry,
    outlet_pressures: &[f64],
    inlet_flow: f64,
) -> Result<FlowState> {
    let (m, b) = mixed_system(geometry, outlet_pressures, inlet_flow)?;
    let lu = m.clone().lu();
    let mut q = lu.solve(&b).ok_or_else(|| {
        Error::NumericalDegeneracy("mixed system M_N(xi) is numerically singular".into())
    })?;
    // One refinement pass when the residual is larger than expected for a
    // well-conditioned system.
    let scale = b.amax().max(1.0);
    let residual = (&m * &q - &b).amax();
    if residual > REFINEMENT_THRESHOLD * scale {
        if let Some(correction) = lu.solve(&(&b - &m * &q)) {
            q += correction;
        }
    }

    let outlet_flows: Vec<f64> = q.iter().copied().collect();
    let (branch_flows, total_flow) = propagate_branch_flows(geometry.levels(), &outlet_flows)?;

    // p0 = p_{N,j} + (drops along the path to outlet j) + r0 * Phi, for any j.
    let r0 = geometry.r0();
    let mut inlet_candidates = Vec::with_capacity(outlet_pressures.len());
    let mut drop_scale: f64 = 0.0;
    for (j, &p) in outlet_pressures.iter().enumerate() {
        let path = path_to(BranchIndex::new(geometry.levels(), j + 1)?);
        let mut drop = r0 * total_flow;
        for br in path.branches() {
            let branch_drop = geometry.resistance_at(*br) * branch_flows[br.storage_index()];
            drop_scale = drop_scale.max(branch_drop.abs());
            drop += branch_drop;
        }
        inlet_candidates.push(p + drop);
    }
    let inlet_pressure = inlet_candidates[0];
    let spread = inlet_candidates
        .iter()
        .map(|c| (c - inlet_pressure).abs())
        .fold(0.0, f64::max);
    let pressure_scale = inlet_candidates
        .iter()
        .map(|c| c.abs())
        .fold(drop_scale.max(1.0), f64::max);
    if spread > INLET_PRESSURE_TOL * pressure_scale {
        return Err(Error::NumericalDegeneracy(format!(
            "inlet pressure reconstruction disagrees across outlet paths (spread {spread:e})"
        )));
    }

    let energy = energy_from_branch_flows(&branch_flows, total_flow, geometry);
    Ok(FlowState {
        levels: geometry.levels(),
        branch_flows,
        outlet_pressures: outlet_pressures.to_vec(),
        inlet_pressure,
        total_flow,
        energy,
    })
}
