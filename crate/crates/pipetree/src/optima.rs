//! Closed-form and constructive optimal geometries.
//!
//! With outlet flows prescribed, the energy-minimal geometry under a volume
//! cap has the closed form `xi* = (lambda - 1) |q| / sum|q|`. With outlet
//! pressures prescribed instead, a minimum exists only when all outlet
//! pressures coincide — the symmetric tree `xi*_{i,j} = (lambda-1)/(N 2^i)`
//! — and otherwise the infimum `r0 Phi^2 (1 + N^2/(lambda-1))` is approached
//! by a family of geometries that collapses the tree onto the pipe leading
//! to the first outlet. The relaxed per-level problem behind that shared
//! bound is also exposed here.

use serde::Serialize;

use crate::csvfmt::sig17;
use crate::error::{Error, Result};
use crate::flow::{flows_from_pressures, pressures_from_flows, FlowState};
use crate::geometry::{TreeGeometry, XI_FLOOR};
use crate::network::{energy_branchwise, propagate_branch_flows};
use crate::topology::{branch_count, branch_set, outlet_count};

/// An optimal (or candidate) geometry together with the diagnostics used to
/// judge it: attained energy, the problem's optimal value, stationarity and
/// feasibility residuals.
#[derive(Clone, Debug, Serialize)]
pub struct OptimalityReport {
    /// The geometry under report, level-major.
    pub xi_star: Vec<f64>,
    /// Flow state of the tree at `xi_star`.
    pub flow_state: FlowState,
    /// Energy dissipated at `xi_star`.
    pub energy: f64,
    /// Optimal value of the underlying problem.
    pub infimum: f64,
    /// Maximum relative deviation from the first-order optimality condition.
    pub kkt_residual: f64,
    /// `|sum(xi) - (lambda - 1)|`.
    pub feasibility_residual: f64,
    /// Whether any ratio had to be clamped at the positivity floor.
    pub boundary_degenerate: bool,
    /// Whether the monotone-radius modelling assumption holds at `xi_star`.
    /// Violations are reported, never enforced.
    pub monotonicity_satisfied: bool,
}

/// One element of the pipe-collapse family: for a small `eps`, the branches
/// on the path to outlet `(N, 1)` keep almost the whole volume budget while
/// every other branch shrinks to `eps`.
#[derive(Clone, Debug, Serialize)]
pub struct MinimizingSequenceElement {
    pub epsilon: f64,
    pub geometry: TreeGeometry,
    pub flow_state: FlowState,
    pub energy: f64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 1.0) || !lambda.is_finite() {
        return Err(Error::InvalidLambda(lambda));
    }
    Ok(())
}

/// The shared optimal value `r0 Phi^2 (1 + N^2 / (lambda - 1))`.
///
/// This is simultaneously the minimum of the equal-pressure problem and the
/// infimum of the unequal-pressure problem (where it is not attained).
///
/// # Examples
///
/// ```
/// use pipetree::infimum_energy;
///
/// assert_eq!(infimum_energy(2, 5.0, 1.0, 1.0)?, 2.0);
/// assert_eq!(infimum_energy(3, 10.0, 1.0, 1.0)?, 2.0);
/// # Ok::<(), pipetree::Error>(())
/// ```
pub fn infimum_energy(levels: usize, lambda: f64, r0: f64, phi: f64) -> Result<f64> {
    if levels == 0 {
        return Err(Error::InvalidLevels(0));
    }
    check_lambda(lambda)?;
    let n = levels as f64;
    Ok(r0 * phi * phi * (1.0 + n * n / (lambda - 1.0)))
}

/// Builds the case-1 diagnostics for an arbitrary feasible geometry given
/// the prescribed outlet flows. Shared between the closed form and the
/// iterative optimizer's final report.
pub(crate) fn case1_report(
    levels: usize,
    r0: f64,
    lambda: f64,
    outlet_flows: &[f64],
    xi: Vec<f64>,
) -> Result<OptimalityReport> {
    let geometry = TreeGeometry::new(levels, r0, xi)?;
    let (branch_flows, phi) = propagate_branch_flows(levels, outlet_flows)?;
    let total_abs: f64 = branch_flows.iter().map(|q| q.abs()).sum();
    if total_abs == 0.0 {
        return Err(Error::AllZeroFlows);
    }
    let infimum = r0 * phi * phi + r0 * total_abs * total_abs / (lambda - 1.0);
    let energy = energy_branchwise(outlet_flows, &geometry)?;

    // Stationarity: q^2 / xi^2 must be level across branches with flow.
    let mut max_ratio = f64::NEG_INFINITY;
    let mut min_ratio = f64::INFINITY;
    let mut boundary_degenerate = false;
    for (q, xi) in branch_flows.iter().zip(geometry.xi()) {
        if *q == 0.0 {
            boundary_degenerate = true;
            continue;
        }
        let ratio = (q / xi) * (q / xi);
        max_ratio = max_ratio.max(ratio);
        min_ratio = min_ratio.min(ratio);
    }
    boundary_degenerate |= geometry.xi().iter().any(|&v| v <= XI_FLOOR);
    let kkt_residual = if max_ratio > 0.0 {
        (max_ratio - min_ratio) / max_ratio
    } else {
        0.0
    };

    let feasibility_residual =
        (geometry.xi().iter().sum::<f64>() - (lambda - 1.0)).abs();
    let monotonicity_satisfied = geometry.radii_monotone();
    let flow_state = pressures_from_flows(&geometry, outlet_flows, 0.0)?;
    Ok(OptimalityReport {
        xi_star: geometry.xi().to_vec(),
        flow_state,
        energy,
        infimum,
        kkt_residual,
        feasibility_residual,
        boundary_degenerate,
        monotonicity_satisfied,
    })
}

/// Case 1 closed form: with outlet flows prescribed, the unique minimizer of
/// the dissipated energy under `1 + sum(xi) = lambda` is
/// `xi*_{i,j} = (lambda - 1) |q_{i,j}| / sum |q|`.
///
/// Branches carrying no flow would receive `xi* = 0`, outside the admissible
/// set; they are clamped at the positivity floor, the remaining budget is
/// redistributed, and the report is flagged boundary-degenerate.
pub fn optimal_xi_case1(
    outlet_flows: &[f64],
    lambda: f64,
    levels: usize,
    r0: f64,
) -> Result<OptimalityReport> {
    check_lambda(lambda)?;
    let (branch_flows, _) = propagate_branch_flows(levels, outlet_flows)?;
    let total_abs: f64 = branch_flows.iter().map(|q| q.abs()).sum();
    if total_abs == 0.0 {
        return Err(Error::AllZeroFlows);
    }

    // Proportional allocation, with sub-floor branches pinned at the floor
    // and the rest renormalized until the assignment is stable.
    let n = branch_flows.len();
    let mut floored = vec![false; n];
    let mut xi = vec![0.0; n];
    loop {
        let floored_budget = floored.iter().filter(|f| **f).count() as f64 * XI_FLOOR;
        let budget = lambda - 1.0 - floored_budget;
        if budget <= 0.0 {
            return Err(Error::NumericalDegeneracy(
                "volume budget exhausted by floored branches".into(),
            ));
        }
        let live_abs: f64 = branch_flows
            .iter()
            .zip(&floored)
            .filter(|(_, f)| !**f)
            .map(|(q, _)| q.abs())
            .sum();
        let mut changed = false;
        for i in 0..n {
            if floored[i] {
                xi[i] = XI_FLOOR;
                continue;
            }
            let value = budget * branch_flows[i].abs() / live_abs;
            if value < XI_FLOOR {
                floored[i] = true;
                changed = true;
            } else {
                xi[i] = value;
            }
        }
        if !changed {
            break;
        }
    }

    case1_report(levels, r0, lambda, outlet_flows, xi)
}

/// The symmetric optimum of the equal-pressure problem:
/// `xi*_{i,j} = (lambda - 1) / (N 2^i)`, with flows `Phi / 2^i` at every
/// level and energy exactly `r0 Phi^2 (1 + N^2 / (lambda - 1))`.
pub fn equal_pressure_optimum(
    levels: usize,
    lambda: f64,
    r0: f64,
    phi: f64,
) -> Result<OptimalityReport> {
    check_lambda(lambda)?;
    let xi: Vec<f64> = branch_set(levels)?
        .iter()
        .map(|b| (lambda - 1.0) / (levels as f64 * (1usize << b.level()) as f64))
        .collect();
    let geometry = TreeGeometry::new(levels, r0, xi)?;
    let flow_state = flows_from_pressures(&geometry, &vec![0.0; outlet_count(levels)], phi)?;

    // Inner optimality of the relaxed problem: q / xi = N Phi / (lambda - 1)
    // on every branch.
    let target = levels as f64 * phi / (lambda - 1.0);
    let kkt_residual = flow_state
        .branch_flows
        .iter()
        .zip(geometry.xi())
        .map(|(q, xi)| (q / xi - target).abs())
        .fold(0.0, f64::max)
        / target.abs().max(1.0);

    let feasibility_residual =
        (geometry.xi().iter().sum::<f64>() - (lambda - 1.0)).abs();
    let energy = infimum_energy(levels, lambda, r0, phi)?;
    Ok(OptimalityReport {
        xi_star: geometry.xi().to_vec(),
        monotonicity_satisfied: geometry.radii_monotone(),
        flow_state,
        energy,
        infimum: energy,
        kkt_residual,
        feasibility_residual,
        boundary_degenerate: false,
    })
}

/// Largest admissible `eps` for [`minimizing_sequence_element`]: keeps every
/// ratio, on-path ones included, at or above the positivity floor.
pub fn minimizing_sequence_max_epsilon(levels: usize, lambda: f64) -> Result<f64> {
    if levels == 0 {
        return Err(Error::InvalidLevels(0));
    }
    check_lambda(lambda)?;
    let n = levels as f64;
    let slope = branch_count(levels) as f64 / n - 1.0;
    Ok(((lambda - 1.0) / n - XI_FLOOR) / slope)
}

/// One element of the minimizing family for the unequal-pressure problem:
/// `xi = (lambda-1)/N - ((2^(N+1)-2)/N - 1) eps` on the path to outlet
/// `(N, 1)`, `eps` elsewhere, with flows solved from the prescribed outlet
/// pressures. The volume constraint holds for every `eps` by construction.
pub fn minimizing_sequence_element(
    levels: usize,
    lambda: f64,
    r0: f64,
    phi: f64,
    outlet_pressures: &[f64],
    epsilon: f64,
) -> Result<MinimizingSequenceElement> {
    check_lambda(lambda)?;
    let max = minimizing_sequence_max_epsilon(levels, lambda)?;
    if !(epsilon >= XI_FLOOR && epsilon <= max) {
        return Err(Error::EpsilonOutOfRange {
            epsilon,
            min: XI_FLOOR,
            max,
        });
    }
    let n = levels as f64;
    let slope = branch_count(levels) as f64 / n - 1.0;
    let on_path = (lambda - 1.0) / n - slope * epsilon;
    let xi: Vec<f64> = branch_set(levels)?
        .iter()
        .map(|b| if b.on_first_outlet_path() { on_path } else { epsilon })
        .collect();
    let geometry = TreeGeometry::new(levels, r0, xi)?;
    let flow_state = flows_from_pressures(&geometry, outlet_pressures, phi)?;
    let energy = flow_state.energy;
    Ok(MinimizingSequenceElement {
        epsilon,
        geometry,
        flow_state,
        energy,
    })
}

/// Inner-optimal flows of the relaxed per-level problem: for a fixed ratio
/// vector, `q_{i,j} = xi_{i,j} / (sum of level-i ratios) * Phi`.
///
/// These flows satisfy the per-level sum constraint (each level carries
/// `Phi` in total), not node-wise conservation.
pub fn aux_inner_flows(levels: usize, xi: &[f64], phi: f64) -> Result<Vec<f64>> {
    let level_sums = level_sums(levels, xi)?;
    let mut flows = Vec::with_capacity(xi.len());
    for (index, &value) in xi.iter().enumerate() {
        let level = crate::topology::BranchIndex::from_storage_index(index).level();
        flows.push(value / level_sums[level - 1] * phi);
    }
    Ok(flows)
}

/// Energy of the relaxed problem after minimizing over flows:
/// `r0 Phi^2 (1 + sum_i 1 / y_i)` with `y_i` the level sums of `xi`.
pub fn aux_reduced_energy(levels: usize, xi: &[f64], r0: f64, phi: f64) -> Result<f64> {
    let level_sums = level_sums(levels, xi)?;
    let sum_inverse: f64 = level_sums.iter().map(|y| 1.0 / y).sum();
    Ok(r0 * phi * phi * (1.0 + sum_inverse))
}

fn level_sums(levels: usize, xi: &[f64]) -> Result<Vec<f64>> {
    if levels == 0 {
        return Err(Error::InvalidLevels(0));
    }
    let expected = branch_count(levels);
    if xi.len() != expected {
        return Err(Error::DimensionMismatch {
            what: "xi",
            expected,
            got: xi.len(),
        });
    }
    for (index, &value) in xi.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveEntry {
                what: "xi",
                index,
                value,
            });
        }
    }
    let mut sums = vec![0.0; levels];
    let mut index = 0;
    for (level, sum) in sums.iter_mut().enumerate() {
        let width = 1usize << (level + 1);
        *sum = xi[index..index + width].iter().sum();
        index += width;
    }
    Ok(sums)
}

/// Geometric schedule of `eps` values for sweeping the minimizing family.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EpsilonSchedule {
    pub eps0: f64,
    pub ratio: f64,
    pub steps: usize,
}

impl EpsilonSchedule {
    /// Default schedule: starts at a tenth of the feasible maximum and
    /// halves twenty times.
    pub fn default_for(max_epsilon: f64) -> Self {
        Self {
            eps0: 0.1 * max_epsilon,
            ratio: 0.5,
            steps: 20,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.steps)
            .map(|k| self.eps0 * self.ratio.powi(k as i32))
            .collect()
    }
}

/// One row of the sweep CSV.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub energy: f64,
    pub infimum: f64,
    pub gap: f64,
    pub q_first: f64,
    pub max_other_q: f64,
    pub volume_residual: f64,
}

/// Evaluates a single sweep point.
pub fn sweep_point(
    levels: usize,
    lambda: f64,
    r0: f64,
    phi: f64,
    outlet_pressures: &[f64],
    epsilon: f64,
) -> Result<SweepRow> {
    let element =
        minimizing_sequence_element(levels, lambda, r0, phi, outlet_pressures, epsilon)?;
    let infimum = infimum_energy(levels, lambda, r0, phi)?;
    let outlet_flows = element.flow_state.outlet_flows();
    let q_first = outlet_flows[0];
    let max_other_q = outlet_flows[1..]
        .iter()
        .map(|q| q.abs())
        .fold(0.0, f64::max);
    let volume_residual =
        (element.geometry.xi().iter().sum::<f64>() - (lambda - 1.0)).abs();
    Ok(SweepRow {
        epsilon,
        energy: element.energy,
        infimum,
        gap: element.energy - infimum,
        q_first,
        max_other_q,
        volume_residual,
    })
}

/// Runs the whole schedule. Points are independent; callers that want
/// parallelism can call [`sweep_point`] per value instead.
pub fn sweep_epsilon(
    levels: usize,
    lambda: f64,
    r0: f64,
    phi: f64,
    outlet_pressures: &[f64],
    schedule: &EpsilonSchedule,
) -> Result<Vec<SweepRow>> {
    schedule
        .values()
        .into_iter()
        .map(|eps| sweep_point(levels, lambda, r0, phi, outlet_pressures, eps))
        .collect()
}

/// Writes sweep rows in the documented CSV layout: header
/// `epsilon,energy,infimum,gap,q_1,max_other_q,volume_residual`, 17
/// significant digits, `.` decimal separator.
pub fn write_sweep_csv<W: std::io::Write>(mut w: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(w, "epsilon,energy,infimum,gap,q_1,max_other_q,volume_residual")?;
    for row in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            sig17(row.epsilon),
            sig17(row.energy),
            sig17(row.infimum),
            sig17(row.gap),
            sig17(row.q_first),
            sig17(row.max_other_q),
            sig17(row.volume_residual)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::BranchIndex;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn infimum_values() {
        assert_eq!(infimum_energy(2, 5.0, 1.0, 1.0).unwrap(), 2.0);
        assert_eq!(infimum_energy(3, 10.0, 1.0, 1.0).unwrap(), 2.0);
        // lambda -> infinity leaves only the root dissipation.
        let wide = infimum_energy(3, 1e12, 2.0, 1.5).unwrap();
        assert!((wide - 2.0 * 1.5 * 1.5).abs() < 1e-9);
        assert!(matches!(
            infimum_energy(2, 1.0, 1.0, 1.0),
            Err(Error::InvalidLambda(_))
        ));
    }

    #[test]
    fn case1_even_split_single_level() {
        let report = optimal_xi_case1(&[0.5, 0.5], 3.0, 1, 1.0).unwrap();
        assert!((report.xi_star[0] - 1.0).abs() < 1e-14);
        assert!((report.xi_star[1] - 1.0).abs() < 1e-14);
        // E = r0 Phi^2 (1 + 1/(lambda-1)) at Phi = 1.
        assert!((report.energy - 1.5).abs() < 1e-14);
        assert!((report.infimum - 1.5).abs() < 1e-14);
        assert!(report.kkt_residual <= 1e-12);
        assert!(report.feasibility_residual <= 1e-12);
        assert!(!report.boundary_degenerate);
    }

    #[test]
    fn case1_symmetric_flows_give_symmetric_geometry() {
        // q_{N,j} = Phi / 2^N at the leaves: xi* = (lambda-1)/(N 2^i).
        let levels = 3;
        let lambda = 7.0;
        let phi = 2.0;
        let flows = vec![phi / 8.0; 8];
        let report = optimal_xi_case1(&flows, lambda, levels, 1.0).unwrap();
        for (index, &xi) in report.xi_star.iter().enumerate() {
            let level = BranchIndex::from_storage_index(index).level();
            let expected = (lambda - 1.0) / (levels as f64 * (1usize << level) as f64);
            assert!((xi - expected).abs() <= 1e-13, "index {index}");
        }
    }

    #[test]
    fn case1_degenerate_support_floors_off_path() {
        let mut flows = vec![0.0; 4];
        flows[0] = 1.0;
        let lambda = 3.0;
        let report = optimal_xi_case1(&flows, lambda, 2, 1.0).unwrap();
        assert!(report.boundary_degenerate);
        // On-path branches share the budget equally; off-path pinned at floor.
        let on_path: Vec<usize> = [
            BranchIndex::new(1, 1).unwrap(),
            BranchIndex::new(2, 1).unwrap(),
        ]
        .iter()
        .map(|b| b.storage_index())
        .collect();
        for index in 0..report.xi_star.len() {
            if on_path.contains(&index) {
                assert!((report.xi_star[index] - (lambda - 1.0) / 2.0).abs() < 1e-9);
            } else {
                assert_eq!(report.xi_star[index], XI_FLOOR);
            }
        }
        assert!(report.feasibility_residual <= 1e-12);
    }

    #[test]
    fn case1_rejects_zero_flows_and_bad_lambda() {
        assert!(matches!(
            optimal_xi_case1(&[0.0, 0.0], 3.0, 1, 1.0),
            Err(Error::AllZeroFlows)
        ));
        assert!(matches!(
            optimal_xi_case1(&[1.0, 1.0], 0.5, 1, 1.0),
            Err(Error::InvalidLambda(_))
        ));
    }

    #[test]
    fn case1_kkt_ratios_level_on_random_flows() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for levels in 1..=4usize {
            let flows: Vec<f64> = (0..outlet_count(levels))
                .map(|_| rng.random_range(0.1..1.0))
                .collect();
            let report = optimal_xi_case1(&flows, 8.0, levels, 1.0).unwrap();
            assert!(report.kkt_residual <= 1e-10, "N = {levels}");
            assert!(report.feasibility_residual <= 1e-10);
        }
    }

    #[test]
    fn case1_energy_never_beaten_by_feasible_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let levels = 3;
        let lambda = 8.0;
        let flows: Vec<f64> = (0..8).map(|_| rng.random_range(0.1..1.0)).collect();
        let report = optimal_xi_case1(&flows, lambda, levels, 1.0).unwrap();
        let n = report.xi_star.len();
        for _ in 0..200 {
            // Zero-sum perturbation keeping every ratio positive.
            let mut delta: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mean = delta.iter().sum::<f64>() / n as f64;
            let scale = rng.random_range(1e-4..0.05);
            for (d, xi) in delta.iter_mut().zip(&report.xi_star) {
                *d = (*d - mean) * scale;
                // Keep positivity: shrink the perturbation if needed.
                if *xi + *d <= XI_FLOOR {
                    *d = 0.0;
                }
            }
            let shift = delta.iter().sum::<f64>() / n as f64;
            for d in delta.iter_mut() {
                *d -= shift;
            }
            let perturbed: Vec<f64> = report
                .xi_star
                .iter()
                .zip(&delta)
                .map(|(xi, d)| (xi + d).max(XI_FLOOR))
                .collect();
            let g = TreeGeometry::new(levels, 1.0, perturbed).unwrap();
            let energy = energy_branchwise(&flows, &g).unwrap();
            assert!(energy >= report.energy - 1e-12);
        }
    }

    #[test]
    fn equal_pressure_optimum_small_cases() {
        // N = 2, lambda = 5: E = 1 + 4/4 = 2.
        let report = equal_pressure_optimum(2, 5.0, 1.0, 1.0).unwrap();
        assert!((report.energy - 2.0).abs() < 1e-14);
        // N = 1, lambda = 2: xi* = 0.5 at both branches, E = 2.
        let report = equal_pressure_optimum(1, 2.0, 1.0, 1.0).unwrap();
        assert_eq!(report.xi_star, vec![0.5, 0.5]);
        assert!((report.energy - 2.0).abs() < 1e-14);
        assert!(report.kkt_residual <= 1e-12);
    }

    #[test]
    fn equal_pressure_optimum_flow_split_verified_by_solver() {
        for levels in 1..=4usize {
            let phi = 1.3;
            let report = equal_pressure_optimum(levels, 5.0, 1.0, phi).unwrap();
            let expected = phi / outlet_count(levels) as f64;
            for q in report.flow_state.outlet_flows() {
                assert!((q - expected).abs() <= 1e-12 * expected, "N = {levels}");
            }
        }
    }

    #[test]
    fn sequence_element_volume_is_exact() {
        let levels = 3;
        let lambda = 10.0;
        let pressures: Vec<f64> = (0..8).map(|j| j as f64 * 0.1).collect();
        for eps in [1e-1, 1e-2, 1e-3] {
            let element =
                minimizing_sequence_element(levels, lambda, 1.0, 1.0, &pressures, eps).unwrap();
            let total: f64 = element.geometry.xi().iter().sum();
            assert!((total - (lambda - 1.0)).abs() <= 1e-12 * (lambda - 1.0));
        }
    }

    #[test]
    fn sequence_flows_concentrate_on_first_outlet() {
        let levels = 2;
        let lambda = 10.0;
        let pressures = vec![0.3, 0.9, 0.1, 0.7];
        let mut previous_gap: Option<f64> = None;
        for eps in [1e-2, 1e-3, 1e-4] {
            let element =
                minimizing_sequence_element(levels, lambda, 1.0, 1.0, &pressures, eps).unwrap();
            let q = element.flow_state.outlet_flows();
            let off_first: f64 = q[1..].iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(off_first <= 10.0 * eps, "eps = {eps}: off-first {off_first}");
            let infimum = infimum_energy(levels, lambda, 1.0, 1.0).unwrap();
            let gap = element.energy - infimum;
            assert!(gap >= -1e-12);
            if let Some(prev) = previous_gap {
                assert!(gap <= prev, "gap must shrink with eps");
            }
            previous_gap = Some(gap);
        }
        // q converges to (Phi, 0, ..., 0).
        let element =
            minimizing_sequence_element(levels, lambda, 1.0, 1.0, &pressures, 1e-6).unwrap();
        assert!((element.flow_state.outlet_flows()[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn sequence_rejects_out_of_range_epsilon() {
        let max = minimizing_sequence_max_epsilon(2, 3.0).unwrap();
        assert!(matches!(
            minimizing_sequence_element(2, 3.0, 1.0, 1.0, &[0.0; 4], max * 1.01),
            Err(Error::EpsilonOutOfRange { .. })
        ));
        assert!(matches!(
            minimizing_sequence_element(2, 3.0, 1.0, 1.0, &[0.0; 4], 0.0),
            Err(Error::EpsilonOutOfRange { .. })
        ));
    }

    #[test]
    fn aux_flows_uniform_split_per_level() {
        let xi = vec![0.5, 0.5, 0.25, 0.25, 0.25, 0.25];
        let flows = aux_inner_flows(2, &xi, 2.0).unwrap();
        assert_eq!(&flows[..2], &[1.0, 1.0]);
        assert_eq!(&flows[2..], &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn aux_flows_direct_formula_and_level_sums() {
        let flows = aux_inner_flows(1, &[1.0, 3.0], 1.0).unwrap();
        assert_eq!(flows, vec![0.25, 0.75]);

        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let levels = 3;
        let phi = 1.7;
        let xi: Vec<f64> = (0..branch_count(levels))
            .map(|_| rng.random_range(0.1..1.0))
            .collect();
        let flows = aux_inner_flows(levels, &xi, phi).unwrap();
        let mut index = 0;
        for level in 1..=levels {
            let width = 1usize << level;
            let sum: f64 = flows[index..index + width].iter().sum();
            assert!((sum - phi).abs() <= 1e-12 * phi, "level {level}");
            index += width;
        }
    }

    #[test]
    fn aux_reduced_energy_values() {
        // Level sums all equal to (lambda-1)/N reach the optimal value.
        let levels = 2;
        let lambda = 5.0;
        let xi: Vec<f64> = branch_set(levels)
            .unwrap()
            .iter()
            .map(|b| (lambda - 1.0) / (levels as f64 * (1usize << b.level()) as f64))
            .collect();
        let e = aux_reduced_energy(levels, &xi, 1.0, 1.0).unwrap();
        assert!((e - 2.0).abs() < 1e-14);

        // y = (1, 3): E = r0 Phi^2 (1 + 1 + 1/3).
        let xi = vec![0.5, 0.5, 0.75, 0.75, 0.75, 0.75];
        let e = aux_reduced_energy(2, &xi, 1.0, 1.0).unwrap();
        assert!((e - (1.0 + 1.0 + 1.0 / 3.0)).abs() < 1e-14);
    }

    #[test]
    fn aux_reduced_energy_matches_branchwise_at_inner_flows() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let levels = 3;
        let r0 = 1.4;
        let phi = 0.9;
        for _ in 0..20 {
            let xi: Vec<f64> = (0..branch_count(levels))
                .map(|_| rng.random_range(0.1..1.0))
                .collect();
            let flows = aux_inner_flows(levels, &xi, phi).unwrap();
            // Branch-sum energy with the aux flows plugged in directly.
            let direct: f64 = r0 * phi * phi
                + flows
                    .iter()
                    .zip(&xi)
                    .map(|(q, x)| r0 * q * q / x)
                    .sum::<f64>();
            let reduced = aux_reduced_energy(levels, &xi, r0, phi).unwrap();
            assert!((direct - reduced).abs() <= 1e-12 * reduced);
        }
    }

    #[test]
    fn q_optimality_condition_at_constructed_minimizer() {
        // Any xi with equal level sums (lambda-1)/N paired with its inner
        // flows satisfies q/xi = N Phi / (lambda - 1) branchwise.
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let levels = 3;
        let lambda = 9.0;
        let phi = 1.2;
        let per_level = (lambda - 1.0) / levels as f64;
        let mut xi = Vec::new();
        for level in 1..=levels {
            let width = 1usize << level;
            let mut weights: Vec<f64> = (0..width).map(|_| rng.random_range(0.1..1.0)).collect();
            let sum: f64 = weights.iter().sum();
            for w in weights.iter_mut() {
                *w *= per_level / sum;
            }
            xi.extend(weights);
        }
        let flows = aux_inner_flows(levels, &xi, phi).unwrap();
        let target = levels as f64 * phi / (lambda - 1.0);
        for (q, x) in flows.iter().zip(&xi) {
            assert!((q / x - target).abs() <= 1e-10 * target);
        }
        let energy = aux_reduced_energy(levels, &xi, 1.0, phi).unwrap();
        let infimum = infimum_energy(levels, lambda, 1.0, phi).unwrap();
        assert!((energy - infimum).abs() <= 1e-12 * infimum);
    }

    #[test]
    fn sweep_rows_and_csv_shape() {
        let pressures = vec![0.0, 0.2, 0.5, 0.4];
        let schedule = EpsilonSchedule {
            eps0: 1e-2,
            ratio: 0.5,
            steps: 5,
        };
        let rows = sweep_epsilon(2, 10.0, 1.0, 1.0, &pressures, &schedule).unwrap();
        assert_eq!(rows.len(), 5);
        let mut csv = Vec::new();
        write_sweep_csv(&mut csv, &rows).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epsilon,energy,infimum,gap,q_1,max_other_q,volume_residual"
        );
        assert_eq!(lines.count(), 5);
    }
}
