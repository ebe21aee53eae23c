//! Finite-dimensional augmented Lagrangian optimizer.
//!
//! Minimizes the dissipated energy over the ratio vector under the volume
//! equality constraint `G(xi) = sum(xi) - (lambda - 1) = 0`, using the
//! classic multiplier scheme: descend the augmented Lagrangian
//! `L_b = E + ell G + (b/2) G^2` in `xi` at a frozen multiplier, then update
//! `ell <- ell + tau G` and stop once the multiplier settles,
//! `|ell_{k+1} - ell_k| <= eps_stop`.
//!
//! In the ratio space the positivity of `xi` has no analogue of a shape
//! constraint, so descent steps are projected: a coordinate stepping below
//! the floor is clamped there and excluded from the descent direction on the
//! next inner step. With prescribed outlet flows the objective gradient is
//! analytic (`dE/dxi = -r0 q^2 / xi^2`); with prescribed outlet pressures
//! the flows depend on `xi` through the mixed system, and the gradient is
//! approximated by central finite differences.

use serde::{Deserialize, Serialize};

use crate::csvfmt::sig17;
use crate::error::{Error, Result};
use crate::flow::flows_from_pressures;
use crate::geometry::{TreeGeometry, XI_FLOOR};
use crate::network::propagate_branch_flows;
use crate::optima::{case1_report, infimum_energy, OptimalityReport};
use crate::topology::{branch_count, BranchIndex};

/// Most inner descent steps per outer iteration.
const MAX_INNER_STEPS: usize = 200;
/// Most step halvings per line search.
const MAX_BACKTRACKS: usize = 50;
/// Most step doublings per line search once halving has failed.
const MAX_EXPANSIONS: usize = 50;
/// Upper bound on the adaptive trial step.
const TRIAL_CAP: f64 = 1e18;

/// Tuning knobs of the optimizer.
///
/// The augmentation weight `b` trades conditioning of the multiplier
/// iteration against conditioning of the inner problem and has to be chosen
/// neither too big nor too small; the defaults below were calibrated on the
/// closed-form test problems and then frozen. `tau` scales the multiplier
/// update and is deliberately exposed independently of `b`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugLagConfig {
    /// Augmentation weight of the quadratic penalty, `> 0`.
    pub b: f64,
    /// Multiplier step, `> 0`.
    pub tau: f64,
    /// Initial multiplier.
    pub ell0: f64,
    /// Stop once `|ell_{k+1} - ell_k| <= eps_stop`.
    pub eps_stop: f64,
    /// Cap on outer iterations.
    pub max_outer: usize,
    /// Initial line-search step.
    pub step0: f64,
    /// Backtracking factor in `(0, 1)`.
    pub step_shrink: f64,
    /// Positivity floor for the ratios; may not undercut the geometry floor.
    pub xi_floor: f64,
}

impl Default for AugLagConfig {
    fn default() -> Self {
        Self {
            b: 10.0,
            tau: 1.0,
            ell0: 0.0,
            eps_stop: 1e-9,
            max_outer: 2000,
            step0: 0.1,
            step_shrink: 0.5,
            xi_floor: XI_FLOOR,
        }
    }
}

impl AugLagConfig {
    pub fn validate(&self) -> Result<()> {
        let positive: [(&'static str, f64); 4] = [
            ("b", self.b),
            ("tau", self.tau),
            ("eps_stop", self.eps_stop),
            ("step0", self.step0),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidConfig {
                    name,
                    value,
                    constraint: "must be strictly positive",
                });
            }
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(Error::InvalidConfig {
                name: "step_shrink",
                value: self.step_shrink,
                constraint: "must lie in (0, 1)",
            });
        }
        if !(self.xi_floor >= XI_FLOOR) {
            return Err(Error::InvalidConfig {
                name: "xi_floor",
                value: self.xi_floor,
                constraint: "must be at least the geometry floor 1e-12",
            });
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(s)?;
        config.validate()?;
        Ok(config)
    }
}

/// Snapshot after one outer iteration (row `k = 0` is the initial state).
#[derive(Clone, Debug, Serialize)]
pub struct Iterate {
    pub xi: Vec<f64>,
    pub ell: f64,
    pub lagrangian: f64,
    pub energy: f64,
    pub volume_residual: f64,
}

/// Full trajectory of one optimizer run.
#[derive(Clone, Debug, Serialize)]
pub struct OptimizationRun {
    pub iterates: Vec<Iterate>,
    pub converged: bool,
    /// Branches pinned at the positivity floor when the run ended.
    pub floored_branches: Vec<(usize, usize)>,
    pub final_report: OptimalityReport,
}

impl OptimizationRun {
    pub fn final_xi(&self) -> &[f64] {
        &self.final_report.xi_star
    }

    pub fn final_energy(&self) -> f64 {
        self.final_report.energy
    }

    /// Multiplier trajectory, one entry per recorded iterate.
    pub fn multipliers(&self) -> Vec<f64> {
        self.iterates.iter().map(|it| it.ell).collect()
    }
}

/// The augmented Lagrangian value `E + ell G + (b/2) G^2` for an already
/// evaluated objective and constraint.
pub fn augmented_lagrangian(energy: f64, constraint: f64, ell: f64, b: f64) -> f64 {
    energy + ell * constraint + 0.5 * b * constraint * constraint
}

/// The volume constraint residual `G(xi) = sum(xi) - (lambda - 1)`.
pub fn volume_gap(xi: &[f64], lambda: f64) -> f64 {
    xi.iter().sum::<f64>() - (lambda - 1.0)
}

trait Objective {
    fn energy(&self, xi: &[f64]) -> Result<f64>;
    fn gradient(&self, xi: &[f64]) -> Result<Vec<f64>>;

    /// Energy change from `from` to `to`. The default subtracts absolute
    /// values, which limits the resolvable decrease to the ulp of the
    /// energy; objectives that can form the difference term-by-term should
    /// override it so the line search can resolve far smaller decreases.
    fn energy_delta(&self, from: &[f64], to: &[f64]) -> Result<f64> {
        Ok(self.energy(to)? - self.energy(from)?)
    }

    /// Minimum decrease a volume-preserving sweep must achieve. Objectives
    /// whose deltas carry ulp-of-the-energy noise need a margin here, or
    /// spurious sub-noise accepts random-walk the iterate along flat
    /// valleys (the equal-pressure landscapes are exactly flat). Objectives
    /// with term-wise deltas can afford a zero margin: any noise walk is
    /// stopped by the energy curvature and the penalty.
    fn tangent_margin(&self, lagrangian_scale: f64) -> f64 {
        1e-13 * (1.0 + lagrangian_scale.abs())
    }
}

/// Case 1: outlet flows prescribed, so every branch flow is a constant of
/// the optimization and the energy is separable in `xi`.
struct PrescribedFlows {
    branch_flows: Vec<f64>,
    total_flow: f64,
    r0: f64,
}

impl Objective for PrescribedFlows {
    fn energy(&self, xi: &[f64]) -> Result<f64> {
        let mut energy = self.r0 * self.total_flow * self.total_flow;
        for (q, x) in self.branch_flows.iter().zip(xi) {
            energy += self.r0 * q * q / x;
        }
        Ok(energy)
    }

    fn gradient(&self, xi: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .branch_flows
            .iter()
            .zip(xi)
            .map(|(q, x)| -self.r0 * q * q / (x * x))
            .collect())
    }

    fn energy_delta(&self, from: &[f64], to: &[f64]) -> Result<f64> {
        // The root term r0 Phi^2 cancels exactly; the per-branch terms are
        // differenced individually.
        Ok(self
            .branch_flows
            .iter()
            .zip(from.iter().zip(to))
            .map(|(q, (f, t))| self.r0 * q * q * (1.0 / t - 1.0 / f))
            .sum())
    }

    fn tangent_margin(&self, _lagrangian_scale: f64) -> f64 {
        0.0
    }
}

/// Case 2: outlet pressures and inlet flow prescribed; the flows (and hence
/// the energy) depend on `xi` through the mixed system.
struct PrescribedPressures {
    levels: usize,
    r0: f64,
    pressures: Vec<f64>,
    phi: f64,
}

impl PrescribedPressures {
    fn state_energy(&self, xi: &[f64]) -> Result<f64> {
        let geometry = TreeGeometry::new(self.levels, self.r0, xi.to_vec())?;
        Ok(flows_from_pressures(&geometry, &self.pressures, self.phi)?.energy)
    }

    /// Central-difference gradient. Too noisy to drive the optimizer when
    /// the landscape variation drops near the f64 resolution of the energy
    /// (tiny pressure gaps), but it independently checks the analytic
    /// gradient in the tests.
    #[cfg(test)]
    fn fd_gradient(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; xi.len()];
        let mut probe = xi.to_vec();
        for i in 0..xi.len() {
            let h = 1e-7 * xi[i].max(1e-6);
            let hi = xi[i] + h;
            let lo = (xi[i] - h).max(XI_FLOOR);
            probe[i] = hi;
            let e_hi = self.state_energy(&probe)?;
            probe[i] = lo;
            let e_lo = self.state_energy(&probe)?;
            probe[i] = xi[i];
            grad[i] = (e_hi - e_lo) / (hi - lo);
        }
        Ok(grad)
    }
}

impl Objective for PrescribedPressures {
    fn energy(&self, xi: &[f64]) -> Result<f64> {
        self.state_energy(xi)
    }

    /// Exact gradient of `xi -> E(q(xi), xi)` by direct differentiation of
    /// the mixed system.
    ///
    /// The resistance matrix decomposes as
    /// `A = r0 u u^T + sum_b (r0/xi_b) c_b c_b^T`, where `c_b` marks the
    /// outlets below branch `b`, so `dA/dxi_b` is the rank-one matrix
    /// `-(r0/xi_b^2) c_b c_b^T` and `c_b^T q` is the branch flow. With one
    /// adjoint solve `M^T w = 2 A q` the chain rule collapses to
    /// `dE/dxi_b = -(r0 q_b / xi_b^2) (q_b - s_b)`, where `s_b` telescopes
    /// the adjoint differences over the contiguous outlet range of `b`.
    fn gradient(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let geometry = TreeGeometry::new(self.levels, self.r0, xi.to_vec())?;
        let state = flows_from_pressures(&geometry, &self.pressures, self.phi)?;
        let (mixed, _) = crate::network::mixed_system(&geometry, &self.pressures, self.phi)?;
        let a = crate::network::resistance_matrix(&geometry)?;
        let q = nalgebra::DVector::from_column_slice(state.outlet_flows());
        let rhs = a.matrix() * &q * 2.0;
        let adjoint = mixed.transpose().lu().solve(&rhs).ok_or_else(|| {
            Error::NumericalDegeneracy("adjoint solve for the case-2 gradient failed".into())
        })?;
        let m = q.len();
        // The last mixed-system row (total flow) does not depend on xi, so
        // its adjoint component never enters.
        let w = |j: isize| -> f64 {
            if j < 0 || j as usize >= m - 1 {
                0.0
            } else {
                adjoint[j as usize]
            }
        };
        let mut grad = vec![0.0; xi.len()];
        for (index, value) in grad.iter_mut().enumerate() {
            let branch = BranchIndex::from_storage_index(index);
            let span = 1usize << (self.levels - branch.level());
            let lo = (branch.position() - 1) * span;
            let hi = branch.position() * span - 1;
            let s = w(hi as isize) - w(lo as isize - 1);
            let qb = state.branch_flows[index];
            *value = -(self.r0 * qb / (xi[index] * xi[index])) * (qb - s);
        }
        Ok(grad)
    }
}

struct InnerResult {
    xi: Vec<f64>,
    lagrangian: f64,
    /// Accepted Lagrangian values, starting point included. Consumed by the
    /// monotonicity tests.
    #[allow(dead_code)]
    trace: Vec<f64>,
}

fn lagrangian_at(obj: &dyn Objective, xi: &[f64], ell: f64, config: &AugLagConfig, lambda: f64) -> Result<f64> {
    Ok(augmented_lagrangian(
        obj.energy(xi)?,
        volume_gap(xi, lambda),
        ell,
        config.b,
    ))
}

/// Change of the augmented Lagrangian between two points, with the
/// constraint difference formed directly from the coordinate moves so the
/// value stays meaningful far below the ulp of the Lagrangian itself.
fn lagrangian_delta(
    obj: &dyn Objective,
    from: &[f64],
    to: &[f64],
    ell: f64,
    config: &AugLagConfig,
    lambda: f64,
) -> Result<f64> {
    let gap_change: f64 = to.iter().zip(from).map(|(t, f)| t - f).sum();
    let gap_sum = volume_gap(to, lambda) + volume_gap(from, lambda);
    Ok(obj.energy_delta(from, to)? + ell * gap_change + 0.5 * config.b * gap_change * gap_sum)
}

struct SearchHit {
    candidate: Vec<f64>,
    clamped: Vec<bool>,
    delta: f64,
    step: f64,
    clean: bool,
}

/// Decrease-only step search along `direction`: backtrack from `trial`
/// first, then expand from it, so both overshoot and flat valleys (where a
/// representable decrease needs steps far above the trial) are covered.
/// Accepts only Lagrangian changes below `-margin`.
#[allow(clippy::too_many_arguments)]
fn search_direction(
    obj: &dyn Objective,
    xi: &[f64],
    direction: &[f64],
    trial: f64,
    margin: f64,
    ell: f64,
    config: &AugLagConfig,
    lambda: f64,
) -> Result<Option<SearchHit>> {
    let n = xi.len();
    let project = |step: f64| {
        let mut candidate = Vec::with_capacity(n);
        let mut clamped = vec![false; n];
        for i in 0..n {
            let value = xi[i] + step * direction[i];
            if value < config.xi_floor {
                candidate.push(config.xi_floor);
                clamped[i] = true;
            } else {
                candidate.push(value);
            }
        }
        (candidate, clamped)
    };
    let mut step = trial;
    for attempt in 0..MAX_BACKTRACKS {
        let (candidate, clamped) = project(step);
        let delta = lagrangian_delta(obj, xi, &candidate, ell, config, lambda)?;
        if delta < -margin {
            return Ok(Some(SearchHit {
                candidate,
                clamped,
                delta,
                step,
                clean: attempt == 0,
            }));
        }
        step *= config.step_shrink;
    }
    let mut step = trial;
    for _ in 0..MAX_EXPANSIONS {
        step = (step * 2.0).min(TRIAL_CAP);
        let (candidate, clamped) = project(step);
        let delta = lagrangian_delta(obj, xi, &candidate, ell, config, lambda)?;
        if delta < -margin {
            return Ok(Some(SearchHit {
                candidate,
                clamped,
                delta,
                step,
                clean: false,
            }));
        }
        if step >= TRIAL_CAP {
            break;
        }
    }
    Ok(None)
}

/// Gradient descent on `L_b(., ell)` with a decrease-only step search and
/// floor projection. Every step runs two sweeps: the raw `-grad L_b`
/// direction, then the projection of the gradient onto the
/// volume-preserving subspace of the unclamped coordinates. The raw
/// direction is dominated by the constraint-normal component (stiffened by
/// the penalty), so the nearly flat valleys of these problems — the soft
/// redistribution directions, extreme in the pipe-collapse landscapes of
/// the pressure-driven case — make progress only along the tangent, which
/// carries its own (much larger) step scale. Ends when neither sweep finds
/// a decrease or the step budget is exhausted.
fn inner_descent(
    obj: &dyn Objective,
    mut xi: Vec<f64>,
    ell: f64,
    config: &AugLagConfig,
    lambda: f64,
    trial: &mut f64,
) -> Result<InnerResult> {
    let n = xi.len();
    let mut current = lagrangian_at(obj, &xi, ell, config, lambda)?;
    let mut trace = vec![current];
    let mut excluded = vec![false; n];
    let mut tangent_trial = config.step0;
    for _ in 0..MAX_INNER_STEPS {
        let mut moved = false;

        // Raw sweep.
        let gap = volume_gap(&xi, lambda);
        let shift = ell + config.b * gap;
        let mut grad_energy = obj.gradient(&xi)?;
        let mut direction: Vec<f64> = grad_energy.iter().map(|g| -(g + shift)).collect();
        for (d, skip) in direction.iter_mut().zip(&excluded) {
            if *skip {
                *d = 0.0;
            }
        }
        if direction.iter().any(|d| *d != 0.0) {
            if let Some(found) =
                search_direction(obj, &xi, &direction, *trial, 0.0, ell, config, lambda)?
            {
                *trial = if found.clean {
                    (found.step * 2.0).min(TRIAL_CAP)
                } else {
                    found.step
                };
                xi = found.candidate;
                current += found.delta;
                excluded = found.clamped;
                trace.push(current);
                moved = true;
                grad_energy = obj.gradient(&xi)?;
            }
        }

        // Tangent sweep: the penalty part is a multiple of the ones vector
        // and drops out of the projection entirely.
        let free: Vec<usize> = (0..n).filter(|i| !excluded[*i]).collect();
        if free.len() >= 2 {
            let mean: f64 =
                free.iter().map(|i| grad_energy[*i]).sum::<f64>() / free.len() as f64;
            let mut tangent = vec![0.0; n];
            for &i in &free {
                tangent[i] = -(grad_energy[i] - mean);
            }
            if tangent.iter().any(|d| *d != 0.0) {
                let margin = obj.tangent_margin(current);
                if let Some(found) = search_direction(
                    obj,
                    &xi,
                    &tangent,
                    tangent_trial,
                    margin,
                    ell,
                    config,
                    lambda,
                )? {
                    tangent_trial = if found.clean {
                        (found.step * 2.0).min(TRIAL_CAP)
                    } else {
                        found.step
                    };
                    xi = found.candidate;
                    current += found.delta;
                    excluded = found.clamped;
                    trace.push(current);
                    moved = true;
                }
            }
        }

        if !moved {
            break;
        }
    }
    Ok(InnerResult {
        xi,
        lagrangian: current,
        trace,
    })
}

fn check_start(start: &[f64], n: usize, floor: f64) -> Result<()> {
    if start.len() != n {
        return Err(Error::DimensionMismatch {
            what: "start_xi",
            expected: n,
            got: start.len(),
        });
    }
    for (index, &value) in start.iter().enumerate() {
        if !value.is_finite() || value < floor {
            let branch = BranchIndex::from_storage_index(index);
            return Err(Error::DegenerateBranch {
                level: branch.level(),
                position: branch.position(),
                value,
                floor,
            });
        }
    }
    Ok(())
}

fn levels_from_outlets(len: usize) -> Result<usize> {
    if len >= 2 && len.is_power_of_two() {
        Ok(len.trailing_zeros() as usize)
    } else {
        Err(Error::DimensionMismatch {
            what: "outlet vector (length must be a power of two, at least 2)",
            expected: len.max(2).next_power_of_two(),
            got: len,
        })
    }
}

struct RunOutcome {
    iterates: Vec<Iterate>,
    converged: bool,
    xi: Vec<f64>,
}

fn run_multiplier_loop(
    obj: &dyn Objective,
    start: Vec<f64>,
    config: &AugLagConfig,
    lambda: f64,
) -> Result<RunOutcome> {
    let mut xi = start;
    let mut ell = config.ell0;
    let mut trial = config.step0;
    let mut iterates = Vec::new();
    iterates.push(Iterate {
        xi: xi.clone(),
        ell,
        lagrangian: lagrangian_at(obj, &xi, ell, config, lambda)?,
        energy: obj.energy(&xi)?,
        volume_residual: volume_gap(&xi, lambda).abs(),
    });
    let mut converged = false;
    for _ in 0..config.max_outer {
        trial = trial.max(config.step0);
        let inner = inner_descent(obj, xi, ell, config, lambda, &mut trial)?;
        xi = inner.xi;
        let gap = volume_gap(&xi, lambda);
        let ell_next = ell + config.tau * gap;
        iterates.push(Iterate {
            xi: xi.clone(),
            ell: ell_next,
            lagrangian: lagrangian_at(obj, &xi, ell, config, lambda)?,
            energy: obj.energy(&xi)?,
            volume_residual: gap.abs(),
        });
        let settled = (ell_next - ell).abs() <= config.eps_stop;
        ell = ell_next;
        if settled {
            converged = true;
            break;
        }
    }
    Ok(RunOutcome {
        iterates,
        converged,
        xi,
    })
}

/// Width of the closure band above the floor, as a fraction of the mean
/// per-branch volume share.
const CLOSED_BAND_FRACTION: f64 = 1e-6;

/// Branches whose final ratio collapsed onto the floor.
///
/// The multiplier loop's feasibility corrections are uniform across
/// coordinates and can lift a pinned ratio a few volume-ulps off the exact
/// floor (the energy cost of re-pinning it is below f64 resolution), so
/// closure is detected within a narrow band above the floor rather than by
/// exact equality. A genuinely open branch carries a per-branch volume
/// share orders of magnitude above the band.
fn floored(xi: &[f64], floor: f64, lambda: f64) -> Vec<(usize, usize)> {
    let band = floor + CLOSED_BAND_FRACTION * (lambda - 1.0) / xi.len() as f64;
    xi.iter()
        .enumerate()
        .filter(|(_, v)| **v <= band)
        .map(|(index, _)| {
            let b = BranchIndex::from_storage_index(index);
            (b.level(), b.position())
        })
        .collect()
}

/// Minimizes the energy over `xi` with outlet flows prescribed, so the run
/// can be checked against the closed-form optimum. Starts from the uniform
/// feasible geometry unless `start_xi` is given.
///
/// Non-convergence within `max_outer` is reported through
/// `OptimizationRun::converged`, not as an error.
pub fn optimize_case1(
    outlet_flows: &[f64],
    lambda: f64,
    r0: f64,
    config: &AugLagConfig,
    start_xi: Option<&[f64]>,
) -> Result<OptimizationRun> {
    config.validate()?;
    if !(lambda > 1.0) {
        return Err(Error::InvalidLambda(lambda));
    }
    if !(r0 > 0.0) {
        return Err(Error::NonPositiveParameter {
            name: "r0",
            value: r0,
        });
    }
    let levels = levels_from_outlets(outlet_flows.len())?;
    let n = branch_count(levels);
    let (branch_flows, total_flow) = propagate_branch_flows(levels, outlet_flows)?;
    if branch_flows.iter().all(|q| *q == 0.0) {
        return Err(Error::AllZeroFlows);
    }
    let objective = PrescribedFlows {
        branch_flows,
        total_flow,
        r0,
    };
    let start = match start_xi {
        Some(s) => {
            check_start(s, n, config.xi_floor)?;
            s.to_vec()
        }
        None => vec![(lambda - 1.0) / n as f64; n],
    };
    let outcome = run_multiplier_loop(&objective, start, config, lambda)?;
    let final_report = case1_report(levels, r0, lambda, outlet_flows, outcome.xi.clone())?;
    Ok(OptimizationRun {
        iterates: outcome.iterates,
        converged: outcome.converged,
        floored_branches: floored(&outcome.xi, config.xi_floor, lambda),
        final_report,
    })
}

/// Minimizes the energy over `xi` with outlet pressures and inlet flow
/// prescribed. With genuinely distinct pressures no minimum exists and the
/// run is expected to drive ratios to the floor (the tree degenerating
/// towards a pipe); the report records the floored branches and the energy
/// gap against the shared infimum.
///
/// The default start is the uniform geometry with a small deterministic
/// tilt towards lower branch indices: perfectly symmetric starts sit on a
/// ridge of the unequal-pressure landscape where the gradient cannot choose
/// a branch to close.
pub fn optimize_case2(
    outlet_pressures: &[f64],
    phi: f64,
    lambda: f64,
    r0: f64,
    config: &AugLagConfig,
    start_xi: Option<&[f64]>,
) -> Result<OptimizationRun> {
    config.validate()?;
    if !(lambda > 1.0) {
        return Err(Error::InvalidLambda(lambda));
    }
    if !(r0 > 0.0) {
        return Err(Error::NonPositiveParameter {
            name: "r0",
            value: r0,
        });
    }
    let levels = levels_from_outlets(outlet_pressures.len())?;
    let n = branch_count(levels);
    let objective = PrescribedPressures {
        levels,
        r0,
        pressures: outlet_pressures.to_vec(),
        phi,
    };
    let start = match start_xi {
        Some(s) => {
            check_start(s, n, config.xi_floor)?;
            s.to_vec()
        }
        None => {
            let weights: Vec<f64> = (0..n)
                .map(|i| 1.0 + 0.01 * (n - 1 - i) as f64 / (n as f64 - 1.0).max(1.0))
                .collect();
            let total: f64 = weights.iter().sum();
            weights
                .iter()
                .map(|w| (lambda - 1.0) * w / total)
                .collect()
        }
    };
    let outcome = run_multiplier_loop(&objective, start, config, lambda)?;

    let geometry = TreeGeometry::new(levels, r0, outcome.xi.clone())?;
    let flow_state = flows_from_pressures(&geometry, outlet_pressures, phi)?;
    let energy = flow_state.energy;
    let infimum = infimum_energy(levels, lambda, r0, phi)?;
    let target = levels as f64 * phi / (lambda - 1.0);
    let kkt_residual = flow_state
        .branch_flows
        .iter()
        .zip(geometry.xi())
        .map(|(q, x)| (q / x - target).abs())
        .fold(0.0, f64::max)
        / target.abs().max(1.0);
    let feasibility_residual = volume_gap(geometry.xi(), lambda).abs();
    let floored_branches = floored(&outcome.xi, config.xi_floor, lambda);
    let final_report = OptimalityReport {
        xi_star: outcome.xi,
        energy,
        infimum,
        kkt_residual,
        feasibility_residual,
        boundary_degenerate: !floored_branches.is_empty(),
        monotonicity_satisfied: geometry.radii_monotone(),
        flow_state,
    };
    Ok(OptimizationRun {
        iterates: outcome.iterates,
        converged: outcome.converged,
        floored_branches,
        final_report,
    })
}

/// Writes the run history in the documented CSV layout: header
/// `k,ell,lagrangian,energy,volume_residual`, one row per recorded iterate
/// (row 0 is the initial state), 17 significant digits.
pub fn write_run_csv<W: std::io::Write>(mut w: W, run: &OptimizationRun) -> std::io::Result<()> {
    writeln!(w, "k,ell,lagrangian,energy,volume_residual")?;
    for (k, it) in run.iterates.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{}",
            k,
            sig17(it.ell),
            sig17(it.lagrangian),
            sig17(it.energy),
            sig17(it.volume_residual)
        )?;
    }
    Ok(())
}
