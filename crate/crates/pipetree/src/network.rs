//! Resistance matrices, the mixed pressure/flow system, and dissipated
//! energy.
//!
//! For an `N`-level tree the resistance matrix `A_N(xi)` maps outlet flows
//! to inlet-referenced pressure drops, `p0 * u - p = A_N(xi) * q`. Entry
//! `(i, j)` is `r0` plus the summed resistances along the common part of the
//! root-to-outlet paths of outlets `i` and `j`; that common part is the
//! first `N - nu(i-1, j-1)` entries of either path, empty when the paths
//! separate immediately below the root.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{TreeGeometry, DEFAULT_LEVEL_CAP};
use crate::topology::{branch_count, nu, outlet_count, path_to, BranchIndex};

/// The symmetric positive definite resistance matrix of a tree.
#[derive(Clone, Debug, PartialEq)]
pub struct ResistanceMatrix {
    entries: DMatrix<f64>,
}

impl ResistanceMatrix {
    /// The underlying dense matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Matrix dimension, `2^N`.
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Entry accessor with zero-based indices.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.entries[(row, col)]
    }

    /// Runs an unpivoted Cholesky factorization as a positive-definiteness
    /// check. Theory guarantees success for every positive ratio vector;
    /// a failure is reported as numerical degeneracy instead of being
    /// papered over.
    pub fn verify_spd(&self) -> Result<()> {
        match self.entries.clone().cholesky() {
            Some(_) => Ok(()),
            None => Err(Error::NumericalDegeneracy(
                "Cholesky factorization of the resistance matrix failed".into(),
            )),
        }
    }
}

fn check_cap(levels: usize, cap: usize) -> Result<()> {
    if levels > cap {
        return Err(Error::LevelsExceedCap { levels, cap });
    }
    Ok(())
}

/// Assembles `A_N(xi)` for `geometry`, refusing trees above
/// [`DEFAULT_LEVEL_CAP`] levels.
///
/// # Examples
///
/// ```
/// use pipetree::{resistance_matrix, TreeGeometry};
///
/// let g = TreeGeometry::new(1, 1.0, vec![1.0, 1.0])?;
/// let a = resistance_matrix(&g)?;
/// assert_eq!(a.entry(0, 0), 2.0); // r0 * (1 + 1/xi_{1,1})
/// assert_eq!(a.entry(0, 1), 1.0); // paths share only the root
/// # Ok::<(), pipetree::Error>(())
/// ```
pub fn resistance_matrix(geometry: &TreeGeometry) -> Result<ResistanceMatrix> {
    resistance_matrix_with_cap(geometry, DEFAULT_LEVEL_CAP)
}

/// Assembly with an explicit level cap for callers that accept the
/// `O(4^N)` dense cost beyond the default.
pub fn resistance_matrix_with_cap(
    geometry: &TreeGeometry,
    cap: usize,
) -> Result<ResistanceMatrix> {
    check_cap(geometry.levels(), cap)?;
    let n = geometry.levels();
    let m = outlet_count(n);
    let r0 = geometry.r0();
    let mut entries = DMatrix::zeros(m, m);
    // Row-wise prefix sums of branch resistances along the path to outlet i;
    // the (i, j) entry only ever needs one prefix, selected by nu.
    let mut prefix = vec![0.0; n + 1];
    for i in 0..m {
        let path = path_to(BranchIndex::new(n, i + 1)?);
        for (k, branch) in path.branches().iter().enumerate() {
            prefix[k + 1] = prefix[k] + r0 / geometry.xi_at(*branch);
        }
        for j in i..m {
            let shared = n - nu(i as u64, j as u64) as usize;
            let value = r0 + prefix[shared];
            entries[(i, j)] = value;
            entries[(j, i)] = value;
        }
    }
    Ok(ResistanceMatrix { entries })
}

/// The dimensionless limit matrix of the pipe-collapse analysis: the
/// resistance matrix of a tree whose branches on the path to outlet `(N, 1)`
/// have resistance 0 and all other branches resistance 1, with no root
/// contribution.
///
/// Structurally this is the block direct sum of a 1x1 zero block and the
/// unit-resistance matrices of the subtrees hanging off that path, so its
/// kernel is exactly the span of the first basis vector.
pub fn tilde_a1(levels: usize) -> Result<DMatrix<f64>> {
    if levels == 0 {
        return Err(Error::InvalidLevels(0));
    }
    let m = outlet_count(levels);
    let mut entries = DMatrix::zeros(m, m);
    let mut prefix = vec![0.0; levels + 1];
    for i in 0..m {
        let path = path_to(BranchIndex::new(levels, i + 1)?);
        for (k, branch) in path.branches().iter().enumerate() {
            let weight = if branch.on_first_outlet_path() { 0.0 } else { 1.0 };
            prefix[k + 1] = prefix[k] + weight;
        }
        for j in i..m {
            let shared = levels - nu(i as u64, j as u64) as usize;
            entries[(i, j)] = prefix[shared];
            entries[(j, i)] = prefix[shared];
        }
    }
    Ok(entries)
}

/// Builds the mixed system `M_N(xi) q = b_N` whose unique solution is the
/// outlet flow vector when the inlet flow and the outlet pressures are
/// prescribed.
///
/// The first `2^N - 1` rows of `M_N` are `(A_N v_i)^T` with
/// `v_i = e_i - e_{i+1}`; the last row is all ones. The right-hand side
/// carries the pressure differences `-<p, v_i>` and the inlet flow. Note
/// that the system never involves the root pressure.
pub fn mixed_system(
    geometry: &TreeGeometry,
    outlet_pressures: &[f64],
    inlet_flow: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let m = outlet_count(geometry.levels());
    if outlet_pressures.len() != m {
        return Err(Error::DimensionMismatch {
            what: "outlet_pressures",
            expected: m,
            got: outlet_pressures.len(),
        });
    }
    let a = resistance_matrix(geometry)?;
    let a = a.matrix();
    let mut matrix = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for i in 0..m - 1 {
        // (A (e_i - e_{i+1}))^T = column i minus column i+1, as a row.
        for col in 0..m {
            matrix[(i, col)] = a[(col, i)] - a[(col, i + 1)];
        }
        rhs[i] = -(outlet_pressures[i] - outlet_pressures[i + 1]);
    }
    for col in 0..m {
        matrix[(m - 1, col)] = 1.0;
    }
    rhs[m - 1] = inlet_flow;
    Ok((matrix, rhs))
}

/// Propagates outlet flows upward by conservation: every internal branch
/// carries the sum of its daughters' flows. Returns the level-major branch
/// flow vector together with the total (root) flow.
pub fn propagate_branch_flows(levels: usize, outlet_flows: &[f64]) -> Result<(Vec<f64>, f64)> {
    if levels == 0 {
        return Err(Error::InvalidLevels(0));
    }
    let m = outlet_count(levels);
    if outlet_flows.len() != m {
        return Err(Error::DimensionMismatch {
            what: "outlet_flows",
            expected: m,
            got: outlet_flows.len(),
        });
    }
    let mut flows = vec![0.0; branch_count(levels)];
    let leaf_offset = branch_count(levels) - m;
    flows[leaf_offset..].copy_from_slice(outlet_flows);
    for level in (1..levels).rev() {
        let offset = (1usize << level) - 2;
        let child_offset = (1usize << (level + 1)) - 2;
        for j in 0..(1usize << level) {
            flows[offset + j] = flows[child_offset + 2 * j] + flows[child_offset + 2 * j + 1];
        }
    }
    let total = flows[0] + flows[1];
    Ok((flows, total))
}

/// Dissipated power as the quadratic form `q^T A_N(xi) q`.
pub fn energy_quadratic(outlet_flows: &[f64], geometry: &TreeGeometry) -> Result<f64> {
    let m = outlet_count(geometry.levels());
    if outlet_flows.len() != m {
        return Err(Error::DimensionMismatch {
            what: "outlet_flows",
            expected: m,
            got: outlet_flows.len(),
        });
    }
    let a = resistance_matrix(geometry)?;
    let q = DVector::from_column_slice(outlet_flows);
    Ok((q.transpose() * a.matrix() * &q)[(0, 0)])
}

/// Dissipated power as the branch-by-branch sum
/// `r0 * Phi^2 + sum_{(i,j)} r0 * q_{i,j}^2 / xi_{i,j}`, with internal flows
/// obtained by conservation.
///
/// Algebraically identical to [`energy_quadratic`]; the two routes check
/// each other in the test suite.
pub fn energy_branchwise(outlet_flows: &[f64], geometry: &TreeGeometry) -> Result<f64> {
    let (flows, total) = propagate_branch_flows(geometry.levels(), outlet_flows)?;
    Ok(energy_from_branch_flows(&flows, total, geometry))
}

/// Branch-sum energy when the full branch flow vector is already known.
pub(crate) fn energy_from_branch_flows(
    branch_flows: &[f64],
    total_flow: f64,
    geometry: &TreeGeometry,
) -> f64 {
    let r0 = geometry.r0();
    let mut energy = r0 * total_flow * total_flow;
    for (q, xi) in branch_flows.iter().zip(geometry.xi()) {
        energy += r0 * q * q / xi;
    }
    energy
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::branch_set;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn geometry(levels: usize, r0: f64, xi: Vec<f64>) -> TreeGeometry {
        TreeGeometry::new(levels, r0, xi).unwrap()
    }

    fn random_geometry(rng: &mut ChaCha8Rng, levels: usize, r0: f64) -> TreeGeometry {
        let xi: Vec<f64> = (0..branch_count(levels))
            .map(|_| rng.random_range(0.05..2.0))
            .collect();
        geometry(levels, r0, xi)
    }

    /// Oracle: assemble one entry from the explicit set intersection of the
    /// two outlet paths, with no use of nu or prefix sums.
    fn entry_by_path_intersection(g: &TreeGeometry, i: usize, j: usize) -> f64 {
        let n = g.levels();
        let path_i: BTreeSet<_> = path_to(BranchIndex::new(n, i + 1).unwrap())
            .branches()
            .iter()
            .copied()
            .collect();
        let path_j: BTreeSet<_> = path_to(BranchIndex::new(n, j + 1).unwrap())
            .branches()
            .iter()
            .copied()
            .collect();
        g.r0()
            + path_i
                .intersection(&path_j)
                .map(|b| g.r0() / g.xi_at(*b))
                .sum::<f64>()
    }

    #[test]
    fn unit_single_bifurcation_matrix() {
        let a = resistance_matrix(&geometry(1, 1.0, vec![1.0, 1.0])).unwrap();
        assert_eq!(a.matrix().as_slice(), &[2.0, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn two_level_matrix_matches_example_layout() {
        // General xi, r0: row 1 must read
        // r0 * (1 + 1/xi11 + 1/xi21, 1 + 1/xi11, 1, 1), and so on.
        let xi = vec![0.7, 0.9, 0.3, 0.4, 0.5, 0.6];
        let r0 = 2.0;
        let g = geometry(2, r0, xi.clone());
        let a = resistance_matrix(&g).unwrap();
        let inv = |k: usize| 1.0 / xi[k];
        let expected = [
            [1.0 + inv(0) + inv(2), 1.0 + inv(0), 1.0, 1.0],
            [1.0 + inv(0), 1.0 + inv(0) + inv(3), 1.0, 1.0],
            [1.0, 1.0, 1.0 + inv(1) + inv(4), 1.0 + inv(1)],
            [1.0, 1.0, 1.0 + inv(1), 1.0 + inv(1) + inv(5)],
        ];
        for i in 0..4 {
            for j in 0..4 {
                let want = r0 * expected[i][j];
                assert!(
                    (a.entry(i, j) - want).abs() <= 1e-14 * want.abs(),
                    "entry ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn three_level_matrix_matches_path_intersection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = random_geometry(&mut rng, 3, 1.5);
        let a = resistance_matrix(&g).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let want = entry_by_path_intersection(&g, i, j);
                assert!(
                    (a.entry(i, j) - want).abs() <= 1e-12 * want.abs(),
                    "entry ({i},{j}): {} vs {}",
                    a.entry(i, j),
                    want
                );
            }
        }
    }

    #[test]
    fn matrix_is_symmetric_and_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for levels in 1..=6 {
            let g = random_geometry(&mut rng, levels, 0.8);
            let a = resistance_matrix(&g).unwrap();
            let m = a.matrix();
            for i in 0..a.dim() {
                for j in 0..a.dim() {
                    assert_eq!(m[(i, j)], m[(j, i)]);
                }
            }
            a.verify_spd().unwrap();
        }
    }

    #[test]
    fn assembly_respects_level_cap() {
        let g = geometry(3, 1.0, vec![1.0; branch_count(3)]);
        assert!(matches!(
            resistance_matrix_with_cap(&g, 2),
            Err(Error::LevelsExceedCap { levels: 3, cap: 2 })
        ));
    }

    #[test]
    fn tilde_a1_two_levels_exact() {
        let t = tilde_a1(2).unwrap();
        let expected = [
            [0.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 2.0, 1.0],
            [0.0, 0.0, 1.0, 2.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(t[(i, j)], expected[i][j], "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn tilde_a1_one_level_exact() {
        let t = tilde_a1(1).unwrap();
        assert_eq!(t[(0, 0)], 0.0);
        assert_eq!(t[(0, 1)], 0.0);
        assert_eq!(t[(1, 0)], 0.0);
        assert_eq!(t[(1, 1)], 1.0);
    }

    /// Unit-resistance matrix of a p-level tree (all branches and the root
    /// at resistance 1); the 0-level tree is the bare root, a 1x1 one.
    fn unit_tree_matrix(p: usize) -> DMatrix<f64> {
        if p == 0 {
            return DMatrix::from_element(1, 1, 1.0);
        }
        let g = geometry(p, 1.0, vec![1.0; branch_count(p)]);
        resistance_matrix(&g).unwrap().entries
    }

    #[test]
    fn tilde_a1_is_direct_sum_of_unit_subtree_matrices() {
        // Blocks: a 1x1 zero, then the unit-resistance matrix of a p-level
        // tree occupying rows 2^p .. 2^(p+1) - 1, for p = 0 .. N-1.
        for levels in 1..=6usize {
            let t = tilde_a1(levels).unwrap();
            let m = outlet_count(levels);
            let mut expected = DMatrix::zeros(m, m);
            for p in 0..levels {
                let block = unit_tree_matrix(p);
                let offset = 1usize << p;
                for i in 0..block.nrows() {
                    for j in 0..block.ncols() {
                        expected[(offset + i, offset + j)] = block[(i, j)];
                    }
                }
            }
            assert_eq!(t, expected, "N = {levels}");
        }
    }

    #[test]
    fn tilde_a1_kernel_is_first_basis_vector() {
        for levels in 1..=5usize {
            let t = tilde_a1(levels).unwrap();
            let m = outlet_count(levels);
            let e1 = DVector::from_fn(m, |i, _| if i == 0 { 1.0 } else { 0.0 });
            assert_eq!((&t * &e1).norm(), 0.0);
            // Rank must be m - 1: the trailing (m-1)x(m-1) block is a direct
            // sum of SPD matrices, hence invertible.
            let sub = t.view((1, 1), (m - 1, m - 1)).into_owned();
            assert!(sub.lu().is_invertible());
        }
    }

    #[test]
    fn limit_matrix_of_scaled_collapse_geometry() {
        // Along the pipe-collapse family, eps * A_N(xi_eps) approaches
        // r0 * tilde_a1 entrywise at a linear rate in eps.
        let levels = 3;
        let lambda = 10.0;
        let r0 = 1.3;
        let limit = tilde_a1(levels).unwrap() * r0;
        let on_path = (lambda - 1.0) / levels as f64;
        let slope = (branch_count(levels) as f64 / levels as f64) - 1.0;
        let mut previous_diff: Option<f64> = None;
        for eps in [1e-2, 1e-3, 1e-4] {
            let xi: Vec<f64> = branch_set(levels)
                .unwrap()
                .iter()
                .map(|b| {
                    if b.on_first_outlet_path() {
                        on_path - slope * eps
                    } else {
                        eps
                    }
                })
                .collect();
            let g = geometry(levels, r0, xi);
            let a = resistance_matrix(&g).unwrap();
            let scaled = a.matrix() * eps;
            let diff = (&scaled - &limit).abs().max();
            assert!(diff <= 20.0 * eps, "eps = {eps}: diff = {diff}");
            if let Some(prev) = previous_diff {
                let ratio = diff / prev;
                assert!(
                    (0.05..0.2).contains(&ratio),
                    "decay not linear: ratio {ratio}"
                );
            }
            previous_diff = Some(diff);
        }
    }

    #[test]
    fn mixed_system_hand_solved_two_by_two() {
        let g = geometry(1, 1.0, vec![1.0, 1.0]);
        let (m, b) = mixed_system(&g, &[0.0, 1.0], 1.0).unwrap();
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(0, 1)], -1.0);
        assert_eq!(m[(1, 0)], 1.0);
        assert_eq!(m[(1, 1)], 1.0);
        assert_eq!(b[0], 1.0);
        assert_eq!(b[1], 1.0);
        let q = m.lu().solve(&b).unwrap();
        assert!((q[0] - 1.0).abs() < 1e-14);
        assert!(q[1].abs() < 1e-14);
    }

    #[test]
    fn mixed_system_rhs_vanishes_for_equal_pressures() {
        let g = geometry(2, 1.0, vec![0.5; 6]);
        let (_, b) = mixed_system(&g, &[3.0; 4], 2.0).unwrap();
        for i in 0..3 {
            assert_eq!(b[i], 0.0);
        }
        assert_eq!(b[3], 2.0);
    }

    #[test]
    fn mixed_system_solution_conserves_total_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for levels in 1..=5 {
            let g = random_geometry(&mut rng, levels, 1.0);
            let p: Vec<f64> = (0..outlet_count(levels))
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let phi = rng.random_range(0.5..2.0);
            let (m, b) = mixed_system(&g, &p, phi).unwrap();
            let q = m.lu().solve(&b).unwrap();
            let total: f64 = q.iter().sum();
            assert!((total - phi).abs() <= 1e-12 * phi.abs().max(1.0));
        }
    }

    #[test]
    fn mixed_system_matrix_is_invertible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for levels in 1..=5 {
            let g = random_geometry(&mut rng, levels, 1.0);
            let p = vec![0.0; outlet_count(levels)];
            let (m, _) = mixed_system(&g, &p, 1.0).unwrap();
            let svd = m.svd(false, false);
            let smallest = svd
                .singular_values
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            assert!(smallest > 0.0, "N = {levels}");
        }
    }

    #[test]
    fn energy_zero_flows() {
        let g = geometry(2, 1.0, vec![1.0; 6]);
        assert_eq!(energy_quadratic(&[0.0; 4], &g).unwrap(), 0.0);
        assert_eq!(energy_branchwise(&[0.0; 4], &g).unwrap(), 0.0);
    }

    #[test]
    fn energy_hand_computed_values() {
        // One level, unit everything, evenly split flow: 1 + 1/4 + 1/4.
        let g = geometry(1, 1.0, vec![1.0, 1.0]);
        let e = energy_branchwise(&[0.5, 0.5], &g).unwrap();
        assert!((e - 1.5).abs() < 1e-15);

        // Two levels, unit ratios, quarter flows: 1 + 1/2 + 4/16.
        let g = geometry(2, 1.0, vec![1.0; 6]);
        let e = energy_branchwise(&[0.25; 4], &g).unwrap();
        assert!((e - 1.75).abs() < 1e-15);
    }

    #[test]
    fn energy_single_active_path() {
        // All flow through outlet (N, 1): E = r0 Phi^2 (1 + sum_path 1/xi).
        let g = geometry(3, 2.0, vec![0.5; branch_count(3)]);
        let mut q = vec![0.0; 8];
        q[0] = 1.5;
        let e = energy_branchwise(&q, &g).unwrap();
        let expected = 2.0 * 1.5 * 1.5 * (1.0 + 3.0 / 0.5);
        assert!((e - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn quadratic_and_branchwise_energies_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for levels in 1..=6 {
            let r0 = rng.random_range(0.5..2.0);
            let g = random_geometry(&mut rng, levels, r0);
            let q: Vec<f64> = (0..outlet_count(levels))
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let eq = energy_quadratic(&q, &g).unwrap();
            let eb = energy_branchwise(&q, &g).unwrap();
            assert!(
                (eq - eb).abs() <= 1e-12 * eq.abs().max(1e-30),
                "N = {levels}: {eq} vs {eb}"
            );
        }
    }

    #[test]
    fn propagation_sums_children() {
        let (flows, total) = propagate_branch_flows(2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(flows, vec![3.0, 7.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(total, 10.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = geometry(2, 1.0, vec![1.0; 6]);
        assert!(matches!(
            energy_quadratic(&[1.0; 3], &g),
            Err(Error::DimensionMismatch { expected: 4, got: 3, .. })
        ));
        assert!(matches!(
            mixed_system(&g, &[1.0; 5], 1.0),
            Err(Error::DimensionMismatch { expected: 4, got: 5, .. })
        ));
    }
}
