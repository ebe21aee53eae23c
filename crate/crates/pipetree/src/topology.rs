//! Index calculus for dyadic trees.
//!
//! A tree with `N + 1` generations has `N` levels below the root and `2^N`
//! outlets. Every non-root branch is addressed by a `(level, position)` pair
//! with `1 <= position <= 2^level`; the root pipe itself is not part of the
//! index set. Vectors indexed by the branch set are stored *level-major*:
//! all level-1 entries first, then level 2, and so on, positions ascending
//! within a level. The helpers here are pure functions on value types and
//! can be called freely from multiple threads.

use std::fmt;

use crate::error::{Error, Result};

/// Number of non-root branches in a tree with `levels` levels: `2^(N+1) - 2`.
pub fn branch_count(levels: usize) -> usize {
    (1usize << (levels + 1)) - 2
}

/// Number of outlets (leaf branches) in a tree with `levels` levels: `2^N`.
pub fn outlet_count(levels: usize) -> usize {
    1usize << levels
}

/// Location of one branch in the tree: level `i >= 1`, position `1 <= j <= 2^i`.
///
/// # Examples
///
/// ```
/// use pipetree::topology::BranchIndex;
///
/// let b = BranchIndex::new(2, 3)?;
/// assert_eq!(b.parent(), Some(BranchIndex::new(1, 2)?));
/// assert_eq!(b.children(), (BranchIndex::new(3, 5)?, BranchIndex::new(3, 6)?));
/// # Ok::<(), pipetree::Error>(())
/// ```
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct BranchIndex {
    level: usize,
    position: usize,
}

impl BranchIndex {
    /// Builds a validated branch index.
    pub fn new(level: usize, position: usize) -> Result<Self> {
        if level == 0 {
            return Err(Error::InvalidLevels(0));
        }
        let max = 1usize << level;
        if position == 0 || position > max {
            return Err(Error::InvalidPosition {
                level,
                position,
                max,
            });
        }
        Ok(Self { level, position })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn position(&self) -> usize {
        self.position
    }

    /// The mother branch, or `None` for level-1 branches (their mother is
    /// the root pipe, which is outside the index set).
    pub fn parent(&self) -> Option<BranchIndex> {
        (self.level >= 2).then(|| BranchIndex {
            level: self.level - 1,
            position: self.position.div_ceil(2),
        })
    }

    /// The two daughter branches `(i+1, 2j-1)` and `(i+1, 2j)`.
    ///
    /// The indices are always well formed; whether they exist depends on the
    /// level count of the tree at hand.
    pub fn children(&self) -> (BranchIndex, BranchIndex) {
        (
            BranchIndex {
                level: self.level + 1,
                position: 2 * self.position - 1,
            },
            BranchIndex {
                level: self.level + 1,
                position: 2 * self.position,
            },
        )
    }

    /// Offset of this branch in the canonical level-major storage order.
    pub fn storage_index(&self) -> usize {
        (1usize << self.level) - 2 + (self.position - 1)
    }

    /// Inverse of [`BranchIndex::storage_index`].
    pub fn from_storage_index(index: usize) -> BranchIndex {
        let level = (index + 2).ilog2() as usize;
        BranchIndex {
            level,
            position: index + 2 - (1usize << level) + 1,
        }
    }

    /// Whether this branch lies on the path from the root to outlet `(N, 1)`.
    ///
    /// That path is exactly the set of position-1 branches, one per level.
    pub fn on_first_outlet_path(&self) -> bool {
        self.position == 1
    }
}

impl fmt::Display for BranchIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.level, self.position)
    }
}

/// All branch indices of a tree with `levels` levels, in canonical
/// level-major order. The list has `2^(N+1) - 2` entries.
///
/// # Examples
///
/// ```
/// use pipetree::topology::{branch_set, BranchIndex};
///
/// let set = branch_set(2)?;
/// assert_eq!(set.len(), 6);
/// assert_eq!(set[0], BranchIndex::new(1, 1)?);
/// assert_eq!(set[5], BranchIndex::new(2, 4)?);
/// # Ok::<(), pipetree::Error>(())
/// ```
pub fn branch_set(levels: usize) -> Result<Vec<BranchIndex>> {
    if levels == 0 {
        return Err(Error::InvalidLevels(0));
    }
    let mut set = Vec::with_capacity(branch_count(levels));
    for level in 1..=levels {
        for position in 1..=(1usize << level) {
            set.push(BranchIndex { level, position });
        }
    }
    Ok(set)
}

/// The ordered list of branches linking the root pipe to a given branch.
///
/// Stored root-first: entry `k` (zero-based) sits at level `k + 1`, and the
/// last entry is the branch itself. The root pipe is not included.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Path {
    branches: Vec<BranchIndex>,
}

impl Path {
    pub fn branches(&self) -> &[BranchIndex] {
        &self.branches
    }

    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    /// The deepest branch of the path, if any.
    pub fn terminal(&self) -> Option<BranchIndex> {
        self.branches.last().copied()
    }
}

/// The path from the root to `branch`, with exactly `branch.level()` entries.
///
/// Positions along the path follow the recurrence `m_{k+1} = floor((m_k + 1) / 2)`
/// read from the branch upwards, which is the same as repeatedly taking the
/// mother branch.
///
/// # Examples
///
/// ```
/// use pipetree::topology::{path_to, BranchIndex};
///
/// let path = path_to(BranchIndex::new(3, 6)?);
/// let positions: Vec<_> = path.branches().iter().map(|b| b.position()).collect();
/// assert_eq!(positions, [2, 3, 6]);
/// # Ok::<(), pipetree::Error>(())
/// ```
pub fn path_to(branch: BranchIndex) -> Path {
    let mut branches = Vec::with_capacity(branch.level());
    let mut current = Some(branch);
    while let Some(b) = current {
        branches.push(b);
        current = b.parent();
    }
    branches.reverse();
    Path { branches }
}

/// The first `s` entries of `path` (the part between the root and level `s`).
///
/// `s = 0` yields the empty path; `s > path.len()` is an error.
pub fn subpath(path: &Path, s: usize) -> Result<Path> {
    if s > path.len() {
        return Err(Error::SubpathOutOfRange {
            requested: s,
            len: path.len(),
        });
    }
    Ok(Path {
        branches: path.branches[..s].to_vec(),
    })
}

/// The smallest bit position beyond which the binary expansions of `a` and
/// `b` agree.
///
/// `nu(a, a) = 0`, and for outlets `i` and `j` of an `N`-level tree the value
/// `nu(i - 1, j - 1)` measures how many levels below the root their paths
/// have already separated: the common part of the two paths is the first
/// `N - nu(i-1, j-1)` entries.
pub fn nu(a: u64, b: u64) -> u32 {
    u64::BITS - (a ^ b).leading_zeros()
}

fn check_vector(levels: usize, v: &[f64], what: &'static str) -> Result<()> {
    if levels == 0 {
        return Err(Error::InvalidLevels(0));
    }
    let expected = branch_count(levels);
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got: v.len(),
        });
    }
    for (index, &value) in v.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveEntry { what, index, value });
        }
    }
    Ok(())
}

/// Change of variables from per-bifurcation reduction ratios `x` to
/// cumulative ratios `xi`: each `xi_{i,j}` is the product of `x` along the
/// path from the root to `(i, j)`.
///
/// The map is a bijection on strictly positive vectors; [`x_from_xi`] is its
/// inverse.
///
/// # Examples
///
/// ```
/// use pipetree::topology::xi_from_x;
///
/// // Two levels: x = (x11, x12, x21, x22, x23, x24) in level-major order.
/// let x = [0.5, 0.8, 0.6, 0.7, 0.9, 1.0];
/// let xi = xi_from_x(2, &x)?;
/// assert!((xi[2] - 0.5 * 0.6).abs() < 1e-15); // xi_{2,1} = x_{1,1} * x_{2,1}
/// # Ok::<(), pipetree::Error>(())
/// ```
pub fn xi_from_x(levels: usize, x: &[f64]) -> Result<Vec<f64>> {
    check_vector(levels, x, "x")?;
    let mut xi = vec![0.0; x.len()];
    for (index, &ratio) in x.iter().enumerate() {
        let branch = BranchIndex::from_storage_index(index);
        let parent_xi = branch
            .parent()
            .map_or(1.0, |p| xi[p.storage_index()]);
        xi[index] = ratio * parent_xi;
    }
    Ok(xi)
}

/// Inverse of [`xi_from_x`]: recovers per-bifurcation ratios as
/// `x_{i,j} = xi_{i,j} / xi_parent`, with the parent factor equal to 1 at
/// level 1.
pub fn x_from_xi(levels: usize, xi: &[f64]) -> Result<Vec<f64>> {
    check_vector(levels, xi, "xi")?;
    let mut x = vec![0.0; xi.len()];
    for (index, &value) in xi.iter().enumerate() {
        let branch = BranchIndex::from_storage_index(index);
        let parent_xi = branch
            .parent()
            .map_or(1.0, |p| xi[p.storage_index()]);
        x[index] = value / parent_xi;
    }
    Ok(x)
}
