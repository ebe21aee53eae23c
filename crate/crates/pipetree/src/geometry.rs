//! Tree geometry: root parameters plus the vector of cumulative reduction
//! ratios, which is the design variable of every optimization problem in
//! this crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{branch_count, BranchIndex};

/// Largest level count accepted by the dense assembly routines by default
/// (a `2^12 x 2^12` resistance matrix).
pub const DEFAULT_LEVEL_CAP: usize = 12;

/// Smallest admissible reduction ratio. Entries below this floor would make
/// `1/xi` blow up; they are rejected as degenerate rather than carried along.
pub const XI_FLOOR: f64 = 1e-12;

#[derive(Serialize, Deserialize)]
struct RawGeometry {
    levels: usize,
    r0: f64,
    #[serde(rename = "R0")]
    root_radius: Option<f64>,
    #[serde(rename = "L0")]
    root_length: Option<f64>,
    xi: Vec<f64>,
}

/// A dyadic pipe tree: level count, root hydrodynamic resistance `r0`, and
/// one cumulative reduction ratio `xi_{i,j}` per non-root branch (stored
/// level-major). The resistance of branch `(i, j)` is `r0 / xi_{i,j}`.
///
/// Root radius and length are optional metadata; when both are present the
/// physical volume can be reported alongside the dimensionless one.
///
/// # Examples
///
/// ```
/// use pipetree::TreeGeometry;
///
/// // One bifurcation with unit ratios: both daughters as wide as the root.
/// let g = TreeGeometry::new(1, 1.0, vec![1.0, 1.0])?;
/// assert_eq!(g.volume().dimensionless, 3.0);
/// # Ok::<(), pipetree::Error>(())
/// ```
#[derive(Clone, Debug, Serialize)]
#[serde(into = "RawGeometry")]
pub struct TreeGeometry {
    levels: usize,
    r0: f64,
    root_radius: Option<f64>,
    root_length: Option<f64>,
    xi: Vec<f64>,
}

impl From<TreeGeometry> for RawGeometry {
    fn from(g: TreeGeometry) -> Self {
        RawGeometry {
            levels: g.levels,
            r0: g.r0,
            root_radius: g.root_radius,
            root_length: g.root_length,
            xi: g.xi,
        }
    }
}

impl TreeGeometry {
    /// Builds a validated geometry. `xi` must have `2^(levels+1) - 2`
    /// entries, all at or above [`XI_FLOOR`].
    pub fn new(levels: usize, r0: f64, xi: Vec<f64>) -> Result<Self> {
        Self::with_metadata(levels, r0, xi, None, None)
    }

    /// Like [`TreeGeometry::new`], with optional root radius and length (in
    /// meters) used only for physical-volume reporting.
    pub fn with_metadata(
        levels: usize,
        r0: f64,
        xi: Vec<f64>,
        root_radius: Option<f64>,
        root_length: Option<f64>,
    ) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidLevels(0));
        }
        if !(r0 > 0.0) || !r0.is_finite() {
            return Err(Error::NonPositiveParameter {
                name: "r0",
                value: r0,
            });
        }
        for (name, value) in [("R0", root_radius), ("L0", root_length)] {
            if let Some(v) = value {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::NonPositiveParameter { name, value: v });
                }
            }
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
            if !value.is_finite() || value < XI_FLOOR {
                let branch = BranchIndex::from_storage_index(index);
                return Err(Error::DegenerateBranch {
                    level: branch.level(),
                    position: branch.position(),
                    value,
                    floor: XI_FLOOR,
                });
            }
        }
        Ok(Self {
            levels,
            r0,
            root_radius,
            root_length,
            xi,
        })
    }

    /// Uniform geometry with total volume `lambda`: every branch gets the
    /// same share of the budget `lambda - 1`.
    pub fn uniform(levels: usize, r0: f64, lambda: f64) -> Result<Self> {
        if !(lambda > 1.0) {
            return Err(Error::InvalidLambda(lambda));
        }
        let n = branch_count(levels);
        Self::new(levels, r0, vec![(lambda - 1.0) / n as f64; n])
    }

    /// Parses the documented JSON schema
    /// `{"levels": N, "r0": f, "R0": f|null, "L0": f|null, "xi": [...]}` and
    /// validates the result.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: RawGeometry = serde_json::from_str(s)?;
        Self::with_metadata(raw.levels, raw.r0, raw.xi, raw.root_radius, raw.root_length)
    }

    /// Serializes to the documented JSON schema.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&RawGeometry::from(self.clone()))
            .expect("geometry serialization cannot fail")
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn root_radius(&self) -> Option<f64> {
        self.root_radius
    }

    pub fn root_length(&self) -> Option<f64> {
        self.root_length
    }

    /// The cumulative ratios in level-major order.
    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    /// The ratio of one branch.
    pub fn xi_at(&self, branch: BranchIndex) -> f64 {
        self.xi[branch.storage_index()]
    }

    /// Hydrodynamic resistance `r0 / xi_{i,j}` of one branch.
    pub fn resistance_at(&self, branch: BranchIndex) -> f64 {
        self.r0 / self.xi_at(branch)
    }

    /// Replaces the ratio vector, re-validating the result.
    pub fn with_xi(&self, xi: Vec<f64>) -> Result<Self> {
        Self::with_metadata(self.levels, self.r0, xi, self.root_radius, self.root_length)
    }

    /// Checks the monotone-radius condition: along every bifurcation,
    /// `max(xi_children) <= xi_parent`. This is a modelling assumption, not
    /// an assembly requirement, so it is reported rather than enforced.
    pub fn radii_monotone(&self) -> bool {
        for (index, &value) in self.xi.iter().enumerate() {
            let branch = BranchIndex::from_storage_index(index);
            if branch.level() == self.levels {
                continue;
            }
            let (left, right) = branch.children();
            if self.xi[left.storage_index()] > value || self.xi[right.storage_index()] > value {
                return false;
            }
        }
        true
    }

    /// Total tree volume.
    pub fn volume(&self) -> Volume {
        let dimensionless = 1.0 + self.xi.iter().sum::<f64>();
        let physical = match (self.root_radius, self.root_length) {
            (Some(r), Some(l)) => Some(std::f64::consts::PI * r * r * l * dimensionless),
            _ => None,
        };
        Volume {
            dimensionless,
            physical,
        }
    }
}

/// Tree volume in both normalizations.
///
/// The dimensionless value is `1 + sum(xi)`; the volume constraint used by
/// the optimizers is `dimensionless == lambda`. The physical value
/// `pi * R0^2 * L0 * (1 + sum(xi))` is only available when the root
/// dimensions are known.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Volume {
    pub dimensionless: f64,
    pub physical: Option<f64>,
}
