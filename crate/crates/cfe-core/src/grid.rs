//! Truncated volume domain (0, R] partitioned into cells with pivots.
//!
//! Cells are the intervals (edges[i], edges[i+1]] with pivot at the midpoint.
//! Point membership uses the left-open/right-closed convention so that v = R
//! belongs to the last cell and midpoint sums on uniform grids resolve to the
//! lower cell. Grids are immutable after construction and freely shareable
//! across workers; identical inputs produce bit-identical grids.

use crate::error::{CfeError, Result};
use crate::scalar::{real, Scalar};

/// Partition of (0, R] into cells. `edges[0] = 0`, `edges[last] = R`,
/// `pivots[i]` is the midpoint of cell i.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeGrid<S> {
    edges: Vec<S>,
    pivots: Vec<S>,
    widths: Vec<S>,
    r: S,
}

/// Pivot assignment of a volume v: cell indices with number weights, plus the
/// mass-correction factor for assignments outside the pivot bracket.
///
/// Interior assignments (two parts) conserve number exactly and mass exactly.
/// Below the first pivot or above the last one, the single returned part
/// keeps number exact and `mass_factor` = v/pivot records what the deposited
/// number must be multiplied by to make the deposit mass-exact instead.
#[derive(Debug, Clone, PartialEq)]
pub struct PivotSplit<S> {
    pub parts: Vec<(usize, S)>,
    pub mass_factor: S,
}

/// Allocation-free split used by the scheme assembly hot loop.
#[derive(Debug, Clone, Copy)]
pub(crate) enum CompactSplit<S> {
    /// Weights (a, 1-a) on cells (left, left+1).
    Pair { left: usize, a: S },
    /// Whole deposit on one cell, with the mass-correction factor.
    Single { cell: usize, mass_factor: S },
}

const WIDTH_SUM_RTOL: f64 = 1e-12;
const GEOM_RATIO_LO: f64 = 1e-6;
const GEOM_RATIO_HI: f64 = 1e6;

/// 1e-12 relative, floored at a few ulps so f32 instantiations terminate.
fn rtol<S: Scalar>() -> S {
    real::<S>(WIDTH_SUM_RTOL).max(S::epsilon() * real(32.0))
}

impl<S: Scalar> VolumeGrid<S> {
    /// Uniform partition: edges[i] = i R / cells.
    pub fn uniform(r: S, cells: usize) -> Result<Self> {
        Self::check_basics(r, cells)?;
        let n = real::<S>(cells as f64);
        let edges: Vec<S> = (0..=cells).map(|i| r * real::<S>(i as f64) / n).collect();
        Self::from_edges(edges, r)
    }

    /// Geometric partition: widths w, wq, wq^2, ... with q solved by
    /// bisection so the widths sum to R (relative tolerance 1e-12), then
    /// rescaled so the sum is exact to rounding.
    pub fn geometric(r: S, cells: usize, first_width: S) -> Result<Self> {
        Self::check_basics(r, cells)?;
        if !(first_width > S::zero() && first_width < r) {
            return Err(CfeError::invalid(format!(
                "first_width must lie in (0, R), got {first_width} with R={r}"
            )));
        }
        let w = first_width;
        let n = cells;
        // widths sum for ratio q (q=1 handled exactly)
        let near_one: S = real::<S>(1e-14).max(S::epsilon() * real(2.0));
        let sum_for = |q: S| -> S {
            if (q - S::one()).abs() < near_one {
                w * real::<S>(n as f64)
            } else {
                w * (q.powi(n as i32) - S::one()) / (q - S::one())
            }
        };
        let target = r;
        let uniform_sum = w * real::<S>(n as f64);
        let q = if ((uniform_sum - target) / target).abs() <= near_one {
            S::one()
        } else {
            let mut lo: S = real(GEOM_RATIO_LO);
            let mut hi: S = real(GEOM_RATIO_HI);
            // sum_for is increasing in q
            if !(sum_for(lo) <= target && sum_for(hi) >= target) {
                return Err(CfeError::InfeasibleGrid(format!(
                    "no width ratio in ({GEOM_RATIO_LO}, {GEOM_RATIO_HI}) makes {n} \
                     geometric cells of first width {w} fill (0, {r}]"
                )));
            }
            let tol = rtol::<S>();
            loop {
                let mid = (lo + hi) / real(2.0);
                if (hi - lo) / mid <= tol {
                    break mid;
                }
                if sum_for(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        };
        let mut widths: Vec<S> = Vec::with_capacity(n);
        let mut wk = w;
        for _ in 0..n {
            widths.push(wk);
            wk *= q;
        }
        let sum: S = widths.iter().copied().sum();
        let scale = r / sum;
        let mut edges = Vec::with_capacity(n + 1);
        let mut acc = S::zero();
        edges.push(S::zero());
        for wv in &widths {
            acc += *wv * scale;
            edges.push(acc);
        }
        Self::from_edges(edges, r)
    }

    fn check_basics(r: S, cells: usize) -> Result<()> {
        if !(r > S::zero()) || !r.is_finite() {
            return Err(CfeError::invalid(format!(
                "R must be positive and finite, got {r}"
            )));
        }
        if cells < 2 {
            return Err(CfeError::invalid(format!(
                "cell count must be >= 2, got {cells}"
            )));
        }
        Ok(())
    }

    fn from_edges(mut edges: Vec<S>, r: S) -> Result<Self> {
        let last = edges.len() - 1;
        edges[last] = r;
        for i in 0..last {
            if !(edges[i + 1] > edges[i]) {
                return Err(CfeError::InfeasibleGrid(format!(
                    "edges not strictly increasing at index {i}"
                )));
            }
        }
        let widths: Vec<S> = edges.windows(2).map(|e| e[1] - e[0]).collect();
        let pivots: Vec<S> = edges
            .windows(2)
            .map(|e| (e[0] + e[1]) / real(2.0))
            .collect();
        let sum: S = widths.iter().copied().sum();
        if ((sum - r) / r).abs() > rtol::<S>() {
            return Err(CfeError::InfeasibleGrid(format!(
                "widths sum {sum} deviates from R={r} beyond tolerance"
            )));
        }
        Ok(VolumeGrid {
            edges,
            pivots,
            widths,
            r,
        })
    }

    pub fn r(&self) -> S {
        self.r
    }

    pub fn cell_count(&self) -> usize {
        self.widths.len()
    }

    pub fn edges(&self) -> &[S] {
        &self.edges
    }

    pub fn pivots(&self) -> &[S] {
        &self.pivots
    }

    pub fn widths(&self) -> &[S] {
        &self.widths
    }

    /// Index of the cell containing v under the (edge, edge] convention,
    /// or None when v lies outside (0, R].
    pub fn cell_of(&self, v: S) -> Option<usize> {
        if !(v > S::zero()) || v > self.r {
            return None;
        }
        // smallest i with v <= edges[i+1]
        let idx = self.edges[1..].partition_point(|&e| e < v);
        Some(idx.min(self.cell_count() - 1))
    }

    /// Number-and-mass-preserving pivot assignment of a volume v in (0, R].
    ///
    /// Between two pivots the weights (a, 1-a) satisfy a + (1-a) = 1 and
    /// a p_i + (1-a) p_{i+1} = v. Volumes beyond r the pivot range return a
    /// single cell with the mass-correction factor v/pivot; callers that
    /// must conserve mass multiply the deposited number by it. Volumes v > R
    /// are an error: the boundary-loss ledger owns them.
    pub fn pivot_split(&self, v: S) -> Result<PivotSplit<S>> {
        match self.split_compact(v)? {
            CompactSplit::Pair { left, a } => {
                let one = S::one();
                let mut parts = Vec::with_capacity(2);
                if a > S::zero() {
                    parts.push((left, a));
                }
                if one - a > S::zero() {
                    parts.push((left + 1, one - a));
                }
                Ok(PivotSplit {
                    parts,
                    mass_factor: one,
                })
            }
            CompactSplit::Single { cell, mass_factor } => Ok(PivotSplit {
                parts: vec![(cell, S::one())],
                mass_factor,
            }),
        }
    }

    #[inline]
    pub(crate) fn split_compact(&self, v: S) -> Result<CompactSplit<S>> {
        if !(v > S::zero()) || v > self.r {
            return Err(CfeError::OutOfDomain {
                v: v.as_f64(),
                r: self.r.as_f64(),
            });
        }
        let p = &self.pivots;
        let last = p.len() - 1;
        if v < p[0] {
            return Ok(CompactSplit::Single {
                cell: 0,
                mass_factor: v / p[0],
            });
        }
        if v > p[last] {
            return Ok(CompactSplit::Single {
                cell: last,
                mass_factor: v / p[last],
            });
        }
        // largest k with p[k] <= v
        let k = p.partition_point(|&pv| pv <= v) - 1;
        if k == last || p[k] == v {
            return Ok(CompactSplit::Single {
                cell: k,
                mass_factor: S::one(),
            });
        }
        let a = (p[k + 1] - v) / (p[k + 1] - p[k]);
        if a == S::zero() {
            return Ok(CompactSplit::Single {
                cell: k + 1,
                mass_factor: S::one(),
            });
        }
        Ok(CompactSplit::Pair { left: k, a })
    }

    /// Length of the overlap of cell i with the interval (lo, hi].
    pub fn cell_overlap(&self, i: usize, lo: S, hi: S) -> S {
        let a = self.edges[i].max(lo);
        let b = self.edges[i + 1].min(hi);
        (b - a).max(S::zero())
    }
}
