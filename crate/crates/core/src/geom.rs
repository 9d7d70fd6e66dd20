//! Locations in `ℝ^d` and validated collections of them.

use crate::error::{Error, Result};

/// Tolerance under which two locations count as coincident.
pub const COINCIDENCE_TOL: f64 = 1e-12;

/// A point `s ∈ Ω ⊂ ℝ^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Location {
    coords: Vec<f64>,
}

impl Location {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Domain("location needs at least one coordinate".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("location coordinates must be finite".into()));
        }
        Ok(Location { coords })
    }

    /// 1-d convenience constructor.
    pub fn scalar(x: f64) -> Self {
        Location::new(vec![x]).expect("finite scalar")
    }

    pub fn xy(x: f64, y: f64) -> Self {
        Location::new(vec![x, y]).expect("finite pair")
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Euclidean distance. Dimensions must agree (checked at API boundaries).
    pub fn distance(&self, other: &Location) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn coincides_with(&self, other: &Location) -> bool {
        self.dim() == other.dim() && self.distance(other) <= COINCIDENCE_TOL
    }
}

/// An ordered set of pairwise-distinct locations sharing one dimension.
///
/// Distinctness matters: duplicated rows make the variogram matrix `Γ`
/// singular, which the factorizations downstream cannot absorb.
#[derive(Debug, Clone)]
pub struct LocationSet {
    points: Vec<Location>,
    dim: usize,
}

impl LocationSet {
    pub fn new(points: Vec<Location>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::Domain("location set must be nonempty".into()));
        };
        let dim = first.dim();
        for p in &points {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "location set mixes dimensions {} and {}",
                    dim,
                    p.dim()
                )));
            }
        }
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                if points[i].distance(&points[j]) <= COINCIDENCE_TOL {
                    return Err(Error::Domain(format!(
                        "locations {i} and {j} coincide (within {COINCIDENCE_TOL:e})"
                    )));
                }
            }
        }
        Ok(LocationSet { points, dim })
    }

    /// Build from raw coordinate rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let points = rows.into_iter().map(Location::new).collect::<Result<Vec<_>>>()?;
        LocationSet::new(points)
    }

    /// 1-d convenience constructor.
    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        LocationSet::from_rows(xs.iter().map(|&x| vec![x]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Location] {
        &self.points
    }

    pub fn get(&self, i: usize) -> &Location {
        &self.points[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Location> {
        self.points.iter()
    }

    /// Index of the unique point coinciding with `t`, if any.
    pub fn coincident_index(&self, t: &Location) -> Option<usize> {
        self.points.iter().position(|p| p.coincides_with(t))
    }

    /// Smallest pairwise distance; used to scale coincidence perturbations.
    pub fn min_spacing(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.points.len() {
            for j in (i + 1)..self.points.len() {
                best = best.min(self.points[i].distance(&self.points[j]));
            }
        }
        best
    }
}
