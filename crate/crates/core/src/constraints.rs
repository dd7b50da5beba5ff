//! The feasible set: an L∞ ball around a clean example intersected with
//! global value bounds, plus the clipping and diagonal-metric projections.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Point;

/// Absolute slack used by [`BoxConstraint::contains`].
pub const MEMBERSHIP_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("radius must be positive and finite, got {0}")]
    BadRadius(f64),
    #[error("value bounds must satisfy lo < hi, got [{lo}, {hi}]")]
    BadBounds { lo: f64, hi: f64 },
    #[error("center coordinate {index} = {value} lies outside the value bounds")]
    CenterOutOfBounds { index: usize, value: f64 },
    #[error("expected a point of length {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("scaling entry {index} = {value} is not strictly positive")]
    NonPositiveScaling { index: usize, value: f64 },
    #[error("point has a non-finite entry")]
    NonFinite,
}

/// `Q = { z : ‖z − center‖∞ ≤ radius, value_lo ≤ z_i ≤ value_hi }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxConstraint {
    center: Point,
    radius: f64,
    value_lo: f64,
    value_hi: f64,
}

impl BoxConstraint {
    pub fn new(
        center: Point,
        radius: f64,
        value_lo: f64,
        value_hi: f64,
    ) -> Result<Self, ConstraintError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(ConstraintError::BadRadius(radius));
        }
        if !(value_lo < value_hi) {
            return Err(ConstraintError::BadBounds {
                lo: value_lo,
                hi: value_hi,
            });
        }
        if !center.is_finite() {
            return Err(ConstraintError::NonFinite);
        }
        if let Some((index, &value)) = center
            .iter()
            .enumerate()
            .find(|(_, &v)| v < value_lo || v > value_hi)
        {
            return Err(ConstraintError::CenterOutOfBounds { index, value });
        }
        Ok(Self {
            center,
            radius,
            value_lo,
            value_hi,
        })
    }

    /// Box with no effective global bounds.
    pub fn unbounded(center: Point, radius: f64) -> Result<Self, ConstraintError> {
        Self::new(center, radius, f64::MIN, f64::MAX)
    }

    pub fn center(&self) -> &Point {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn value_lo(&self) -> f64 {
        self.value_lo
    }

    pub fn value_hi(&self) -> f64 {
        self.value_hi
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn lower(&self, i: usize) -> f64 {
        self.value_lo.max(self.center[i] - self.radius)
    }

    pub fn upper(&self, i: usize) -> f64 {
        self.value_hi.min(self.center[i] + self.radius)
    }

    /// Exact Euclidean diameter of the box. Equals `2ε√d` whenever the
    /// global bounds do not cut into the ε-ball.
    pub fn diameter(&self) -> f64 {
        (0..self.dim())
            .map(|i| (self.upper(i) - self.lower(i)).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `2ε√d`, the diameter ignoring the global bounds.
    pub fn ball_diameter(&self) -> f64 {
        2.0 * self.radius * (self.dim() as f64).sqrt()
    }

    fn check_len(&self, z: &Point) -> Result<(), ConstraintError> {
        if z.len() != self.dim() {
            return Err(ConstraintError::ShapeMismatch {
                expected: self.dim(),
                actual: z.len(),
            });
        }
        Ok(())
    }

    /// Coordinate-wise clamp of `z` onto the box.
    pub fn clip(&self, z: &Point) -> Result<Point, ConstraintError> {
        self.check_len(z)?;
        Ok(self.clip_unchecked(z))
    }

    pub(crate) fn clip_unchecked(&self, z: &Point) -> Point {
        z.like(
            z.iter()
                .enumerate()
                .map(|(i, &v)| v.max(self.lower(i)).min(self.upper(i)))
                .collect(),
        )
    }

    /// Membership with absolute tolerance [`MEMBERSHIP_TOL`].
    pub fn contains(&self, z: &Point) -> bool {
        z.len() == self.dim()
            && z.iter().enumerate().all(|(i, &v)| {
                v.is_finite()
                    && v >= self.lower(i) - MEMBERSHIP_TOL
                    && v <= self.upper(i) + MEMBERSHIP_TOL
            })
    }

    /// Minimizer of `Σ_i (z_i − w_i)² / d_i` over `w ∈ Q`.
    ///
    /// The objective separates per coordinate and each term is a convex
    /// parabola in `w_i` with vertex `z_i`, so the constrained minimizer is
    /// the clamp of `z_i` to `[lower_i, upper_i]` regardless of `d_i > 0`.
    pub fn project_diag(&self, scaling: &DiagScaling, z: &Point) -> Result<Point, ConstraintError> {
        self.check_len(z)?;
        if scaling.len() != self.dim() {
            return Err(ConstraintError::ShapeMismatch {
                expected: self.dim(),
                actual: scaling.len(),
            });
        }
        Ok(self.clip_unchecked(z))
    }

    /// Diagnostic only: the literal `Clip[D^{-1/2} z]` form that appears in
    /// one write-up of the MDCS-MI update. It is not a projection onto `Q`
    /// in the `D⁻¹` metric and is never used by the optimizers.
    pub fn literal_rescaled_clip(
        &self,
        scaling: &DiagScaling,
        z: &Point,
    ) -> Result<Point, ConstraintError> {
        self.check_len(z)?;
        let rescaled = z.zip_map(scaling.diag(), |v, d| v / d.sqrt());
        Ok(self.clip_unchecked(&rescaled))
    }
}

/// Positive diagonal of a metric `D = diag(d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagScaling {
    d: Point,
}

impl DiagScaling {
    pub fn new(d: Point) -> Result<Self, ConstraintError> {
        if let Some((index, &value)) = d
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v > 0.0 && v.is_finite()))
        {
            return Err(ConstraintError::NonPositiveScaling { index, value });
        }
        Ok(Self { d })
    }

    pub fn ones(len: usize) -> Self {
        Self {
            d: Point::filled(len, 1.0),
        }
    }

    pub fn diag(&self) -> &Point {
        &self.d
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    /// `‖v‖_{D⁻¹} = sqrt(Σ v_i² / d_i)`.
    pub fn inverse_norm(&self, v: &Point) -> f64 {
        v.iter()
            .zip(self.d.iter())
            .map(|(x, d)| x * x / d)
            .sum::<f64>()
            .sqrt()
    }
}
