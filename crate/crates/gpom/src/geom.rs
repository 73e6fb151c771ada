use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the 2-D map frame, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "non-finite coordinates ({}, {})",
                self.x, self.y
            )))
        }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_sq(&self, other: &Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// A planar pose: position plus heading, heading wrapped to (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose2 {
            x,
            y,
            heading: wrap_angle(heading),
        }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// Rigid-body transform of a point from this pose's local frame into the
    /// global frame.
    pub fn transform(&self, local: &Point2) -> Point2 {
        let (s, c) = self.heading.sin_cos();
        Point2::new(
            self.x + c * local.x - s * local.y,
            self.y + s * local.x + c * local.y,
        )
    }
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    if !a.is_finite() {
        return a;
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_stays_in_half_open_interval() {
        for i in -100..=100 {
            let a = i as f64 * 0.37;
            let w = wrap_angle(a);
            assert!(w > -PI && w <= PI, "wrap({a}) = {w}");
            // same direction
            assert!((w.sin() - a.sin()).abs() < 1e-12);
            assert!((w.cos() - a.cos()).abs() < 1e-12);
        }
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
    }

    #[test]
    fn transform_round_trip() {
        let pose = Pose2::new(1.5, -2.0, 0.7);
        let p = Point2::new(3.0, 4.0);
        let g = pose.transform(&p);
        // invert manually
        let dx = g.x - pose.x;
        let dy = g.y - pose.y;
        let (s, c) = pose.heading.sin_cos();
        let back = Point2::new(c * dx + s * dy, -s * dx + c * dy);
        assert!((back.x - p.x).abs() < 1e-12);
        assert!((back.y - p.y).abs() < 1e-12);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(Point2::new(f64::NAN, 0.0).check_finite().is_err());
        assert!(Point2::new(0.0, f64::INFINITY).check_finite().is_err());
        assert!(Point2::new(1.0, 2.0).check_finite().is_ok());
    }
}
