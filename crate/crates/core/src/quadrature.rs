//! Symmetric quadrature rules on triangles (Dunavant).

use crate::{CuspError, Point, Result};

/// A rule in barycentric coordinates; weights sum to one and are scaled by
/// the element area at use.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl TriangleRule {
    /// The one-point centroid rule, exact for degree 1.
    pub fn centroid() -> Self {
        TriangleRule {
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![1.0],
            degree: 1,
        }
    }

    /// Three interior points, exact for degree 2.
    pub fn three_point() -> Self {
        let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
        TriangleRule {
            points: vec![[a, b, b], [b, a, b], [b, b, a]],
            weights: vec![1.0 / 3.0; 3],
            degree: 2,
        }
    }

    /// Seven points, exact for degree 5.
    pub fn seven_point() -> Self {
        let s = 15f64.sqrt();
        let a1 = (6.0 - s) / 21.0;
        let a2 = (6.0 + s) / 21.0;
        let w1 = (155.0 - s) / 1200.0;
        let w2 = (155.0 + s) / 1200.0;
        let orbit = |a: f64| {
            let b = 1.0 - 2.0 * a;
            [[b, a, a], [a, b, a], [a, a, b]]
        };
        let mut points = vec![[1.0 / 3.0; 3]];
        points.extend(orbit(a1));
        points.extend(orbit(a2));
        TriangleRule {
            points,
            weights: vec![9.0 / 40.0, w1, w1, w1, w2, w2, w2],
            degree: 5,
        }
    }

    /// Rule by number of points, as used in configuration files.
    pub fn with_points(count: usize) -> Result<Self> {
        match count {
            1 => Ok(Self::centroid()),
            3 => Ok(Self::three_point()),
            7 => Ok(Self::seven_point()),
            _ => Err(CuspError::Input(format!(
                "no triangle rule with {count} points (use 3 or 7)"
            ))),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Evaluates `f` at `p`, moving the point toward `centroid` in steps of
/// `1e-13` while it sits on a branch interface of a piecewise map.
pub fn eval_off_interface<T>(p: &Point, centroid: &Point, f: impl Fn(&Point) -> Result<T>) -> Result<T> {
    let dir = centroid - p;
    let len = dir.norm();
    let mut q = *p;
    for k in 1..=8 {
        match f(&q) {
            Err(CuspError::Interface(..)) if len > 0.0 => {
                q = p + dir * (k as f64 * 1e-13 / len).min(1.0);
            }
            other => return other,
        }
    }
    f(&q)
}
