//! Coordinate transformation for sub-problem homogeneity: shift to the
//! window's bounding box, scale the dominant span to 1, and swap axes when
//! the y-span dominates.

use crate::error::{Result, UdcError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub x_min: f64,
    pub y_min: f64,
    pub scale: f64,
    pub swapped: bool,
    /// Both spans were zero: the transform is the identity.
    pub degenerate: bool,
}

impl Transform {
    pub fn identity() -> Transform {
        Transform {
            x_min: 0.0,
            y_min: 0.0,
            scale: 1.0,
            swapped: false,
            degenerate: true,
        }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        if self.degenerate {
            return p;
        }
        let sx = self.scale * (p[0] - self.x_min);
        let sy = self.scale * (p[1] - self.y_min);
        if self.swapped {
            [sy, sx]
        } else {
            [sx, sy]
        }
    }

    pub fn invert(&self, p: [f64; 2]) -> [f64; 2] {
        if self.degenerate {
            return p;
        }
        let (sx, sy) = if self.swapped { (p[1], p[0]) } else { (p[0], p[1]) };
        [sx / self.scale + self.x_min, sy / self.scale + self.y_min]
    }
}

/// Normalize a point set; returns the transformed points and the invertible
/// transform. Zero span in both axes yields the identity with a flag.
pub fn normalize_coords(points: &[[f64; 2]]) -> Result<(Vec<[f64; 2]>, Transform)> {
    if points.len() < 2 {
        return Err(UdcError::InvalidParams(
            "normalization needs at least 2 coordinates".into(),
        ));
    }
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for p in points {
        x_min = x_min.min(p[0]);
        x_max = x_max.max(p[0]);
        y_min = y_min.min(p[1]);
        y_max = y_max.max(p[1]);
    }
    let x_span = x_max - x_min;
    let y_span = y_max - y_min;
    if x_span == 0.0 && y_span == 0.0 {
        let t = Transform::identity();
        return Ok((points.to_vec(), t));
    }
    let t = Transform {
        x_min,
        y_min,
        scale: 1.0 / x_span.max(y_span),
        swapped: x_span <= y_span,
        degenerate: false,
    };
    Ok((points.iter().map(|&p| t.apply(p)).collect(), t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dominant_x_span_hand_example() {
        let pts = vec![[0.2, 0.4], [0.6, 0.5]];
        let (out, t) = normalize_coords(&pts).unwrap();
        assert!(!t.swapped);
        assert!((t.scale - 2.5).abs() < 1e-12);
        assert_eq!(out[0], [0.0, 0.0]);
        assert!((out[1][0] - 1.0).abs() < 1e-12);
        assert!((out[1][1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn dominant_y_span_swaps_axes() {
        // Mirror of the hand example: spans swapped, so axes swap.
        let pts = vec![[0.4, 0.2], [0.5, 0.6]];
        let (out, t) = normalize_coords(&pts).unwrap();
        assert!(t.swapped);
        assert!((t.scale - 2.5).abs() < 1e-12);
        assert_eq!(out[0], [0.0, 0.0]);
        assert!((out[1][0] - 1.0).abs() < 1e-12);
        assert!((out[1][1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn unit_span_is_identity_up_to_swap_rule() {
        let pts = vec![[0.0, 0.0], [1.0, 0.3], [0.5, 0.9]];
        let (out, t) = normalize_coords(&pts).unwrap();
        assert!(!t.swapped);
        assert_eq!(t.scale, 1.0);
        for (a, b) in pts.iter().zip(&out) {
            assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn round_trip_within_1e7() {
        let mut rng = crate::rng::stream(51, &[0]);
        use rand::Rng;
        for _ in 0..200 {
            let pts: Vec<[f64; 2]> = (0..8)
                .map(|_| [rng.random::<f64>() * 0.3 + 0.2, rng.random::<f64>() * 0.1])
                .collect();
            let (out, t) = normalize_coords(&pts).unwrap();
            for (orig, norm) in pts.iter().zip(&out) {
                let back = t.invert(*norm);
                assert!((back[0] - orig[0]).abs() < 1e-7);
                assert!((back[1] - orig[1]).abs() < 1e-7);
                assert!((0.0..=1.0 + 1e-12).contains(&norm[0]));
                assert!((0.0..=1.0 + 1e-12).contains(&norm[1]));
            }
        }
    }

    #[test]
    fn zero_span_flags_identity() {
        let pts = vec![[0.5, 0.5], [0.5, 0.5]];
        let (out, t) = normalize_coords(&pts).unwrap();
        assert!(t.degenerate);
        assert_eq!(out, pts);
    }
}
