//! Depth-buffer distance filter producing visible/occluded labels.
//!
//! A point is visible when its depth is within `tau` of the smallest depth found
//! in a `window × window` pixel neighborhood around its own pixel.

use thiserror::Error;

use crate::geometry::{project_cloud, PixelHit};
use crate::model::{PointCloud, Viewpoint};

pub const DEFAULT_TAU: f64 = 0.05;
pub const DEFAULT_WINDOW: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VisibilityError {
    #[error("mask has {mask} entries but the cloud has {cloud} points")]
    LengthMismatch { mask: usize, cloud: usize },
    #[error("mask keeps no points")]
    Empty,
    #[error("invalid filter parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSource {
    Oracle,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityMask {
    pub flags: Vec<bool>,
    pub source: MaskSource,
}

impl VisibilityMask {
    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn visible_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

/// Per-pixel minimum depth over all hits; `+inf` for empty pixels.
#[derive(Debug, Clone)]
pub struct DepthBuffer {
    width: usize,
    height: usize,
    depth: Vec<f64>,
}

impl DepthBuffer {
    pub fn build(hits: &[PixelHit], width: usize, height: usize) -> Self {
        let mut depth = vec![f64::INFINITY; width * height];
        for h in hits {
            let d = &mut depth[h.pixel(width)];
            if h.depth < *d {
                *d = h.depth;
            }
        }
        DepthBuffer { width, height, depth }
    }

    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.depth[v * self.width + u]
    }

    /// Minimum over the clipped `window × window` neighborhood centred on `(u, v)`.
    pub fn window_min(&self, u: usize, v: usize, window: usize) -> f64 {
        let r = window / 2;
        let (u0, u1) = (u.saturating_sub(r), (u + r).min(self.width - 1));
        let (v0, v1) = (v.saturating_sub(r), (v + r).min(self.height - 1));
        let mut m = f64::INFINITY;
        for vv in v0..=v1 {
            for &d in &self.depth[vv * self.width + u0..=vv * self.width + u1] {
                if d < m {
                    m = d;
                }
            }
        }
        m
    }
}

fn check_params(tau: f64, window: usize) -> Result<(), VisibilityError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(VisibilityError::Params(format!("tau must be positive, got {tau}")));
    }
    if window == 0 || window.is_multiple_of(2) {
        return Err(VisibilityError::Params(format!(
            "window must be a positive odd size, got {window}"
        )));
    }
    Ok(())
}

/// Visibility from precomputed per-point projections (`None` = no pixel, occluded).
pub fn distance_filter_hits(
    hits: &[Option<PixelHit>],
    width: usize,
    height: usize,
    tau: f64,
    window: usize,
) -> Result<VisibilityMask, VisibilityError> {
    check_params(tau, window)?;
    let valid: Vec<PixelHit> = hits.iter().flatten().copied().collect();
    let buffer = DepthBuffer::build(&valid, width, height);
    let flags = hits
        .iter()
        .map(|h| match h {
            Some(h) => h.depth <= buffer.window_min(h.u, h.v, window) + tau,
            None => false,
        })
        .collect();
    Ok(VisibilityMask {
        flags,
        source: MaskSource::Oracle,
    })
}

pub fn distance_filter(
    cloud: &PointCloud,
    view: &Viewpoint,
    tau: f64,
    window: usize,
) -> Result<VisibilityMask, VisibilityError> {
    distance_filter_hits(&project_cloud(cloud, view), view.width, view.height, tau, window)
}

/// Keeps the flagged points in ascending order.
pub fn apply_mask(cloud: &PointCloud, mask: &VisibilityMask) -> Result<PointCloud, VisibilityError> {
    if mask.len() != cloud.len() {
        return Err(VisibilityError::LengthMismatch {
            mask: mask.len(),
            cloud: cloud.len(),
        });
    }
    let keep: Vec<usize> = mask
        .flags
        .iter()
        .enumerate()
        .filter_map(|(i, &f)| f.then_some(i))
        .collect();
    cloud.select(&keep).ok_or(VisibilityError::Empty)
}

/// Fraction of entries on which two masks agree.
pub fn mask_accuracy(predicted: &VisibilityMask, reference: &VisibilityMask) -> f64 {
    assert_eq!(predicted.len(), reference.len(), "mask lengths differ");
    if predicted.is_empty() {
        return 1.0;
    }
    let agree = predicted
        .flags
        .iter()
        .zip(&reference.flags)
        .filter(|(a, b)| a == b)
        .count();
    agree as f64 / predicted.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Viewpoint;

    const ID: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    fn cam() -> Viewpoint {
        Viewpoint::new(ID, [0.0; 3], 10.0, 10.0, 5.0, 5.0, 10, 10).unwrap()
    }

    fn cloud(pts: Vec<[f64; 3]>) -> PointCloud {
        let n = pts.len();
        PointCloud::new(pts, vec![[0.5; 3]; n]).unwrap()
    }

    #[test]
    fn single_point_is_visible() {
        let m = distance_filter(&cloud(vec![[0.0, 0.0, 3.0]]), &cam(), DEFAULT_TAU, 3).unwrap();
        assert_eq!(m.flags, vec![true]);
    }

    #[test]
    fn same_pixel_near_and_far() {
        let c = cloud(vec![[0.0, 0.0, 1.0], [0.0, 0.0, 5.0]]);
        let m = distance_filter(&c, &cam(), 0.1, 1).unwrap();
        assert_eq!(m.flags, vec![true, false]);
        let m = distance_filter(&c, &cam(), 0.1, 3).unwrap();
        assert_eq!(m.flags, vec![true, false]);
    }

    #[test]
    fn window_reaches_neighbor_pixel() {
        // second point is one pixel to the right of the first and much farther
        let c = cloud(vec![[0.0, 0.0, 1.0], [0.5, 0.0, 5.0]]);
        let v = cam();
        let h = project_cloud(&c, &v);
        assert_eq!(h[0].unwrap().u + 1, h[1].unwrap().u);
        assert_eq!(distance_filter(&c, &v, 0.1, 1).unwrap().flags, vec![true, true]);
        assert_eq!(distance_filter(&c, &v, 0.1, 3).unwrap().flags, vec![true, false]);
    }

    #[test]
    fn bad_parameters() {
        let c = cloud(vec![[0.0, 0.0, 1.0]]);
        assert!(distance_filter(&c, &cam(), 0.0, 3).is_err());
        assert!(distance_filter(&c, &cam(), 0.1, 2).is_err());
    }

    #[test]
    fn mask_application() {
        let c = cloud(vec![[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [2.0, 0.0, 1.0]]);
        let m = |f: Vec<bool>| VisibilityMask {
            flags: f,
            source: MaskSource::Predicted,
        };
        assert_eq!(apply_mask(&c, &m(vec![true; 3])).unwrap(), c);
        assert_eq!(apply_mask(&c, &m(vec![false; 3])).unwrap_err(), VisibilityError::Empty);
        let kept = apply_mask(&c, &m(vec![true, false, true])).unwrap();
        assert_eq!(kept.positions(), &[[0.0, 0.0, 1.0], [2.0, 0.0, 1.0]]);
        assert!(matches!(
            apply_mask(&c, &m(vec![true])),
            Err(VisibilityError::LengthMismatch { .. })
        ));
    }
}
