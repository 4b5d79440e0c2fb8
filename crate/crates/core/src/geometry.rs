//! Pinhole camera math: world/camera transforms, pixel binning and frustum truncation.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{PointCloud, Viewpoint};

/// Points closer than this to the image plane are not projected.
pub const Z_NEAR: f64 = 1e-4;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeometryError {
    #[error("no scene point falls inside the view frustum")]
    EmptyFrustum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPoint {
    pub xyz: [f64; 3],
}

impl CameraPoint {
    pub fn depth(&self) -> f64 {
        self.xyz[2]
    }
}

/// A point that lands inside the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelHit {
    pub point_index: usize,
    pub u: usize,
    pub v: usize,
    pub depth: f64,
}

impl PixelHit {
    /// Row-major pixel index for an image of the given width.
    pub fn pixel(&self, width: usize) -> usize {
        self.v * width + self.u
    }
}

pub fn world_to_camera(p_w: [f64; 3], view: &Viewpoint) -> CameraPoint {
    let r = view.rotation();
    let t = view.translation();
    let mut xyz = [0.0; 3];
    for (i, out) in xyz.iter_mut().enumerate() {
        *out = r[i][0] * p_w[0] + r[i][1] * p_w[1] + r[i][2] * p_w[2] + t[i];
    }
    CameraPoint { xyz }
}

/// Inverse of [`world_to_camera`]: `Rᵀ (p_c - t)`.
pub fn camera_to_world(p_c: &CameraPoint, view: &Viewpoint) -> [f64; 3] {
    let r = view.rotation();
    let t = view.translation();
    let d = [p_c.xyz[0] - t[0], p_c.xyz[1] - t[1], p_c.xyz[2] - t[2]];
    let mut out = [0.0; 3];
    for (j, o) in out.iter_mut().enumerate() {
        *o = r[0][j] * d[0] + r[1][j] * d[1] + r[2][j] * d[2];
    }
    out
}

/// Pixel cell containing the projection of `p_c`, or `None` when it is behind
/// the near plane or outside the image.
pub fn camera_to_pixel(p_c: &CameraPoint, view: &Viewpoint) -> Option<(usize, usize)> {
    let [x, y, z] = p_c.xyz;
    if !(z > Z_NEAR) {
        return None;
    }
    let u = (view.fx * x / z + view.cx).floor();
    let v = (view.fy * y / z + view.cy).floor();
    if u < 0.0 || v < 0.0 || u >= view.width as f64 || v >= view.height as f64 {
        return None;
    }
    Some((u as usize, v as usize))
}

/// Projects one world point; `point_index` is copied into the hit.
pub fn project_point(p_w: [f64; 3], point_index: usize, view: &Viewpoint) -> Option<PixelHit> {
    let pc = world_to_camera(p_w, view);
    camera_to_pixel(&pc, view).map(|(u, v)| PixelHit {
        point_index,
        u,
        v,
        depth: pc.depth(),
    })
}

/// Per-point projection of a whole cloud, in point order.
pub fn project_cloud(cloud: &PointCloud, view: &Viewpoint) -> Vec<Option<PixelHit>> {
    cloud
        .positions()
        .iter()
        .enumerate()
        .map(|(i, &p)| project_point(p, i, view))
        .collect()
}

/// Frustum crop of a scene together with the source index of every kept point.
#[derive(Debug, Clone)]
pub struct Truncated {
    pub cloud: PointCloud,
    pub source_index: Vec<usize>,
}

/// Keeps the points that project into the image, in ascending source order.
pub fn truncate(scene: &PointCloud, view: &Viewpoint) -> Result<Truncated, GeometryError> {
    let keep: Vec<usize> = project_cloud(scene, view)
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.map(|_| i))
        .collect();
    let cloud = scene.select(&keep).ok_or(GeometryError::EmptyFrustum)?;
    Ok(Truncated {
        cloud,
        source_index: keep,
    })
}

/// Row indices used by [`resample`]: a sorted subset without replacement when
/// shrinking, all rows followed by uniform draws with replacement when growing.
pub fn resample_indices(n: usize, n_target: usize, seed: u64) -> Vec<usize> {
    if n == n_target {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if n > n_target {
        let mut idx = index::sample(&mut rng, n, n_target).into_vec();
        idx.sort_unstable();
        idx
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.extend((n..n_target).map(|_| rng.gen_range(0..n)));
        idx
    }
}

/// Fixed-size copy of `cloud`, deterministic in `seed`.
pub fn resample(cloud: &PointCloud, n_target: usize, seed: u64) -> PointCloud {
    assert!(n_target > 0, "resample target must be positive");
    let idx = resample_indices(cloud.len(), n_target, seed);
    cloud.select(&idx).expect("non-empty index list")
}

/// World-to-camera rotation for a camera looking along `yaw`/`pitch` (radians)
/// with world `+z` up. Camera axes: `x` right, `y` down, `z` forward.
pub fn look_rotation(yaw: f64, pitch: f64) -> [[f64; 3]; 3] {
    let f = [yaw.cos() * pitch.cos(), yaw.sin() * pitch.cos(), pitch.sin()];
    let r = [yaw.sin(), -yaw.cos(), 0.0];
    let d = [
        f[1] * r[2] - f[2] * r[1],
        f[2] * r[0] - f[0] * r[2],
        f[0] * r[1] - f[1] * r[0],
    ];
    [r, d, f]
}

/// Translation placing the camera center at `center` for the given rotation.
pub fn translation_for_center(rotation: &[[f64; 3]; 3], center: [f64; 3]) -> [f64; 3] {
    let mut t = [0.0; 3];
    for (i, ti) in t.iter_mut().enumerate() {
        *ti = -(rotation[i][0] * center[0] + rotation[i][1] * center[1] + rotation[i][2] * center[2]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn view(r: [[f64; 3]; 3], t: [f64; 3], w: usize, h: usize) -> Viewpoint {
        Viewpoint::new(r, t, 100.0, 100.0, 50.0, 50.0, w, h).unwrap()
    }

    const ID: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    #[test]
    fn identity_and_quarter_turn() {
        let v = view(ID, [0.0; 3], 100, 100);
        assert_eq!(world_to_camera([1.0, 2.0, 3.0], &v).xyz, [1.0, 2.0, 3.0]);
        let rz = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let v = view(rz, [0.0; 3], 100, 100);
        assert_eq!(world_to_camera([1.0, 0.0, 0.0], &v).xyz, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn pixel_binning() {
        let v = view(ID, [0.0; 3], 100, 100);
        let p = |x, y, z| CameraPoint { xyz: [x, y, z] };
        assert_eq!(camera_to_pixel(&p(0.0, 0.0, 1.0), &v), Some((50, 50)));
        assert_eq!(camera_to_pixel(&p(0.0, 0.0, -1.0), &v), None);
        assert_eq!(camera_to_pixel(&p(0.0, 0.0, 0.5 * Z_NEAR), &v), None);
        let narrow = view(ID, [0.0; 3], 60, 100);
        // u = floor(100 * 0.25 + 50) = 75, outside a 60-pixel-wide image
        assert_eq!(camera_to_pixel(&p(0.25, 0.0, 1.0), &narrow), None);
        assert_eq!(camera_to_pixel(&p(-0.5, -0.5, 1.0), &v), Some((0, 0)));
        assert_eq!(camera_to_pixel(&p(-0.5001, 0.0, 1.0), &v), None);
    }

    #[test]
    fn truncate_single_points() {
        let v = view(ID, [0.0; 3], 100, 100);
        let front = PointCloud::new(vec![[0.0, 0.0, 2.0]], vec![[0.1; 3]]).unwrap();
        let t = truncate(&front, &v).unwrap();
        assert_eq!(t.source_index, vec![0]);
        assert_eq!(t.cloud, front);
        let behind = PointCloud::new(vec![[0.0, 0.0, -2.0]], vec![[0.1; 3]]).unwrap();
        assert_eq!(truncate(&behind, &v).unwrap_err(), GeometryError::EmptyFrustum);
    }

    #[test]
    fn resample_cases() {
        let pts: Vec<[f64; 3]> = (0..5).map(|i| [i as f64, 0.0, 0.0]).collect();
        let c = PointCloud::new(pts, vec![[0.5; 3]; 5]).unwrap();
        assert_eq!(resample(&c, 5, 1), c);
        assert_eq!(resample(&c, 5, 99), c);

        let two = c.select(&[1, 3]).unwrap();
        let up = resample(&two, 4, 7);
        assert_eq!(up.len(), 4);
        for p in up.positions() {
            assert!(two.positions().contains(p));
        }

        let pts: Vec<[f64; 3]> = (0..100).map(|i| [i as f64, 0.0, 0.0]).collect();
        let big = PointCloud::new(pts, vec![[0.5; 3]; 100]).unwrap();
        let a = resample(&big, 10, 42);
        assert_eq!(a, resample(&big, 10, 42));
        let mut xs: Vec<f64> = a.positions().iter().map(|p| p[0]).collect();
        xs.dedup();
        assert_eq!(xs.len(), 10, "no repeats when shrinking");
    }

    #[test]
    fn look_rotation_is_proper() {
        for &(yaw, pitch) in &[(0.0, 0.0), (1.0, -0.3), (4.0, 0.2)] {
            let r = look_rotation(yaw, pitch);
            let c = [1.0, 2.0, 1.5];
            let v = Viewpoint::new(r, translation_for_center(&r, c), 10.0, 10.0, 5.0, 5.0, 10, 10).unwrap();
            let ctr = v.center();
            for k in 0..3 {
                assert!((ctr[k] - c[k]).abs() < 1e-12);
            }
            // a point straight ahead lands on the principal ray
            let ahead = [c[0] + r[2][0], c[1] + r[2][1], c[2] + r[2][2]];
            let pc = world_to_camera(ahead, &v);
            assert!((pc.xyz[0]).abs() < 1e-12 && (pc.xyz[1]).abs() < 1e-12);
            assert!((pc.xyz[2] - 1.0).abs() < 1e-12);
        }
        // world up maps to camera -y when level
        let r = look_rotation(0.7, 0.0);
        let up = [r[0][2], r[1][2], r[2][2]];
        assert!((up[1] + 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn pixel_is_scale_invariant_along_ray(
            x in -2.0f64..2.0, y in -2.0f64..2.0, z in 0.01f64..10.0
        ) {
            let v = view(ID, [0.0; 3], 100, 100);
            let a = camera_to_pixel(&CameraPoint { xyz: [x, y, z] }, &v);
            let b = camera_to_pixel(&CameraPoint { xyz: [2.0 * x, 2.0 * y, 2.0 * z] }, &v);
            prop_assert_eq!(a, b);
        }
    }
}
