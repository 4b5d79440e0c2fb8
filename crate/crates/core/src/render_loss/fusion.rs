//! Per-pixel semantic fusion of projected class distributions.
//!
//! For a pixel hit by points `n = 1..m`, the fused distribution is the
//! class-wise product `Π_n p(c | x_n)` normalized over classes; the pixel label
//! is its argmax. Products are accumulated as sums of logarithms.

use std::fmt::Write as _;
use std::path::Path;

use crate::geometry::PixelHit;
use crate::model::{LabelMap2D, IGNORE_ID};

/// Lower bound applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq)]
pub struct FusedGrid {
    width: usize,
    height: usize,
    classes: usize,
    probs: Vec<f64>,
    contributors: Vec<Vec<usize>>,
}

impl FusedGrid {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn is_empty_pixel(&self, pixel: usize) -> bool {
        self.contributors[pixel].is_empty()
    }

    /// Fused distribution of a row-major pixel index (all zeros when empty).
    pub fn distribution(&self, pixel: usize) -> &[f64] {
        &self.probs[pixel * self.classes..(pixel + 1) * self.classes]
    }

    /// Point indices that landed in the pixel, ascending.
    pub fn contributors(&self, pixel: usize) -> &[usize] {
        &self.contributors[pixel]
    }
}

/// Fuses `probs` (`n × classes`, rows summing to one) over the pixels of `hits`.
///
/// Contributors are combined in ascending point order, so the result does not
/// depend on the order of `hits`.
pub fn fuse(probs: &[f64], classes: usize, hits: &[PixelHit], width: usize, height: usize) -> FusedGrid {
    let npix = width * height;
    let mut contributors: Vec<Vec<usize>> = vec![Vec::new(); npix];
    for h in hits {
        assert!(
            (h.point_index + 1) * classes <= probs.len(),
            "hit references point {} beyond the probability table",
            h.point_index
        );
        contributors[h.pixel(width)].push(h.point_index);
    }
    let mut out = vec![0.0; npix * classes];
    let mut log_sum = vec![0.0; classes];
    for (pix, list) in contributors.iter_mut().enumerate() {
        if list.is_empty() {
            continue;
        }
        list.sort_unstable();
        log_sum.iter_mut().for_each(|v| *v = 0.0);
        for &i in list.iter() {
            for (acc, &p) in log_sum.iter_mut().zip(&probs[i * classes..(i + 1) * classes]) {
                *acc += p.max(PROB_FLOOR).ln();
            }
        }
        let mx = log_sum.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out[pix * classes..(pix + 1) * classes];
        let mut z = 0.0;
        for (d, &s) in dst.iter_mut().zip(&log_sum) {
            *d = (s - mx).exp();
            z += *d;
        }
        for d in dst.iter_mut() {
            *d /= z;
        }
    }
    FusedGrid {
        width,
        height,
        classes,
        probs: out,
        contributors,
    }
}

fn argmax(row: &[f64]) -> u8 {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = c;
        }
    }
    best as u8
}

/// Argmax of every non-empty pixel (ties to the lowest class), ignore elsewhere.
pub fn render_labels(grid: &FusedGrid) -> LabelMap2D {
    let ids = (0..grid.width * grid.height)
        .map(|p| {
            if grid.is_empty_pixel(p) {
                IGNORE_ID
            } else {
                argmax(grid.distribution(p))
            }
        })
        .collect();
    LabelMap2D::new(grid.width, grid.height, ids).expect("grid dimensions are valid")
}

/// Baseline projection without fusion: hits are written in ascending point
/// order and the last writer's argmax owns the pixel.
pub fn direct_project(probs: &[f64], classes: usize, hits: &[PixelHit], width: usize, height: usize) -> LabelMap2D {
    let mut order: Vec<&PixelHit> = hits.iter().collect();
    order.sort_by_key(|h| h.point_index);
    let mut ids = vec![IGNORE_ID; width * height];
    for h in order {
        let i = h.point_index;
        ids[h.pixel(width)] = argmax(&probs[i * classes..(i + 1) * classes]);
    }
    LabelMap2D::new(width, height, ids).expect("grid dimensions are valid")
}

/// Fixed display color for a class id; ignored pixels are black.
pub fn palette(id: u8) -> [u8; 3] {
    const BASE: [[u8; 3]; 10] = [
        [166, 118, 72],
        [200, 200, 190],
        [90, 160, 220],
        [220, 60, 60],
        [70, 180, 80],
        [240, 200, 40],
        [150, 80, 200],
        [40, 200, 200],
        [250, 130, 20],
        [120, 120, 120],
    ];
    if id == IGNORE_ID {
        return [0, 0, 0];
    }
    match BASE.get(id as usize) {
        Some(c) => *c,
        None => {
            let h = (id as u32).wrapping_mul(2_654_435_761);
            [(h >> 24) as u8 | 0x40, (h >> 16) as u8 | 0x40, (h >> 8) as u8 | 0x40]
        }
    }
}

/// Plain-text (P3) color rendering of a label map.
pub fn format_ppm(map: &LabelMap2D) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "P3\n{} {}\n255", map.width(), map.height());
    for row in map.as_slice().chunks(map.width()) {
        let line: Vec<String> = row
            .iter()
            .map(|&id| {
                let [r, g, b] = palette(id);
                format!("{r} {g} {b}")
            })
            .collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

pub fn save_ppm(map: &LabelMap2D, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, format_ppm(map))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hit(i: usize, u: usize, v: usize) -> PixelHit {
        PixelHit {
            point_index: i,
            u,
            v,
            depth: 1.0,
        }
    }

    #[test]
    fn single_contributor_is_identity() {
        let g = fuse(&[0.8, 0.2], 2, &[hit(0, 0, 0)], 1, 1);
        assert!((g.distribution(0)[0] - 0.8).abs() < 1e-15);
        assert!((g.distribution(0)[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn two_contributor_hand_value() {
        let g = fuse(&[0.8, 0.2, 0.6, 0.4], 2, &[hit(0, 0, 0), hit(1, 0, 0)], 1, 1);
        // (0.48, 0.08) / 0.56
        assert!((g.distribution(0)[0] - 6.0 / 7.0).abs() < 1e-12);
        assert!((g.distribution(0)[1] - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(render_labels(&g).get(0, 0), 0);
    }

    #[test]
    fn tie_and_empty_pixels() {
        let g = fuse(&[0.5, 0.5], 2, &[hit(0, 1, 0)], 2, 2);
        let m = render_labels(&g);
        assert_eq!(m.as_slice(), &[IGNORE_ID, 0, IGNORE_ID, IGNORE_ID]);
        let g = fuse(&[0.5, 0.5], 2, &[], 3, 2);
        assert!(render_labels(&g).as_slice().iter().all(|&x| x == IGNORE_ID));
    }

    #[test]
    fn zero_probability_class_is_floored() {
        let g = fuse(&[1.0, 0.0, 1.0, 0.0], 2, &[hit(0, 0, 0), hit(1, 0, 0)], 1, 1);
        let d = g.distribution(0);
        assert!(d.iter().all(|v| v.is_finite()));
        assert!((d[0] + d[1] - 1.0).abs() < 1e-12);
        assert_eq!(d[0], 1.0);
    }

    #[test]
    fn direct_projection_last_writer_wins() {
        let mut probs = vec![0.0; 16];
        probs[3 * 2] = 1.0; // point 3 -> class 0
        probs[7 * 2 + 1] = 1.0; // point 7 -> class 1
        let m = direct_project(&probs, 2, &[hit(7, 0, 0), hit(3, 0, 0)], 1, 1);
        assert_eq!(m.get(0, 0), 1);
        let m = direct_project(&probs, 2, &[hit(3, 0, 0)], 1, 1);
        assert_eq!(m.get(0, 0), 0);
    }

    #[test]
    fn ppm_header() {
        let m = LabelMap2D::new(2, 1, vec![0, IGNORE_ID]).unwrap();
        let s = format_ppm(&m);
        assert!(s.starts_with("P3\n2 1\n255\n"));
        assert!(s.contains("0 0 0"));
    }
}
