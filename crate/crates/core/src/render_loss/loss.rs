//! Sparse 2D segmentation loss and visibility loss, recorded on a tape.

use crate::geometry::PixelHit;
use crate::model::{LabelMap2D, IGNORE_ID};
use crate::nn::{Tape, Var};
use crate::real::Real;
use crate::visibility::VisibilityMask;

/// Probabilities are clamped to `[LOSS_EPS, 1 - LOSS_EPS]` inside the losses.
pub const LOSS_EPS: f64 = 1e-7;

/// How predicted point distributions reach the image plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMode {
    /// Every projected point is compared on its own with its pixel's label.
    Direct,
    /// Points sharing a pixel are fused first; every contributor is then
    /// scored through the fused distribution of its pixel.
    Perspective,
}

/// Cross-entropy form of the segmentation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegLossKind {
    /// Binary cross-entropy summed over classes against the one-hot target.
    Bce,
    /// Categorical cross-entropy `-ln p_target`.
    Ce,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l_seg: f64,
    pub l_vis: f64,
    pub total: f64,
    pub lambda: f64,
    /// Points contributing to the segmentation loss.
    pub n_seg_points: usize,
    /// Points contributing to the visibility loss.
    pub m_vis_points: usize,
}

impl LossReport {
    pub fn new(l_seg: f64, l_vis: f64, lambda: f64, n_seg_points: usize, m_vis_points: usize) -> Self {
        LossReport {
            l_seg,
            l_vis,
            total: l_seg + lambda * l_vis,
            lambda,
            n_seg_points,
            m_vis_points,
        }
    }
}

/// A scalar loss on the tape plus the number of points it averages over.
/// `count == 0` means nothing contributed and the loss is a constant zero.
#[derive(Debug, Clone, Copy)]
pub struct LossTerm {
    pub loss: Var,
    pub count: usize,
}

/// Indices of the points that take part in the segmentation loss: projected,
/// kept by `keep`, and landing on a labeled pixel; with that pixel's label.
pub fn seg_contributors(
    hits: &[Option<PixelHit>],
    keep: Option<&[bool]>,
    gt: &LabelMap2D,
) -> Vec<(usize, PixelHit, u8)> {
    hits.iter()
        .enumerate()
        .filter(|(i, _)| keep.is_none_or(|k| k[*i]))
        .filter_map(|(i, h)| {
            let h = (*h)?;
            let label = gt.get(h.u, h.v);
            (label != IGNORE_ID).then_some((i, h, label))
        })
        .collect()
}

/// Sparse segmentation loss averaged over contributing points.
///
/// `log_probs` is `n × classes` (row-wise log-softmax of the logits);
/// `hits[i]` is point `i`'s pixel; `keep` optionally masks points out of the
/// projection.
pub fn seg_loss<T: Real>(
    tape: &mut Tape<T>,
    log_probs: Var,
    hits: &[Option<PixelHit>],
    keep: Option<&[bool]>,
    gt: &LabelMap2D,
    mode: ProjectionMode,
    kind: SegLossKind,
) -> LossTerm {
    let (n, classes) = tape.shape(log_probs);
    assert_eq!(hits.len(), n, "one hit slot per point");
    if let Some(k) = keep {
        assert_eq!(k.len(), n, "one keep flag per point");
    }
    let contrib = seg_contributors(hits, keep, gt);
    if contrib.is_empty() {
        return LossTerm {
            loss: tape.constant(1, 1, vec![T::zero()]),
            count: 0,
        };
    }
    let rows: Vec<usize> = contrib.iter().map(|c| c.0).collect();
    let picked = tape.gather_rows(log_probs, rows);
    let per_point = match mode {
        ProjectionMode::Direct => picked,
        ProjectionMode::Perspective => {
            let width = gt.width();
            let mut group_of_pixel = std::collections::HashMap::new();
            let group: Vec<usize> = contrib
                .iter()
                .map(|(_, h, _)| {
                    let next = group_of_pixel.len();
                    *group_of_pixel.entry(h.pixel(width)).or_insert(next)
                })
                .collect();
            let groups = group_of_pixel.len();
            let summed = tape.scatter_add_rows(picked, group.clone(), groups);
            let fused = tape.log_softmax(summed);
            tape.gather_rows(fused, group)
        }
    };
    let probs = tape.exp(per_point);
    let mut targets = vec![T::zero(); contrib.len() * classes];
    for (r, &(_, _, label)) in contrib.iter().enumerate() {
        assert!((label as usize) < classes, "label {label} outside {classes} classes");
        targets[r * classes + label as usize] = T::one();
    }
    let loss = tape.cross_entropy(
        probs,
        targets,
        kind == SegLossKind::Bce,
        T::from_f64(LOSS_EPS),
        T::from_f64(contrib.len() as f64),
    );
    LossTerm {
        loss,
        count: contrib.len(),
    }
}

/// Mean binary cross-entropy between `sigmoid(vis_logit)` and the reference
/// mask over the points flagged in `valid`.
pub fn vis_loss<T: Real>(tape: &mut Tape<T>, vis_logit: Var, reference: &VisibilityMask, valid: &[bool]) -> LossTerm {
    let (n, cols) = tape.shape(vis_logit);
    assert_eq!(cols, 1, "visibility logits are a single column");
    assert_eq!(reference.len(), n, "one reference flag per point");
    assert_eq!(valid.len(), n, "one validity flag per point");
    let rows: Vec<usize> = (0..n).filter(|&i| valid[i]).collect();
    if rows.is_empty() {
        return LossTerm {
            loss: tape.constant(1, 1, vec![T::zero()]),
            count: 0,
        };
    }
    let targets = rows
        .iter()
        .map(|&i| if reference.flags[i] { T::one() } else { T::zero() })
        .collect();
    let count = rows.len();
    let picked = tape.gather_rows(vis_logit, rows);
    let p = tape.sigmoid(picked);
    let loss = tape.cross_entropy(p, targets, true, T::from_f64(LOSS_EPS), T::from_f64(count as f64));
    LossTerm { loss, count }
}

/// `l_seg + lambda · l_vis` on the tape.
pub fn total_loss<T: Real>(tape: &mut Tape<T>, seg: Var, vis: Var, lambda: f64) -> Var {
    let weighted = tape.scale(vis, T::from_f64(lambda));
    tape.add(seg, weighted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::visibility::MaskSource;

    fn hit(i: usize, u: usize) -> Option<PixelHit> {
        Some(PixelHit {
            point_index: i,
            u,
            v: 0,
            depth: 1.0,
        })
    }

    fn log_rows(t: &mut Tape<f64>, probs: &[f64], classes: usize) -> Var {
        let n = probs.len() / classes;
        let logs = probs.iter().map(|p| p.ln()).collect();
        t.leaf(n, classes, logs, true)
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let gt = LabelMap2D::new(2, 1, vec![1, 0]).unwrap();
        let mut t = Tape::new();
        let lp = log_rows(&mut t, &[1e-12, 1.0 - 1e-12, 1.0 - 1e-12, 1e-12], 2);
        for mode in [ProjectionMode::Direct, ProjectionMode::Perspective] {
            let term = seg_loss(&mut t, lp, &[hit(0, 0), hit(1, 1)], None, &gt, mode, SegLossKind::Bce);
            assert_eq!(term.count, 2);
            assert!(t.scalar(term.loss) < 1e-6);
        }
    }

    #[test]
    fn uniform_two_class_closed_form() {
        let gt = LabelMap2D::new(1, 1, vec![0]).unwrap();
        let mut t = Tape::new();
        let lp = log_rows(&mut t, &[0.5, 0.5], 2);
        let term = seg_loss(
            &mut t,
            lp,
            &[hit(0, 0)],
            None,
            &gt,
            ProjectionMode::Direct,
            SegLossKind::Bce,
        );
        assert!((t.scalar(term.loss) - 2.0 * 2f64.ln()).abs() < 1e-12);
        let term = seg_loss(
            &mut t,
            lp,
            &[hit(0, 0)],
            None,
            &gt,
            ProjectionMode::Direct,
            SegLossKind::Ce,
        );
        assert!((t.scalar(term.loss) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ignored_pixels_and_masked_points_do_not_count() {
        let gt = LabelMap2D::new(2, 1, vec![IGNORE_ID, 1]).unwrap();
        let mut t = Tape::new();
        let lp = log_rows(&mut t, &[0.5, 0.5, 0.5, 0.5, 0.5, 0.5], 2);
        let hits = [hit(0, 0), hit(1, 1), None];
        let term = seg_loss(
            &mut t,
            lp,
            &hits,
            None,
            &gt,
            ProjectionMode::Perspective,
            SegLossKind::Bce,
        );
        assert_eq!(term.count, 1);
        let keep = [true, false, true];
        let term = seg_loss(
            &mut t,
            lp,
            &hits,
            Some(&keep),
            &gt,
            ProjectionMode::Perspective,
            SegLossKind::Bce,
        );
        assert_eq!(term.count, 0);
        assert_eq!(t.scalar(term.loss), 0.0);
    }

    #[test]
    fn perspective_scores_points_through_fused_pixel() {
        // two points in one pixel with (0.8,0.2) and (0.6,0.4): fused (6/7, 1/7)
        let gt = LabelMap2D::new(1, 1, vec![0]).unwrap();
        let mut t = Tape::new();
        let lp = log_rows(&mut t, &[0.8, 0.2, 0.6, 0.4], 2);
        let term = seg_loss(
            &mut t,
            lp,
            &[hit(0, 0), hit(1, 0)],
            None,
            &gt,
            ProjectionMode::Perspective,
            SegLossKind::Ce,
        );
        assert_eq!(term.count, 2);
        assert!((t.scalar(term.loss) + (6.0f64 / 7.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn visibility_closed_forms() {
        let mask = VisibilityMask {
            flags: vec![true, false, true],
            source: MaskSource::Oracle,
        };
        let mut t = Tape::new();
        let z = t.leaf(3, 1, vec![0.0, 0.0, 0.0], true);
        let term = vis_loss(&mut t, z, &mask, &[true; 3]);
        assert_eq!(term.count, 3);
        assert!((t.scalar(term.loss) - 2f64.ln()).abs() < 1e-12);

        let z = t.leaf(3, 1, vec![40.0, -40.0, 40.0], true);
        let term = vis_loss(&mut t, z, &mask, &[true; 3]);
        assert!(t.scalar(term.loss) < 1e-6);

        let term = vis_loss(&mut t, z, &mask, &[false; 3]);
        assert_eq!(term.count, 0);
        assert_eq!(t.scalar(term.loss), 0.0);
    }

    #[test]
    fn report_total() {
        let r = LossReport::new(0.7, 0.3, 0.5, 3, 4);
        assert!((r.total - 0.85).abs() < 1e-15);
    }
}
