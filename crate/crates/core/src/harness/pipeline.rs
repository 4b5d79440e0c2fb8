//! Per-sample input preparation and the joint loss of one forward pass.

use crate::error::{Error, Result};
use crate::geometry::{project_cloud, resample_indices, PixelHit};
use crate::harness::config::{InputEncoding, TrainConfig};
use crate::harness::dataset::bounds;
use crate::harness::dataset::GEN_TAU;
use crate::model::{LabelMap2D, PointCloud, Sample};
use crate::nn::gpfn::forward;
use crate::nn::{GpfnParams, Tape, Var};
use crate::real::Real;
use crate::render_loss::{seg_loss, total_loss, vis_loss, LossReport, ProjectionMode, SegLossKind};
use crate::visibility::{distance_filter, VisibilityMask, DEFAULT_WINDOW};

/// Network input rows for `indices` of `cloud`: position relative to
/// `anchor` (world-aligned axes), color, and optionally room coordinates.
pub fn point_features<T: Real>(
    cloud: &PointCloud,
    indices: &[usize],
    anchor: [f64; 3],
    input: InputEncoding,
) -> Result<Vec<T>> {
    let uvw = match input {
        InputEncoding::XyzRgb => None,
        InputEncoding::XyzRgbUvw => Some(
            cloud
                .norm_coords()
                .ok_or_else(|| Error::Data("9-channel input needs normalized coordinates in the cloud".into()))?,
        ),
    };
    let mut out = Vec::with_capacity(indices.len() * input.dim());
    for &i in indices {
        let p = cloud.positions()[i];
        out.extend((0..3).map(|a| T::from_f64(p[a] - anchor[a])));
        out.extend(cloud.colors()[i].iter().map(|&c| T::from_f64(c)));
        if let Some(uvw) = uvw {
            out.extend(uvw[i].iter().map(|&c| T::from_f64(c)));
        }
    }
    Ok(out)
}

/// Stand-in camera center for a whole room: the horizontal center of its
/// bounds at typical eye height above the floor.
pub fn scene_anchor(cloud: &PointCloud, eye_height: f64) -> [f64; 3] {
    let (lo, hi) = bounds(cloud);
    [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), lo[2] + eye_height]
}

/// A sample resampled to a fixed size with everything the loss needs.
#[derive(Debug, Clone)]
pub struct PreparedSample<T> {
    pub features: Vec<T>,
    pub hits: Vec<Option<PixelHit>>,
    /// Oracle visibility of the resampled points.
    pub oracle: VisibilityMask,
    /// 3D labels for monitoring only; never used by the loss.
    pub labels3d: Option<Vec<u8>>,
    pub gt2d: LabelMap2D,
}

impl<T> PreparedSample<T> {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

/// Resamples the sample to `n_points` (deterministic in `seed`) and builds the
/// input rows, pixel hits and oracle visibility. The distance filter runs on
/// the resampled points, so the flags describe exactly what the network sees.
pub fn prepare_sample<T: Real>(
    sample: &Sample,
    n_points: usize,
    seed: u64,
    input: InputEncoding,
) -> Result<PreparedSample<T>> {
    let cloud = &sample.cloud;
    let idx = resample_indices(cloud.len(), n_points, seed);
    let sub = cloud.select(&idx).expect("resampled indices are valid");
    let features = point_features(cloud, &idx, sample.view.center(), input)?;
    Ok(PreparedSample {
        features,
        hits: project_cloud(&sub, &sample.view),
        oracle: distance_filter(&sub, &sample.view, GEN_TAU, DEFAULT_WINDOW)?,
        labels3d: sub.labels().map(|l| l.to_vec()),
        gt2d: sample.gt2d.clone(),
    })
}

/// Loss switches taken from the training configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub projection: ProjectionMode,
    pub kind: SegLossKind,
    pub obsnet: bool,
    pub lambda: f64,
}

impl From<&TrainConfig> for LossOptions {
    fn from(c: &TrainConfig) -> Self {
        LossOptions {
            projection: c.projection,
            kind: c.loss,
            obsnet: c.obsnet,
            lambda: c.lambda,
        }
    }
}

/// Tape handles and values of one sample's forward pass and loss.
#[derive(Debug, Clone)]
pub struct SampleLoss {
    pub total: Var,
    pub report: LossReport,
    pub seg_logits: Var,
    pub vis_logit: Var,
    pub params: Vec<Var>,
    /// Points allowed into the projection (all when the visibility head is off).
    pub keep: Vec<bool>,
}

/// Forward pass plus `l_seg + λ·l_vis`. With the visibility head on, points
/// it predicts as occluded are left out of the projection (the mask itself is
/// not differentiated) while the head trains against the oracle flags of all
/// projected points. With it off, every point is projected and `l_vis = 0`.
pub fn sample_loss<T: Real>(
    tape: &mut Tape<T>,
    params: &GpfnParams<T>,
    prep: &PreparedSample<T>,
    opts: &LossOptions,
) -> Result<SampleLoss> {
    let out = forward(tape, params, &prep.features)?;
    let log_probs = tape.log_softmax(out.seg_logits);
    let keep: Vec<bool> = if opts.obsnet {
        tape.value(out.vis_logit).iter().map(|&z| z > T::zero()).collect()
    } else {
        vec![true; prep.len()]
    };
    let seg = seg_loss(
        tape,
        log_probs,
        &prep.hits,
        opts.obsnet.then_some(keep.as_slice()),
        &prep.gt2d,
        opts.projection,
        opts.kind,
    );
    let vis = if opts.obsnet {
        let valid: Vec<bool> = prep.hits.iter().map(Option::is_some).collect();
        vis_loss(tape, out.vis_logit, &prep.oracle, &valid)
    } else {
        crate::render_loss::LossTerm {
            loss: tape.constant(1, 1, vec![T::zero()]),
            count: 0,
        }
    };
    let total = total_loss(tape, seg.loss, vis.loss, opts.lambda);
    let report = LossReport::new(
        tape.scalar(seg.loss).as_f64(),
        tape.scalar(vis.loss).as_f64(),
        opts.lambda,
        seg.count,
        vis.count,
    );
    Ok(SampleLoss {
        total,
        report,
        seg_logits: out.seg_logits,
        vis_logit: out.vis_logit,
        params: out.params,
        keep,
    })
}
