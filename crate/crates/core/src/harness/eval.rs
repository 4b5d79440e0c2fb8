//! Chunked whole-cloud inference, 3D metrics and visibility-head accuracy.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::config::InputEncoding;
use crate::harness::dataset::Dataset;
use crate::harness::dataset::GEN_TAU;
use crate::harness::pipeline::{point_features, scene_anchor};
use crate::model::{PointCloud, Sample};
use crate::nn::gpfn::forward;
use crate::nn::tape::sigmoid;
use crate::nn::{argmax_rows, softmax_rows, GpfnParams, Tape};
use crate::render_loss::{ConfusionMatrix, Metrics};
use crate::visibility::{distance_filter, DEFAULT_WINDOW};

/// Per-point outputs of a whole cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub classes: usize,
    /// `n × classes` softmax probabilities.
    pub probs: Vec<f32>,
    pub vis_prob: Vec<f32>,
}

impl Inference {
    pub fn labels(&self) -> Vec<u8> {
        argmax_rows(&self.probs, self.classes)
    }

    pub fn visible(&self) -> Vec<bool> {
        self.vis_prob.iter().map(|&p| p > 0.5).collect()
    }
}

pub fn input_encoding(params: &GpfnParams<f32>) -> Result<InputEncoding> {
    match params.config.input_dim {
        6 => Ok(InputEncoding::XyzRgb),
        9 => Ok(InputEncoding::XyzRgbUvw),
        d => Err(Error::Config(format!("unsupported input width {d}"))),
    }
}

/// Index sets of consecutive chunks of `chunk` points in ascending order. A
/// short last chunk is padded with indices from the start of the cloud
/// (cycling if the cloud is smaller than a chunk); `real` counts the unpadded
/// prefix of each chunk.
pub fn chunk_indices(n: usize, chunk: usize) -> Vec<(Vec<usize>, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let mut idx: Vec<usize> = (start..end).collect();
        idx.extend((0..chunk - idx.len()).map(|j| j % n));
        out.push((idx, end - start));
        start = end;
    }
    out
}

/// Runs the network over `cloud` chunk by chunk (see [`chunk_indices`]) and
/// drops the padding outputs.
pub fn infer_cloud(params: &GpfnParams<f32>, cloud: &PointCloud, anchor: [f64; 3], chunk: usize) -> Result<Inference> {
    let input = input_encoding(params)?;
    let classes = params.config.classes;
    if chunk <= params.config.k {
        return Err(Error::Config(format!(
            "chunk of {chunk} points needs to exceed k = {}",
            params.config.k
        )));
    }
    let n = cloud.len();
    let mut probs = Vec::with_capacity(n * classes);
    let mut vis_prob = Vec::with_capacity(n);
    for (idx, real) in chunk_indices(n, chunk) {
        let feats = point_features::<f32>(cloud, &idx, anchor, input)?;
        let mut tape = Tape::new();
        let out = forward(&mut tape, params, &feats)?;
        probs.extend_from_slice(&softmax_rows(tape.value(out.seg_logits), classes)[..real * classes]);
        vis_prob.extend(tape.value(out.vis_logit)[..real].iter().map(|&z| sigmoid(z)));
    }
    Ok(Inference {
        classes,
        probs,
        vis_prob,
    })
}

/// Oracle visibility of every point of a view as the network sees it: the
/// distance filter runs on each inference chunk separately.
pub fn chunk_oracle(sample: &Sample, chunk: usize) -> Result<Vec<bool>> {
    let mut flags = Vec::with_capacity(sample.cloud.len());
    for (idx, real) in chunk_indices(sample.cloud.len(), chunk) {
        let sub = sample.cloud.select(&idx).expect("chunk indices are valid");
        flags.extend_from_slice(&distance_filter(&sub, &sample.view, GEN_TAU, DEFAULT_WINDOW)?.flags[..real]);
    }
    Ok(flags)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Points per inference chunk.
    pub chunk: usize,
    /// Height of the stand-in camera used for whole rooms.
    pub eye_height: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            chunk: 1024,
            eye_height: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub classes: Vec<String>,
    /// Whole-room metrics per scene.
    pub scenes: Vec<(String, Metrics)>,
    /// Whole-room metrics over all scenes (pooled confusion).
    pub overall: Metrics,
    /// Metrics over the truncated clouds of all views.
    pub views: Option<Metrics>,
    /// Visibility-head accuracy over all view points, against the distance
    /// filter of each inference chunk.
    pub vis_accuracy: Option<f64>,
}

fn pct(v: f64) -> String {
    format!("{:6.2}", 100.0 * v)
}

impl EvalReport {
    pub fn format(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>6} {:>6} {:>6}", "scene", "mAcc", "mIoU", "oAcc");
        for (name, m) in &self.scenes {
            let _ = writeln!(s, "{:<16} {} {} {}", name, pct(m.m_acc), pct(m.m_iou), pct(m.o_acc));
        }
        let m = &self.overall;
        let _ = writeln!(s, "{:<16} {} {} {}", "all", pct(m.m_acc), pct(m.m_iou), pct(m.o_acc));
        if let Some(m) = &self.views {
            let _ = writeln!(s, "{:<16} {} {} {}", "views", pct(m.m_acc), pct(m.m_iou), pct(m.o_acc));
        }
        let _ = writeln!(s, "per-class IoU:");
        for (c, name) in self.classes.iter().enumerate() {
            match self.overall.class_iou[c] {
                Some(v) => {
                    let _ = writeln!(s, "  {:<14} {}", name, pct(v));
                }
                None => {
                    let _ = writeln!(s, "  {name:<14}      -");
                }
            }
        }
        if let Some(v) = self.vis_accuracy {
            let _ = writeln!(s, "visibility accuracy {}", pct(v));
        }
        s
    }
}

struct SceneResult {
    scene: ConfusionMatrix,
    views: Option<ConfusionMatrix>,
    vis: (usize, usize),
}

/// Whole-room inference on every scene plus per-view inference on every
/// truncated cloud. Scenes are processed in parallel; results are combined
/// in scene order.
pub fn evaluate(params: &GpfnParams<f32>, dataset: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    let classes = dataset.classes();
    if params.config.classes != classes {
        return Err(Error::Data(format!(
            "checkpoint predicts {} classes but the dataset has {classes}",
            params.config.classes
        )));
    }
    let one = |s: usize| -> Result<SceneResult> {
        let sc = &dataset.scenes[s];
        let labels = sc
            .cloud
            .labels()
            .ok_or_else(|| Error::Data(format!("{}: scene has no 3D labels", sc.name)))?;
        let inf = infer_cloud(params, &sc.cloud, scene_anchor(&sc.cloud, opts.eye_height), opts.chunk)?;
        let mut scene = ConfusionMatrix::new(classes);
        scene.add(&inf.labels(), labels);
        let mut views = Some(ConfusionMatrix::new(classes));
        let mut vis = (0, 0);
        for sample in &sc.samples {
            let inf = infer_cloud(params, &sample.cloud, sample.view.center(), opts.chunk)?;
            match (sample.cloud.labels(), views.as_mut()) {
                (Some(l), Some(v)) => v.add(&inf.labels(), l),
                _ => views = None,
            }
            let reference = chunk_oracle(sample, opts.chunk)?;
            let pred = inf.visible();
            vis.0 += pred.iter().zip(&reference).filter(|(a, b)| a == b).count();
            vis.1 += pred.len();
        }
        Ok(SceneResult { scene, views, vis })
    };
    let results: Vec<Result<SceneResult>> =
        super::thread_pool().install(|| (0..dataset.scenes.len()).into_par_iter().map(one).collect());
    let mut overall = ConfusionMatrix::new(classes);
    let mut views = Some(ConfusionMatrix::new(classes));
    let mut vis = (0, 0);
    let mut scenes = Vec::new();
    for (s, r) in results.into_iter().enumerate() {
        let r = r?;
        overall.merge(&r.scene);
        scenes.push((dataset.scenes[s].name.clone(), r.scene.metrics()));
        match (r.views, views.as_mut()) {
            (Some(a), Some(b)) => b.merge(&a),
            _ => views = None,
        }
        vis.0 += r.vis.0;
        vis.1 += r.vis.1;
    }
    let has_views = vis.1 > 0;
    Ok(EvalReport {
        classes: dataset.catalog.names().to_vec(),
        scenes,
        overall: overall.metrics(),
        views: views.filter(|v| has_views && v.total() > 0).map(|v| v.metrics()),
        vis_accuracy: has_views.then(|| vis.0 as f64 / vis.1 as f64),
    })
}
