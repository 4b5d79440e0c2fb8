//! Mini-batch training with Adam, per-epoch logs and checkpoints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::config::TrainConfig;
use crate::harness::dataset::Dataset;
use crate::harness::derive_seed;
use crate::harness::pipeline::{prepare_sample, sample_loss, LossOptions};
use crate::nn::checkpoint::save_checkpoint;
use crate::nn::{argmax_rows, Adam, AdamState, GpfnParams, Tape};
use crate::render_loss::{ConfusionMatrix, Metrics};

const STREAM_FRACTION: u64 = 1;
const STREAM_ORDER: u64 = 2;
const STREAM_RESAMPLE: u64 = 3;
const STREAM_INIT: u64 = 4;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train.log";
pub const CONFIG_FILE: &str = "config.txt";

/// Means over the samples of one epoch plus training-time 3D metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub steps: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub l_seg: f64,
    pub l_vis: f64,
    pub total: f64,
    pub n_seg_points: usize,
    pub m_vis_points: usize,
    /// Predictions of the resampled training points against their 3D labels.
    pub metrics: Option<Metrics>,
    /// Visibility-head accuracy on projected points.
    pub vis_accuracy: Option<f64>,
}

impl EpochLog {
    pub fn line(&self) -> String {
        let mut s = format!(
            "epoch {} steps {} lr {:?} l_seg {:?} l_vis {:?} total {:?} n_seg {} m_vis {}",
            self.epoch, self.steps, self.lr, self.l_seg, self.l_vis, self.total, self.n_seg_points, self.m_vis_points
        );
        if let Some(m) = &self.metrics {
            let _ = write!(s, " oacc {:?} macc {:?} miou {:?}", m.o_acc, m.m_acc, m.m_iou);
        }
        if let Some(v) = self.vis_accuracy {
            let _ = write!(s, " vis_acc {v:?}");
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: GpfnParams<f32>,
    pub log: Vec<EpochLog>,
    /// `(scene, view)` pairs used for training.
    pub samples: Vec<(usize, usize)>,
}

impl TrainOutcome {
    pub fn log_text(&self) -> String {
        self.log.iter().map(|e| e.line() + "\n").collect()
    }
}

/// Views used for training: per scene, a seeded choice of `fraction` of its
/// views, kept in storage order.
pub fn training_samples(dataset: &Dataset, config: &TrainConfig) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (s, scene) in dataset.scenes.iter().enumerate() {
        let n = scene.samples.len();
        let mut views: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[STREAM_FRACTION, s as u64]));
        views.shuffle(&mut rng);
        views.truncate(config.fraction.keep(n));
        views.sort_unstable();
        out.extend(views.into_iter().map(|v| (s, v)));
    }
    out
}

struct StepStats {
    report: crate::render_loss::LossReport,
    grads: Vec<Vec<f32>>,
    confusion: Option<ConfusionMatrix>,
    vis_agree: usize,
    vis_total: usize,
}

fn sample_step(
    dataset: &Dataset,
    params: &GpfnParams<f32>,
    config: &TrainConfig,
    id: (usize, usize),
    epoch: usize,
) -> Result<StepStats> {
    let seed = derive_seed(config.seed, &[STREAM_RESAMPLE, epoch as u64, id.0 as u64, id.1 as u64]);
    let prep = prepare_sample::<f32>(dataset.sample(id), config.n_points, seed, config.input)?;
    let mut tape = Tape::new();
    let step = sample_loss(&mut tape, params, &prep, &LossOptions::from(config))?;
    if !step.report.total.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss on scene {} view {} in epoch {}",
            id.0,
            id.1,
            epoch + 1
        )));
    }
    let g = tape.backward(step.total)?;
    let grads = step
        .params
        .iter()
        .zip(&params.tensors)
        .map(|(&v, t)| g.get(v).map_or_else(|| vec![0.0; t.len()], <[f32]>::to_vec))
        .collect();
    let classes = params.config.classes;
    let confusion = prep.labels3d.as_ref().map(|labels| {
        let pred = argmax_rows(tape.value(step.seg_logits), classes);
        let mut c = ConfusionMatrix::new(classes);
        c.add(&pred, labels);
        c
    });
    let mut vis_agree = 0;
    let mut vis_total = 0;
    if config.obsnet {
        for (i, h) in prep.hits.iter().enumerate() {
            if h.is_some() {
                vis_total += 1;
                vis_agree += usize::from(step.keep[i] == prep.oracle.flags[i]);
            }
        }
    }
    Ok(StepStats {
        report: step.report,
        grads,
        confusion,
        vis_agree,
        vis_total,
    })
}

/// Trains from `init` (or a fresh seeded initialization) on `dataset`.
///
/// With `out_dir` set, the configuration, the log and a checkpoint are
/// written there after every epoch; the initial parameters are saved first so
/// a divergence always leaves the last good checkpoint behind.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    init: Option<GpfnParams<f32>>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let classes = dataset.classes();
    let mut params = match init {
        Some(p) => {
            let want = config.network(classes);
            if p.config != want {
                return Err(Error::Config(format!(
                    "initial checkpoint does not match the configured network ({:?} vs {:?})",
                    p.config, want
                )));
            }
            p
        }
        None => GpfnParams::init(config.network(classes), derive_seed(config.seed, &[STREAM_INIT]))?,
    };
    let samples = training_samples(dataset, config);
    if samples.is_empty() {
        return Err(Error::Data("dataset has no samples".into()));
    }
    let ckpt: Option<PathBuf> = out_dir.map(|d| d.join(CHECKPOINT_FILE));
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(CONFIG_FILE);
        std::fs::write(&p, config.format()).map_err(|e| Error::io(&p, e))?;
        save_checkpoint(&params, ckpt.as_ref().unwrap())?;
    }
    let pool = super::thread_pool();
    let mut state = AdamState::new(&params.tensors);
    let mut steps = 0usize;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order = samples.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[STREAM_ORDER, epoch as u64]));
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 3];
        let (mut n_seg, mut m_vis) = (0usize, 0usize);
        let mut confusion = ConfusionMatrix::new(classes);
        let mut has_labels = true;
        let (mut vis_agree, mut vis_total) = (0usize, 0usize);
        let mut lr = config.lr_at(steps);
        for batch in order.chunks(config.batch_size) {
            // samples run in parallel; results are reduced in batch order
            let results: Vec<Result<StepStats>> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&id| sample_step(dataset, &params, config, id, epoch))
                    .collect()
            });
            let mut grads: Vec<Vec<f32>> = params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
            for r in results {
                let st = r?;
                for (acc, g) in grads.iter_mut().zip(&st.grads) {
                    for (a, &v) in acc.iter_mut().zip(g) {
                        *a += v;
                    }
                }
                sums[0] += st.report.l_seg;
                sums[1] += st.report.l_vis;
                sums[2] += st.report.total;
                n_seg += st.report.n_seg_points;
                m_vis += st.report.m_vis_points;
                match &st.confusion {
                    Some(c) => confusion.merge(c),
                    None => has_labels = false,
                }
                vis_agree += st.vis_agree;
                vis_total += st.vis_total;
            }
            let inv = 1.0 / batch.len() as f32;
            for g in grads.iter_mut() {
                for v in g.iter_mut() {
                    *v *= inv;
                }
            }
            if grads.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite gradient in epoch {}", epoch + 1)));
            }
            lr = config.lr_at(steps);
            let adam = Adam { lr, ..Adam::default() };
            adam.step(&mut params.tensors, &grads, &mut state)?;
            steps += 1;
        }
        if params.tensors.iter().any(|t| !t.is_finite()) {
            return Err(Error::Numerical(format!("parameters diverged in epoch {}", epoch + 1)));
        }
        let count = order.len() as f64;
        let entry = EpochLog {
            epoch: epoch + 1,
            steps,
            lr,
            l_seg: sums[0] / count,
            l_vis: sums[1] / count,
            total: sums[2] / count,
            n_seg_points: n_seg,
            m_vis_points: m_vis,
            metrics: has_labels.then(|| confusion.metrics()),
            vis_accuracy: (vis_total > 0).then(|| vis_agree as f64 / vis_total as f64),
        };
        log::info!("{}", entry.line());
        log.push(entry);
        if let Some(dir) = out_dir {
            save_checkpoint(&params, ckpt.as_ref().unwrap())?;
            let text: String = log.iter().map(|e: &EpochLog| e.line() + "\n").collect();
            let p = dir.join(LOG_FILE);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(TrainOutcome { params, log, samples })
}
