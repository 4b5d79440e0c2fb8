//! Confusion-matrix segmentation metrics.

/// `counts[gt * classes + pred]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Mean per-class accuracy over classes present in prediction or ground truth.
    pub m_acc: f64,
    /// Mean per-class IoU over the same classes.
    pub m_iou: f64,
    /// Overall point accuracy.
    pub o_acc: f64,
    /// `None` for classes absent from both prediction and ground truth.
    pub class_acc: Vec<Option<f64>>,
    pub class_iou: Vec<Option<f64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn add(&mut self, pred: &[u8], gt: &[u8]) {
        assert_eq!(pred.len(), gt.len(), "prediction and ground truth lengths differ");
        for (&p, &g) in pred.iter().zip(gt) {
            assert!(
                (p as usize) < self.classes && (g as usize) < self.classes,
                "class id out of range"
            );
            self.counts[g as usize * self.classes + p as usize] += 1;
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn metrics(&self) -> Metrics {
        let c = self.classes;
        let total = self.total();
        let diag: u64 = (0..c).map(|i| self.get(i, i)).sum();
        let mut class_acc = Vec::with_capacity(c);
        let mut class_iou = Vec::with_capacity(c);
        for k in 0..c {
            let tp = self.get(k, k) as f64;
            let gt_k: u64 = (0..c).map(|p| self.get(k, p)).sum();
            let pred_k: u64 = (0..c).map(|g| self.get(g, k)).sum();
            if gt_k == 0 && pred_k == 0 {
                class_acc.push(None);
                class_iou.push(None);
                continue;
            }
            class_acc.push(Some(if gt_k > 0 { tp / gt_k as f64 } else { 0.0 }));
            class_iou.push(Some(tp / ((gt_k + pred_k) as f64 - tp)));
        }
        let mean = |v: &[Option<f64>]| {
            let present: Vec<f64> = v.iter().flatten().copied().collect();
            if present.is_empty() {
                0.0
            } else {
                present.iter().sum::<f64>() / present.len() as f64
            }
        };
        Metrics {
            m_acc: mean(&class_acc),
            m_iou: mean(&class_iou),
            o_acc: if total == 0 { 0.0 } else { diag as f64 / total as f64 },
            class_acc,
            class_iou,
        }
    }
}

/// Metrics of one prediction against its ground truth.
pub fn metrics(pred: &[u8], gt: &[u8], classes: usize) -> Metrics {
    let mut cm = ConfusionMatrix::new(classes);
    cm.add(pred, gt);
    cm.metrics()
}
