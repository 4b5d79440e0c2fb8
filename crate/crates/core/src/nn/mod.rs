//! Reverse-mode differentiation core, the graph pyramid network and its optimizer.

pub mod adam;
pub mod checkpoint;
pub mod gpfn;
pub mod tape;
pub mod tensor;

use thiserror::Error;

use crate::graph::GraphError;
use crate::real::Real;

pub use adam::{Adam, AdamState};
pub use gpfn::{ForwardOutput, GpfnConfig, GpfnParams};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("backward needs a scalar loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
}

/// Row-wise softmax with max subtraction (`n × classes`, row-major).
pub fn softmax_rows<T: Real>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = logits.to_vec();
    for row in out.chunks_mut(classes) {
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s = s + *v;
        }
        for v in row.iter_mut() {
            *v = *v / s;
        }
    }
    out
}

/// Index of the first maximal entry of each row.
pub fn argmax_rows<T: Real>(values: &[T], classes: usize) -> Vec<u8> {
    values
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_small_cases() {
        assert_eq!(softmax_rows(&[0.0f64, 0.0], 2), vec![0.5, 0.5]);
        let p = softmax_rows(&[1000.0f64, 0.0], 2);
        assert_eq!(p[0], 1.0);
        assert!(p[1] >= 0.0 && p[1] < 1e-300);
    }

    #[test]
    fn softmax_matches_reciprocal_route() {
        // p_i = 1 / Σ_j exp(x_j - x_i) is an independent evaluation route
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let c = rng.gen_range(2..9);
            let row: Vec<f64> = (0..c).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let p = softmax_rows(&row, c);
            let s: f64 = p.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            for i in 0..c {
                let r = 1.0 / row.iter().map(|&xj| (xj - row[i]).exp()).sum::<f64>();
                assert!((p[i] - r).abs() < 1e-12, "{} vs {r}", p[i]);
                assert!(p[i] > 0.0);
            }
        }
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax_rows(&[0.5f64, 0.5, 0.2, 0.7], 2), vec![0, 1]);
    }
}
