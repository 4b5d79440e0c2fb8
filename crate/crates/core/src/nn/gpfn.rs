//! Graph pyramid feature network: a dynamic edge-convolution encoder with two
//! pyramid global features, and two decoder heads (segmentation, visibility)
//! sharing the encoder output.
//!
//! Layout with the default widths:
//!
//! ```text
//! input (N × D) ─ edge-conv 64,64 ─ f1 ─ edge-conv 64,64 ─ f2 ─ edge-conv 64 ─ f3
//!                                                         │
//!                                                     g1 = max-pool(f2)
//! P = [f1 f2 f3] (N × 192) ─ linear 1024 ─ max-pool ─ g2
//! R = [P g1 g2] (N × 1280) ─┬─ 512 ─ 128 ─ C   (segmentation logits)
//!                           └─ 512 ─ 128 ─ 1   (visibility logit)
//! ```
//!
//! Each edge convolution rebuilds the k-NN graph on its own input features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::knn_graph;
use crate::nn::tape::{Tape, Var};
use crate::nn::{NnError, Tensor};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct GpfnConfig {
    pub input_dim: usize,
    pub classes: usize,
    pub k: usize,
    /// Widths of the shared per-edge transform, one list per edge-conv block.
    pub edge_blocks: Vec<Vec<usize>>,
    /// Block (1-based) whose pooled output is the low-level global feature.
    pub g1_block: usize,
    pub global_width: usize,
    /// Hidden widths of both heads; the final layer is added per head.
    pub head_widths: Vec<usize>,
    pub slope: f64,
}

impl GpfnConfig {
    pub fn new(input_dim: usize, classes: usize, k: usize) -> Self {
        GpfnConfig {
            input_dim,
            classes,
            k,
            edge_blocks: vec![vec![64, 64], vec![64, 64], vec![64]],
            g1_block: 2,
            global_width: 1024,
            head_widths: vec![512, 128],
            slope: 0.2,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Shape(m.to_string()));
        if self.input_dim == 0 || self.classes == 0 || self.k == 0 {
            return bad("input_dim, classes and k must be positive");
        }
        if self.edge_blocks.is_empty() || self.edge_blocks.iter().any(|b| b.is_empty() || b.contains(&0)) {
            return bad("every edge-conv block needs positive widths");
        }
        if self.g1_block == 0 || self.g1_block > self.edge_blocks.len() {
            return bad("g1_block must name an existing block");
        }
        if self.global_width == 0 || self.head_widths.contains(&0) {
            return bad("zero layer width");
        }
        Ok(())
    }

    fn block_out(&self, b: usize) -> usize {
        *self.edge_blocks[b].last().unwrap()
    }

    /// Width of the concatenated per-point features `P`.
    pub fn point_width(&self) -> usize {
        (0..self.edge_blocks.len()).map(|b| self.block_out(b)).sum()
    }

    /// Width of the pooled globals `[g1 g2]`.
    pub fn global_concat_width(&self) -> usize {
        self.block_out(self.g1_block - 1) + self.global_width
    }

    /// Input width of both heads.
    pub fn head_input_width(&self) -> usize {
        self.point_width() + self.global_concat_width()
    }

    /// `(name, fan_in, fan_out)` of every linear layer, in parameter order.
    fn layers(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut in_w = self.input_dim;
        for (b, widths) in self.edge_blocks.iter().enumerate() {
            let mut w_in = 2 * in_w;
            for (l, &w) in widths.iter().enumerate() {
                out.push((format!("edge{}.{}", b + 1, l), w_in, w));
                w_in = w;
            }
            in_w = *widths.last().unwrap();
        }
        out.push(("global".into(), self.point_width(), self.global_width));
        for (head, final_w) in [("seg", self.classes), ("vis", 1)] {
            let mut w_in = self.head_input_width();
            for (l, &w) in self.head_widths.iter().chain(std::iter::once(&final_w)).enumerate() {
                out.push((format!("{head}.{l}"), w_in, w));
                w_in = w;
            }
        }
        out
    }
}

/// Named parameter tensors: for each linear layer a weight `fan_in × fan_out`
/// followed by a bias `1 × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct GpfnParams<T> {
    pub config: GpfnConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> GpfnParams<T> {
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(config: GpfnConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, fan_in, fan_out) in config.layers() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
                .collect();
            names.push(format!("{name}.w"));
            tensors.push(Tensor::new(vec![fan_in, fan_out], w)?);
            names.push(format!("{name}.b"));
            tensors.push(Tensor::zeros(vec![1, fan_out]));
        }
        Ok(GpfnParams { config, names, tensors })
    }

    /// Rebuilds from named tensors, checking every shape against `config`.
    pub fn from_parts(config: GpfnConfig, names: Vec<String>, tensors: Vec<Tensor<T>>) -> Result<Self, NnError> {
        config.validate()?;
        let layers = config.layers();
        if names.len() != 2 * layers.len() || tensors.len() != names.len() {
            return Err(NnError::Shape(format!(
                "expected {} parameter tensors, got {}",
                2 * layers.len(),
                tensors.len()
            )));
        }
        for (l, (name, fan_in, fan_out)) in layers.iter().enumerate() {
            let expect = [
                (format!("{name}.w"), vec![*fan_in, *fan_out]),
                (format!("{name}.b"), vec![1, *fan_out]),
            ];
            for (j, (en, es)) in expect.iter().enumerate() {
                let i = 2 * l + j;
                if &names[i] != en || tensors[i].shape() != es.as_slice() {
                    return Err(NnError::Shape(format!(
                        "parameter {i}: expected {en} {es:?}, found {} {:?}",
                        names[i],
                        tensors[i].shape()
                    )));
                }
                if !tensors[i].is_finite() {
                    return Err(NnError::NonFinite {
                        layer: names[i].clone(),
                    });
                }
            }
        }
        Ok(GpfnParams { config, names, tensors })
    }

    pub fn cast<U: Real>(&self) -> GpfnParams<U> {
        GpfnParams {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t)).collect()
    }
}

/// Handles to the interesting values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub seg_logits: Var,
    pub vis_logit: Var,
    /// Concatenated edge-conv outputs `P`.
    pub points: Var,
    pub g1: Var,
    pub g2: Var,
    pub params: Vec<Var>,
}

struct Linear {
    w: Var,
    b: Var,
}

fn check(tape: &Tape<impl Real>, v: Var, layer: &str) -> Result<(), NnError> {
    if tape.is_finite(v) {
        Ok(())
    } else {
        Err(NnError::NonFinite {
            layer: layer.to_string(),
        })
    }
}

/// One edge convolution on `x` (`n × width`): rebuild the k-NN graph, apply the
/// shared transform to every `(x_i, x_j - x_i)` and max-reduce over neighbors.
///
/// The first layer is evaluated as `x_i·(W_c - W_d) + x_j·W_d`, which equals
/// `[x_i, x_j - x_i]·[W_c; W_d]` without materialising the edge features.
pub fn edge_conv<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    layers: &[(Var, Var)],
    k: usize,
    slope: T,
    name: &str,
) -> Result<Var, NnError> {
    let (n, width) = tape.shape(x);
    let graph = knn_graph(tape.value(x), width, k)?;
    let (w0, b0) = layers[0];
    let (w0_rows, _) = tape.shape(w0);
    if w0_rows != 2 * width {
        return Err(NnError::Shape(format!(
            "{name}: first weight has {w0_rows} rows for {width}-wide input"
        )));
    }
    let w_center = tape.slice_rows(w0, 0, width);
    let w_diff = tape.slice_rows(w0, width, 2 * width);
    let w_self = tape.sub(w_center, w_diff);
    let a = tape.matmul(x, w_self);
    let bn = tape.matmul(x, w_diff);
    let centers: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    let ga = tape.gather_rows(a, centers);
    let gb = tape.gather_rows(bn, graph.as_slice().to_vec());
    let e = tape.add(ga, gb);
    let e = tape.add_row(e, b0);
    let mut e = tape.leaky_relu(e, slope);
    for &(w, b) in &layers[1..] {
        let h = tape.matmul(e, w);
        let h = tape.add_row(h, b);
        e = tape.leaky_relu(h, slope);
    }
    let out = tape.group_max(e, k);
    check(tape, out, name)?;
    Ok(out)
}

fn head<T: Real>(
    tape: &mut Tape<T>,
    points: Var,
    globals: Var,
    layers: &[Linear],
    slope: T,
    name: &str,
) -> Result<Var, NnError> {
    // [P, g] · W = P·W_p + g·W_g, with g broadcast to every row
    let (_, pw) = tape.shape(points);
    let (rows, _) = tape.shape(layers[0].w);
    let w_p = tape.slice_rows(layers[0].w, 0, pw);
    let w_g = tape.slice_rows(layers[0].w, pw, rows);
    let hp = tape.matmul(points, w_p);
    let hg = tape.matmul(globals, w_g);
    let hg = tape.add(hg, layers[0].b);
    let h = tape.add_row(hp, hg);
    let mut h = tape.leaky_relu(h, slope);
    check(tape, h, &format!("{name}.0"))?;
    let last = layers.len() - 1;
    for (l, lin) in layers.iter().enumerate().skip(1) {
        let z = tape.matmul(h, lin.w);
        let z = tape.add_row(z, lin.b);
        h = if l == last { z } else { tape.leaky_relu(z, slope) };
        check(tape, h, &format!("{name}.{l}"))?;
    }
    Ok(h)
}

/// Full forward pass on `input` (`n × input_dim`, row-major).
pub fn forward<T: Real>(tape: &mut Tape<T>, params: &GpfnParams<T>, input: &[T]) -> Result<ForwardOutput, NnError> {
    let cfg = &params.config;
    let d = cfg.input_dim;
    if input.is_empty() || !input.len().is_multiple_of(d) {
        return Err(NnError::Shape(format!(
            "input of {} values is not a multiple of {d}",
            input.len()
        )));
    }
    let n = input.len() / d;
    if n <= cfg.k {
        return Err(crate::graph::GraphError::TooFewPoints { n, k: cfg.k }.into());
    }
    let slope = T::from_f64(cfg.slope);
    let vars = params.bind(tape);
    let mut next = vars.iter().copied();
    let mut take_linear = || {
        let w = next.next().expect("parameter layout");
        let b = next.next().expect("parameter layout");
        (w, b)
    };

    let mut x = tape.constant(n, d, input.to_vec());
    let mut block_outputs = Vec::new();
    let mut g1 = None;
    for (b, widths) in cfg.edge_blocks.iter().enumerate() {
        let layers: Vec<(Var, Var)> = (0..widths.len()).map(|_| take_linear()).collect();
        x = edge_conv(tape, x, &layers, cfg.k, slope, &format!("edge{}", b + 1))?;
        block_outputs.push(x);
        if b + 1 == cfg.g1_block {
            g1 = Some(tape.group_max(x, n));
        }
    }
    let g1 = g1.expect("g1 block validated");
    let points = tape.concat_cols(&block_outputs);

    let (gw, gb) = take_linear();
    let h = tape.matmul(points, gw);
    let h = tape.add_row(h, gb);
    let h = tape.leaky_relu(h, slope);
    check(tape, h, "global")?;
    let g2 = tape.group_max(h, n);
    let globals = tape.concat_cols(&[g1, g2]);

    let depth = cfg.head_widths.len() + 1;
    let seg_layers: Vec<Linear> = (0..depth)
        .map(|_| {
            let (w, b) = take_linear();
            Linear { w, b }
        })
        .collect();
    let vis_layers: Vec<Linear> = (0..depth)
        .map(|_| {
            let (w, b) = take_linear();
            Linear { w, b }
        })
        .collect();
    let seg_logits = head(tape, points, globals, &seg_layers, slope, "seg")?;
    let vis_logit = head(tape, points, globals, &vis_layers, slope, "vis")?;
    Ok(ForwardOutput {
        seg_logits,
        vis_logit,
        points,
        g1,
        g2,
        params: vars,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::edge_features;

    fn small_config(k: usize) -> GpfnConfig {
        GpfnConfig {
            input_dim: 6,
            classes: 3,
            k,
            edge_blocks: vec![vec![8, 6], vec![6, 5], vec![4]],
            g1_block: 2,
            global_width: 16,
            head_widths: vec![12, 7],
            slope: 0.2,
        }
    }

    fn input(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * 6).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn default_layout_widths() {
        let c = GpfnConfig::new(6, 4, 20);
        assert_eq!(c.point_width(), 192);
        assert_eq!(c.head_input_width(), 192 + 64 + 1024);
        let p = GpfnParams::<f32>::init(c, 1).unwrap();
        let shape = |n: &str| p.tensors[p.names.iter().position(|x| x == n).unwrap()].shape().to_vec();
        assert_eq!(shape("edge1.0.w"), vec![12, 64]);
        assert_eq!(shape("edge3.0.w"), vec![128, 64]);
        assert_eq!(shape("global.w"), vec![192, 1024]);
        assert_eq!(shape("seg.0.w"), vec![1280, 512]);
        assert_eq!(shape("seg.2.w"), vec![128, 4]);
        assert_eq!(shape("vis.2.w"), vec![128, 1]);
    }

    #[test]
    fn minimal_cloud_shapes() {
        let cfg = small_config(4);
        let p = GpfnParams::<f64>::init(cfg, 3).unwrap();
        let mut t = Tape::new();
        let out = forward(&mut t, &p, &input(5, 1)).unwrap();
        assert_eq!(t.shape(out.seg_logits), (5, 3));
        assert_eq!(t.shape(out.vis_logit), (5, 1));
        let mut t = Tape::new();
        assert!(forward(&mut t, &p, &input(4, 1)).is_err());
    }

    #[test]
    fn identical_points_give_identical_rows() {
        let p = GpfnParams::<f64>::init(small_config(3), 3).unwrap();
        let row = [0.2, -0.4, 0.9, 0.1, 0.5, 0.3];
        let x: Vec<f64> = row.iter().copied().cycle().take(6 * 7).collect();
        let mut t = Tape::new();
        let out = forward(&mut t, &p, &x).unwrap();
        let s = t.value(out.seg_logits);
        for r in s.chunks(3) {
            assert_eq!(r, &s[..3]);
        }
    }

    #[test]
    fn non_finite_input_is_reported_with_layer() {
        let p = GpfnParams::<f64>::init(small_config(2), 3).unwrap();
        let mut x = input(6, 2);
        x[3] = f64::INFINITY;
        let mut t = Tape::new();
        match forward(&mut t, &p, &x) {
            Err(NnError::NonFinite { layer }) => assert_eq!(layer, "edge1"),
            other => panic!("expected a non-finite fault, got {other:?}"),
        }
    }

    /// Loop-based edge convolution: explicit edge features, per-edge MLP, max.
    fn naive_edge_conv(x: &[f64], width: usize, k: usize, layers: &[(Vec<f64>, Vec<f64>)]) -> Vec<f64> {
        let n = x.len() / width;
        let g = knn_graph(x, width, k).unwrap();
        let e = edge_features(x, width, &g).unwrap();
        let out_w = layers.last().unwrap().1.len();
        let mut out = vec![f64::NEG_INFINITY; n * out_w];
        for i in 0..n {
            for j in 0..k {
                let mut h: Vec<f64> = e[(i * k + j) * 2 * width..(i * k + j + 1) * 2 * width].to_vec();
                for (w, b) in layers {
                    let fo = b.len();
                    let fi = h.len();
                    let mut z = b.clone();
                    for o in 0..fo {
                        for q in 0..fi {
                            z[o] += h[q] * w[q * fo + o];
                        }
                        if z[o] <= 0.0 {
                            z[o] *= 0.2;
                        }
                    }
                    h = z;
                }
                for o in 0..out_w {
                    out[i * out_w + o] = out[i * out_w + o].max(h[o]);
                }
            }
        }
        out
    }

    #[test]
    fn edge_conv_matches_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(n, width, k) in &[(10usize, 3usize, 4usize), (7, 5, 1), (16, 2, 6)] {
            let x: Vec<f64> = (0..n * width).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let dims = [2 * width, 8, 5];
            let layers: Vec<(Vec<f64>, Vec<f64>)> = dims
                .windows(2)
                .map(|d| {
                    (
                        (0..d[0] * d[1]).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                        (0..d[1]).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                    )
                })
                .collect();
            let want = naive_edge_conv(&x, width, k, &layers);
            let mut t = Tape::new();
            let xv = t.constant(n, width, x.clone());
            let lv: Vec<(Var, Var)> = layers
                .iter()
                .map(|(w, b)| {
                    let wv = t.leaf(w.len() / b.len(), b.len(), w.clone(), true);
                    let bv = t.leaf(1, b.len(), b.clone(), true);
                    (wv, bv)
                })
                .collect();
            let out = edge_conv(&mut t, xv, &lv, k, 0.2, "edge").unwrap();
            for (a, b) in t.value(out).iter().zip(&want) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn head_split_equals_explicit_concatenation() {
        let p = GpfnParams::<f64>::init(small_config(3), 9).unwrap();
        let x = input(9, 4);
        let mut t = Tape::new();
        let out = forward(&mut t, &p, &x).unwrap();
        // recompute the segmentation head from an explicit [P g1 g2] matrix
        let (n, _) = t.shape(out.seg_logits);
        let g = t.concat_cols(&[out.g1, out.g2]);
        let idx = p.names.iter().position(|s| s == "seg.0.w").unwrap();
        let w = out.params[idx];
        let b = out.params[idx + 1];
        let pw = p.config.point_width();
        let gw = t.shape(g).1;
        let mut explicit = Vec::new();
        let points_val = t.value(out.points).to_vec();
        for i in 0..n {
            explicit.extend_from_slice(&points_val[i * pw..(i + 1) * pw]);
            explicit.extend_from_slice(t.value(g));
        }
        let r = t.constant(n, pw + gw, explicit);
        let z = t.matmul(r, w);
        let z = t.add_row(z, b);
        let z = t.leaky_relu(z, 0.2);
        let idx1 = idx + 2;
        let z = t.matmul(z, out.params[idx1]);
        let z = t.add_row(z, out.params[idx1 + 1]);
        let z = t.leaky_relu(z, 0.2);
        let z = t.matmul(z, out.params[idx1 + 2]);
        let z = t.add_row(z, out.params[idx1 + 3]);
        for (a, b) in t.value(z).iter().zip(t.value(out.seg_logits)) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
