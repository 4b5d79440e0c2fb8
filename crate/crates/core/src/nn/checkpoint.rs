//! Text checkpoints: a versioned header, the network configuration, then every
//! parameter as `param <name> <dims...>` followed by its values, one matrix row
//! per line, written as 64-bit decimals so that reloading is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::nn::{GpfnConfig, GpfnParams, NnError, Tensor};
use crate::real::Real;

pub const CHECKPOINT_MAGIC: &str = "weakseg-checkpoint v1";

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub fn format_checkpoint<T: Real>(params: &GpfnParams<T>) -> String {
    let c = &params.config;
    let mut s = String::with_capacity(params.count() * 24);
    let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
    let blocks: Vec<String> = c.edge_blocks.iter().map(|b| join(b)).collect();
    let _ = writeln!(
        s,
        "config input_dim={} classes={} k={} edge={} g1_block={} global={} heads={} slope={:?}",
        c.input_dim,
        c.classes,
        c.k,
        blocks.join("/"),
        c.g1_block,
        c.global_width,
        join(&c.head_widths),
        c.slope
    );
    for (name, t) in params.names.iter().zip(&params.tensors) {
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        let _ = writeln!(s, "param {name} {}", dims.join(" "));
        let (_, cols) = t.matrix_dims();
        for row in t.data().chunks(cols) {
            let mut first = true;
            for v in row {
                if !first {
                    s.push(' ');
                }
                first = false;
                let _ = write!(s, "{:?}", v.as_f64());
            }
            s.push('\n');
        }
    }
    s
}

pub fn parse_checkpoint<T: Real>(text: &str, origin: &str) -> Result<GpfnParams<T>, NnError> {
    let err = |line: usize, msg: String| NnError::Checkpoint {
        path: origin.to_string(),
        msg: format!("line {line}: {msg}"),
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, l)) if l == CHECKPOINT_MAGIC => {}
        _ => return Err(err(1, format!("missing '{CHECKPOINT_MAGIC}' header"))),
    }
    let (cl, cfg_line) = lines.next().ok_or_else(|| err(2, "missing config line".into()))?;
    let mut toks = cfg_line.split_whitespace();
    if toks.next() != Some("config") {
        return Err(err(cl, "expected config line".into()));
    }
    let list = |v: &str| -> Result<Vec<usize>, NnError> {
        v.split(',')
            .map(|x| x.parse().map_err(|_| err(cl, format!("bad width list {v:?}"))))
            .collect()
    };
    let num = |v: &str| -> Result<usize, NnError> { v.parse().map_err(|_| err(cl, format!("bad number {v:?}"))) };
    let mut cfg = GpfnConfig::new(0, 0, 0);
    for t in toks {
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| err(cl, format!("expected key=value, got {t:?}")))?;
        match k {
            "input_dim" => cfg.input_dim = num(v)?,
            "classes" => cfg.classes = num(v)?,
            "k" => cfg.k = num(v)?,
            "edge" => cfg.edge_blocks = v.split('/').map(list).collect::<Result<_, _>>()?,
            "g1_block" => cfg.g1_block = num(v)?,
            "global" => cfg.global_width = num(v)?,
            "heads" => cfg.head_widths = list(v)?,
            "slope" => cfg.slope = v.parse().map_err(|_| err(cl, format!("bad slope {v:?}")))?,
            _ => return Err(err(cl, format!("unknown config key {k:?}"))),
        }
    }
    cfg.validate()?;

    let mut names = Vec::new();
    let mut tensors = Vec::new();
    while let Some((pl, header)) = lines.next() {
        if header.is_empty() {
            continue;
        }
        let mut toks = header.split_whitespace();
        if toks.next() != Some("param") {
            return Err(err(pl, format!("expected 'param', found {header:?}")));
        }
        let name = toks
            .next()
            .ok_or_else(|| err(pl, "parameter without a name".into()))?
            .to_string();
        let shape: Vec<usize> = toks
            .map(|d| d.parse().map_err(|_| err(pl, format!("bad dimension {d:?}"))))
            .collect::<Result<_, _>>()?;
        let total: usize = shape.iter().product();
        let cols = *shape.last().ok_or_else(|| err(pl, "parameter without shape".into()))?;
        if cols == 0 {
            return Err(err(pl, "zero-width parameter".into()));
        }
        let mut data = Vec::with_capacity(total);
        while data.len() < total {
            let (vl, row) = lines
                .next()
                .ok_or_else(|| err(pl, format!("{name}: truncated values")))?;
            let before = data.len();
            for v in row.split_whitespace() {
                let x: f64 = v.parse().map_err(|_| err(vl, format!("bad value {v:?}")))?;
                data.push(T::from_f64(x));
            }
            if data.len() - before != cols {
                return Err(err(vl, format!("{name}: expected {cols} values per row")));
            }
        }
        names.push(name);
        tensors.push(Tensor::new(shape, data)?);
    }
    GpfnParams::from_parts(cfg, names, tensors)
}

pub fn save_checkpoint<T: Real>(params: &GpfnParams<T>, path: &Path) -> Result<(), NnError> {
    std::fs::write(path, format_checkpoint(params)).map_err(|e| NnError::Checkpoint {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<GpfnParams<T>, NnError> {
    let text = std::fs::read_to_string(path).map_err(|e| NnError::Checkpoint {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    parse_checkpoint(&text, &path.display().to_string())
}
