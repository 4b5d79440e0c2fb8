//! Training configuration and its `key = value` file format.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::GpfnConfig;
use crate::render_loss::{ProjectionMode, SegLossKind};

/// Share of each scene's views used for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fraction {
    All,
    Half,
    Quarter,
    Sixth,
    Twelfth,
    Twentieth,
}

impl Fraction {
    pub const ALL: [Fraction; 6] = [
        Fraction::All,
        Fraction::Half,
        Fraction::Quarter,
        Fraction::Sixth,
        Fraction::Twelfth,
        Fraction::Twentieth,
    ];

    pub fn denominator(self) -> usize {
        match self {
            Fraction::All => 1,
            Fraction::Half => 2,
            Fraction::Quarter => 4,
            Fraction::Sixth => 6,
            Fraction::Twelfth => 12,
            Fraction::Twentieth => 20,
        }
    }

    /// Views kept out of `n`: `round(n / d)`, at least one when `n > 0`.
    pub fn keep(self, n: usize) -> usize {
        if n == 0 {
            return 0;
        }
        let d = self.denominator();
        ((n + d / 2) / d).max(1)
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        let d = match s {
            "1" | "all" => 1,
            _ => s.strip_prefix("1/")?.trim().parse().ok()?,
        };
        Fraction::ALL.into_iter().find(|f| f.denominator() == d)
    }
}

impl std::fmt::Display for Fraction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.denominator() {
            1 => write!(f, "1"),
            d => write!(f, "1/{d}"),
        }
    }
}

/// Per-point input channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputEncoding {
    /// Position relative to the camera, color.
    XyzRgb,
    /// As above plus normalized room coordinates.
    XyzRgbUvw,
}

impl InputEncoding {
    pub fn dim(self) -> usize {
        match self {
            InputEncoding::XyzRgb => 6,
            InputEncoding::XyzRgbUvw => 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// The learning rate halves every this many optimizer steps.
    pub lr_halving_interval: usize,
    pub lambda: f64,
    pub k: usize,
    pub n_points: usize,
    pub projection: ProjectionMode,
    pub obsnet: bool,
    pub loss: SegLossKind,
    pub seed: u64,
    pub fraction: Fraction,
    pub input: InputEncoding,
    /// Width of the high-level global feature.
    pub global_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 4,
            lr: 1e-3,
            lr_halving_interval: 2000,
            lambda: 1.0,
            k: 20,
            n_points: 1024,
            projection: ProjectionMode::Perspective,
            obsnet: true,
            loss: SegLossKind::Bce,
            seed: 0,
            fraction: Fraction::All,
            input: InputEncoding::XyzRgb,
            global_width: 1024,
        }
    }
}

fn on_off(s: &str) -> Option<bool> {
    match s {
        "on" | "true" | "1" | "yes" => Some(true),
        "off" | "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.lr_halving_interval == 0 {
            return bad("epochs, batch_size and lr_halving_interval must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a finite non-negative number");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be a finite non-negative number");
        }
        if self.k == 0 || self.n_points <= self.k {
            return bad("need 0 < k < n_points");
        }
        if self.global_width == 0 {
            return bad("global_width must be positive");
        }
        Ok(())
    }

    pub fn network(&self, classes: usize) -> GpfnConfig {
        let mut c = GpfnConfig::new(self.input.dim(), classes, self.k);
        c.global_width = self.global_width;
        c
    }

    /// Learning rate in effect at optimizer step `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        self.lr * 0.5f64.powi((step / self.lr_halving_interval) as i32)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("bad value {value:?} for {key}"));
        let v = value.trim();
        match key {
            "epochs" => self.epochs = v.parse().map_err(|_| bad())?,
            "batch_size" => self.batch_size = v.parse().map_err(|_| bad())?,
            "lr" => self.lr = v.parse().map_err(|_| bad())?,
            "lr_halving_interval" => self.lr_halving_interval = v.parse().map_err(|_| bad())?,
            "lambda" => self.lambda = v.parse().map_err(|_| bad())?,
            "k" => self.k = v.parse().map_err(|_| bad())?,
            "n_points" => self.n_points = v.parse().map_err(|_| bad())?,
            "seed" => self.seed = v.parse().map_err(|_| bad())?,
            "global_width" => self.global_width = v.parse().map_err(|_| bad())?,
            "projection" => {
                self.projection = match v {
                    "direct" => ProjectionMode::Direct,
                    "perspective" => ProjectionMode::Perspective,
                    _ => return Err(bad()),
                }
            }
            "obsnet" => self.obsnet = on_off(v).ok_or_else(bad)?,
            "loss" => {
                self.loss = match v {
                    "bce" => SegLossKind::Bce,
                    "ce" => SegLossKind::Ce,
                    _ => return Err(bad()),
                }
            }
            "fraction" => self.fraction = Fraction::parse(v).ok_or_else(bad)?,
            "input" => {
                self.input = match v {
                    "6" | "xyzrgb" => InputEncoding::XyzRgb,
                    "9" | "xyzrgbuvw" => InputEncoding::XyzRgbUvw,
                    _ => return Err(bad()),
                }
            }
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Starts from the defaults and applies every `key = value` line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            c.set(k.trim(), v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", no + 1)),
                other => other,
            })?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn format(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "lr = {:?}", self.lr);
        let _ = writeln!(s, "lr_halving_interval = {}", self.lr_halving_interval);
        let _ = writeln!(s, "lambda = {:?}", self.lambda);
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "n_points = {}", self.n_points);
        let projection = match self.projection {
            ProjectionMode::Direct => "direct",
            ProjectionMode::Perspective => "perspective",
        };
        let _ = writeln!(s, "projection = {projection}");
        let _ = writeln!(s, "obsnet = {}", if self.obsnet { "on" } else { "off" });
        let loss = match self.loss {
            SegLossKind::Bce => "bce",
            SegLossKind::Ce => "ce",
        };
        let _ = writeln!(s, "loss = {loss}");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "fraction = {}", self.fraction);
        let _ = writeln!(s, "input = {}", self.input.dim());
        let _ = writeln!(s, "global_width = {}", self.global_width);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let c = TrainConfig::default();
        assert_eq!((c.n_points, c.batch_size, c.epochs, c.k), (1024, 4, 100, 20));
        assert_eq!(TrainConfig::parse(&c.format()).unwrap(), c);
        let mut d = c.clone();
        d.projection = ProjectionMode::Direct;
        d.obsnet = false;
        d.loss = SegLossKind::Ce;
        d.fraction = Fraction::Twelfth;
        d.input = InputEncoding::XyzRgbUvw;
        d.lr = 0.0;
        assert_eq!(TrainConfig::parse(&d.format()).unwrap(), d);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrainConfig::parse("epochs = 0").is_err());
        assert!(TrainConfig::parse("fraction = 1/3").is_err());
        assert!(TrainConfig::parse("colour = red").is_err());
        assert!(TrainConfig::parse("k = 30\nn_points = 30").is_err());
        assert!(TrainConfig::parse("lr").is_err());
        assert!(TrainConfig::parse("lr = -1").unwrap_err().to_string().contains("lr"));
    }

    #[test]
    fn fractions() {
        assert_eq!(Fraction::parse("1/6"), Some(Fraction::Sixth));
        assert_eq!(Fraction::Half.keep(20), 10);
        assert_eq!(Fraction::Sixth.keep(20), 3);
        assert_eq!(Fraction::Twentieth.keep(20), 1);
        assert_eq!(Fraction::Twentieth.keep(3), 1);
        for f in Fraction::ALL {
            assert_eq!(Fraction::parse(&f.to_string()), Some(f));
        }
    }

    #[test]
    fn learning_rate_halves() {
        let c = TrainConfig {
            lr: 0.008,
            lr_halving_interval: 10,
            ..TrainConfig::default()
        };
        assert_eq!(c.lr_at(0), 0.008);
        assert_eq!(c.lr_at(9), 0.008);
        assert_eq!(c.lr_at(10), 0.004);
        assert_eq!(c.lr_at(35), 0.001);
    }
}
