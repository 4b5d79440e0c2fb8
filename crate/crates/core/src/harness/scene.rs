//! Procedural rooms: an axis-aligned box room with boxes and cylinders standing
//! on the floor, sampled into a labeled, colored point cloud.
//!
//! Spec file format (one statement per line, `#` starts a comment):
//!
//! ```text
//! room = 6 5 2.8
//! density = 60
//! noise = 0.06
//! seed = 7
//! box class=3 x=2 y=1.5 yaw=0.3 sx=1.0 sy=0.8 sz=0.9
//! cylinder class=3 x=4 y=3 r=0.3 h=1.2
//! ```
//!
//! The room spans `[0, X] × [0, Y] × [0, Z]` with `z` up. Object `x`, `y` give
//! the footprint center on the floor.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ClassCatalog, PointCloud, MAX_CLASSES};

pub const FLOOR: u8 = 0;
pub const WALL: u8 = 1;
pub const CEILING: u8 = 2;
/// First class id available to objects.
pub const FIRST_OBJECT_CLASS: u8 = 3;

/// Class names of the four-class benchmark.
pub fn default_catalog() -> ClassCatalog {
    ClassCatalog::new(
        ["floor", "wall", "ceiling", "furniture"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    )
    .expect("static names are unique")
}

/// Base color per class. Walls and ceilings look alike, so color alone does
/// not separate them; furniture has its own blue-gray.
pub fn class_color(class: u8) -> [f64; 3] {
    match class {
        FLOOR => [0.52, 0.42, 0.33],
        WALL => [0.80, 0.78, 0.73],
        CEILING => [0.85, 0.83, 0.79],
        3 => [0.30, 0.38, 0.52],
        c => {
            let h = (c as u32).wrapping_mul(2_654_435_761);
            [
                0.3 + 0.5 * ((h >> 8) & 0xff) as f64 / 255.0,
                0.3 + 0.5 * ((h >> 16) & 0xff) as f64 / 255.0,
                0.3 + 0.5 * ((h >> 24) & 0xff) as f64 / 255.0,
            ]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Extents along the box's own x, y (rotated by `yaw`) and z.
    Box {
        size: [f64; 3],
        yaw: f64,
    },
    Cylinder {
        radius: f64,
        height: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub class: u8,
    /// Footprint center on the floor.
    pub center: [f64; 2],
}

impl ObjectSpec {
    pub fn height(&self) -> f64 {
        match self.shape {
            Shape::Box { size, .. } => size[2],
            Shape::Cylinder { height, .. } => height,
        }
    }

    /// Axis-aligned footprint `[xmin, ymin, xmax, ymax]`.
    pub fn footprint(&self) -> [f64; 4] {
        let [x, y] = self.center;
        let (hx, hy) = match self.shape {
            Shape::Box { size, yaw } => {
                let (s, c) = yaw.sin_cos();
                let hx = 0.5 * (size[0] * c.abs() + size[1] * s.abs());
                let hy = 0.5 * (size[0] * s.abs() + size[1] * c.abs());
                (hx, hy)
            }
            Shape::Cylinder { radius, .. } => (radius, radius),
        };
        [x - hx, y - hy, x + hx, y + hy]
    }

    /// Whether a floor point lies under the object.
    pub fn covers(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        match self.shape {
            Shape::Box { size, yaw } => {
                let (s, c) = yaw.sin_cos();
                let lx = c * dx + s * dy;
                let ly = -s * dx + c * dy;
                lx.abs() <= 0.5 * size[0] && ly.abs() <= 0.5 * size[1]
            }
            Shape::Cylinder { radius, .. } => dx * dx + dy * dy <= radius * radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Room extents along x, y, z in meters.
    pub room: [f64; 3],
    pub objects: Vec<ObjectSpec>,
    /// Points per square meter of surface.
    pub density: f64,
    /// Half-width of the uniform per-channel color noise.
    pub color_noise: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn empty_room(room: [f64; 3], density: f64, seed: u64) -> Self {
        SceneSpec {
            room,
            objects: Vec::new(),
            density,
            color_noise: 0.06,
            seed,
        }
    }

    /// Checks extents, density, bounds and pairwise footprint overlap.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Data(format!("scene spec: {m}")));
        if self.room.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return bad(format!("room extents must be positive, got {:?}", self.room));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return bad(format!("density must be positive, got {}", self.density));
        }
        if !(0.0..=0.5).contains(&self.color_noise) {
            return bad(format!("noise must lie in [0, 0.5], got {}", self.color_noise));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.class < FIRST_OBJECT_CLASS || o.class as usize >= MAX_CLASSES {
                return bad(format!("object {i}: class {} is not an object class", o.class));
            }
            let dims_ok = match o.shape {
                Shape::Box { size, yaw } => size.iter().all(|&v| v > 0.0 && v.is_finite()) && yaw.is_finite(),
                Shape::Cylinder { radius, height } => {
                    radius > 0.0 && height > 0.0 && radius.is_finite() && height.is_finite()
                }
            };
            if !dims_ok || !o.center.iter().all(|v| v.is_finite()) {
                return bad(format!("object {i}: non-positive or non-finite size"));
            }
            let [x0, y0, x1, y1] = o.footprint();
            if x0 < 0.0 || y0 < 0.0 || x1 > self.room[0] || y1 > self.room[1] || o.height() > self.room[2] {
                return bad(format!("object {i} leaves the room"));
            }
        }
        for i in 0..self.objects.len() {
            for j in i + 1..self.objects.len() {
                let a = self.objects[i].footprint();
                let b = self.objects[j].footprint();
                if a[0] < b[2] && b[0] < a[2] && a[1] < b[3] && b[1] < a[3] {
                    return bad(format!("objects {i} and {j} overlap"));
                }
            }
        }
        Ok(())
    }

    /// Number of classes the scene can produce (room classes plus objects).
    pub fn class_count(&self) -> usize {
        let top = self.objects.iter().map(|o| o.class).max().unwrap_or(CEILING);
        top as usize + 1
    }

    /// A random furnished room. Objects are placed by rejection so they never
    /// overlap and keep clear of the walls.
    pub fn random(seed: u64, n_objects: usize, density: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let room = [
            rng.gen_range(5.0..7.0),
            rng.gen_range(4.0..6.0),
            rng.gen_range(2.6..3.0),
        ];
        let mut spec = SceneSpec::empty_room(room, density, seed);
        let mut tries = 0;
        while spec.objects.len() < n_objects && tries < 1000 {
            tries += 1;
            let shape = if rng.gen_bool(0.65) {
                Shape::Box {
                    size: [
                        rng.gen_range(0.5..1.4),
                        rng.gen_range(0.4..1.0),
                        rng.gen_range(0.4..1.6),
                    ],
                    yaw: rng.gen_range(0.0..PI),
                }
            } else {
                Shape::Cylinder {
                    radius: rng.gen_range(0.2..0.45),
                    height: rng.gen_range(0.6..1.8),
                }
            };
            let center = [rng.gen_range(0.3..room[0] - 0.3), rng.gen_range(0.3..room[1] - 0.3)];
            let o = ObjectSpec {
                shape,
                class: FIRST_OBJECT_CLASS,
                center,
            };
            let [x0, y0, x1, y1] = o.footprint();
            if x0 < 0.1 || y0 < 0.1 || x1 > room[0] - 0.1 || y1 > room[1] - 0.1 {
                continue;
            }
            // keep a walkway between objects
            let clear = spec.objects.iter().all(|p| {
                let b = p.footprint();
                x0 - 0.4 >= b[2] || b[0] >= x1 + 0.4 || y0 - 0.4 >= b[3] || b[1] >= y1 + 0.4
            });
            if clear {
                spec.objects.push(o);
            }
        }
        spec
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut spec = SceneSpec::empty_room([0.0; 3], 0.0, 0);
        let mut have_room = false;
        let mut have_density = false;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| Error::Data(format!("{origin}:{}: {m}", no + 1));
            if let Some((key, value)) = line.split_once('=').filter(|(k, _)| !k.trim().contains(' ')) {
                let key = key.trim();
                let value = value.trim();
                let nums = || -> Result<Vec<f64>> {
                    value
                        .split_whitespace()
                        .map(|t| t.parse::<f64>().map_err(|_| err(&format!("bad number {t:?}"))))
                        .collect()
                };
                match key {
                    "room" => {
                        let v = nums()?;
                        if v.len() != 3 {
                            return Err(err("room needs three extents"));
                        }
                        spec.room = [v[0], v[1], v[2]];
                        have_room = true;
                    }
                    "density" | "noise" => {
                        let v = nums()?;
                        if v.len() != 1 {
                            return Err(err(&format!("{key} needs one value")));
                        }
                        if key == "density" {
                            spec.density = v[0];
                            have_density = true;
                        } else {
                            spec.color_noise = v[0];
                        }
                    }
                    "seed" => spec.seed = value.parse().map_err(|_| err("bad seed"))?,
                    _ => return Err(err(&format!("unknown key {key:?}"))),
                }
                continue;
            }
            let mut tokens = line.split_whitespace();
            let kind = tokens.next().unwrap_or_default();
            let mut fields = std::collections::HashMap::new();
            for t in tokens {
                let (k, v) = t
                    .split_once('=')
                    .ok_or_else(|| err(&format!("expected key=value, got {t:?}")))?;
                let v: f64 = v.parse().map_err(|_| err(&format!("bad number in {t:?}")))?;
                fields.insert(k.to_string(), v);
            }
            let get = |k: &str| fields.get(k).copied().ok_or_else(|| err(&format!("{kind} needs {k}")));
            let class = get("class")?;
            if class.fract() != 0.0 || !(0.0..255.0).contains(&class) {
                return Err(err("class must be an integer id"));
            }
            let shape = match kind {
                "box" => Shape::Box {
                    size: [get("sx")?, get("sy")?, get("sz")?],
                    yaw: fields.get("yaw").copied().unwrap_or(0.0),
                },
                "cylinder" => Shape::Cylinder {
                    radius: get("r")?,
                    height: get("h")?,
                },
                other => return Err(err(&format!("unknown statement {other:?}"))),
            };
            spec.objects.push(ObjectSpec {
                shape,
                class: class as u8,
                center: [get("x")?, get("y")?],
            });
        }
        if !have_room || !have_density {
            return Err(Error::Data(format!("{origin}: spec needs room and density")));
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn format(&self) -> String {
        let mut s = format!(
            "room = {:?} {:?} {:?}\ndensity = {:?}\nnoise = {:?}\nseed = {}\n",
            self.room[0], self.room[1], self.room[2], self.density, self.color_noise, self.seed
        );
        for o in &self.objects {
            match o.shape {
                Shape::Box { size, yaw } => s.push_str(&format!(
                    "box class={} x={:?} y={:?} yaw={:?} sx={:?} sy={:?} sz={:?}\n",
                    o.class, o.center[0], o.center[1], yaw, size[0], size[1], size[2]
                )),
                Shape::Cylinder { radius, height } => s.push_str(&format!(
                    "cylinder class={} x={:?} y={:?} r={:?} h={:?}\n",
                    o.class, o.center[0], o.center[1], radius, height
                )),
            }
        }
        s
    }
}

struct Sampler<'a> {
    rng: ChaCha8Rng,
    density: f64,
    noise: f64,
    positions: Vec<[f64; 3]>,
    colors: Vec<[f64; 3]>,
    labels: Vec<u8>,
    objects: &'a [ObjectSpec],
}

impl Sampler<'_> {
    fn count(&mut self, area: f64) -> usize {
        // stochastic rounding keeps the expected density exact on small patches
        let x = area * self.density;
        x.floor() as usize + usize::from(self.rng.gen::<f64>() < x.fract())
    }

    fn push(&mut self, p: [f64; 3], class: u8) {
        let base = class_color(class);
        let mut c = [0.0; 3];
        for (dst, b) in c.iter_mut().zip(base) {
            let jitter = if self.noise > 0.0 {
                self.rng.gen_range(-self.noise..=self.noise)
            } else {
                0.0
            };
            *dst = (b + jitter).clamp(0.0, 1.0);
        }
        self.positions.push(p);
        self.colors.push(c);
        self.labels.push(class);
    }

    /// Uniform samples on the parallelogram `origin + s·a + t·b`.
    fn patch(&mut self, origin: [f64; 3], a: [f64; 3], b: [f64; 3], class: u8, skip_covered: bool) {
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let area = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        let n = self.count(area);
        for _ in 0..n {
            let s: f64 = self.rng.gen();
            let t: f64 = self.rng.gen();
            let p = [
                origin[0] + s * a[0] + t * b[0],
                origin[1] + s * a[1] + t * b[1],
                origin[2] + s * a[2] + t * b[2],
            ];
            if skip_covered && self.objects.iter().any(|o| o.covers(p[0], p[1])) {
                continue;
            }
            self.push(p, class);
        }
    }

    fn object(&mut self, o: &ObjectSpec) {
        let [cx, cy] = o.center;
        match o.shape {
            Shape::Box { size, yaw } => {
                let (s, c) = yaw.sin_cos();
                let ax = [c * size[0], s * size[0], 0.0];
                let ay = [-s * size[1], c * size[1], 0.0];
                let up = [0.0, 0.0, size[2]];
                let corner = [cx - 0.5 * (ax[0] + ay[0]), cy - 0.5 * (ax[1] + ay[1]), 0.0];
                let add = |p: [f64; 3], q: [f64; 3]| [p[0] + q[0], p[1] + q[1], p[2] + q[2]];
                self.patch(add(corner, up), ax, ay, o.class, false);
                self.patch(corner, ax, up, o.class, false);
                self.patch(corner, ay, up, o.class, false);
                self.patch(add(corner, ay), ax, up, o.class, false);
                self.patch(add(corner, ax), ay, up, o.class, false);
            }
            Shape::Cylinder { radius, height } => {
                let n_side = self.count(2.0 * PI * radius * height);
                for _ in 0..n_side {
                    let a = self.rng.gen_range(0.0..2.0 * PI);
                    let z = self.rng.gen_range(0.0..height);
                    self.push([cx + radius * a.cos(), cy + radius * a.sin(), z], o.class);
                }
                let n_top = self.count(PI * radius * radius);
                for _ in 0..n_top {
                    let a = self.rng.gen_range(0.0..2.0 * PI);
                    let r = radius * self.rng.gen::<f64>().sqrt();
                    self.push([cx + r * a.cos(), cy + r * a.sin(), height], o.class);
                }
            }
        }
    }
}

/// Samples the room surfaces and objects into a labeled cloud with normalized
/// room coordinates. The point order is shuffled, deterministically in `seed`.
pub fn generate_scene(spec: &SceneSpec) -> Result<PointCloud> {
    spec.validate()?;
    let [sx, sy, sz] = spec.room;
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        density: spec.density,
        noise: spec.color_noise,
        positions: Vec::new(),
        colors: Vec::new(),
        labels: Vec::new(),
        objects: &spec.objects,
    };
    s.patch([0.0, 0.0, 0.0], [sx, 0.0, 0.0], [0.0, sy, 0.0], FLOOR, true);
    s.patch([0.0, 0.0, sz], [sx, 0.0, 0.0], [0.0, sy, 0.0], CEILING, false);
    s.patch([0.0, 0.0, 0.0], [sx, 0.0, 0.0], [0.0, 0.0, sz], WALL, false);
    s.patch([0.0, sy, 0.0], [sx, 0.0, 0.0], [0.0, 0.0, sz], WALL, false);
    s.patch([0.0, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, sz], WALL, false);
    s.patch([sx, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, sz], WALL, false);
    for o in spec.objects.iter() {
        s.object(o);
    }
    if s.positions.is_empty() {
        return Err(Error::Data("scene produced no points; raise the density".into()));
    }
    let mut order: Vec<usize> = (0..s.positions.len()).collect();
    order.shuffle(&mut s.rng);
    let positions: Vec<[f64; 3]> = order.iter().map(|&i| s.positions[i]).collect();
    let colors = order.iter().map(|&i| s.colors[i]).collect();
    let labels = order.iter().map(|&i| s.labels[i]).collect();
    let uvw = positions
        .iter()
        .map(|p| {
            [
                (p[0] / sx).clamp(0.0, 1.0),
                (p[1] / sy).clamp(0.0, 1.0),
                (p[2] / sz).clamp(0.0, 1.0),
            ]
        })
        .collect();
    Ok(PointCloud::new(positions, colors)?
        .with_norm_coords(uvw)?
        .with_labels(labels)?)
}
