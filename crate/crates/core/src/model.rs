//! Domain records shared by every stage of the pipeline, plus their text formats.
//!
//! Three plain-text formats are supported:
//!
//! * point clouds: `pc cols=<schema> n=<N>` followed by `N` rows of decimals,
//!   where the schema is one of `xyzrgb`, `xyzrgbl`, `xyzrgbuvw`, `xyzrgbuvwl`,
//!   optionally suffixed with `v` for a visibility column;
//! * viewpoints: a `cam` line, nine row-major rotation values, three translation
//!   values and `fx fy cx cy w h`;
//! * label maps: `lm w=<W> h=<H> ignore=255` followed by `H` rows of `W` ids.
//!
//! Reals are written with Rust's shortest round-trip formatting so that a
//! load/save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

/// Sentinel for pixels without a label.
pub const IGNORE_ID: u8 = 255;
/// Largest supported class count (ids must stay below [`IGNORE_ID`]).
pub const MAX_CLASSES: usize = 255;

const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("invalid {what}: {msg}")]
    Invalid { what: &'static str, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ModelError {
    fn invalid(what: &'static str, msg: impl Into<String>) -> Self {
        ModelError::Invalid { what, msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// A labeled (or unlabeled) set of colored 3D points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<[f64; 3]>,
    colors: Vec<[f64; 3]>,
    norm_coords: Option<Vec<[f64; 3]>>,
    labels: Option<Vec<u8>>,
    visibility: Option<Vec<bool>>,
}

fn in_unit(v: &[f64; 3]) -> bool {
    v.iter().all(|c| (0.0..=1.0).contains(c))
}

impl PointCloud {
    pub fn new(positions: Vec<[f64; 3]>, colors: Vec<[f64; 3]>) -> Result<Self> {
        if positions.is_empty() {
            return Err(ModelError::invalid("point cloud", "no points"));
        }
        if positions.len() != colors.len() {
            return Err(ModelError::invalid(
                "point cloud",
                format!("{} positions but {} colors", positions.len(), colors.len()),
            ));
        }
        if positions.iter().flatten().any(|c| !c.is_finite()) {
            return Err(ModelError::invalid("point cloud", "non-finite position"));
        }
        if let Some(i) = colors.iter().position(|c| !in_unit(c)) {
            return Err(ModelError::invalid(
                "point cloud",
                format!("color of point {i} outside [0,1]"),
            ));
        }
        Ok(PointCloud {
            positions,
            colors,
            norm_coords: None,
            labels: None,
            visibility: None,
        })
    }

    pub fn with_norm_coords(mut self, uvw: Vec<[f64; 3]>) -> Result<Self> {
        if uvw.len() != self.len() {
            return Err(ModelError::invalid("point cloud", "norm_coords length mismatch"));
        }
        if let Some(i) = uvw.iter().position(|c| !in_unit(c)) {
            return Err(ModelError::invalid(
                "point cloud",
                format!("normalized coordinate of point {i} outside [0,1]"),
            ));
        }
        self.norm_coords = Some(uvw);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(ModelError::invalid("point cloud", "labels length mismatch"));
        }
        if labels.contains(&IGNORE_ID) {
            return Err(ModelError::invalid("point cloud", "label equals the ignore id"));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_visibility(mut self, visible: Vec<bool>) -> Result<Self> {
        if visible.len() != self.len() {
            return Err(ModelError::invalid("point cloud", "visibility length mismatch"));
        }
        self.visibility = Some(visible);
        Ok(self)
    }

    pub fn without_visibility(mut self) -> Self {
        self.visibility = None;
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    /// Always false for a constructed cloud; kept for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    pub fn norm_coords(&self) -> Option<&[[f64; 3]]> {
        self.norm_coords.as_deref()
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn visibility(&self) -> Option<&[bool]> {
        self.visibility.as_deref()
    }

    /// Builds a cloud from the given rows (repeats allowed), carrying every attribute.
    ///
    /// Returns `None` when `indices` is empty.
    pub fn select(&self, indices: &[usize]) -> Option<PointCloud> {
        if indices.is_empty() {
            return None;
        }
        fn pick<T: Copy>(src: &[T], idx: &[usize]) -> Vec<T> {
            idx.iter().map(|&i| src[i]).collect()
        }
        Some(PointCloud {
            positions: pick(&self.positions, indices),
            colors: pick(&self.colors, indices),
            norm_coords: self.norm_coords.as_ref().map(|v| pick(v, indices)),
            labels: self.labels.as_ref().map(|v| pick(v, indices)),
            visibility: self.visibility.as_ref().map(|v| pick(v, indices)),
        })
    }

    /// Largest class id + 1 over the stored labels, if any.
    pub fn label_span(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max().map(|&m| m as usize + 1))
    }

    fn schema(&self) -> String {
        let mut s = String::from("xyzrgb");
        if self.norm_coords.is_some() {
            s.push_str("uvw");
        }
        if self.labels.is_some() {
            s.push('l');
        }
        if self.visibility.is_some() {
            s.push('v');
        }
        s
    }
}

/// Converts 8-bit RGB to the normalized [0,1] representation (per channel, divide by 255).
pub fn colors_from_rgb8(rgb: &[[u8; 3]]) -> Vec<[f64; 3]> {
    rgb.iter()
        .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
        .collect()
}

/// Camera pose plus pinhole intrinsics. The pose maps world to camera: `p_c = R p_w + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Viewpoint {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Viewpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| rotation[k][i] * rotation[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if !((dot - want).abs() <= ORTHONORMAL_TOL) {
                    return Err(ModelError::invalid("viewpoint", "rotation is not orthonormal"));
                }
            }
        }
        if !((det3(&rotation) - 1.0).abs() <= ORTHONORMAL_TOL) {
            return Err(ModelError::invalid("viewpoint", "rotation determinant is not +1"));
        }
        if translation.iter().any(|t| !t.is_finite()) {
            return Err(ModelError::invalid("viewpoint", "non-finite translation"));
        }
        if width == 0 || height == 0 {
            return Err(ModelError::invalid("viewpoint", "zero image size"));
        }
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(ModelError::invalid("viewpoint", "focal lengths must be positive"));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(ModelError::invalid(
                "viewpoint",
                "principal point must lie strictly inside the image",
            ));
        }
        Ok(Viewpoint {
            rotation,
            translation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    pub fn translation(&self) -> &[f64; 3] {
        &self.translation
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        let mut c = [0.0; 3];
        for (j, cj) in c.iter_mut().enumerate() {
            *cj = -(r[0][j] * t[0] + r[1][j] * t[1] + r[2][j] * t[2]);
        }
        c
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Per-pixel class ids, row-major, with [`IGNORE_ID`] for unlabeled pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap2D {
    width: usize,
    height: usize,
    grid: Vec<u8>,
}

impl LabelMap2D {
    pub fn new(width: usize, height: usize, grid: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ModelError::invalid("label map", "zero size"));
        }
        if grid.len() != width * height {
            return Err(ModelError::invalid(
                "label map",
                format!("{} entries for a {width}x{height} grid", grid.len()),
            ));
        }
        Ok(LabelMap2D { width, height, grid })
    }

    /// A map with every pixel unlabeled.
    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![IGNORE_ID; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn ignore_id(&self) -> u8 {
        IGNORE_ID
    }

    pub fn get(&self, u: usize, v: usize) -> u8 {
        self.grid[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, id: u8) {
        self.grid[v * self.width + u] = id;
    }

    /// Row-major pixel ids.
    pub fn as_slice(&self) -> &[u8] {
        &self.grid
    }

    /// Checks every labeled pixel against the class count.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self
            .grid
            .iter()
            .position(|&id| id != IGNORE_ID && id as usize >= num_classes)
        {
            Some(p) => Err(ModelError::invalid(
                "label map",
                format!(
                    "pixel ({}, {}) has id {} but there are {num_classes} classes",
                    p % self.width,
                    p / self.width,
                    self.grid[p]
                ),
            )),
            None => Ok(()),
        }
    }

    pub fn labeled_pixels(&self) -> usize {
        self.grid.iter().filter(|&&id| id != IGNORE_ID).count()
    }
}

/// Ordered, unique class names; the id of a class is its position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCatalog {
    names: Vec<String>,
}

impl ClassCatalog {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() || names.len() > MAX_CLASSES {
            return Err(ModelError::invalid(
                "class catalog",
                format!("need 1..={MAX_CLASSES} classes, got {}", names.len()),
            ));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.chars().any(char::is_whitespace) {
                return Err(ModelError::invalid("class catalog", format!("bad name {n:?}")));
            }
            if names[..i].contains(n) {
                return Err(ModelError::invalid("class catalog", format!("duplicate name {n}")));
            }
        }
        Ok(ClassCatalog { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id_of(&self, name: &str) -> Option<u8> {
        self.names.iter().position(|n| n == name).map(|i| i as u8)
    }
}

/// One training example: a truncated cloud, its viewpoint and the 2D ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub cloud: PointCloud,
    pub view: Viewpoint,
    pub gt2d: LabelMap2D,
}

impl Sample {
    pub fn new(cloud: PointCloud, view: Viewpoint, gt2d: LabelMap2D) -> Result<Self> {
        if gt2d.width() != view.width || gt2d.height() != view.height {
            return Err(ModelError::invalid(
                "sample",
                format!(
                    "label map is {}x{} but the view is {}x{}",
                    gt2d.width(),
                    gt2d.height(),
                    view.width,
                    view.height
                ),
            ));
        }
        Ok(Sample { cloud, view, gt2d })
    }
}

/// One-hot encoding, `N×C` row-major.
pub fn one_hot(labels: &[u8], num_classes: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; labels.len() * num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l as usize >= num_classes {
            return Err(ModelError::invalid(
                "label",
                format!("id {l} at row {i} not below {num_classes}"),
            ));
        }
        out[i * num_classes + l as usize] = 1.0;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// text I/O

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Schema {
    uvw: bool,
    labels: bool,
    vis: bool,
}

impl Schema {
    fn parse(s: &str) -> Option<Schema> {
        let rest = s.strip_prefix("xyzrgb")?;
        let (uvw, rest) = match rest.strip_prefix("uvw") {
            Some(r) => (true, r),
            None => (false, rest),
        };
        let (labels, rest) = match rest.strip_prefix('l') {
            Some(r) => (true, r),
            None => (false, rest),
        };
        let vis = match rest {
            "" => false,
            "v" => true,
            _ => return None,
        };
        Some(Schema { uvw, labels, vis })
    }

    fn columns(&self) -> usize {
        6 + 3 * self.uvw as usize + self.labels as usize + self.vis as usize
    }
}

fn parse_header_fields<'a>(
    tokens: impl Iterator<Item = &'a str>,
) -> std::result::Result<Vec<(&'a str, &'a str)>, String> {
    tokens
        .map(|t| {
            t.split_once('=')
                .ok_or_else(|| format!("expected key=value, got {t:?}"))
        })
        .collect()
}

/// Reads a point cloud. A file without a `pc` header is read as plain `xyzrgb` rows.
pub fn load_point_cloud(path: &Path) -> Result<PointCloud> {
    let text = read_text(path)?;
    parse_point_cloud(&text, &path.display().to_string())
}

pub fn parse_point_cloud(text: &str, origin: &str) -> Result<PointCloud> {
    let err = |line: usize, msg: String| ModelError::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .peekable();

    let mut schema = Schema {
        uvw: false,
        labels: false,
        vis: false,
    };
    let mut declared_n = None;
    if let Some(&(lineno, first)) = lines.peek() {
        let mut toks = first.split_whitespace();
        if toks.next() == Some("pc") {
            lines.next();
            let mut have_cols = false;
            for (k, v) in parse_header_fields(toks).map_err(|m| err(lineno, m))? {
                match k {
                    "cols" => {
                        schema = Schema::parse(v).ok_or_else(|| err(lineno, format!("unknown column schema {v:?}")))?;
                        have_cols = true;
                    }
                    "n" => {
                        declared_n = Some(
                            v.parse::<usize>()
                                .map_err(|_| err(lineno, format!("bad point count {v:?}")))?,
                        )
                    }
                    _ => return Err(err(lineno, format!("unknown header key {k:?}"))),
                }
            }
            if !have_cols {
                return Err(err(lineno, "header lacks cols=".into()));
            }
        }
    }

    let ncols = schema.columns();
    let mut pos = Vec::new();
    let mut col = Vec::new();
    let mut uvw = Vec::new();
    let mut lab = Vec::new();
    let mut vis = Vec::new();
    let mut last_line = 1;
    for (lineno, line) in lines {
        last_line = lineno;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != ncols {
            return Err(err(lineno, format!("expected {ncols} columns, found {}", fields.len())));
        }
        let mut reals = [0.0f64; 9];
        let nreal = 6 + 3 * schema.uvw as usize;
        for (j, f) in fields[..nreal].iter().enumerate() {
            let x: f64 = f.parse().map_err(|_| err(lineno, format!("non-numeric field {f:?}")))?;
            if !x.is_finite() {
                return Err(err(lineno, format!("non-finite field {f:?}")));
            }
            reals[j] = x;
        }
        let c = [reals[3], reals[4], reals[5]];
        if !in_unit(&c) {
            return Err(err(lineno, "color component outside [0,1]".into()));
        }
        pos.push([reals[0], reals[1], reals[2]]);
        col.push(c);
        let mut next = nreal;
        if schema.uvw {
            let w = [reals[6], reals[7], reals[8]];
            if !in_unit(&w) {
                return Err(err(lineno, "normalized coordinate outside [0,1]".into()));
            }
            uvw.push(w);
        }
        if schema.labels {
            let l: u8 = fields[next]
                .parse()
                .ok()
                .filter(|&l| l != IGNORE_ID)
                .ok_or_else(|| err(lineno, format!("bad class id {:?}", fields[next])))?;
            lab.push(l);
            next += 1;
        }
        if schema.vis {
            let v = match fields[next] {
                "0" => false,
                "1" => true,
                f => return Err(err(lineno, format!("visibility must be 0 or 1, got {f:?}"))),
            };
            vis.push(v);
        }
    }
    if pos.is_empty() {
        return Err(err(last_line, "no points".into()));
    }
    if let Some(n) = declared_n {
        if n != pos.len() {
            return Err(err(
                last_line,
                format!("header declares {n} points, found {}", pos.len()),
            ));
        }
    }
    let mut cloud = PointCloud::new(pos, col)?;
    if schema.uvw {
        cloud = cloud.with_norm_coords(uvw)?;
    }
    if schema.labels {
        cloud = cloud.with_labels(lab)?;
    }
    if schema.vis {
        cloud = cloud.with_visibility(vis)?;
    }
    Ok(cloud)
}

pub fn format_point_cloud(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 64);
    let _ = writeln!(s, "pc cols={} n={}", cloud.schema(), cloud.len());
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        let c = cloud.colors[i];
        let _ = write!(s, "{:?} {:?} {:?} {:?} {:?} {:?}", p[0], p[1], p[2], c[0], c[1], c[2]);
        if let Some(uvw) = &cloud.norm_coords {
            let w = uvw[i];
            let _ = write!(s, " {:?} {:?} {:?}", w[0], w[1], w[2]);
        }
        if let Some(l) = &cloud.labels {
            let _ = write!(s, " {}", l[i]);
        }
        if let Some(v) = &cloud.visibility {
            let _ = write!(s, " {}", v[i] as u8);
        }
        s.push('\n');
    }
    s
}

pub fn save_point_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    write_text(path, &format_point_cloud(cloud))
}

pub fn load_viewpoint(path: &Path) -> Result<Viewpoint> {
    let text = read_text(path)?;
    let origin = path.display().to_string();
    let err = |line: usize, msg: String| ModelError::Parse {
        path: origin.clone(),
        line,
        msg,
    };
    let mut toks = text
        .lines()
        .enumerate()
        .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)));
    match toks.next() {
        Some((_, "cam")) => {}
        Some((l, t)) => return Err(err(l, format!("expected 'cam', found {t:?}"))),
        None => return Err(err(1, "empty file".into())),
    }
    let mut vals = [0.0f64; 16];
    let mut last = 1;
    for v in vals.iter_mut() {
        let (l, t) = toks.next().ok_or_else(|| err(last, "truncated camera record".into()))?;
        last = l;
        *v = t.parse().map_err(|_| err(l, format!("non-numeric field {t:?}")))?;
    }
    let mut dims = [0usize; 2];
    for d in dims.iter_mut() {
        let (l, t) = toks.next().ok_or_else(|| err(last, "truncated camera record".into()))?;
        last = l;
        *d = t.parse().map_err(|_| err(l, format!("bad image dimension {t:?}")))?;
    }
    if let Some((l, t)) = toks.next() {
        return Err(err(l, format!("trailing token {t:?}")));
    }
    let r = [
        [vals[0], vals[1], vals[2]],
        [vals[3], vals[4], vals[5]],
        [vals[6], vals[7], vals[8]],
    ];
    Viewpoint::new(
        r,
        [vals[9], vals[10], vals[11]],
        vals[12],
        vals[13],
        vals[14],
        vals[15],
        dims[0],
        dims[1],
    )
}

pub fn format_viewpoint(view: &Viewpoint) -> String {
    let mut s = String::from("cam\n");
    for row in &view.rotation {
        let _ = writeln!(s, "{:?} {:?} {:?}", row[0], row[1], row[2]);
    }
    let t = view.translation;
    let _ = writeln!(s, "{:?} {:?} {:?}", t[0], t[1], t[2]);
    let _ = writeln!(
        s,
        "{:?} {:?} {:?} {:?} {} {}",
        view.fx, view.fy, view.cx, view.cy, view.width, view.height
    );
    s
}

pub fn save_viewpoint(view: &Viewpoint, path: &Path) -> Result<()> {
    write_text(path, &format_viewpoint(view))
}

pub fn load_label_map(path: &Path) -> Result<LabelMap2D> {
    let text = read_text(path)?;
    parse_label_map(&text, &path.display().to_string())
}

pub fn parse_label_map(text: &str, origin: &str) -> Result<LabelMap2D> {
    let err = |line: usize, msg: String| ModelError::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hl, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some("lm") {
        return Err(err(hl, "expected 'lm' header".into()));
    }
    let (mut w, mut h) = (None, None);
    for (k, v) in parse_header_fields(toks).map_err(|m| err(hl, m))? {
        let n: usize = v.parse().map_err(|_| err(hl, format!("bad value {v:?}")))?;
        match k {
            "w" => w = Some(n),
            "h" => h = Some(n),
            "ignore" if n == IGNORE_ID as usize => {}
            "ignore" => return Err(err(hl, format!("ignore id must be {IGNORE_ID}"))),
            _ => return Err(err(hl, format!("unknown header key {k:?}"))),
        }
    }
    let (w, h) = match (w, h) {
        (Some(w), Some(h)) => (w, h),
        _ => return Err(err(hl, "header needs w= and h=".into())),
    };
    let mut grid = Vec::with_capacity(w * h);
    let mut rows = 0;
    for (l, line) in lines {
        let before = grid.len();
        for t in line.split_whitespace() {
            let id: u8 = t.parse().map_err(|_| err(l, format!("bad class id {t:?}")))?;
            grid.push(id);
        }
        if grid.len() - before != w {
            return Err(err(l, format!("expected {w} ids, found {}", grid.len() - before)));
        }
        rows += 1;
        if rows > h {
            return Err(err(l, format!("more than {h} rows")));
        }
    }
    if rows != h {
        return Err(err(hl, format!("expected {h} rows, found {rows}")));
    }
    LabelMap2D::new(w, h, grid)
}

pub fn format_label_map(map: &LabelMap2D) -> String {
    let mut s = String::with_capacity(map.grid.len() * 3 + 32);
    let _ = writeln!(s, "lm w={} h={} ignore={}", map.width, map.height, IGNORE_ID);
    for row in map.grid.chunks(map.width) {
        let mut first = true;
        for id in row {
            if !first {
                s.push(' ');
            }
            first = false;
            let _ = write!(s, "{id}");
        }
        s.push('\n');
    }
    s
}

/// Validates `map` against `num_classes`, then writes it.
pub fn save_label_map(map: &LabelMap2D, num_classes: usize, path: &Path) -> Result<()> {
    map.validate(num_classes)?;
    write_text(path, &format_label_map(map))
}

pub fn load_class_catalog(path: &Path) -> Result<ClassCatalog> {
    let text = read_text(path)?;
    ClassCatalog::new(
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
    )
}

pub fn save_class_catalog(catalog: &ClassCatalog, path: &Path) -> Result<()> {
    let mut s = catalog.names().join("\n");
    s.push('\n');
    write_text(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_headerless_row() {
        let c = parse_point_cloud("0 0 0 1 1 1\n", "mem").unwrap();
        assert_eq!(c.len(), 1);
        assert!(c.labels().is_none());
        assert_eq!(c.colors()[0], [1.0, 1.0, 1.0]);
    }

    #[test]
    fn header_with_labels() {
        let c = parse_point_cloud("pc cols=xyzrgbl\n0 0 0 0.5 0.5 0.5 2\n1 1 1 0 0 0 0\n", "mem").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.labels(), Some(&[2u8, 0][..]));
    }

    #[test]
    fn color_out_of_range_names_line() {
        let e = parse_point_cloud("pc cols=xyzrgb n=2\n0 0 0 0 0 0\n0 0 0 1.5 0 0\n", "mem").unwrap_err();
        match e {
            ModelError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_inputs() {
        assert!(parse_point_cloud("pc cols=xyz\n0 0 0\n", "m").is_err());
        assert!(parse_point_cloud("pc cols=xyzrgb n=2\n0 0 0 0 0 0\n", "m").is_err());
        assert!(parse_point_cloud("0 0 zero 0 0 0\n", "m").is_err());
        assert!(parse_point_cloud("pc cols=xyzrgbv\n0 0 0 0 0 0 2\n", "m").is_err());
        assert!(parse_point_cloud("", "m").is_err());
    }

    #[test]
    fn label_map_small_cases() {
        let m = LabelMap2D::new(1, 1, vec![0]).unwrap();
        let text = format_label_map(&m);
        assert_eq!(text.lines().nth(1), Some("0"));

        let m = LabelMap2D::new(2, 2, vec![0, 1, 2, IGNORE_ID]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.lm");
        save_label_map(&m, 3, &p).unwrap();
        assert_eq!(load_label_map(&p).unwrap(), m);

        assert!(save_label_map(&m, 2, &p).is_err());
    }

    #[test]
    fn one_hot_rows() {
        assert_eq!(one_hot(&[1], 3).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(one_hot(&[0, 2], 3).unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(one_hot(&[3], 3).is_err());
    }

    #[test]
    fn viewpoint_validation() {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Viewpoint::new(id, [0.0; 3], 10.0, 10.0, 5.0, 5.0, 10, 10).is_ok());
        assert!(Viewpoint::new(id, [0.0; 3], 10.0, 10.0, 10.0, 5.0, 10, 10).is_err());
        assert!(Viewpoint::new(id, [0.0; 3], -1.0, 10.0, 5.0, 5.0, 10, 10).is_err());
        let refl = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Viewpoint::new(refl, [0.0; 3], 10.0, 10.0, 5.0, 5.0, 10, 10).is_err());
    }

    #[test]
    fn catalog_rejects_duplicates() {
        assert!(ClassCatalog::new(vec!["a".into(), "a".into()]).is_err());
        let c = ClassCatalog::new(vec!["floor".into(), "wall".into()]).unwrap();
        assert_eq!(c.id_of("wall"), Some(1));
    }

    fn arb_cloud() -> impl Strategy<Value = PointCloud> {
        (1usize..20, any::<bool>(), any::<bool>(), any::<bool>()).prop_flat_map(|(n, uvw, lab, vis)| {
            (
                proptest::collection::vec(prop::array::uniform3(-1e3f64..1e3), n),
                proptest::collection::vec(prop::array::uniform3(0.0f64..=1.0), n),
                proptest::collection::vec(prop::array::uniform3(0.0f64..=1.0), n),
                proptest::collection::vec(0u8..40, n),
                proptest::collection::vec(any::<bool>(), n),
            )
                .prop_map(move |(p, c, w, l, v)| {
                    let mut cl = PointCloud::new(p, c).unwrap();
                    if uvw {
                        cl = cl.with_norm_coords(w).unwrap();
                    }
                    if lab {
                        cl = cl.with_labels(l).unwrap();
                    }
                    if vis {
                        cl = cl.with_visibility(v).unwrap();
                    }
                    cl
                })
        })
    }

    proptest! {
        #[test]
        fn point_cloud_text_round_trip(cloud in arb_cloud()) {
            let text = format_point_cloud(&cloud);
            let back = parse_point_cloud(&text, "mem").unwrap();
            prop_assert_eq!(&back, &cloud);
            prop_assert_eq!(format_point_cloud(&back), text);
        }

        #[test]
        fn label_map_text_round_trip(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
            let grid: Vec<u8> = (0..w * h)
                .map(|i| {
                    let x = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64)) >> 33;
                    if x % 5 == 0 { IGNORE_ID } else { (x % 7) as u8 }
                })
                .collect();
            let m = LabelMap2D::new(w, h, grid).unwrap();
            prop_assert_eq!(parse_label_map(&format_label_map(&m), "mem").unwrap(), m);
        }

        #[test]
        fn one_hot_rows_sum_to_one(labels in proptest::collection::vec(0u8..9, 1..30)) {
            let oh = one_hot(&labels, 9).unwrap();
            for (row, &l) in oh.chunks(9).zip(&labels) {
                prop_assert_eq!(row.iter().sum::<f64>(), 1.0);
                let arg = row.iter().position(|&x| x == 1.0).unwrap();
                prop_assert_eq!(arg, l as usize);
            }
        }
    }
}
