//! Landmark and appearance files, pair manifests, the synthetic kinship
//! generator, and fold assignment.
//!
//! File formats (all text formats are UTF-8, `#` starts a comment line):
//!
//! * Landmarks: header `m=<count>`, then one `x,y` line per landmark.
//! * Binary landmarks: magic `AISCLMK1`, `u32` little-endian count, then
//!   `2·m` little-endian `f64` values in row-major order.
//! * Appearance vectors: header `d=<count>`, then one real per line.
//! * Pair manifest: CSV with header
//!   `shape_a,shape_b,appearance_a,appearance_b,label,relation,fold,family`;
//!   `-` marks an absent optional field; labels are `kin` / `non-kin`.
//!
//! Paths inside a manifest are relative to the directory holding it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::appearance::AppearanceVector;
use crate::error::{Error, Result};
use crate::grassmann::LandmarkShape;
use crate::kernels::Matrix;

pub const MANIFEST_FILE: &str = "manifest.csv";
const MANIFEST_HEADER: &str = "shape_a,shape_b,appearance_a,appearance_b,label,relation,fold,family";
const BINARY_MAGIC: &[u8; 8] = b"AISCLMK1";

const TEMPLATE_68: &str = include_str!("../assets/template68.txt");

/// The bundled stylised 68-point face used as the synthetic template.
pub fn default_template() -> LandmarkShape {
    parse_landmarks(TEMPLATE_68, Path::new("<template68>")).expect("bundled template is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    NonKin,
    Kin,
}

impl Label {
    pub fn class_index(self) -> usize {
        match self {
            Label::NonKin => 0,
            Label::Kin => 1,
        }
    }

    pub fn from_bool(kin: bool) -> Self {
        if kin {
            Label::Kin
        } else {
            Label::NonKin
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Kin => "kin",
            Label::NonKin => "non-kin",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "kin" | "1" => Ok(Label::Kin),
            "non-kin" | "nonkin" | "0" => Ok(Label::NonKin),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    FatherSon,
    FatherDaughter,
    MotherSon,
    MotherDaughter,
    Synthetic,
}

impl Relation {
    pub fn tag(self) -> &'static str {
        match self {
            Relation::FatherSon => "F-S",
            Relation::FatherDaughter => "F-D",
            Relation::MotherSon => "M-S",
            Relation::MotherDaughter => "M-D",
            Relation::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Relation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "F-S" => Ok(Relation::FatherSon),
            "F-D" => Ok(Relation::FatherDaughter),
            "M-S" => Ok(Relation::MotherSon),
            "M-D" => Ok(Relation::MotherDaughter),
            "synthetic" => Ok(Relation::Synthetic),
            other => Err(format!("unknown relation tag {other:?}")),
        }
    }
}

/// One verification pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub shape_a: LandmarkShape,
    pub shape_b: LandmarkShape,
    pub appearance: Option<(AppearanceVector, AppearanceVector)>,
    pub label: Label,
    pub relation: Option<Relation>,
    pub fold: Option<usize>,
    /// Pairs sharing a family id are kept in the same fold.
    pub family: Option<u64>,
}

impl PairSample {
    pub fn new(
        shape_a: LandmarkShape,
        shape_b: LandmarkShape,
        appearance: Option<(AppearanceVector, AppearanceVector)>,
        label: Label,
    ) -> Result<Self> {
        if shape_a.landmark_count() != shape_b.landmark_count() {
            return Err(Error::Shape(format!(
                "pair shapes have {} and {} landmarks",
                shape_a.landmark_count(),
                shape_b.landmark_count()
            )));
        }
        if let Some((a, b)) = &appearance {
            if a.dim() != b.dim() {
                return Err(Error::Shape(format!(
                    "pair appearances have dimensions {} and {}",
                    a.dim(),
                    b.dim()
                )));
            }
        }
        Ok(PairSample {
            shape_a,
            shape_b,
            appearance,
            label,
            relation: None,
            fold: None,
            family: None,
        })
    }
}

// ---------------------------------------------------------------------------
// Landmark and appearance files

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_header(line: Option<(usize, &str)>, key: &str, path: &Path) -> Result<usize> {
    let (no, line) = line.ok_or_else(|| Error::format(path, 1, format!("missing `{key}=` header")))?;
    let value = line
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| Error::format(path, no, format!("expected `{key}=<count>` header")))?;
    value
        .trim()
        .parse()
        .map_err(|_| Error::format(path, no, format!("invalid count {:?}", value.trim())))
}

/// Content lines with 1-based line numbers, skipping blanks and `#` comments.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_real(s: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::format(path, line, format!("invalid number {:?}", s.trim())))?;
    if !v.is_finite() {
        return Err(Error::format(path, line, "non-finite value"));
    }
    Ok(v)
}

/// Parses the text landmark format; `path` is only used in error messages.
pub fn parse_landmarks(text: &str, path: &Path) -> Result<LandmarkShape> {
    let mut lines = content_lines(text);
    let m = parse_header(lines.next(), "m", path)?;
    let mut data = Vec::with_capacity(2 * m);
    let mut last_line = 1;
    for (no, line) in lines {
        let mut parts = line.split(',');
        let (Some(x), Some(y), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::format(path, no, "expected `x,y`"));
        };
        data.push(parse_real(x, path, no)?);
        data.push(parse_real(y, path, no)?);
        last_line = no;
    }
    if data.len() != 2 * m {
        return Err(Error::format(
            path,
            last_line,
            format!("header declares {m} landmarks but {} were read", data.len() / 2),
        ));
    }
    if m < 3 {
        return Err(Error::Shape(format!("{}: need at least 3 landmarks, got {m}", path.display())));
    }
    LandmarkShape::new(Matrix::from_vec(m, 2, data)?)
}

/// Reads a landmark file, dispatching on the binary magic.
pub fn load_landmarks(path: impl AsRef<Path>) -> Result<LandmarkShape> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(BINARY_MAGIC) {
        return decode_binary_landmarks(&bytes, path);
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::format(path, 1, "file is not UTF-8 text"))?;
    parse_landmarks(&text, path)
}

/// Text form; values use the shortest representation that round-trips.
pub fn format_landmarks(shape: &LandmarkShape) -> String {
    let pts = shape.points();
    let mut out = format!("m={}\n", pts.rows());
    for r in 0..pts.rows() {
        out.push_str(&format!("{:?},{:?}\n", pts[(r, 0)], pts[(r, 1)]));
    }
    out
}

pub fn save_landmarks(shape: &LandmarkShape, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_landmarks(shape)).map_err(|e| Error::io(path, e))
}

pub fn encode_binary_landmarks(shape: &LandmarkShape) -> Vec<u8> {
    let pts = shape.points();
    let mut out = Vec::with_capacity(12 + 16 * pts.rows());
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(pts.rows() as u32).to_le_bytes());
    for v in pts.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_binary_landmarks(bytes: &[u8], path: &Path) -> Result<LandmarkShape> {
    let body = &bytes[BINARY_MAGIC.len()..];
    if body.len() < 4 {
        return Err(Error::format(path, 1, "truncated binary header"));
    }
    let m = u32::from_le_bytes(body[..4].try_into().expect("4 bytes")) as usize;
    let payload = &body[4..];
    if payload.len() != 16 * m {
        return Err(Error::format(
            path,
            1,
            format!("binary payload holds {} bytes, expected {}", payload.len(), 16 * m),
        ));
    }
    if m < 3 {
        return Err(Error::Shape(format!("{}: need at least 3 landmarks, got {m}", path.display())));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    LandmarkShape::new(Matrix::from_vec(m, 2, data)?)
}

pub fn save_landmarks_binary(shape: &LandmarkShape, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_binary_landmarks(shape)).map_err(|e| Error::io(path, e))
}

pub fn parse_appearance(text: &str, path: &Path) -> Result<AppearanceVector> {
    let mut lines = content_lines(text);
    let d = parse_header(lines.next(), "d", path)?;
    let mut values = Vec::with_capacity(d);
    let mut last_line = 1;
    for (no, line) in lines {
        values.push(parse_real(line, path, no)?);
        last_line = no;
    }
    if values.len() != d {
        return Err(Error::format(
            path,
            last_line,
            format!("header declares {d} values but {} were read", values.len()),
        ));
    }
    AppearanceVector::new(values)
}

pub fn load_appearance(path: impl AsRef<Path>) -> Result<AppearanceVector> {
    let path = path.as_ref();
    parse_appearance(&read_text(path)?, path)
}

pub fn format_appearance(v: &AppearanceVector) -> String {
    let mut out = format!("d={}\n", v.dim());
    for x in v.values() {
        out.push_str(&format!("{x:?}\n"));
    }
    out
}

pub fn save_appearance(v: &AppearanceVector, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_appearance(v)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Pair manifests

/// One manifest row, with paths as written in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub shape_a: PathBuf,
    pub shape_b: PathBuf,
    pub appearance: Option<(PathBuf, PathBuf)>,
    pub label: Label,
    pub relation: Option<Relation>,
    pub fold: Option<usize>,
    pub family: Option<u64>,
}

fn optional(field: &str) -> Option<&str> {
    match field.trim() {
        "" | "-" => None,
        s => Some(s),
    }
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestRecord>> {
    let mut lines = content_lines(text);
    match lines.next() {
        Some((_, h)) if h == MANIFEST_HEADER => {}
        Some((no, _)) => {
            return Err(Error::format(path, no, format!("expected header `{MANIFEST_HEADER}`")))
        }
        None => return Err(Error::format(path, 1, "empty manifest")),
    }
    let mut records = Vec::new();
    for (no, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::format(path, no, format!("expected 8 fields, found {}", fields.len())));
        }
        let req = |i: usize, name: &str| {
            optional(fields[i])
                .map(PathBuf::from)
                .ok_or_else(|| Error::format(path, no, format!("missing {name}")))
        };
        let appearance = match (optional(fields[2]), optional(fields[3])) {
            (Some(a), Some(b)) => Some((PathBuf::from(a), PathBuf::from(b))),
            (None, None) => None,
            _ => return Err(Error::format(path, no, "appearance paths must be given in pairs")),
        };
        let label = fields[4].trim().parse().map_err(|e: String| Error::format(path, no, e))?;
        let relation = optional(fields[5])
            .map(|s| s.parse().map_err(|e: String| Error::format(path, no, e)))
            .transpose()?;
        let fold = optional(fields[6])
            .map(|s| s.parse().map_err(|_| Error::format(path, no, format!("invalid fold {s:?}"))))
            .transpose()?;
        let family = optional(fields[7])
            .map(|s| s.parse().map_err(|_| Error::format(path, no, format!("invalid family {s:?}"))))
            .transpose()?;
        records.push(ManifestRecord {
            shape_a: req(0, "shape_a")?,
            shape_b: req(1, "shape_b")?,
            appearance,
            label,
            relation,
            fold,
            family,
        });
    }
    Ok(records)
}

pub fn format_manifest(records: &[ManifestRecord]) -> String {
    let dash = |o: Option<String>| o.unwrap_or_else(|| "-".into());
    let mut out = format!("{MANIFEST_HEADER}\n");
    for r in records {
        let (aa, ab) = match &r.appearance {
            Some((a, b)) => (a.display().to_string(), b.display().to_string()),
            None => ("-".into(), "-".into()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.shape_a.display(),
            r.shape_b.display(),
            aa,
            ab,
            r.label,
            dash(r.relation.map(|x| x.to_string())),
            dash(r.fold.map(|x| x.to_string())),
            dash(r.family.map(|x| x.to_string())),
        ));
    }
    out
}

/// Loads `<root>/manifest.csv` and every file it references.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<PairSample>> {
    let root = root.as_ref();
    let manifest_path = root.join(MANIFEST_FILE);
    let records = parse_manifest(&read_text(&manifest_path)?, &manifest_path)?;
    let mut samples = Vec::with_capacity(records.len());
    for r in records {
        let appearance = match &r.appearance {
            Some((a, b)) => Some((load_appearance(root.join(a))?, load_appearance(root.join(b))?)),
            None => None,
        };
        let mut s = PairSample::new(
            load_landmarks(root.join(&r.shape_a))?,
            load_landmarks(root.join(&r.shape_b))?,
            appearance,
            r.label,
        )?;
        s.relation = r.relation;
        s.fold = r.fold;
        s.family = r.family;
        samples.push(s);
    }
    if samples.is_empty() {
        return Err(Error::Data(format!("{} lists no pairs", manifest_path.display())));
    }
    Ok(samples)
}

/// Writes samples under `root` (`shapes/`, `appearance/`, `manifest.csv`).
pub fn save_dataset(samples: &[PairSample], root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    for sub in ["shapes", "appearance"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let sa = PathBuf::from(format!("shapes/{i:05}_a.txt"));
        let sb = PathBuf::from(format!("shapes/{i:05}_b.txt"));
        save_landmarks(&s.shape_a, root.join(&sa))?;
        save_landmarks(&s.shape_b, root.join(&sb))?;
        let appearance = match &s.appearance {
            Some((a, b)) => {
                let pa = PathBuf::from(format!("appearance/{i:05}_a.txt"));
                let pb = PathBuf::from(format!("appearance/{i:05}_b.txt"));
                save_appearance(a, root.join(&pa))?;
                save_appearance(b, root.join(&pb))?;
                Some((pa, pb))
            }
            None => None,
        };
        records.push(ManifestRecord {
            shape_a: sa,
            shape_b: sb,
            appearance,
            label: s.label,
            relation: s.relation,
            fold: s.fold,
            family: s.family,
        });
    }
    let path = root.join(MANIFEST_FILE);
    fs::write(&path, format_manifest(&records)).map_err(|e| Error::io(&path, e))
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Parameters of the synthetic kinship generator.
///
/// Each family has a parent `template + σ_f·N(0, I)`, a child
/// `parent + σ_c·N(0, I)`, and an unrelated person drawn like a fresh parent
/// plus child noise. The family contributes one kin pair (parent, child) and
/// one non-kin pair (parent, unrelated). Every shape is then passed through
/// an independent random affine map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub family_count: usize,
    /// Landmark template; the bundled 68-point face when absent.
    #[serde(skip)]
    pub template: Option<LandmarkShape>,
    pub family_deformation_scale: f64,
    pub child_noise_scale: f64,
    /// Maximum rotation in radians.
    pub rotation_max: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub shear_max: f64,
    /// Maximum translation per axis; applied only when `centering` is set.
    pub translation_max: f64,
    pub centering: bool,
    pub appearance_dim: usize,
    pub appearance_heritability: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            family_count: 400,
            template: None,
            family_deformation_scale: 0.06,
            child_noise_scale: 0.04,
            rotation_max: 0.5,
            scale_min: 0.5,
            scale_max: 2.0,
            shear_max: 0.3,
            translation_max: 50.0,
            centering: true,
            appearance_dim: 32,
            appearance_heritability: 0.5,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.family_count == 0 {
            return bad("family_count must be positive".into());
        }
        if !(self.child_noise_scale >= 0.0 && self.child_noise_scale < self.family_deformation_scale) {
            return bad(format!(
                "need 0 ≤ child_noise_scale < family_deformation_scale, got {} and {}",
                self.child_noise_scale, self.family_deformation_scale
            ));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return bad(format!("invalid scale range [{}, {}]", self.scale_min, self.scale_max));
        }
        for (name, v) in [
            ("rotation_max", self.rotation_max),
            ("shear_max", self.shear_max),
            ("translation_max", self.translation_max),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if self.appearance_dim == 0 {
            return bad("appearance_dim must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.appearance_heritability) {
            return bad(format!(
                "appearance_heritability must lie in [0, 1], got {}",
                self.appearance_heritability
            ));
        }
        Ok(())
    }

    /// Whether shapes are left exactly as deformed (no affine nuisance at all).
    fn affine_disabled(&self) -> bool {
        self.rotation_max == 0.0
            && self.shear_max == 0.0
            && self.scale_min == 1.0
            && self.scale_max == 1.0
            && (self.translation_max == 0.0 || !self.centering)
    }
}

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize, sigma: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("finite gaussian samples")
}

fn gaussian_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Random `x ↦ x·A + t` with `A = R(θ)·diag(sx, sy)·[[1, h], [0, 1]]`.
fn random_affine(rng: &mut impl Rng, cfg: &SynthConfig, points: &Matrix) -> Matrix {
    let uniform = |rng: &mut dyn rand::RngCore, lo: f64, hi: f64| {
        if lo == hi {
            lo
        } else {
            rng.gen_range(lo..=hi)
        }
    };
    let theta = uniform(rng, -cfg.rotation_max, cfg.rotation_max);
    let sx = uniform(rng, cfg.scale_min, cfg.scale_max);
    let sy = uniform(rng, cfg.scale_min, cfg.scale_max);
    let h = uniform(rng, -cfg.shear_max, cfg.shear_max);
    let (tx, ty) = if cfg.centering {
        (
            uniform(rng, -cfg.translation_max, cfg.translation_max),
            uniform(rng, -cfg.translation_max, cfg.translation_max),
        )
    } else {
        (0.0, 0.0)
    };
    let (c, s) = (theta.cos(), theta.sin());
    let rot = Matrix::from_rows(&[[c, s], [-s, c]]).expect("finite");
    let stretch = Matrix::from_diag(&[sx, sy]);
    let shear = Matrix::from_rows(&[[1.0, h], [0.0, 1.0]]).expect("finite");
    let a = rot.matmul(&stretch).and_then(|m| m.matmul(&shear)).expect("2x2");
    let mut out = points.matmul(&a).expect("m×2 · 2×2");
    for r in 0..out.rows() {
        out[(r, 0)] += tx;
        out[(r, 1)] += ty;
    }
    out
}

/// Generates `2 · family_count` balanced pairs (one kin, one non-kin per family).
///
/// Pairs are tagged with their family id and `Relation::Synthetic`; folds are
/// left unassigned.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<PairSample>> {
    config.validate()?;
    let template = config.template.clone().unwrap_or_else(default_template);
    let base = template.points();
    let m = base.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let affine_off = config.affine_disabled();
    let rho = config.appearance_heritability;
    let resid = (1.0 - rho * rho).sqrt();
    let d = config.appearance_dim;

    let person = |rng: &mut ChaCha8Rng, raw: &Matrix| -> Result<LandmarkShape> {
        let pts = if affine_off {
            raw.clone()
        } else {
            random_affine(rng, config, raw)
        };
        LandmarkShape::new(pts)
    };

    let mut samples = Vec::with_capacity(2 * config.family_count);
    for family in 0..config.family_count as u64 {
        let parent_raw = base.add(&gaussian_matrix(&mut rng, m, 2, config.family_deformation_scale))?;
        let child_raw = parent_raw.add(&gaussian_matrix(&mut rng, m, 2, config.child_noise_scale))?;
        let other_raw = base
            .add(&gaussian_matrix(&mut rng, m, 2, config.family_deformation_scale))?
            .add(&gaussian_matrix(&mut rng, m, 2, config.child_noise_scale))?;

        let parent = person(&mut rng, &parent_raw)?;
        let child = person(&mut rng, &child_raw)?;
        let other = person(&mut rng, &other_raw)?;

        let parent_app = gaussian_vec(&mut rng, d);
        let noise = gaussian_vec(&mut rng, d);
        let child_app: Vec<f64> = parent_app.iter().zip(&noise).map(|(p, n)| rho * p + resid * n).collect();
        let other_app = gaussian_vec(&mut rng, d);

        let parent_app = AppearanceVector::new(parent_app)?;
        for (partner, partner_app, label) in [
            (child, child_app, Label::Kin),
            (other, other_app, Label::NonKin),
        ] {
            let mut s = PairSample::new(
                parent.clone(),
                partner,
                Some((parent_app.clone(), AppearanceVector::new(partner_app)?)),
                label,
            )?;
            s.relation = Some(Relation::Synthetic);
            s.family = Some(family);
            samples.push(s);
        }
    }
    Ok(samples)
}

// ---------------------------------------------------------------------------
// Folds

/// Assigns every sample to one of `k` folds.
///
/// Samples sharing a family id form one group and never straddle folds.
/// Ungrouped samples are dealt class by class in round-robin order, which
/// keeps fold sizes within one and per-fold class counts within one. Groups
/// are placed greedily on the fold with fewest samples (then fewest kin), so
/// balance holds at group granularity.
pub fn assign_folds(samples: &mut [PairSample], k: usize, seed: u64) -> Result<()> {
    if k < 2 {
        return Err(Error::Data(format!("need at least 2 folds, got {k}")));
    }
    if samples.len() < k {
        return Err(Error::Data(format!("{} samples cannot fill {k} folds", samples.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut families: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    let mut singles = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        match s.family {
            Some(f) => families.entry(f).or_default().push(i),
            None => singles.push(i),
        }
    }
    if families.len() + singles.len() < k {
        return Err(Error::Data(format!(
            "{} independent groups cannot fill {k} folds",
            families.len() + singles.len()
        )));
    }

    let mut sizes = vec![0usize; k];
    let mut kin = vec![0usize; k];
    let mut groups: Vec<Vec<usize>> = families.into_values().collect();
    groups.shuffle(&mut rng);
    // Larger groups first; the sort is stable so equal sizes keep shuffled order.
    groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
    for group in groups {
        let group_kin = group.iter().filter(|&&i| samples[i].label == Label::Kin).count();
        let target = (0..k)
            .min_by_key(|&f| (sizes[f], if group_kin > 0 { kin[f] } else { 0 }, f))
            .expect("k ≥ 2");
        for &i in &group {
            samples[i].fold = Some(target);
        }
        sizes[target] += group.len();
        kin[target] += group_kin;
    }

    let (mut kin_singles, mut non_kin_singles): (Vec<usize>, Vec<usize>) =
        singles.into_iter().partition(|&i| samples[i].label == Label::Kin);
    kin_singles.shuffle(&mut rng);
    non_kin_singles.shuffle(&mut rng);
    // Start dealing at the smallest fold so grouped and ungrouped data mix evenly.
    let start = (0..k).min_by_key(|&f| (sizes[f], f)).expect("k ≥ 2");
    for (offset, i) in kin_singles.into_iter().chain(non_kin_singles).enumerate() {
        let f = (start + offset) % k;
        samples[i].fold = Some(f);
        sizes[f] += 1;
    }
    Ok(())
}

/// Checks that every sample has a fold in `[0, k)` and each fold is non-empty.
pub fn validate_folds(samples: &[PairSample], k: usize) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (i, s) in samples.iter().enumerate() {
        match s.fold {
            Some(f) if f < k => {
                seen.insert(f);
            }
            Some(f) => return Err(Error::Config(format!("sample {i} has fold {f}, outside [0, {k})"))),
            None => return Err(Error::Config(format!("sample {i} has no fold assigned"))),
        }
    }
    if seen.len() != k {
        return Err(Error::Config(format!("only {} of {k} folds are populated", seen.len())));
    }
    Ok(())
}

/// Copy of `samples` with labels permuted by a seeded shuffle (null control).
pub fn shuffle_labels(samples: &[PairSample], seed: u64) -> Vec<PairSample> {
    let mut labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    samples
        .iter()
        .zip(labels)
        .map(|(s, label)| PairSample { label, ..s.clone() })
        .collect()
}
