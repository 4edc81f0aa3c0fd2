//! Datasets, the synthetic shape corpus, style assignment and splits.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::editing::{apply_style, StyleFilter};
use crate::error::{Error, Result};
use crate::imgio::{load_image, save_image, to_grayscale, Image};

pub const MANIFEST: &str = "manifest.json";

/// Shape classes of the synthetic corpus, in label order.
pub const SHAPES: [&str; 8] = ["disk", "square", "triangle", "cross", "ring", "diamond", "ellipse", "bars"];

/// Additive noise of rendered images.
pub const SYNTH_NOISE_SIGMA: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    Directory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    /// Relative to the dataset root.
    pub path: PathBuf,
    pub label: usize,
    /// Style applied to this file, if it is a styled copy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<StyleFilter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    #[serde(skip)]
    pub root: PathBuf,
    pub provenance: Provenance,
    pub class_names: Vec<String>,
    pub entries: Vec<DatasetEntry>,
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes()];
        for e in &self.entries {
            if e.label < c.len() {
                c[e.label] += 1;
            }
        }
        c
    }

    /// At least 2 classes, 2 images per class, dense labels, unique ids.
    pub fn validate(&self) -> Result<()> {
        if self.n_classes() < 2 {
            return Err(Error::Data(format!("dataset needs >= 2 classes, has {}", self.n_classes())));
        }
        if let Some(e) = self.entries.iter().find(|e| e.label >= self.n_classes()) {
            return Err(Error::Data(format!("label {} of {} out of range", e.label, e.id)));
        }
        let counts = self.class_counts();
        if let Some((c, n)) = counts.iter().enumerate().find(|(_, &n)| n < 2) {
            return Err(Error::Data(format!("class {} has {n} images, need >= 2", self.class_names[c])));
        }
        let mut ids: Vec<&str> = self.entries.iter().map(|e| e.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Data("duplicate image ids".into()));
        }
        Ok(())
    }

    pub fn path_of(&self, e: &DatasetEntry) -> PathBuf {
        self.root.join(&e.path)
    }

    /// Loads every image as grayscale, in entry order.
    pub fn load_images(&self) -> Result<Vec<Image>> {
        self.entries
            .iter()
            .map(|e| {
                let img = load_image(self.path_of(e))?;
                Ok(if img.is_gray() { img } else { to_grayscale(&img) })
            })
            .collect()
    }

    pub fn save_manifest(&self) -> Result<()> {
        let path = self.root.join(MANIFEST);
        std::fs::write(&path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io_path(&path, e))
    }

    /// Reads `manifest.json`, or scans one subdirectory per class for
    /// `.pgm`/`.ppm` files when there is none.
    pub fn open(root: &Path) -> Result<Self> {
        let manifest = root.join(MANIFEST);
        let ds = if manifest.exists() {
            let s = std::fs::read_to_string(&manifest).map_err(|e| Error::io_path(&manifest, e))?;
            let mut ds: Dataset = serde_json::from_str(&s)?;
            ds.root = root.to_path_buf();
            ds
        } else {
            scan_directory(root)?
        };
        ds.validate()?;
        Ok(ds)
    }
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io_path(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io_path(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

fn scan_directory(root: &Path) -> Result<Dataset> {
    let mut class_names = Vec::new();
    let mut entries = Vec::new();
    for dir in sorted_dir(root)?.into_iter().filter(|p| p.is_dir()) {
        let label = class_names.len();
        let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        for f in sorted_dir(&dir)? {
            let ext = f.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
            if ext == "pgm" || ext == "ppm" {
                let stem = f.file_stem().unwrap_or_default().to_string_lossy();
                entries.push(DatasetEntry {
                    id: format!("{name}/{stem}"),
                    path: f.strip_prefix(root).unwrap_or(&f).to_path_buf(),
                    label,
                    style: None,
                });
            }
        }
        class_names.push(name);
    }
    Ok(Dataset {
        root: root.to_path_buf(),
        provenance: Provenance::Directory,
        class_names,
        entries,
    })
}

// ---------------------------------------------------------------------------
// Synthetic corpus

/// Geometry and tone of one rendered image.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderSpec {
    pub class: usize,
    pub size: usize,
    pub center: (f64, f64),
    pub radius: f64,
    pub rotation: f64,
    pub foreground: f64,
    /// Background `b0 + amp * t` with `t` in [0,1] along `bg_dir`.
    pub bg_base: f64,
    pub bg_amp: f64,
    pub bg_dir: f64,
    pub texture_amp: f64,
    pub texture_freq: f64,
    pub texture_dir: f64,
}

impl RenderSpec {
    pub fn random(class: usize, size: usize, rng: &mut ChaCha8Rng) -> Self {
        let s = size as f64;
        Self {
            class,
            size,
            center: (s / 2.0 + rng.gen_range(-0.12..0.12) * s, s / 2.0 + rng.gen_range(-0.12..0.12) * s),
            radius: rng.gen_range(0.22..0.34) * s,
            rotation: rng.gen_range(-0.35..0.35),
            foreground: rng.gen_range(0.7..0.9),
            bg_base: rng.gen_range(0.05..0.15),
            bg_amp: rng.gen_range(0.0..0.15),
            bg_dir: rng.gen_range(0.0..2.0 * PI),
            texture_amp: 0.04,
            texture_freq: rng.gen_range(0.1..0.25),
            texture_dir: rng.gen_range(0.0..PI),
        }
    }

    /// Shape membership of a point in shape-local coordinates.
    fn inside(&self, u: f64, v: f64) -> bool {
        let r2 = u * u + v * v;
        match self.class {
            0 => r2 <= 1.0,
            1 => u.abs().max(v.abs()) <= 0.85,
            2 => {
                // vertices (0,-1), (0.87,0.5), (-0.87,0.5)
                let h = 3f64.sqrt() / 2.0;
                v <= 0.5 && v >= -1.0 + (u.abs() / h) * 1.5
            }
            3 => (u.abs() <= 0.3 && v.abs() <= 1.0) || (v.abs() <= 0.3 && u.abs() <= 1.0),
            4 => (0.3..=1.0).contains(&r2),
            5 => u.abs() + v.abs() <= 1.0,
            6 => u * u + 4.0 * v * v <= 1.0,
            _ => u.abs() <= 0.9 && v.abs() <= 0.9 && ((v + 0.9) / 0.36).floor() as i64 % 2 == 0,
        }
    }

    /// Fraction of a pixel covered by the shape (3x3 supersampling).
    fn coverage(&self, x: usize, y: usize) -> f64 {
        let (c, s) = (self.rotation.cos(), self.rotation.sin());
        let mut hits = 0;
        for sy in 0..3 {
            for sx in 0..3 {
                let px = x as f64 + (sx as f64 + 0.5) / 3.0 - self.center.0;
                let py = y as f64 + (sy as f64 + 0.5) / 3.0 - self.center.1;
                let u = (c * px + s * py) / self.radius;
                let v = (-s * px + c * py) / self.radius;
                hits += self.inside(u, v) as usize;
            }
        }
        hits as f64 / 9.0
    }

    pub fn background(&self, x: usize, y: usize) -> f64 {
        let s = self.size as f64;
        let t = ((x as f64 / s - 0.5) * self.bg_dir.cos() + (y as f64 / s - 0.5) * self.bg_dir.sin()) / 2f64.sqrt() + 0.5;
        self.bg_base + self.bg_amp * t.clamp(0.0, 1.0)
    }

    pub fn foreground_at(&self, x: usize, y: usize) -> f64 {
        let phase = x as f64 * self.texture_dir.cos() + y as f64 * self.texture_dir.sin();
        self.foreground + self.texture_amp * (2.0 * PI * self.texture_freq * phase).sin()
    }

    /// Noise-free intensity of pixel `(x, y)`.
    pub fn clean(&self, x: usize, y: usize) -> f64 {
        let a = self.coverage(x, y);
        (1.0 - a) * self.background(x, y) + a * self.foreground_at(x, y)
    }
}

/// Box-Muller standard normal.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen::<f64>().max(1e-300);
    let v: f64 = rng.gen();
    (-2.0 * u.ln()).sqrt() * (2.0 * PI * v).cos()
}

/// Renders one image: shape, background gradient, texture, noise, then
/// 8-bit quantization so in-memory pixels equal the written PGM.
pub fn render(spec: &RenderSpec, rng: &mut ChaCha8Rng) -> Result<Image> {
    let n = spec.size;
    let mut data = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let v = (spec.clean(x, y) + SYNTH_NOISE_SIGMA * normal(rng)).clamp(0.0, 1.0);
            data.push((v * 255.0).round() / 255.0);
        }
    }
    Image::gray(n, n, data)
}

/// In-memory synthetic corpus: `(id, label, image)` in class-major order.
pub fn synth_images(classes: usize, per_class: usize, size: usize, seed: u64) -> Result<Vec<(String, usize, Image)>> {
    if !(2..=SHAPES.len()).contains(&classes) {
        return Err(Error::Parameter(format!("synthetic classes must be in [2, {}], got {classes}", SHAPES.len())));
    }
    if per_class < 2 {
        return Err(Error::Parameter("need at least 2 images per class".into()));
    }
    if size < 16 {
        return Err(Error::Parameter(format!("image size must be >= 16, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(classes * per_class);
    for (class, name) in SHAPES.iter().enumerate().take(classes) {
        for i in 0..per_class {
            let spec = RenderSpec::random(class, size, &mut rng);
            out.push((format!("{name}_{i:03}"), class, render(&spec, &mut rng)?));
        }
    }
    Ok(out)
}

/// Writes the synthetic corpus as PGM files plus a manifest.
pub fn synth_dataset(out: &Path, classes: usize, per_class: usize, size: usize, seed: u64) -> Result<Dataset> {
    let images = synth_images(classes, per_class, size, seed)?;
    let mut entries = Vec::with_capacity(images.len());
    for (id, label, img) in &images {
        let rel = PathBuf::from(SHAPES[*label]).join(format!("{id}.pgm"));
        let path = out.join(&rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io_path(dir, e))?;
        }
        save_image(img, &path, 255)?;
        entries.push(DatasetEntry { id: id.clone(), path: rel, label: *label, style: None });
    }
    let ds = Dataset {
        root: out.to_path_buf(),
        provenance: Provenance::Synthetic,
        class_names: SHAPES[..classes].iter().map(|s| s.to_string()).collect(),
        entries,
    };
    ds.save_manifest()?;
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Styles

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MixtureMode {
    #[serde(rename = "single-style")]
    Single,
    #[serde(rename = "pairwise-mix")]
    PairwiseMix,
    #[serde(rename = "all-mix")]
    AllMix,
}

impl std::str::FromStr for MixtureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single-style" | "single" => Ok(Self::Single),
            "pairwise-mix" | "pairwise" => Ok(Self::PairwiseMix),
            "all-mix" | "all" => Ok(Self::AllMix),
            _ => Err(Error::Parameter(format!("unknown mixture mode {s:?}"))),
        }
    }
}

/// Index into the style pool for every image.
pub fn assign_styles(n_images: usize, pool: &[StyleFilter], mode: MixtureMode, seed: u64) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::Parameter("style pool is empty".into()));
    }
    for s in pool {
        s.validate()?;
    }
    match mode {
        MixtureMode::Single => {
            if pool.len() != 1 {
                return Err(Error::Parameter(format!("single-style needs exactly one style, got {}", pool.len())));
            }
            Ok(vec![0; n_images])
        }
        MixtureMode::PairwiseMix | MixtureMode::AllMix => {
            if mode == MixtureMode::PairwiseMix && pool.len() != 2 {
                return Err(Error::Parameter(format!("pairwise-mix needs exactly two styles, got {}", pool.len())));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..n_images).map(|_| rng.gen_range(0..pool.len())).collect())
        }
    }
}

/// Writes one styled copy of every image and returns the styled dataset.
pub fn apply_styles(ds: &Dataset, pool: &[StyleFilter], assignment: &[usize], out: &Path) -> Result<Dataset> {
    if assignment.len() != ds.entries.len() {
        return Err(Error::Shape("style assignment does not cover the dataset".into()));
    }
    let images = ds.load_images()?;
    let mut entries = Vec::with_capacity(images.len());
    for ((e, img), &s) in ds.entries.iter().zip(&images).zip(assignment) {
        let styled = apply_style(&pool[s], img)?;
        let path = out.join(&e.path);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|err| Error::io_path(dir, err))?;
        }
        save_image(&styled, &path, 255)?;
        entries.push(DatasetEntry { style: Some(pool[s].clone()), ..e.clone() });
    }
    let styled = Dataset { root: out.to_path_buf(), entries, ..ds.clone() };
    styled.save_manifest()?;
    Ok(styled)
}

// ---------------------------------------------------------------------------
// Splits

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    /// Indices into the dataset, class-major then shuffled order.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded stratified split: `train_per_class` per class for training and
/// up to `test_per_class` of the rest (all of it when `None`) for testing.
pub fn stratified_split(labels: &[usize], train_per_class: usize, test_per_class: Option<usize>, seed: u64) -> Result<Split> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split { train: Vec::new(), test: Vec::new() };
    for (class, mut idx) in by_class {
        if train_per_class == 0 || train_per_class >= idx.len() {
            return Err(Error::Config(format!(
                "train count {train_per_class} must be in [1, {}) for class {class}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let rest = idx.len() - train_per_class;
        let n_test = test_per_class.map_or(rest, |t| t.min(rest));
        split.train.extend_from_slice(&idx[..train_per_class]);
        split.test.extend_from_slice(&idx[train_per_class..train_per_class + n_test]);
    }
    Ok(split)
}
