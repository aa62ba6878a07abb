//! Synthetic scene synthesis.
//!
//! Every scene with enough object budget contains exactly one instance of a
//! confusable class together with its disambiguating context object. The
//! two confusable classes share shape, color and size range, and pixel
//! noise is keyed by position rather than class, so their renderings are
//! identical byte-for-byte; only the context object tells them apart.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use ctxseg_core::Rng;

use crate::error::DataError;
use crate::manifest::{Manifest, ManifestObject, ManifestSample, MANIFEST_VERSION};
use crate::mask::Mask;
use crate::netpbm;
use crate::netpbm::RgbImage;
use crate::vocab::Vocab;
use crate::Result;

const NOISE_TAG: u64 = 0x4E4F_4953_4500;
const PLACEMENT_TRIES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Square,
    Disc,
    Triangle,
    WideRect,
    TallRect,
}

impl ShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Disc => "disc",
            ShapeKind::Triangle => "triangle",
            ShapeKind::WideRect => "wide_rect",
            ShapeKind::TallRect => "tall_rect",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "square" => Ok(ShapeKind::Square),
            "disc" => Ok(ShapeKind::Disc),
            "triangle" => Ok(ShapeKind::Triangle),
            "wide_rect" => Ok(ShapeKind::WideRect),
            "tall_rect" => Ok(ShapeKind::TallRect),
            other => Err(DataError::Manifest(format!("unknown shape {other:?}"))),
        }
    }

    /// Does the shape cover local pixel `(dx, dy)` inside a `size`-sided
    /// bounding box?
    fn covers(self, size: u32, dx: u32, dy: u32) -> bool {
        let s = size as f64;
        let px = dx as f64 + 0.5;
        let py = dy as f64 + 0.5;
        match self {
            ShapeKind::Square => true,
            ShapeKind::Disc => {
                let c = s / 2.0;
                let r = s / 2.0;
                (px - c) * (px - c) + (py - c) * (py - c) <= r * r
            }
            ShapeKind::Triangle => {
                // apex at top center, base at bottom
                let half = (dy as f64 + 1.0) / 2.0;
                (px - s / 2.0).abs() <= half
            }
            ShapeKind::WideRect => {
                let quarter = s / 4.0;
                py >= quarter && py <= s - quarter
            }
            ShapeKind::TallRect => {
                let quarter = s / 4.0;
                px >= quarter && px <= s - quarter
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    pub shape: ShapeKind,
    pub color: [u8; 3],
    pub size_min: u32,
    pub size_max: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusableSpec {
    /// Two classes rendered identically.
    pub class_a: String,
    pub class_b: String,
    /// Context class that co-occurs with (and disambiguates) each.
    pub context_a: String,
    pub context_b: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    pub classes: Vec<ClassSpec>,
    pub confusables: Vec<ConfusableSpec>,
    pub objects_min: usize,
    pub objects_max: usize,
    /// Std-dev of the per-pixel Gaussian noise, in 0-255 units.
    pub noise_sigma: f64,
    /// Normalized centroid-distance band between a confusable object and
    /// its context object.
    pub context_distance: (f64, f64),
    pub background_color: [u8; 3],
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SceneConfig {
    /// Desk-scale default: 64x64, six foreground classes, one confusable
    /// pair of identical squares disambiguated by a triangle vs a disc.
    pub fn desk() -> Self {
        let spec = |name: &str, shape, color, lo, hi| ClassSpec {
            name: name.into(),
            shape,
            color,
            size_min: lo,
            size_max: hi,
        };
        SceneConfig {
            width: 64,
            height: 64,
            classes: vec![
                spec("doctor", ShapeKind::Square, [200, 200, 200], 10, 14),
                spec("nurse", ShapeKind::Square, [200, 200, 200], 10, 14),
                spec("hospital", ShapeKind::Triangle, [220, 60, 60], 12, 16),
                spec("street", ShapeKind::Disc, [120, 120, 160], 12, 16),
                spec("car", ShapeKind::WideRect, [60, 90, 220], 10, 14),
                spec("tree", ShapeKind::TallRect, [60, 180, 70], 10, 14),
            ],
            confusables: vec![ConfusableSpec {
                class_a: "doctor".into(),
                class_b: "nurse".into(),
                context_a: "hospital".into(),
                context_b: "street".into(),
            }],
            objects_min: 2,
            objects_max: 4,
            noise_sigma: 8.0,
            context_distance: (0.15, 0.45),
            background_color: [20, 24, 28],
            seed: 0,
        }
    }

    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::new(self.classes.iter().map(|c| c.name.clone()).collect())
    }

    pub fn similarity_pairs(&self) -> Vec<[String; 2]> {
        self.confusables
            .iter()
            .map(|c| [c.class_a.clone(), c.class_b.clone()])
            .collect()
    }

    fn class_index(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| DataError::UnknownLabel(name.to_string()))
    }

    /// Class indices that are neither confusable nor context classes.
    fn filler_indices(&self) -> Vec<usize> {
        let mut reserved = Vec::new();
        for c in &self.confusables {
            reserved.extend([&c.class_a, &c.class_b, &c.context_a, &c.context_b]);
        }
        (0..self.classes.len())
            .filter(|&i| !reserved.iter().any(|r| **r == self.classes[i].name))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(DataError::InvalidConfig("zero extents".into()));
        }
        self.vocab()?;
        if self.objects_min > self.objects_max {
            return Err(DataError::InvalidConfig("objects_min > objects_max".into()));
        }
        for c in &self.classes {
            if c.size_min < 4 || c.size_min > c.size_max {
                return Err(DataError::InvalidConfig(format!(
                    "bad size range for {:?}: {}..{}",
                    c.name, c.size_min, c.size_max
                )));
            }
            if c.size_max + 2 > self.width.min(self.height) {
                return Err(DataError::InvalidConfig(format!(
                    "class {:?} cannot fit the extents",
                    c.name
                )));
            }
        }
        for (i, conf) in self.confusables.iter().enumerate() {
            let a = &self.classes[self.class_index(&conf.class_a)?];
            let b = &self.classes[self.class_index(&conf.class_b)?];
            self.class_index(&conf.context_a)?;
            self.class_index(&conf.context_b)?;
            if a.shape != b.shape
                || a.color != b.color
                || a.size_min != b.size_min
                || a.size_max != b.size_max
            {
                return Err(DataError::InvalidConfig(format!(
                    "confusable pair {i} must render identically"
                )));
            }
            if conf.context_a == conf.context_b {
                return Err(DataError::InvalidConfig(format!(
                    "confusable pair {i} needs distinct context classes"
                )));
            }
        }
        // appearance must be unique outside declared confusable pairs
        for i in 0..self.classes.len() {
            for j in i + 1..self.classes.len() {
                let same = self.classes[i].shape == self.classes[j].shape
                    && self.classes[i].color == self.classes[j].color;
                let declared = self.confusables.iter().any(|c| {
                    (c.class_a == self.classes[i].name && c.class_b == self.classes[j].name)
                        || (c.class_a == self.classes[j].name
                            && c.class_b == self.classes[i].name)
                });
                if same && !declared {
                    return Err(DataError::InvalidConfig(format!(
                        "classes {:?} and {:?} look identical but are not a declared pair",
                        self.classes[i].name, self.classes[j].name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One placed object: class, bounding-box anchor and side length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneObject {
    pub class_index: usize,
    pub x: u32,
    pub y: u32,
    pub size: u32,
}

impl SceneObject {
    fn center(&self) -> (f64, f64) {
        (self.x as f64 + self.size as f64 / 2.0, self.y as f64 + self.size as f64 / 2.0)
    }

    fn intersects(&self, other: &SceneObject) -> bool {
        // 1px separation between bounding boxes
        let (ax0, ay0) = (self.x, self.y);
        let (ax1, ay1) = (self.x + self.size, self.y + self.size);
        let (bx0, by0) = (other.x, other.y);
        let (bx1, by1) = (other.x + other.size, other.y + other.size);
        !(ax1 + 1 < bx0 || bx1 + 1 < ax0 || ay1 + 1 < by0 || by1 + 1 < ay0)
    }
}

/// Object list plus the noise stream key; rendering is a pure function of
/// this description, independent of class identity for identically-shaped
/// classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneDescription {
    pub scene_id: usize,
    pub seed: u64,
    pub stream: u64,
    pub objects: Vec<SceneObject>,
}

/// In-memory sample: rendered image, ground-truth mask and provenance.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub scene_id: usize,
    pub seed: u64,
    pub stream: u64,
    pub image: RgbImage,
    pub mask: Mask,
    pub objects: Vec<SceneObject>,
}

fn place(
    cfg: &SceneConfig,
    class_index: usize,
    near: Option<(f64, f64)>,
    existing: &[SceneObject],
    rng: &mut Rng,
) -> Result<SceneObject> {
    let spec = &cfg.classes[class_index];
    let diag = ((cfg.width as f64).powi(2) + (cfg.height as f64).powi(2)).sqrt();
    let _ = diag;
    for _ in 0..PLACEMENT_TRIES {
        let size = rng.range_inclusive(spec.size_min as usize, spec.size_max as usize) as u32;
        if size + 2 > cfg.width || size + 2 > cfg.height {
            continue;
        }
        let x = rng.range_inclusive(1, (cfg.width - size - 1) as usize) as u32;
        let y = rng.range_inclusive(1, (cfg.height - size - 1) as usize) as u32;
        let candidate = SceneObject { class_index, x, y, size };
        if existing.iter().any(|o| o.intersects(&candidate)) {
            continue;
        }
        if let Some((cx, cy)) = near {
            let (px, py) = candidate.center();
            let dx = (px - cx) / cfg.width as f64;
            let dy = (py - cy) / cfg.height as f64;
            let d = (dx * dx + dy * dy).sqrt();
            if d < cfg.context_distance.0 || d > cfg.context_distance.1 {
                continue;
            }
        }
        return Ok(candidate);
    }
    Err(DataError::UnsatisfiablePlacement(format!(
        "no room for class {:?} after {PLACEMENT_TRIES} tries",
        spec.name
    )))
}

/// Draw the object list for one scene. With a budget of at least two, the
/// scene gets one confusable instance plus its context object; remaining
/// slots are filler classes.
pub fn describe_scene(cfg: &SceneConfig, scene_id: usize, rng: &mut Rng) -> Result<SceneDescription> {
    let budget = rng.range_inclusive(cfg.objects_min, cfg.objects_max);
    let mut objects: Vec<SceneObject> = Vec::new();

    let mut remaining = budget;
    if budget >= 2 && !cfg.confusables.is_empty() {
        let conf = &cfg.confusables[rng.below(cfg.confusables.len())];
        let take_a = rng.chance(0.5);
        let (subject, context) = if take_a {
            (&conf.class_a, &conf.context_a)
        } else {
            (&conf.class_b, &conf.context_b)
        };
        let subject_obj = place(cfg, cfg.class_index(subject)?, None, &objects, rng)?;
        let anchor = subject_obj.center();
        objects.push(subject_obj);
        let context_obj = place(cfg, cfg.class_index(context)?, Some(anchor), &objects, rng)?;
        objects.push(context_obj);
        remaining -= 2;
    }

    let fillers = cfg.filler_indices();
    for _ in 0..remaining {
        if fillers.is_empty() {
            break;
        }
        let class_index = fillers[rng.below(fillers.len())];
        let obj = place(cfg, class_index, None, &objects, rng)?;
        objects.push(obj);
    }

    Ok(SceneDescription { scene_id, seed: cfg.seed, stream: scene_id as u64, objects })
}

/// Render a description to an image and mask. Pixel noise is keyed by
/// `(seed, stream)` and pixel position only, never by class identity.
pub fn render_scene(cfg: &SceneConfig, desc: &SceneDescription) -> Result<(RgbImage, Mask)> {
    let vocab = cfg.vocab()?;
    let mut image = RgbImage::new(cfg.width, cfg.height);
    let mut mask = Mask::new(cfg.width, cfg.height);

    for y in 0..cfg.height {
        for x in 0..cfg.width {
            image.set(x, y, cfg.background_color);
        }
    }
    for obj in &desc.objects {
        let spec = &cfg.classes[obj.class_index];
        let value = vocab.mask_id(obj.class_index);
        for dy in 0..obj.size {
            for dx in 0..obj.size {
                if spec.shape.covers(obj.size, dx, dy) {
                    image.set(obj.x + dx, obj.y + dy, spec.color);
                    mask.set(obj.x + dx, obj.y + dy, value);
                }
            }
        }
    }

    let mut noise = Rng::new(desc.seed, desc.stream).derive(NOISE_TAG);
    for v in image.data.iter_mut() {
        let n = noise.standard_normal() * cfg.noise_sigma;
        *v = (*v as f64 + n).round().clamp(0.0, 255.0) as u8;
    }
    Ok((image, mask))
}

/// Counterfactual description with confusable identities swapped (subject
/// and context classes exchanged within their pair, geometry untouched).
pub fn swap_confusables(cfg: &SceneConfig, desc: &SceneDescription) -> Result<SceneDescription> {
    let mut map: Vec<usize> = (0..cfg.classes.len()).collect();
    for conf in &cfg.confusables {
        let a = cfg.class_index(&conf.class_a)?;
        let b = cfg.class_index(&conf.class_b)?;
        let ca = cfg.class_index(&conf.context_a)?;
        let cb = cfg.class_index(&conf.context_b)?;
        map[a] = b;
        map[b] = a;
        map[ca] = cb;
        map[cb] = ca;
    }
    Ok(SceneDescription {
        scene_id: desc.scene_id,
        seed: desc.seed,
        stream: desc.stream,
        objects: desc
            .objects
            .iter()
            .map(|o| SceneObject { class_index: map[o.class_index], ..*o })
            .collect(),
    })
}

/// Generate `count` samples deterministically from `(cfg, cfg.seed)`.
pub fn synthesize(cfg: &SceneConfig, count: usize) -> Result<Vec<SampleRecord>> {
    cfg.validate()?;
    let mut records = Vec::with_capacity(count);
    for scene_id in 0..count {
        let mut rng = Rng::new(cfg.seed, scene_id as u64);
        let desc = describe_scene(cfg, scene_id, &mut rng)?;
        let (image, mask) = render_scene(cfg, &desc)?;
        records.push(SampleRecord {
            scene_id,
            seed: desc.seed,
            stream: desc.stream,
            image,
            mask,
            objects: desc.objects,
        });
    }
    Ok(records)
}

/// A split loaded back from disk.
#[derive(Debug, Clone)]
pub struct LoadedSplit {
    pub vocab: Vocab,
    pub similarity_pairs: Vec<[String; 2]>,
    pub width: u32,
    pub height: u32,
    pub samples: Vec<SampleRecord>,
}

/// Write `split/{images/*.ppm, masks/*.pgm, manifest.json}`.
pub fn write_split(dir: &Path, cfg: &SceneConfig, records: &[SampleRecord]) -> Result<()> {
    let vocab = cfg.vocab()?;
    let images = dir.join("images");
    let masks = dir.join("masks");
    fs::create_dir_all(&images).map_err(|e| DataError::io(images.display().to_string(), e))?;
    fs::create_dir_all(&masks).map_err(|e| DataError::io(masks.display().to_string(), e))?;

    let mut samples = Vec::with_capacity(records.len());
    for rec in records {
        let image_rel = format!("images/{:05}.ppm", rec.scene_id);
        let mask_rel = format!("masks/{:05}.pgm", rec.scene_id);
        netpbm::save_ppm(&dir.join(&image_rel), &rec.image)?;
        netpbm::save_pgm(&dir.join(&mask_rel), &rec.mask.to_gray())?;
        samples.push(ManifestSample {
            id: rec.scene_id,
            image: image_rel,
            mask: mask_rel,
            seed: rec.seed,
            stream: rec.stream,
            objects: rec
                .objects
                .iter()
                .map(|o| ManifestObject {
                    class: vocab.label(o.class_index).to_string(),
                    shape: cfg.classes[o.class_index].shape.name().to_string(),
                    x: o.x,
                    y: o.y,
                    size: o.size,
                })
                .collect(),
        });
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        width: cfg.width,
        height: cfg.height,
        classes: vocab.labels().to_vec(),
        similarity_pairs: cfg.similarity_pairs(),
        samples,
    };
    manifest.save(&dir.join("manifest.json"))
}

pub fn load_split(dir: &Path) -> Result<LoadedSplit> {
    let manifest = Manifest::load(&dir.join("manifest.json"))?;
    let vocab = Vocab::new(manifest.classes.clone())?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for s in &manifest.samples {
        let image = netpbm::load_ppm(&dir.join(&s.image))?;
        let gray = netpbm::load_pgm(&dir.join(&s.mask))?;
        if image.width != manifest.width
            || image.height != manifest.height
            || gray.width != manifest.width
            || gray.height != manifest.height
        {
            return Err(DataError::ExtentMismatch(format!(
                "sample {} extents differ from manifest {}x{}",
                s.id, manifest.width, manifest.height
            )));
        }
        let mask = Mask::from_gray(gray, &vocab)?;
        let mut objects = Vec::with_capacity(s.objects.len());
        for o in &s.objects {
            objects.push(SceneObject {
                class_index: vocab.index_of(&o.class)?,
                x: o.x,
                y: o.y,
                size: o.size,
            });
        }
        samples.push(SampleRecord {
            scene_id: s.id,
            seed: s.seed,
            stream: s.stream,
            image,
            mask,
            objects,
        });
    }
    Ok(LoadedSplit {
        vocab,
        similarity_pairs: manifest.similarity_pairs,
        width: manifest.width,
        height: manifest.height,
        samples,
    })
}
