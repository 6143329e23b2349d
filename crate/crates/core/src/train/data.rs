//! Synthetic glyph-classification data with ground-truth patch masks.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Image;
use crate::teacher::{mask_teacher, TeacherMap};

pub const MAX_CLASSES: usize = 16;
/// Glyph side in patches.
pub const GLYPH_PATCHES: usize = 2;
const GLYPH_SEED: u64 = 0x6c79_7068;
/// Background clutter is binary noise at half the glyph contrast.
const BACKGROUND_MAX: f32 = 0.5;

/// Dataset recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub classes: usize,
    /// Total sample count, split into train and validation.
    pub samples: usize,
    /// Noise of the synthetic teacher maps.
    pub noise_sigma: f64,
    /// Validation fraction.
    pub split: f64,
    pub image_size: usize,
    pub patch_size: usize,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            samples: 2000,
            noise_sigma: 0.0,
            split: 0.2,
            image_size: 32,
            patch_size: 4,
        }
    }
}

impl DataSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.classes < 2 || self.classes > MAX_CLASSES {
            return fail(format!("data.classes {} outside [2, {MAX_CLASSES}]", self.classes));
        }
        if !(0.0..1.0).contains(&self.split) {
            return fail(format!("data.split {} outside [0, 1)", self.split));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("data.noise_sigma {} must be >= 0", self.noise_sigma));
        }
        if self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return fail("image size must be a multiple of the patch size".into());
        }
        if self.grid() < GLYPH_PATCHES {
            return fail(format!("grid {} too small for a {GLYPH_PATCHES}x{GLYPH_PATCHES} glyph", self.grid()));
        }
        if self.train_len() == 0 {
            return fail(format!("data.samples {} leaves no training samples", self.samples));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn train_len(&self) -> usize {
        self.samples - self.val_len()
    }

    pub fn val_len(&self) -> usize {
        (self.samples as f64 * self.split).round() as usize
    }
}

/// One labelled image with its object mask and teacher map.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
    /// Per patch, whether the glyph covers it.
    pub mask: Vec<bool>,
    pub teacher: TeacherMap,
    pub seed: u64,
}

/// Generated samples; the first `train_len` are the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DataSpec,
    pub seed: u64,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn train(&self) -> &[Sample] {
        &self.samples[..self.spec.train_len()]
    }

    pub fn val(&self) -> &[Sample] {
        &self.samples[self.spec.train_len()..]
    }

    pub fn teachers(&self) -> Vec<TeacherMap> {
        self.samples.iter().map(|s| s.teacher.clone()).collect()
    }
}

/// Derives the seed of sample `index` from the dataset seed.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Binary glyphs, `side × side` pixels each, distinct across classes and with
/// every patch quadrant non-empty.
pub fn glyphs(classes: usize, side: usize) -> Vec<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(GLYPH_SEED);
    let half = side / 2;
    let mut out: Vec<Vec<bool>> = Vec::with_capacity(classes);
    while out.len() < classes {
        let g: Vec<bool> = (0..side * side).map(|_| rng.gen_bool(0.5)).collect();
        let quadrant_ok = (0..4).all(|q| {
            let (qy, qx) = (q / 2 * half, q % 2 * half);
            (0..half).flat_map(|y| (0..half).map(move |x| (y, x))).any(|(y, x)| g[(qy + y) * side + qx + x])
        });
        if quadrant_ok && !out.contains(&g) {
            out.push(g);
        }
    }
    out
}

fn make_sample(spec: &DataSpec, glyph: &[bool], label: usize, seed: u64) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s, p, g) = (spec.image_size, spec.patch_size, spec.grid());
    let mut image = Image::zeros(s, s, 1);
    for v in &mut image.data {
        *v = if rng.gen_bool(0.5) { BACKGROUND_MAX } else { 0.0 };
    }
    let span = g - GLYPH_PATCHES + 1;
    let (gy, gx) = (rng.gen_range(0..span), rng.gen_range(0..span));
    let side = GLYPH_PATCHES * p;
    for y in 0..side {
        for x in 0..side {
            let on = glyph[y * side + x];
            image.set(gy * p + y, gx * p + x, 0, if on { 1.0 } else { 0.0 });
        }
    }
    let mut mask = vec![false; g * g];
    for dy in 0..GLYPH_PATCHES {
        for dx in 0..GLYPH_PATCHES {
            mask[(gy + dy) * g + gx + dx] = true;
        }
    }
    let teacher = mask_teacher(&mask, spec.noise_sigma, seed)?;
    Ok(Sample {
        image,
        label,
        mask,
        teacher,
        seed,
    })
}

/// Balanced dataset (`label = index mod classes`), deterministic per seed.
pub fn gen_synthetic(spec: &DataSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let glyphs = glyphs(spec.classes, GLYPH_PATCHES * spec.patch_size);
    let samples = (0..spec.samples)
        .map(|i| {
            let label = i % spec.classes;
            make_sample(spec, &glyphs[label], label, sample_seed(seed, i))
        })
        .collect::<Result<_>>()?;
    Ok(Dataset {
        spec: spec.clone(),
        seed,
        samples,
    })
}

const MANIFEST: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct Manifest {
    spec: DataSpec,
    seed: u64,
    train: usize,
    val: usize,
    items: Vec<ManifestItem>,
}

#[derive(Serialize, Deserialize)]
struct ManifestItem {
    file: String,
    seed: u64,
    label: usize,
    split: String,
    mask: Vec<usize>,
}

impl Dataset {
    /// Writes `manifest.json` plus one raw little-endian f32 image per sample.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let train = self.spec.train_len();
        let mut items = Vec::with_capacity(self.samples.len());
        for (i, s) in self.samples.iter().enumerate() {
            let file = format!("{i:05}.raw");
            let bytes: Vec<u8> = s.image.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            let path = dir.join(&file);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            items.push(ManifestItem {
                file,
                seed: s.seed,
                label: s.label,
                split: if i < train { "train" } else { "val" }.into(),
                mask: (0..s.mask.len()).filter(|&k| s.mask[k]).collect(),
            });
        }
        let manifest = Manifest {
            spec: self.spec.clone(),
            seed: self.seed,
            train,
            val: self.samples.len() - train,
            items,
        };
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Runtime(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Reads a directory written by [`Dataset::save`]; teachers are rebuilt
    /// from the stored masks and seeds.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let shown = path.display().to_string();
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&shown, e.to_string()))?;
        m.spec.validate()?;
        if m.items.len() != m.spec.samples || m.train != m.spec.train_len() {
            return Err(Error::format(&shown, "item count or split disagrees with the stored recipe"));
        }
        let (s, g) = (m.spec.image_size, m.spec.grid());
        let mut samples = Vec::with_capacity(m.items.len());
        for item in m.items {
            let p = dir.join(&item.file);
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            if bytes.len() != 4 * s * s {
                return Err(Error::format(p.display().to_string(), format!("expected {} bytes", 4 * s * s)));
            }
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            if item.label >= m.spec.classes || item.mask.iter().any(|&k| k >= g * g) {
                return Err(Error::format(&shown, format!("{}: label or mask out of range", item.file)));
            }
            let mut mask = vec![false; g * g];
            item.mask.iter().for_each(|&k| mask[k] = true);
            samples.push(Sample {
                image: Image::new(s, s, 1, data)?,
                label: item.label,
                teacher: mask_teacher(&mask, m.spec.noise_sigma, item.seed)?,
                mask,
                seed: item.seed,
            });
        }
        Ok(Self {
            spec: m.spec,
            seed: m.seed,
            samples,
        })
    }
}
