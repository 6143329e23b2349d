//! Teacher interaction maps and the contrast filtering that builds them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::ops::{DISTRIBUTION_TOL, NORM_FLOOR};

/// Where a teacher map came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    Synthetic,
    VlmProbe,
    Human,
}

impl Provenance {
    pub fn code(self) -> u8 {
        match self {
            Provenance::Synthetic => 0,
            Provenance::VlmProbe => 1,
            Provenance::Human => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Provenance::Synthetic),
            1 => Some(Provenance::VlmProbe),
            2 => Some(Provenance::Human),
            _ => None,
        }
    }
}

/// Prompt used to extract the map, if any.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PromptId {
    None,
    /// Numbered classification prompt, 1 to 3.
    Numbered(u8),
    Dense,
}

impl PromptId {
    pub fn code(self) -> u8 {
        match self {
            PromptId::None => 0,
            PromptId::Numbered(n) => n,
            PromptId::Dense => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PromptId::None),
            1..=3 => Some(PromptId::Numbered(code)),
            4 => Some(PromptId::Dense),
            _ => None,
        }
    }
}

/// Role of a strength vector in teacher construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrengthRole {
    Foreground,
    Background,
    Object,
}

/// Non-negative per-patch interaction strengths.
#[derive(Clone, Debug, PartialEq)]
pub struct StrengthVector {
    role: StrengthRole,
    values: Vec<f64>,
}

impl StrengthVector {
    pub fn new(role: StrengthRole, values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!(
                "{role:?} strength at patch {i} is {}, must be finite and non-negative",
                values[i]
            )));
        }
        Ok(Self { role, values })
    }

    pub fn role(&self) -> StrengthRole {
        self.role
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A distribution over the `gh × gw` patch grid, stored at 32-bit so it
/// survives the file format bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherMap {
    grid_height: usize,
    grid_width: usize,
    values: Vec<f32>,
    pub provenance: Provenance,
    pub prompt: PromptId,
}

impl TeacherMap {
    /// Validates `values` as a distribution within `tol`.
    pub fn new(
        grid_height: usize,
        grid_width: usize,
        values: Vec<f32>,
        provenance: Provenance,
        prompt: PromptId,
        tol: f64,
    ) -> Result<Self> {
        if grid_height == 0 || grid_width == 0 || values.len() != grid_height * grid_width {
            return Err(Error::shape(format!(
                "teacher map grid {grid_height}x{grid_width} with {} values",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!("teacher value {} at patch {i}", values[i])));
        }
        let sum: f64 = values.iter().map(|&v| v as f64).sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::invalid(format!("teacher values sum to {sum}")));
        }
        Ok(Self {
            grid_height,
            grid_width,
            values,
            provenance,
            prompt,
        })
    }

    /// Normalizes non-negative `raw` by its L1 norm.
    pub(crate) fn from_raw(
        grid_height: usize,
        grid_width: usize,
        raw: &[f64],
        provenance: Provenance,
        prompt: PromptId,
    ) -> Result<Self> {
        let norm: f64 = raw.iter().sum::<f64>().max(NORM_FLOOR);
        let values = raw.iter().map(|v| (v / norm) as f32).collect();
        Self::new(grid_height, grid_width, values, provenance, prompt, DISTRIBUTION_TOL)
    }

    pub fn uniform(grid_height: usize, grid_width: usize, provenance: Provenance, prompt: PromptId) -> Result<Self> {
        Self::from_raw(grid_height, grid_width, &vec![1.0; grid_height * grid_width], provenance, prompt)
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_height, self.grid_width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

/// A constructed map and whether the contrast vanished everywhere, in which
/// case the map is uniform.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherOutcome {
    pub map: TeacherMap,
    pub degenerate: bool,
}

fn square_grid(n: usize) -> Result<usize> {
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n || n == 0 {
        return Err(Error::shape(format!("{n} patches do not form a square grid")));
    }
    Ok(side)
}

fn filtered(diff: Vec<f64>, gh: usize, gw: usize, provenance: Provenance, prompt: PromptId) -> Result<TeacherOutcome> {
    let d: Vec<f64> = diff.into_iter().map(|v| v.max(0.0)).collect();
    if d.iter().sum::<f64>() > NORM_FLOOR {
        Ok(TeacherOutcome {
            map: TeacherMap::from_raw(gh, gw, &d, provenance, prompt)?,
            degenerate: false,
        })
    } else {
        Ok(TeacherOutcome {
            map: TeacherMap::uniform(gh, gw, provenance, prompt)?,
            degenerate: true,
        })
    }
}

/// `max(0, fore − back)`, L1-normalized, on a square patch grid.
pub fn classification_teacher(fore: &StrengthVector, back: &StrengthVector) -> Result<TeacherOutcome> {
    if fore.len() != back.len() {
        return Err(Error::shape(format!(
            "foreground has {} patches, background {}",
            fore.len(),
            back.len()
        )));
    }
    let side = square_grid(fore.len())?;
    let diff = fore.values().iter().zip(back.values()).map(|(f, b)| f - b).collect();
    filtered(diff, side, side, Provenance::Synthetic, PromptId::None)
}

/// `max(0, Σₖ objₖ − back)`, L1-normalized.
pub fn dense_teacher(objects: &[StrengthVector], back: &StrengthVector) -> Result<TeacherOutcome> {
    if objects.is_empty() {
        return Err(Error::invalid("dense teacher needs at least one object"));
    }
    if let Some(o) = objects.iter().find(|o| o.len() != back.len()) {
        return Err(Error::shape(format!(
            "object has {} patches, background {}",
            o.len(),
            back.len()
        )));
    }
    let side = square_grid(back.len())?;
    let mut sum = vec![0.0; back.len()];
    for o in objects {
        for (s, v) in sum.iter_mut().zip(o.values()) {
            *s += v;
        }
    }
    let diff = sum.iter().zip(back.values()).map(|(s, b)| s - b).collect();
    filtered(diff, side, side, Provenance::Synthetic, PromptId::Dense)
}

/// Synthetic teacher from a ground-truth patch mask: `mask + |N(0, σ)|` per
/// patch, L1-normalized.
pub fn mask_teacher(mask: &[bool], sigma: f64, seed: u64) -> Result<TeacherMap> {
    if !mask.iter().any(|&m| m) {
        return Err(Error::invalid("mask_teacher: mask has no set patch"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma {sigma} must be finite and >= 0")));
    }
    let side = square_grid(mask.len())?;
    let mut raw: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("sigma checked");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for r in &mut raw {
            *r += noise.sample(&mut rng).abs();
        }
    }
    TeacherMap::from_raw(side, side, &raw, Provenance::Synthetic, PromptId::None)
}
