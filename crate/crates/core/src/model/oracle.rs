use crate::error::{Error, Result};
use crate::interaction::{MaskedOracle, Subset, MAX_VARIABLES};
use crate::model::{forward, Image, ModelConfig, Params};
use crate::numerics::Scalar;

/// Treats chosen image patches as players: `v(S)` is the model's logit for
/// `class` when every listed patch outside `S` is filled with `baseline`.
pub struct PatchOracle<'a, T: Scalar> {
    params: &'a Params<T>,
    cfg: &'a ModelConfig,
    image: &'a Image,
    patches: Vec<usize>,
    class: usize,
    baseline: f32,
}

impl<'a, T: Scalar> PatchOracle<'a, T> {
    /// `patches` are 0-based patch indices; variable `i` (1-based) is
    /// `patches[i - 1]`.
    pub fn new(
        params: &'a Params<T>,
        cfg: &'a ModelConfig,
        image: &'a Image,
        patches: Vec<usize>,
        class: usize,
    ) -> Result<Self> {
        if patches.is_empty() || patches.len() > MAX_VARIABLES {
            return Err(Error::invalid(format!(
                "patch oracle needs 1..={MAX_VARIABLES} patches, got {}",
                patches.len()
            )));
        }
        if let Some(p) = patches.iter().find(|&&p| p >= cfg.patches()) {
            return Err(Error::invalid(format!("patch {p} out of range for {} patches", cfg.patches())));
        }
        if class >= cfg.classes {
            return Err(Error::invalid(format!("class {class} out of range")));
        }
        Ok(Self {
            params,
            cfg,
            image,
            patches,
            class,
            baseline: 0.0,
        })
    }

    pub fn with_baseline(mut self, baseline: f32) -> Self {
        self.baseline = baseline;
        self
    }

    fn masked(&self, keep: Subset) -> Image {
        let mut img = self.image.clone();
        let (p, g) = (self.cfg.patch_size, self.cfg.grid());
        for (i, &patch) in self.patches.iter().enumerate() {
            if keep.contains(i + 1) {
                continue;
            }
            let (gy, gx) = (patch / g, patch % g);
            for y in gy * p..(gy + 1) * p {
                for x in gx * p..(gx + 1) * p {
                    for c in 0..img.channels {
                        img.set(y, x, c, self.baseline);
                    }
                }
            }
        }
        img
    }
}

impl<T: Scalar> MaskedOracle for PatchOracle<'_, T> {
    fn variables(&self) -> usize {
        self.patches.len()
    }

    fn value(&self, subset: Subset) -> Result<f64> {
        let (logits, _) = forward(&self.masked(subset), self.params, self.cfg)?;
        Ok(logits[self.class].as_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interaction::{harsanyi_and, reconstruct_value};
    use crate::model::init_backbone;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn model_logit_decomposes_exactly() {
        let cfg = ModelConfig {
            image_size: 8,
            patch_size: 2,
            embed_dim: 8,
            heads: 2,
            layers: 1,
            classes: 3,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params: Params<f64> = init_backbone(&cfg, &mut rng).unwrap();
        let img = Image::new(8, 8, 1, (0..64).map(|_| rng.gen()).collect()).unwrap();
        let oracle = PatchOracle::new(&params, &cfg, &img, vec![0, 5, 10, 15], 1).unwrap();
        let table = harsanyi_and(&oracle).unwrap();
        for s in Subset::full(4).submasks() {
            let v = oracle.value(s).unwrap();
            assert!((reconstruct_value(&table, s).unwrap() - v).abs() <= 1e-9);
        }
        assert!(PatchOracle::new(&params, &cfg, &img, vec![16], 0).is_err());
    }
}
