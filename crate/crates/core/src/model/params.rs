//! Named parameter tensors, initialization and freezing policies.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::{Matrix, Scalar};

/// Parameter names. Per-layer names are prefixed with `layers.<i>.`.
pub mod names {
    pub const PATCH_W: &str = "embed.proj.w";
    pub const PATCH_B: &str = "embed.proj.b";
    pub const CLS: &str = "embed.cls";
    pub const POS: &str = "embed.pos";
    pub const NORM_G: &str = "norm.g";
    pub const NORM_B: &str = "norm.b";
    pub const HEAD_W: &str = "head.w";
    pub const HEAD_B: &str = "head.b";

    pub const LN1_G: &str = "ln1.g";
    pub const LN1_B: &str = "ln1.b";
    pub const WQ: &str = "attn.wq";
    pub const WK: &str = "attn.wk";
    pub const WV: &str = "attn.wv";
    pub const WO: &str = "attn.wo";
    pub const BO: &str = "attn.bo";
    pub const LN2_G: &str = "ln2.g";
    pub const LN2_B: &str = "ln2.b";
    pub const MLP_W1: &str = "mlp.w1";
    pub const MLP_B1: &str = "mlp.b1";
    pub const MLP_W2: &str = "mlp.w2";
    pub const MLP_B2: &str = "mlp.b2";

    /// Interaction-query projection.
    pub const WQ_INT: &str = "attn.wq_int";
    pub const GATE_W1: &str = "gate.w1";
    pub const GATE_B1: &str = "gate.b1";
    pub const GATE_W2: &str = "gate.w2";
    pub const GATE_B2: &str = "gate.b2";

    pub fn layer(i: usize, name: &str) -> String {
        format!("layers.{i}.{name}")
    }

    /// Strips the `layers.<i>.` prefix, if any.
    pub fn local(full: &str) -> &str {
        match full.strip_prefix("layers.") {
            Some(rest) => rest.split_once('.').map_or(rest, |(_, n)| n),
            None => full,
        }
    }
}

/// Ordered collection of named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T: Scalar> {
    names: Vec<String>,
    tensors: Vec<Matrix<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for Params<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces `name`.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix<T>) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.tensors[i] = value,
            None => {
                self.index.insert(name.clone(), self.names.len());
                self.names.push(name);
                self.tensors.push(value);
            }
        }
    }

    pub fn get(&self, name: &str) -> Result<&Matrix<T>> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Matrix<T>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.tensors[i]),
            None => Err(Error::invalid(format!("missing parameter `{name}`"))),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
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

    pub fn tensors(&self) -> &[Matrix<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Matrix::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// `true` when the interaction-query pathway has been attached.
    pub fn has_interaction(&self) -> bool {
        self.contains(&names::layer(0, names::WQ_INT))
    }

    /// `true` when gate-network weights are present.
    pub fn has_gate_network(&self) -> bool {
        self.contains(&names::layer(0, names::GATE_W1))
    }
}

fn normal<T: Scalar, R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Matrix<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    let data = (0..rows * cols).map(|_| T::lit(dist.sample(rng))).collect();
    Matrix::from_vec(rows, cols, data).expect("length matches")
}

/// Fresh standard-ViT parameters (no interaction pathway).
pub fn init_backbone<T: Scalar, R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Params<T>> {
    use names::*;
    cfg.validate()?;
    let d = cfg.embed_dim;
    let hidden = cfg.mlp_hidden();
    let lecun = |fan_in: usize| (1.0 / fan_in as f64).sqrt();
    let mut p = Params::new();
    p.insert(PATCH_W, normal(cfg.patch_dim(), d, lecun(cfg.patch_dim()), rng));
    p.insert(PATCH_B, Matrix::zeros(1, d));
    p.insert(CLS, normal(1, d, 0.02, rng));
    p.insert(POS, normal(cfg.tokens(), d, 0.02, rng));
    for i in 0..cfg.layers {
        p.insert(layer(i, LN1_G), Matrix::filled(1, d, T::one()));
        p.insert(layer(i, LN1_B), Matrix::zeros(1, d));
        p.insert(layer(i, WQ), normal(d, d, lecun(d), rng));
        p.insert(layer(i, WK), normal(d, d, lecun(d), rng));
        p.insert(layer(i, WV), normal(d, d, lecun(d), rng));
        p.insert(layer(i, WO), normal(d, d, lecun(d), rng));
        p.insert(layer(i, BO), Matrix::zeros(1, d));
        p.insert(layer(i, LN2_G), Matrix::filled(1, d, T::one()));
        p.insert(layer(i, LN2_B), Matrix::zeros(1, d));
        p.insert(layer(i, MLP_W1), normal(d, hidden, lecun(d), rng));
        p.insert(layer(i, MLP_B1), Matrix::zeros(1, hidden));
        p.insert(layer(i, MLP_W2), normal(hidden, d, lecun(hidden), rng));
        p.insert(layer(i, MLP_B2), Matrix::zeros(1, d));
    }
    p.insert(NORM_G, Matrix::filled(1, d, T::one()));
    p.insert(NORM_B, Matrix::zeros(1, d));
    p.insert(HEAD_W, normal(d, cfg.classes, 0.01, rng));
    p.insert(HEAD_B, Matrix::zeros(1, cfg.classes));
    Ok(p)
}

/// Standard deviation of the perturbation added to `W_q` when seeding `W_q′`.
pub const INTERACTION_QUERY_JITTER: f64 = 1e-3;

/// Adds `W_q′ = W_q + ζ` to every layer and, when `gate_network` is set, the
/// two-layer gate map `2T → hidden → 2` with a zero final bias. Tensors that
/// already exist are kept.
pub fn attach_interaction<T: Scalar, R: Rng>(
    params: &mut Params<T>,
    cfg: &ModelConfig,
    gate_network: bool,
    rng: &mut R,
) -> Result<()> {
    use names::*;
    let two_t = 2 * cfg.tokens();
    for i in 0..cfg.layers {
        if !params.contains(&layer(i, WQ_INT)) {
            let wq = params.get(&layer(i, WQ))?.clone();
            let jitter: Matrix<T> = normal(wq.rows(), wq.cols(), INTERACTION_QUERY_JITTER, rng);
            params.insert(layer(i, WQ_INT), wq.add(&jitter)?);
        }
        if gate_network && !params.contains(&layer(i, GATE_W1)) {
            let h = cfg.gcn_hidden;
            params.insert(layer(i, GATE_W1), normal(two_t, h, (2.0 / (two_t + h) as f64).sqrt(), rng));
            params.insert(layer(i, GATE_B1), Matrix::zeros(1, h));
            params.insert(layer(i, GATE_W2), normal(h, 2, 0.01, rng));
            params.insert(layer(i, GATE_B2), Matrix::zeros(1, 2));
        }
    }
    Ok(())
}

/// Which parameters an optimizer may update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FreezePolicy {
    /// Standard ViT training: every backbone tensor trains, the interaction
    /// pathway is inert.
    Pretrain,
    /// Only `W_q′`, the gate maps and the task head train.
    InteractionFinetune,
}

impl std::str::FromStr for FreezePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(FreezePolicy::Pretrain),
            "interaction-finetune" => Ok(FreezePolicy::InteractionFinetune),
            other => Err(Error::invalid(format!("unknown freeze policy `{other}`"))),
        }
    }
}

impl FreezePolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            FreezePolicy::Pretrain => "pretrain",
            FreezePolicy::InteractionFinetune => "interaction-finetune",
        }
    }
}

pub(crate) fn is_interaction_param(name: &str) -> bool {
    let local = names::local(name);
    local == names::WQ_INT || local.starts_with("gate.")
}

/// Per-parameter trainable flags, in `params` order.
pub fn freeze_mask<T: Scalar>(params: &Params<T>, policy: FreezePolicy) -> Vec<bool> {
    params
        .names()
        .iter()
        .map(|n| match policy {
            FreezePolicy::Pretrain => !is_interaction_param(n),
            FreezePolicy::InteractionFinetune => is_interaction_param(n) || n.starts_with("head."),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            image_size: 8,
            patch_size: 4,
            embed_dim: 8,
            heads: 2,
            layers: 2,
            classes: 3,
            gcn_hidden: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn interaction_finetune_freezes_backbone() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = init_backbone::<f64, _>(&cfg, &mut rng).unwrap();
        attach_interaction(&mut p, &cfg, true, &mut rng).unwrap();
        let mask = freeze_mask(&p, FreezePolicy::InteractionFinetune);
        for (name, trainable) in p.names().iter().zip(&mask) {
            let local = names::local(name);
            let expect = local == names::WQ_INT || local.starts_with("gate.") || name.starts_with("head.");
            assert_eq!(*trainable, expect, "{name}");
        }
        for frozen in ["attn.wq", "attn.wk", "attn.wv", "mlp.w1", "mlp.w2"] {
            let i = p.position(&names::layer(1, frozen)).unwrap();
            assert!(!mask[i]);
        }
        assert!(!mask[p.position(names::PATCH_W).unwrap()]);
        assert!(!mask[p.position(names::POS).unwrap()]);
    }

    #[test]
    fn pretrain_excludes_interaction_pathway() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = init_backbone::<f64, _>(&cfg, &mut rng).unwrap();
        assert!(freeze_mask(&p, FreezePolicy::Pretrain).iter().all(|&t| t));
        attach_interaction(&mut p, &cfg, true, &mut rng).unwrap();
        let mask = freeze_mask(&p, FreezePolicy::Pretrain);
        for (name, t) in p.names().iter().zip(mask) {
            assert_eq!(t, !is_interaction_param(name), "{name}");
        }
    }

    #[test]
    fn interaction_query_starts_near_original() {
        let cfg = small();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = init_backbone::<f64, _>(&cfg, &mut rng).unwrap();
        attach_interaction(&mut p, &cfg, true, &mut rng).unwrap();
        let wq = p.get(&names::layer(0, names::WQ)).unwrap();
        let wq2 = p.get(&names::layer(0, names::WQ_INT)).unwrap();
        assert_eq!(wq.shape(), wq2.shape());
        assert!(wq.max_abs_diff(wq2) < 1e-2);
        assert_eq!(p.get(&names::layer(0, names::GATE_B2)).unwrap(), &Matrix::zeros(1, 2));
        assert!(p.has_interaction() && p.has_gate_network());
    }

    #[test]
    fn name_helpers() {
        assert_eq!(names::layer(3, names::WQ), "layers.3.attn.wq");
        assert_eq!(names::local("layers.3.attn.wq"), "attn.wq");
        assert_eq!(names::local("head.w"), "head.w");
    }
}
