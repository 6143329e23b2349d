//! The I-ViT forward pass, built once on a [`Tape`] and shared by inference,
//! training and gradient checking.

use crate::error::{Error, Result};
use crate::model::params::names::{self, layer};
use crate::model::{GateMode, ModelConfig, Params};
use crate::numerics::{Matrix, Scalar, Tape, Var};

/// Grayscale or multi-channel image, `height × width × channels`, row-major
/// with channels innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "image {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Flattened patches, one row per patch in grid row-major order. Each
    /// row lists the patch pixels row-major with channels innermost.
    pub fn patches<T: Scalar>(&self, cfg: &ModelConfig) -> Result<Matrix<T>> {
        if self.height != cfg.image_size || self.width != cfg.image_size || self.channels != cfg.channels {
            return Err(Error::shape(format!(
                "image is {}x{}x{}, model expects {s}x{s}x{}",
                self.height,
                self.width,
                self.channels,
                cfg.channels,
                s = cfg.image_size
            )));
        }
        let (p, g) = (cfg.patch_size, cfg.grid());
        let mut out = Matrix::zeros(cfg.patches(), cfg.patch_dim());
        for k in 0..cfg.patches() {
            let (gy, gx) = (k / g, k % g);
            let row = out.row_mut(k);
            let mut i = 0;
            for dy in 0..p {
                for dx in 0..p {
                    for c in 0..self.channels {
                        row[i] = T::lit(self.get(gy * p + dy, gx * p + dx, c) as f64);
                        i += 1;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Where the fusion gates come from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GateSource {
    /// The learned gate network.
    Network,
    /// Constant `(g₁, g₂)` everywhere.
    Fixed(f64, f64),
}

/// Which pathways a forward pass uses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    /// Compute `C_AGT` from interaction queries and fuse it in. When off the
    /// block is a standard ViT block (`C_F = C_VFM`).
    pub interaction: bool,
    pub gates: GateSource,
}

impl ForwardOptions {
    /// Options implied by which tensors `params` holds: interaction queries
    /// when present, the gate network when present, else fixed 0.5/0.5 gates.
    pub fn infer<T: Scalar>(params: &Params<T>) -> Self {
        Self {
            interaction: params.has_interaction(),
            gates: if params.has_gate_network() {
                GateSource::Network
            } else {
                GateSource::Fixed(0.5, 0.5)
            },
        }
    }

    pub fn baseline() -> Self {
        Self {
            interaction: false,
            gates: GateSource::Fixed(0.5, 0.5),
        }
    }
}

/// Tape handles for one layer's interaction matrices. Stacked matrices are
/// `(H·T) × T`, head-major; gates are `(H·T) × 1`.
#[derive(Clone, Debug)]
pub struct LayerVars {
    pub c_vfm: Var,
    pub c_agt: Option<Var>,
    pub c_f: Var,
    pub gates: Option<(Var, Var)>,
}

/// Handles produced by [`build_forward`].
#[derive(Clone, Debug)]
pub struct ForwardGraph {
    /// `1 × classes`.
    pub logits: Var,
    /// Token matrix entering the first block, `T × D`.
    pub embedded: Var,
    pub layers: Vec<LayerVars>,
    /// One leaf per parameter, in `Params` order.
    pub params: Vec<Var>,
}

/// Records the forward pass on `tape`. Parameters flagged in `trainable`
/// become tracked leaves; `None` tracks nothing.
pub fn build_forward<'a, T: Scalar>(
    tape: &mut Tape<'a, T>,
    params: &'a Params<T>,
    cfg: &ModelConfig,
    image: &Image,
    opts: ForwardOptions,
    trainable: Option<&[bool]>,
) -> Result<ForwardGraph> {
    if let Some(mask) = trainable {
        if mask.len() != params.len() {
            return Err(Error::shape(format!(
                "trainable mask has {} flags for {} parameters",
                mask.len(),
                params.len()
            )));
        }
    }
    let leaves: Vec<Var> = params
        .tensors()
        .iter()
        .enumerate()
        .map(|(i, m)| tape.borrowed(m, trainable.is_some_and(|t| t[i])))
        .collect();
    let p = |name: &str| -> Result<Var> {
        params
            .position(name)
            .map(|i| leaves[i])
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    };

    let patches = tape.constant(image.patches(cfg)?);
    let projected = tape.affine(patches, p(names::PATCH_W)?, Some(p(names::PATCH_B)?))?;
    let tokens = tape.concat_rows(p(names::CLS)?, projected)?;
    let embedded = tape.add(tokens, p(names::POS)?)?;
    let mut x = embedded;

    let heads = cfg.heads;
    let scale = T::one() / T::lit(cfg.head_dim() as f64).sqrt();
    let mut layers = Vec::with_capacity(cfg.layers);
    for i in 0..cfg.layers {
        let lp = |n: &str| p(&layer(i, n));
        let h = tape.layer_norm(x, lp(names::LN1_G)?, lp(names::LN1_B)?)?;
        let q = tape.matmul(h, lp(names::WQ)?)?;
        let k = tape.matmul(h, lp(names::WK)?)?;
        let v = tape.matmul(h, lp(names::WV)?)?;
        let logits = tape.head_logits(q, k, heads, scale)?;
        let c_vfm = tape.softmax_rows(logits)?;

        let (c_f, c_agt, gates) = if opts.interaction {
            let q_int = tape.matmul(h, lp(names::WQ_INT)?)?;
            let logits_int = tape.head_logits(q_int, k, heads, scale)?;
            let c_agt = tape.softmax_rows(logits_int)?;
            let (c_f, gates) = match opts.gates {
                GateSource::Fixed(g1, g2) => {
                    let a = tape.scale(c_agt, T::lit(g1));
                    let b = tape.scale(c_vfm, T::lit(g2));
                    let rows = tape.value(c_agt).rows();
                    let g1v = tape.constant(Matrix::filled(rows, 1, T::lit(g1)));
                    let g2v = tape.constant(Matrix::filled(rows, 1, T::lit(g2)));
                    (tape.add(a, b)?, (g1v, g2v))
                }
                GateSource::Network => {
                    let input = tape.concat_cols(c_agt, c_vfm)?;
                    let hidden = tape.affine(input, lp(names::GATE_W1)?, Some(lp(names::GATE_B1)?))?;
                    let hidden = tape.gelu(hidden);
                    let gl = tape.affine(hidden, lp(names::GATE_W2)?, Some(lp(names::GATE_B2)?))?;
                    let g = match cfg.gate_mode {
                        GateMode::Sigmoid => tape.sigmoid(gl),
                        GateMode::Convex => tape.softmax_rows(gl)?,
                    };
                    let g1 = tape.slice_cols(g, 0, 1)?;
                    let g2 = tape.slice_cols(g, 1, 1)?;
                    let a = tape.row_scale(c_agt, g1)?;
                    let b = tape.row_scale(c_vfm, g2)?;
                    (tape.add(a, b)?, (g1, g2))
                }
            };
            (c_f, Some(c_agt), Some(gates))
        } else {
            (c_vfm, None, None)
        };

        let mixed = tape.head_mix(c_f, v, heads)?;
        let attn_out = tape.affine(mixed, lp(names::WO)?, Some(lp(names::BO)?))?;
        x = tape.add(x, attn_out)?;
        let h2 = tape.layer_norm(x, lp(names::LN2_G)?, lp(names::LN2_B)?)?;
        let m = tape.affine(h2, lp(names::MLP_W1)?, Some(lp(names::MLP_B1)?))?;
        let m = tape.gelu(m);
        let m = tape.affine(m, lp(names::MLP_W2)?, Some(lp(names::MLP_B2)?))?;
        x = tape.add(x, m)?;
        layers.push(LayerVars {
            c_vfm,
            c_agt,
            c_f,
            gates,
        });
    }
    let normed = tape.layer_norm(x, p(names::NORM_G)?, p(names::NORM_B)?)?;
    let cls = tape.gather_rows(normed, vec![0])?;
    let logits = tape.affine(cls, p(names::HEAD_W)?, Some(p(names::HEAD_B)?))?;
    Ok(ForwardGraph {
        logits,
        embedded,
        layers,
        params: leaves,
    })
}

/// One layer of an [`InteractionTrace`]. Matrices are stacked head-major,
/// `(H·T) × T`; gates are `(H·T) × 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace<T: Scalar> {
    pub c_vfm: Matrix<T>,
    /// Absent when the interaction pathway is off.
    pub c_agt: Option<Matrix<T>>,
    pub c_f: Matrix<T>,
    /// `(g₁, g₂)`, absent when the interaction pathway is off.
    pub gates: Option<(Matrix<T>, Matrix<T>)>,
}

impl<T: Scalar> LayerTrace<T> {
    /// The matrix alignment supervises: `C_AGT` when present, else `C_VFM`.
    pub fn supervised(&self) -> &Matrix<T> {
        self.c_agt.as_ref().unwrap_or(&self.c_vfm)
    }

    /// Mean `(g₁, g₂)` over heads and rows.
    pub fn mean_gates(&self) -> Option<(f64, f64)> {
        self.gates.as_ref().map(|(g1, g2)| {
            let n = g1.len() as f64;
            (
                g1.data().iter().map(|v| v.as_f64()).sum::<f64>() / n,
                g2.data().iter().map(|v| v.as_f64()).sum::<f64>() / n,
            )
        })
    }
}

/// Per-layer record of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionTrace<T: Scalar> {
    pub heads: usize,
    pub layers: Vec<LayerTrace<T>>,
}

impl<T: Scalar> InteractionTrace<T> {
    pub fn from_graph(tape: &Tape<'_, T>, graph: &ForwardGraph, heads: usize) -> Self {
        let layers = graph
            .layers
            .iter()
            .map(|l| LayerTrace {
                c_vfm: tape.value(l.c_vfm).clone(),
                c_agt: l.c_agt.map(|v| tape.value(v).clone()),
                c_f: tape.value(l.c_f).clone(),
                gates: l.gates.map(|(a, b)| (tape.value(a).clone(), tape.value(b).clone())),
            })
            .collect();
        Self { heads, layers }
    }
}

/// Logits and trace with the options implied by `params`.
pub fn forward<T: Scalar>(
    image: &Image,
    params: &Params<T>,
    cfg: &ModelConfig,
) -> Result<(Vec<T>, InteractionTrace<T>)> {
    forward_with(image, params, cfg, ForwardOptions::infer(params))
}

pub fn forward_with<T: Scalar>(
    image: &Image,
    params: &Params<T>,
    cfg: &ModelConfig,
    opts: ForwardOptions,
) -> Result<(Vec<T>, InteractionTrace<T>)> {
    let mut tape = Tape::new();
    let graph = build_forward(&mut tape, params, cfg, image, opts, None)?;
    let logits = tape.value(graph.logits);
    if !logits.is_finite() {
        return Err(Error::NonFinite("forward produced non-finite logits".into()));
    }
    Ok((logits.data().to_vec(), InteractionTrace::from_graph(&tape, &graph, cfg.heads)))
}

/// Logits only, through the standard ViT path (no interaction pathway).
pub fn baseline_forward<T: Scalar>(image: &Image, params: &Params<T>, cfg: &ModelConfig) -> Result<Vec<T>> {
    forward_with(image, params, cfg, ForwardOptions::baseline()).map(|r| r.0)
}
