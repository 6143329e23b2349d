use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{forward_with, ForwardOptions, ModelConfig, Params};
use crate::numerics::Scalar;
use crate::teacher::TeacherMap;
use crate::train::{class_row, Sample};

/// How map similarities are aggregated in an [`EvalReport`].
pub const COSINE_CONVENTION: &str = "per-image cosine, averaged over layers then over images";

/// `a·b / (‖a‖‖b‖)`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("cosine: lengths {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine of a zero vector"));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Similarities to human maps.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HumanCosines {
    pub agt: Option<f64>,
    pub vfm: f64,
    pub teacher: f64,
}

/// Accuracy and class-row similarities over a sample set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub convention: String,
    pub samples: usize,
    pub accuracy: f64,
    /// Absent when the model has no interaction pathway.
    pub cosine_agt_teacher: Option<f64>,
    pub cosine_vfm_teacher: f64,
    pub human: Option<HumanCosines>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Runs the model over `samples` and compares class rows against
/// `teachers[i]` and, when given, `humans[i]`.
pub fn evaluate<T: Scalar>(
    params: &Params<T>,
    cfg: &ModelConfig,
    samples: &[Sample],
    teachers: &[TeacherMap],
    humans: Option<&[TeacherMap]>,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluate: no samples"));
    }
    if teachers.len() != samples.len() || humans.is_some_and(|h| h.len() != samples.len()) {
        return Err(Error::invalid(format!(
            "evaluate: {} samples but {} teachers{}",
            samples.len(),
            teachers.len(),
            humans.map(|h| format!(" and {} human maps", h.len())).unwrap_or_default()
        )));
    }
    let opts = ForwardOptions::infer(params);
    let n = samples.len() as f64;
    let (mut correct, mut agt, mut vfm) = (0usize, 0.0, 0.0);
    let (mut h_agt, mut h_vfm, mut h_teacher) = (0.0, 0.0, 0.0);
    for (i, s) in samples.iter().enumerate() {
        let (logits, trace) = forward_with(&s.image, params, cfg, opts)?;
        let top = (0..logits.len()).fold(0, |b, k| if logits[k] > logits[b] { k } else { b });
        correct += usize::from(top == s.label);
        let teacher = teachers[i].to_f64();
        let human = humans.map(|h| h[i].to_f64());
        let layers = trace.layers.len() as f64;
        for l in &trace.layers {
            let row_v = class_row(&l.c_vfm, trace.heads)?;
            vfm += cosine(&row_v, &teacher)? / layers;
            if let Some(h) = &human {
                h_vfm += cosine(&row_v, h)? / layers;
            }
            if let Some(c) = &l.c_agt {
                let row_a = class_row(c, trace.heads)?;
                agt += cosine(&row_a, &teacher)? / layers;
                if let Some(h) = &human {
                    h_agt += cosine(&row_a, h)? / layers;
                }
            }
        }
        if let Some(h) = &human {
            h_teacher += cosine(&teacher, h)?;
        }
    }
    let interaction = opts.interaction;
    Ok(EvalReport {
        convention: COSINE_CONVENTION.to_string(),
        samples: samples.len(),
        accuracy: correct as f64 / n,
        cosine_agt_teacher: interaction.then_some(agt / n),
        cosine_vfm_teacher: vfm / n,
        human: humans.map(|_| HumanCosines {
            agt: interaction.then_some(h_agt / n),
            vfm: h_vfm / n,
            teacher: h_teacher / n,
        }),
    })
}

/// Mean gates per layer over a dataset.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GateTrend {
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
}

impl GateTrend {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trend serializes")
    }
}

/// Averages `g₁` and `g₂` per layer over heads, rows and samples.
pub fn gate_trend<T: Scalar>(params: &Params<T>, cfg: &ModelConfig, samples: &[Sample]) -> Result<GateTrend> {
    if samples.is_empty() {
        return Err(Error::invalid("gate_trend: empty dataset"));
    }
    let opts = ForwardOptions::infer(params);
    if !opts.interaction {
        return Err(Error::invalid("gate_trend: model has no interaction pathway"));
    }
    let mut g1 = vec![0.0; cfg.layers];
    let mut g2 = vec![0.0; cfg.layers];
    for s in samples {
        let (_, trace) = forward_with(&s.image, params, cfg, opts)?;
        for (l, layer) in trace.layers.iter().enumerate() {
            let (a, b) = layer.mean_gates().expect("interaction pathway records gates");
            g1[l] += a;
            g2[l] += b;
        }
    }
    let n = samples.len() as f64;
    Ok(GateTrend {
        g1: g1.into_iter().map(|v| v / n).collect(),
        g2: g2.into_iter().map(|v| v / n).collect(),
    })
}
