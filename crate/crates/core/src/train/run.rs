//! The training loop, its two stages and the metrics log.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    attach_interaction, build_forward, forward_with, freeze_mask, init_backbone, names, Checkpoint, ForwardOptions,
    FreezePolicy, GateSource, Params,
};
use crate::numerics::{Matrix, Tape};
use crate::train::loss::{measured_alignment, objective_var};
use crate::train::optim::{cosine_lr, Sgd, MOMENTUM};
use crate::train::{Dataset, RunConfig, Sample, Stage, Switches};

const STREAM_INIT: u64 = 1;
const STREAM_PRETRAIN_ORDER: u64 = 2;
const STREAM_FINETUNE_ORDER: u64 = 3;
const STREAM_INTERACTION_INIT: u64 = 4;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: String,
    pub switches: String,
    pub epoch: usize,
    pub task_loss: f64,
    pub align_loss: f64,
    /// Accuracy over the epoch's training batches, as they were seen.
    pub train_acc: f64,
    pub val_acc: f64,
    pub gate_g1: Vec<f64>,
    pub gate_g2: Vec<f64>,
    /// Optimizer steps since the start of the run.
    pub steps: usize,
}

/// First log line: the effective configuration.
pub fn metrics_header(cfg: &RunConfig) -> String {
    let config: BTreeMap<&str, String> = cfg.entries().into_iter().collect();
    let mut wrapper = BTreeMap::new();
    wrapper.insert("config", config);
    serde_json::to_string(&wrapper).expect("string map serializes")
}

/// Header plus one JSON record per line.
pub fn metrics_log(cfg: &RunConfig, records: &[EpochRecord]) -> String {
    let mut out = metrics_header(cfg);
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Parses a log written by [`metrics_log`], skipping the header.
pub fn parse_metrics(text: &str) -> Result<Vec<EpochRecord>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format("metrics log", format!("line {}: {e}", i + 2))))
        .collect()
}

#[derive(Clone, Debug)]
struct Best {
    val_acc: f64,
    params: Option<Params<f32>>,
}

impl Best {
    fn offer(&mut self, acc: f64, params: &Params<f32>) {
        if self.params.is_none() || acc > self.val_acc {
            self.val_acc = acc;
            self.params = Some(params.clone());
        }
    }
}

/// State after the standard-ViT stage.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub params: Params<f32>,
    pub records: Vec<EpochRecord>,
    pub steps: usize,
    best: Best,
}

/// Result of a full run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub config: RunConfig,
    pub params: Params<f32>,
    pub best: Params<f32>,
    pub best_val_acc: f64,
    pub records: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn log(&self) -> String {
        metrics_log(&self.config, &self.records)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.model.clone(),
            params: self.params.clone(),
        }
    }

    /// Writes `metrics.jsonl`, `final.ckpt` and `best.ckpt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let log = dir.join("metrics.jsonl");
        std::fs::write(&log, self.log()).map_err(|e| Error::io(&log, e))?;
        self.checkpoint().save(&dir.join("final.ckpt"))?;
        Checkpoint {
            config: self.config.model.clone(),
            params: self.best.clone(),
        }
        .save(&dir.join("best.ckpt"))
    }
}

struct StagePlan {
    name: &'static str,
    epochs: usize,
    lr: f64,
    opts: ForwardOptions,
    trainable: Vec<bool>,
    align: bool,
    order_stream: u64,
    switches: Switches,
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy of `params` on `samples`.
pub fn accuracy(cfg: &RunConfig, params: &Params<f32>, opts: ForwardOptions, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for s in samples {
        let (logits, _) = forward_with(&s.image, params, &cfg.model, opts)?;
        correct += usize::from(argmax(&logits) == s.label);
    }
    Ok(correct as f64 / samples.len() as f64)
}

fn run_stage(
    cfg: &RunConfig,
    data: &Dataset,
    params: &mut Params<f32>,
    plan: &StagePlan,
    steps: &mut usize,
    best: &mut Best,
    records: &mut Vec<EpochRecord>,
) -> Result<()> {
    let t = &cfg.train;
    let train = data.train();
    let batches_per_epoch = train.len().div_ceil(t.batch);
    let total_steps = batches_per_epoch * plan.epochs;
    let mut order_rng = rng(t.seed, plan.order_stream);
    let mut opt = Sgd::<f32>::new(params.tensors().iter().map(Matrix::shape), MOMENTUM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let layers = cfg.model.layers;
    let mut stage_step = 0;
    for epoch in 1..=plan.epochs {
        order.shuffle(&mut order_rng);
        let (mut task_sum, mut align_sum, mut correct) = (0.0, 0.0, 0usize);
        let (mut g1_sum, mut g2_sum) = (vec![0.0; layers], vec![0.0; layers]);
        for batch in order.chunks(t.batch) {
            let mut grads: Vec<Matrix<f32>> = params.tensors().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
            let weight = 1.0 / batch.len() as f32;
            for &i in batch {
                let s = &train[i];
                let mut tape = Tape::new();
                let g = build_forward(&mut tape, params, &cfg.model, &s.image, plan.opts, Some(&plan.trainable))?;
                let loss = objective_var(&mut tape, &g, cfg.model.heads, s.label, plan.align.then_some(&s.teacher), t.lambda)?;
                let total = tape.value(loss.total)[(0, 0)];
                if !total.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "{} epoch {epoch}: loss is {total} on sample {i}",
                        plan.name
                    )));
                }
                task_sum += tape.value(loss.task)[(0, 0)] as f64;
                align_sum += match loss.alignment {
                    Some(a) => tape.value(a)[(0, 0)] as f64,
                    None => measured_alignment(&tape, &g, cfg.model.heads, &s.teacher, t.lambda)?,
                };
                correct += usize::from(argmax(tape.value(g.logits).data()) == s.label);
                for (l, lv) in g.layers.iter().enumerate() {
                    if let Some((a, b)) = lv.gates {
                        let (va, vb) = (tape.value(a), tape.value(b));
                        g1_sum[l] += va.data().iter().map(|&v| v as f64).sum::<f64>() / va.len() as f64;
                        g2_sum[l] += vb.data().iter().map(|&v| v as f64).sum::<f64>() / vb.len() as f64;
                    }
                }
                let back = tape.backward(loss.total)?;
                for (k, v) in g.params.iter().enumerate() {
                    if let Some(gr) = back.get(*v) {
                        grads[k].axpy(weight, gr)?;
                    }
                }
            }
            let lr = cosine_lr(plan.lr, stage_step, total_steps);
            opt.step(params.tensors_mut(), &grads, &plan.trainable, lr)?;
            stage_step += 1;
            *steps += 1;
        }
        let n = train.len() as f64;
        let val_acc = accuracy(cfg, params, plan.opts, data.val())?;
        let gated = plan.opts.interaction;
        records.push(EpochRecord {
            stage: plan.name.to_string(),
            switches: plan.switches.tag(),
            epoch,
            task_loss: task_sum / n,
            align_loss: align_sum / n,
            train_acc: correct as f64 / n,
            val_acc,
            gate_g1: if gated { g1_sum.iter().map(|v| v / n).collect() } else { Vec::new() },
            gate_g2: if gated { g2_sum.iter().map(|v| v / n).collect() } else { Vec::new() },
            steps: *steps,
        });
        best.offer(val_acc, params);
    }
    Ok(())
}

/// Standard ViT training from `init` or fresh weights.
pub fn pretrain(cfg: &RunConfig, data: &Dataset, init: Option<Params<f32>>) -> Result<Pretrained> {
    cfg.validate()?;
    let mut params = match init {
        Some(p) => p,
        None => init_backbone(&cfg.model, &mut rng(cfg.train.seed, STREAM_INIT))?,
    };
    let plan = StagePlan {
        name: "pretrain",
        epochs: cfg.train.pretrain_epochs,
        lr: cfg.train.pretrain_lr,
        opts: ForwardOptions::baseline(),
        trainable: freeze_mask(&params, FreezePolicy::Pretrain),
        align: false,
        order_stream: STREAM_PRETRAIN_ORDER,
        switches: cfg.switches,
    };
    let (mut steps, mut records) = (0, Vec::new());
    let mut best = Best {
        val_acc: 0.0,
        params: None,
    };
    run_stage(cfg, data, &mut params, &plan, &mut steps, &mut best, &mut records)?;
    Ok(Pretrained {
        params,
        records,
        steps,
        best,
    })
}

/// Wraps existing weights as a finished pretrain stage with no records.
pub fn pretrained_from(params: Params<f32>) -> Pretrained {
    Pretrained {
        params,
        records: Vec::new(),
        steps: 0,
        best: Best {
            val_acc: 0.0,
            params: None,
        },
    }
}

/// Forward options and trainable flags for the finetune stage. Attaches the
/// interaction pathway as the switches require.
pub fn finetune_setup(cfg: &RunConfig, params: &mut Params<f32>) -> Result<(ForwardOptions, Vec<bool>)> {
    let sw = cfg.switches;
    if sw.iq {
        attach_interaction(params, &cfg.model, sw.gc, &mut rng(cfg.train.seed, STREAM_INTERACTION_INIT))?;
    }
    let opts = ForwardOptions {
        interaction: sw.iq,
        gates: if sw.gc { GateSource::Network } else { GateSource::Fixed(0.5, 0.5) },
    };
    let policy = cfg.train.freeze.resolve(sw);
    let mut trainable = freeze_mask(params, policy);
    if !sw.iq && sw.ic && policy == FreezePolicy::InteractionFinetune {
        // the constraint acts on the original queries, which must then move
        for (flag, name) in trainable.iter_mut().zip(params.names()) {
            if names::local(name) == names::WQ && name.starts_with("layers.") {
                *flag = true;
            }
        }
    }
    Ok((opts, trainable))
}

/// Interaction finetuning from a pretrained state.
pub fn finetune(cfg: &RunConfig, data: &Dataset, from: &Pretrained) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = from.params.clone();
    let (opts, trainable) = finetune_setup(cfg, &mut params)?;
    let plan = StagePlan {
        name: "finetune",
        epochs: cfg.train.epochs,
        lr: cfg.train.lr,
        opts,
        trainable,
        align: cfg.switches.ic,
        order_stream: STREAM_FINETUNE_ORDER,
        switches: cfg.switches,
    };
    let mut records = from.records.clone();
    for r in &mut records {
        r.switches = cfg.switches.tag();
    }
    let mut steps = from.steps;
    let mut best = from.best.clone();
    run_stage(cfg, data, &mut params, &plan, &mut steps, &mut best, &mut records)?;
    let best_val_acc = best.val_acc;
    Ok(TrainOutcome {
        config: cfg.clone(),
        best: best.params.unwrap_or_else(|| params.clone()),
        best_val_acc,
        params,
        records,
    })
}

fn check_compatible(cfg: &RunConfig, ck: &Checkpoint) -> Result<()> {
    if ck.config != cfg.model {
        return Err(Error::Config(format!(
            "checkpoint model {:?} does not match the configured model {:?}",
            ck.config, cfg.model
        )));
    }
    Ok(())
}

/// Runs the configured stages. A resumed two-stage run treats the checkpoint
/// as the pretrained backbone and only finetunes.
pub fn train(cfg: &RunConfig, data: &Dataset, resume: Option<&Checkpoint>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if let Some(ck) = resume {
        check_compatible(cfg, ck)?;
    }
    let init = resume.map(|c| c.params.clone());
    match cfg.train.stage {
        Stage::Pretrain => {
            let p = pretrain(cfg, data, init)?;
            Ok(TrainOutcome {
                config: cfg.clone(),
                best_val_acc: p.best.val_acc,
                best: p.best.params.clone().unwrap_or_else(|| p.params.clone()),
                params: p.params,
                records: p.records,
            })
        }
        Stage::Finetune => {
            let params = match init {
                Some(p) => p,
                None => init_backbone(&cfg.model, &mut rng(cfg.train.seed, STREAM_INIT))?,
            };
            finetune(cfg, data, &pretrained_from(params))
        }
        Stage::TwoStage => {
            let pre = match init {
                Some(p) => pretrained_from(p),
                None => pretrain(cfg, data, None)?,
            };
            finetune(cfg, data, &pre)
        }
    }
}

/// One finetune run per switch setting, all sharing `pre`.
pub fn ablate(cfg: &RunConfig, data: &Dataset, pre: &Pretrained, settings: &[Switches]) -> Result<Vec<TrainOutcome>> {
    settings
        .iter()
        .map(|&sw| {
            let c = RunConfig {
                switches: sw,
                ..cfg.clone()
            };
            finetune(&c, data, pre)
        })
        .collect()
}
