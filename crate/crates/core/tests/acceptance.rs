//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and a
//! tally. With `--strict` any failing criterion also fails the process:
//!
//! ```bash
//! cargo test --test acceptance -- --strict
//! cargo test --test acceptance -- gradient determinism
//! ```
//!
//! The three training criteria share one set of runs (five seeds, one
//! pretrained backbone per seed, five finetune settings each).

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ivit::analysis::evaluate;
use ivit::interaction::{harsanyi_and, reconstruct_value, Subset, TableOracle};
use ivit::model::{
    attach_interaction, baseline_forward, build_forward, forward_with, init_backbone, names, Checkpoint, ForwardOptions,
    GateMode, GateSource, Image, ModelConfig, Params,
};
use ivit::numerics::{grad_check, kl_rows, softmax_rows, Entries, Matrix, Tape};
use ivit::teacher::{
    classification_teacher, decode_tim, dense_teacher, encode_tim, PromptId, Provenance, StrengthRole, StrengthVector,
    TeacherMap,
};
use ivit::train::{finetune, gen_synthetic, objective_var, pretrain, Dataset, EpochRecord, RunConfig, Switches};

// Pinned tolerances and budgets.
const RECONSTRUCT_TOL: f64 = 1e-9;
const RECONSTRUCT_BUDGET: Duration = Duration::from_secs(10);
const GRAD_EPS: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-6;
/// Absolute allowance added to the relative one; covers the O(eps^2)
/// truncation error of central differences on near-zero derivatives.
const GRAD_ABS_FLOOR: f64 = 1e-9;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const GRAD_ENTRIES_PER_TENSOR: usize = 12;
const PROPERTY_CASES: u32 = 1000;
const SOFTMAX_TOL: f64 = 1e-6;
const TEACHER_TOL: f64 = 1e-4;
const CONVEX_TOL: f64 = 1e-5;
const REDUCTION_INPUTS: usize = 100;
const SPEEDUP_RATIO: f64 = 0.7;
const TARGET_TRAIN_ACC: f64 = 0.95;
const COSINE_MIN: f64 = 0.8;
const COSINE_MARGIN: f64 = 0.1;
const ROUND_TRIPS: usize = 100;
const EXPERIMENT_BUDGET: Duration = Duration::from_secs(30 * 60);
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Verdict {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn verdict(name: &'static str, passed: bool, detail: String) -> Verdict {
    Verdict { name, passed, detail }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn harsanyi_reconstruction() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = 1 + case % 8;
        let values: Vec<f64> = (0..1 << n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let oracle = TableOracle::new(values.clone()).unwrap();
        let table = harsanyi_and(&oracle).unwrap();
        for s in Subset::full(n).submasks() {
            let err = (reconstruct_value(&table, s).unwrap() - values[s.0 as usize]).abs();
            worst = worst.max(err);
        }
    }
    let took = start.elapsed();
    verdict(
        "harsanyi reconstruction",
        worst <= RECONSTRUCT_TOL && took <= RECONSTRUCT_BUDGET,
        format!("100 oracles, n<=8, max |error| {worst:.2e} (tol {RECONSTRUCT_TOL:.0e}), {took:.2?}"),
    )
}

fn randomized(params: &mut Params<f64>, rng: &mut ChaCha8Rng) {
    // move every tensor off its initializer so no gradient is structurally zero
    for m in params.tensors_mut() {
        for v in m.data_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
}

fn gradient_fidelity() -> Verdict {
    let start = Instant::now();
    let cfg = ModelConfig {
        layers: 2,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut params: Params<f64> = init_backbone(&cfg, &mut rng).unwrap();
    attach_interaction(&mut params, &cfg, true, &mut rng).unwrap();
    randomized(&mut params, &mut rng);
    let spec = ivit::train::DataSpec {
        samples: 10,
        ..Default::default()
    };
    let data = gen_synthetic(&spec, 3).unwrap();
    let sample = &data.samples[4];
    let opts = ForwardOptions::infer(&params);
    let all = vec![true; params.len()];
    let objective = |p: &Params<f64>, grads: bool| -> (f64, Vec<Matrix<f64>>) {
        let mut tape = Tape::new();
        let graph = build_forward(&mut tape, p, &cfg, &sample.image, opts, Some(&all)).unwrap();
        let loss = objective_var(&mut tape, &graph, cfg.heads, sample.label, Some(&sample.teacher), 1e-3).unwrap();
        let value = tape.value(loss.total)[(0, 0)];
        if !grads {
            return (value, Vec::new());
        }
        let g = tape.backward(loss.total).unwrap();
        (value, graph.params.iter().map(|&v| g.get_or_zero(v).0).collect())
    };
    let (_, analytic) = objective(&params, true);
    let names: Vec<String> = params.names().to_vec();
    let mut tensors = params.tensors().to_vec();
    let reports = grad_check(
        &names,
        &mut tensors,
        &analytic,
        GRAD_EPS,
        GRAD_TOL,
        Entries::Spread(GRAD_ENTRIES_PER_TENSOR),
        |t| {
            let mut p = params.clone();
            p.tensors_mut().clone_from_slice(t);
            Ok(objective(&p, false).0)
        },
    )
    .unwrap();
    // |a - n| <= atol + rtol * |n|, the usual combined form
    let within = |r: &&ivit::numerics::GradientReport| (r.analytic - r.numeric).abs() <= GRAD_ABS_FLOOR + GRAD_TOL * r.numeric.abs();
    let failing = reports.iter().filter(|r| !within(r)).count();
    let by_floor = reports.iter().filter(|r| !r.passed && within(r)).count();
    let max_abs = reports.iter().map(|r| (r.analytic - r.numeric).abs()).fold(0.0, f64::max);
    let took = start.elapsed();
    verdict(
        "gradient fidelity",
        failing == 0 && took <= GRAD_BUDGET,
        format!(
            "{} entries over {} tensors, max rel error {:.2e}, max abs error {max_abs:.2e}, \
             {by_floor} small-gradient entries within the {GRAD_ABS_FLOOR:.0e} absolute floor, {failing} failing, {took:.2?}",
            reports.len(),
            names.len(),
            reports[0].relative_error,
        ),
    )
}

fn strength(role: StrengthRole) -> impl Strategy<Value = StrengthVector> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0..5.0f64], 16)
        .prop_map(move |v| StrengthVector::new(role, v).unwrap())
}

fn check_map(map: &TeacherMap) -> Result<(), TestCaseError> {
    let v = map.to_f64();
    prop_assert!(v.iter().all(|&x| x >= 0.0));
    let sum: f64 = v.iter().sum();
    prop_assert!((sum - 1.0).abs() <= TEACHER_TOL, "sum {}", sum);
    Ok(())
}

fn convex_model() -> (ModelConfig, Params<f64>) {
    let cfg = ModelConfig {
        image_size: 8,
        patch_size: 4,
        embed_dim: 8,
        heads: 2,
        layers: 2,
        classes: 3,
        gate_mode: GateMode::Convex,
        gcn_hidden: 4,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = init_backbone(&cfg, &mut rng).unwrap();
    attach_interaction(&mut params, &cfg, true, &mut rng).unwrap();
    for name in [names::layer(0, names::GATE_W2), names::layer(1, names::GATE_W2)] {
        for v in params.get_mut(&name).unwrap().data_mut() {
            *v = rng.gen_range(-2.0..2.0);
        }
    }
    (cfg, params)
}

fn distribution_invariants() -> Verdict {
    let start = Instant::now();
    let (cfg, params) = convex_model();
    let opts = ForwardOptions::infer(&params);
    let case = (
        prop::collection::vec(-30.0..30.0f64, 12),
        strength(StrengthRole::Foreground),
        strength(StrengthRole::Background),
        prop::collection::vec(strength(StrengthRole::Object), 1..4),
        any::<bool>(),
        prop::collection::vec(0.0..1.0f32, 64),
        prop::collection::vec(0.0..1.0f64, 6),
        prop::collection::vec(0.0..1.0f64, 6),
    );
    let mut runner = TestRunner::new(PropConfig {
        cases: PROPERTY_CASES,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let result = runner.run(&case, |(logits, fore, back, objects, degenerate, pixels, p, q)| {
        let m = softmax_rows(&Matrix::from_vec(3, 4, logits).unwrap()).unwrap();
        for r in 0..m.rows() {
            let s: f64 = m.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() <= SOFTMAX_TOL);
        }
        // a degenerate case hands the same vector to both roles
        let back = if degenerate {
            StrengthVector::new(StrengthRole::Background, fore.values().to_vec()).unwrap()
        } else {
            back
        };
        check_map(&classification_teacher(&fore, &back).unwrap().map)?;
        check_map(&dense_teacher(&objects, &back).unwrap().map)?;

        let image = Image::new(8, 8, 1, pixels).unwrap();
        let (_, trace) = forward_with(&image, &params, &cfg, opts).unwrap();
        for layer in &trace.layers {
            for r in 0..layer.c_f.rows() {
                let s: f64 = layer.c_f.row(r).iter().sum();
                prop_assert!((s - 1.0).abs() <= CONVEX_TOL, "fused row sums to {}", s);
            }
        }
        let (p, q) = (ivit::numerics::l1_normalize(&p), ivit::numerics::l1_normalize(&q));
        if p.iter().sum::<f64>() > 0.0 && q.iter().sum::<f64>() > 0.0 {
            prop_assert!(kl_rows(&p, &q, 1e-3).unwrap() >= 0.0);
        }
        Ok(())
    });
    let took = start.elapsed();
    let detail = match &result {
        Ok(()) => format!("{PROPERTY_CASES} cases, {took:.2?}"),
        Err(e) => format!("{e}"),
    };
    verdict("distribution invariants", result.is_ok(), detail)
}

fn baseline_reduction() -> Verdict {
    let cfg = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut params: Params<f32> = init_backbone(&cfg, &mut rng).unwrap();
    attach_interaction(&mut params, &cfg, true, &mut rng).unwrap();
    for l in 0..cfg.layers {
        let wq = params.get(&names::layer(l, names::WQ)).unwrap().clone();
        *params.get_mut(&names::layer(l, names::WQ_INT)).unwrap() = wq;
    }
    let forced = ForwardOptions {
        interaction: true,
        gates: GateSource::Fixed(0.0, 1.0),
    };
    let mut mismatched = 0;
    for _ in 0..REDUCTION_INPUTS {
        let data: Vec<f32> = (0..cfg.image_size * cfg.image_size).map(|_| rng.gen()).collect();
        let image = Image::new(cfg.image_size, cfg.image_size, 1, data).unwrap();
        let base = baseline_forward(&image, &params, &cfg).unwrap();
        let (ivit, _) = forward_with(&image, &params, &cfg, forced).unwrap();
        let same = base.len() == ivit.len() && base.iter().zip(&ivit).all(|(a, b)| a.to_bits() == b.to_bits());
        mismatched += usize::from(!same);
    }
    verdict(
        "baseline reduction",
        mismatched == 0,
        format!("{REDUCTION_INPUTS} inputs on the desk config, {mismatched} differ bitwise"),
    )
}

/// Runs shared by the convergence, alignment and ablation criteria.
struct SeedRuns {
    pretrain_steps: usize,
    baseline: Vec<EpochRecord>,
    full: Vec<EpochRecord>,
    no_gc: Vec<EpochRecord>,
    no_ic: Vec<EpochRecord>,
    no_iq: Vec<EpochRecord>,
    cosine_agt: f64,
    cosine_vfm: f64,
}

fn experiment_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("model.embed_dim", "32"),
        ("model.heads", "4"),
        ("model.layers", "3"),
        ("train.pretrain_epochs", "2"),
        ("train.epochs", "8"),
        ("train.lr", "0.05"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.train.seed = seed;
    cfg.validate().unwrap();
    cfg
}

fn run_seed(seed: u64) -> SeedRuns {
    let cfg = experiment_config(seed);
    let data: Dataset = gen_synthetic(&cfg.data_spec(), seed).unwrap();
    let pre = pretrain(&cfg, &data, None).unwrap();
    let run = |iq, ic, gc| {
        let c = RunConfig {
            switches: Switches { iq, ic, gc },
            ..cfg.clone()
        };
        finetune(&c, &data, &pre).unwrap()
    };
    let full = run(true, true, true);
    let val = data.val();
    let teachers: Vec<TeacherMap> = val.iter().map(|s| s.teacher.clone()).collect();
    let report = evaluate(&full.params, &cfg.model, val, &teachers, None).unwrap();
    let finetuned = |o: ivit::train::TrainOutcome| o.records[pre.records.len()..].to_vec();
    SeedRuns {
        pretrain_steps: pre.steps,
        baseline: finetuned(run(false, false, false)),
        no_gc: finetuned(run(true, true, false)),
        no_ic: finetuned(run(true, false, true)),
        no_iq: finetuned(run(false, true, false)),
        cosine_agt: report.cosine_agt_teacher.unwrap(),
        cosine_vfm: report.cosine_vfm_teacher,
        full: finetuned(full),
    }
}

/// Finetune steps until the epoch's training accuracy first reaches the
/// target; runs that never reach it count as one epoch past the end.
fn steps_to_target(records: &[EpochRecord], pretrain_steps: usize) -> f64 {
    let per_epoch = records[0].steps - pretrain_steps;
    records
        .iter()
        .find(|r| r.train_acc >= TARGET_TRAIN_ACC)
        .map_or(records.last().unwrap().steps - pretrain_steps + per_epoch, |r| r.steps - pretrain_steps) as f64
}

fn final_val(records: &[EpochRecord]) -> f64 {
    records.last().unwrap().val_acc
}

fn convergence(runs: &[SeedRuns], took: Duration) -> Verdict {
    let ivit = median(runs.iter().map(|r| steps_to_target(&r.full, r.pretrain_steps)).collect());
    let base = median(runs.iter().map(|r| steps_to_target(&r.baseline, r.pretrain_steps)).collect());
    verdict(
        "convergence speedup",
        ivit <= SPEEDUP_RATIO * base && took <= EXPERIMENT_BUDGET,
        format!(
            "median steps to {:.0}% train acc: interaction {ivit} vs continued ViT {base} (ratio {:.2}, need <= {SPEEDUP_RATIO}), experiments {took:.0?}",
            TARGET_TRAIN_ACC * 100.0,
            ivit / base
        ),
    )
}

fn alignment(runs: &[SeedRuns]) -> Verdict {
    let agt = median(runs.iter().map(|r| r.cosine_agt).collect());
    let vfm = median(runs.iter().map(|r| r.cosine_vfm).collect());
    verdict(
        "alignment ordering",
        agt >= COSINE_MIN && agt - vfm >= COSINE_MARGIN,
        format!("median cosine to teacher: interaction {agt:.3} (need >= {COSINE_MIN}), original {vfm:.3} (margin need >= {COSINE_MARGIN})"),
    )
}

fn ablation(runs: &[SeedRuns]) -> Verdict {
    let med = |f: fn(&SeedRuns) -> &Vec<EpochRecord>| median(runs.iter().map(|r| final_val(f(r))).collect());
    let full = med(|r| &r.full);
    let no_gc = med(|r| &r.no_gc);
    let no_ic = med(|r| &r.no_ic);
    let no_iq = med(|r| &r.no_iq);
    let base = med(|r| &r.baseline);
    let worst = no_iq < full.min(no_gc).min(no_ic).min(base);
    verdict(
        "ablation ordering",
        full >= no_gc && full >= no_ic && worst,
        format!("median final val acc: full {full:.4}, no-GC {no_gc:.4}, no-IC {no_ic:.4}, no-IQ {no_iq:.4}, ViT {base:.4}"),
    )
}

fn random_map(rng: &mut ChaCha8Rng) -> TeacherMap {
    let (gh, gw) = (rng.gen_range(1..12), rng.gen_range(1..12));
    let raw: Vec<f64> = (0..gh * gw)
        .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen::<f64>() })
        .collect();
    let sum: f64 = raw.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let values: Vec<f32> = if sum > 0.0 && raw.iter().any(|&v| v > 0.0) {
        raw.iter().map(|v| (v / sum) as f32).collect()
    } else {
        vec![1.0 / (gh * gw) as f32; gh * gw]
    };
    let provenance = [Provenance::Synthetic, Provenance::VlmProbe, Provenance::Human][rng.gen_range(0..3)];
    let prompt = [PromptId::None, PromptId::Numbered(1), PromptId::Numbered(2), PromptId::Numbered(3), PromptId::Dense]
        [rng.gen_range(0..5)];
    TeacherMap::new(gh, gw, values, provenance, prompt, 1e-4).unwrap()
}

fn random_checkpoint(rng: &mut ChaCha8Rng) -> Checkpoint {
    let patch = [2, 4][rng.gen_range(0..2)];
    let heads = rng.gen_range(1..4);
    let config = ModelConfig {
        image_size: patch * rng.gen_range(1..5),
        patch_size: patch,
        embed_dim: heads * rng.gen_range(1..5),
        heads,
        layers: rng.gen_range(1..4),
        classes: rng.gen_range(1..6),
        gate_mode: if rng.gen() { GateMode::Convex } else { GateMode::Sigmoid },
        gcn_hidden: rng.gen_range(1..6),
        ..ModelConfig::default()
    };
    let mut params = init_backbone(&config, rng).unwrap();
    if rng.gen() {
        let gates = rng.gen();
        attach_interaction(&mut params, &config, gates, rng).unwrap();
    }
    Checkpoint { config, params }
}

fn format_round_trips() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut broken = Vec::new();
    for i in 0..ROUND_TRIPS {
        let map = random_map(&mut rng);
        let bytes = encode_tim(&map);
        let back = decode_tim(&bytes, "memory").unwrap();
        if back != map || encode_tim(&back) != bytes {
            broken.push(format!("tim #{i}"));
        }
        let ck = random_checkpoint(&mut rng);
        let bytes = ck.encode().unwrap();
        let back = Checkpoint::decode(&bytes, "memory").unwrap();
        if back != ck || back.encode().unwrap() != bytes {
            broken.push(format!("checkpoint #{i}"));
        }
    }
    let corrupt = fixtures().join("corrupt");
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&corrupt)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    let bin = env!("CARGO_BIN_EXE_ivit");
    let scratch = tempfile::TempDir::new().unwrap();
    for path in &entries {
        let p = path.to_str().unwrap();
        let args: Vec<&str> = match path.extension().and_then(|e| e.to_str()) {
            Some("tim") => vec!["visualize", "--tim", p, "--out", "/dev/null"],
            _ => vec!["gate-report", "--ckpt", p, "--data", scratch.path().to_str().unwrap()],
        };
        let out = Command::new(bin).args(&args).output().unwrap();
        if out.status.code() != Some(2) {
            broken.push(format!("{} exited {:?}", path.file_name().unwrap().to_string_lossy(), out.status.code()));
        }
    }
    verdict(
        "format round trips",
        broken.is_empty(),
        format!(
            "{ROUND_TRIPS} TIM + {ROUND_TRIPS} checkpoints bitwise, {} corrupt fixtures exit 2{}",
            entries.len(),
            if broken.is_empty() { String::new() } else { format!("; broken: {}", broken.join(", ")) }
        ),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "model.embed_dim = 16\nmodel.heads = 2\nmodel.layers = 2\ndata.samples = 200\n\
         train.epochs = 2\ntrain.pretrain_epochs = 2\ntrain.seed = 21\n",
    )
    .unwrap();
    let logs: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let status = Command::new(env!("CARGO_BIN_EXE_ivit"))
                .args(["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
                .output()
                .unwrap();
            assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
            std::fs::read(out.join("metrics.jsonl")).unwrap()
        })
        .collect();
    verdict(
        "determinism",
        logs[0] == logs[1],
        format!("two train runs, metrics logs of {} and {} bytes identical: {}", logs[0].len(), logs[1].len(), logs[0] == logs[1]),
    )
}

type Check = (&'static str, fn() -> Verdict);

const TRAINING: [&str; 3] = ["convergence speedup", "alignment ordering", "ablation ordering"];

/// Free arguments select criteria by substring, e.g.
/// `cargo test --test acceptance -- gradient`.
fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strict = args.iter().any(|a| a == "--strict");
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut verdicts = Vec::new();
    let mut report = |v: Verdict| {
        println!("{} {}: {}", if v.passed { "PASS" } else { "FAIL" }, v.name, v.detail);
        verdicts.push(v.passed);
    };
    let before: [Check; 4] = [
        ("harsanyi reconstruction", harsanyi_reconstruction),
        ("gradient fidelity", gradient_fidelity),
        ("distribution invariants", distribution_invariants),
        ("baseline reduction", baseline_reduction),
    ];
    for (name, check) in before {
        if wanted(name) {
            report(check());
        }
    }
    if TRAINING.iter().any(|n| wanted(n)) {
        let start = Instant::now();
        let runs: Vec<SeedRuns> = SEEDS.iter().map(|&s| run_seed(s)).collect();
        let took = start.elapsed();
        for v in [convergence(&runs, took), alignment(&runs), ablation(&runs)] {
            if wanted(v.name) {
                report(v);
            }
        }
    }
    let after: [Check; 2] = [("format round trips", format_round_trips), ("determinism", determinism)];
    for (name, check) in after {
        if wanted(name) {
            report(check());
        }
    }
    let failed = verdicts.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", verdicts.len() - failed);
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
