use std::io::Write;
use std::path::{Path, PathBuf};

use super::{CliError, Context};
use crate::analysis::{evaluate, gate_trend, heatmap, human_map, HeatmapScale, HumanAnnotation};
use crate::interaction::{harsanyi_and, sparsify, FnOracle, HarsanyiTable, MaskedOracle, Subset, TableOracle};
use crate::model::Checkpoint;
use crate::teacher::{mask_teacher, read_tim, write_tim, TeacherMap};
use crate::train::{self, finetune, gen_synthetic, pretrain, Dataset, RunConfig, Sample, Switches};

#[derive(Clone, Copy, Debug)]
pub(crate) enum Split {
    Train,
    Val,
    All,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Oracle {
    Additive,
    PairAnd,
    File,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError {
        status: super::ExitStatus::Runtime,
        message: format!("{}: {e}", path.display()),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| io_err(Path::new("<stdout>"), e))
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("--config: cannot read {}: {e}", path.display())))?;
    train::validate_config(&text).context(&format!("--config {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path).context("--ckpt")
}

fn load_data(path: &Path) -> Result<Dataset, CliError> {
    Dataset::load(path).context("--data")
}

fn select(data: &Dataset, split: Split) -> &[Sample] {
    match split {
        Split::Train => data.train(),
        Split::Val => data.val(),
        Split::All => &data.samples,
    }
}

fn offset(data: &Dataset, split: Split) -> usize {
    match split {
        Split::Val => data.spec.train_len(),
        Split::Train | Split::All => 0,
    }
}

fn sample_file(dir: &Path, index: usize, ext: &str) -> PathBuf {
    dir.join(format!("{index:05}.{ext}"))
}

pub(crate) fn train(
    config: &Path,
    resume: Option<&Path>,
    dir: &Path,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let ck = resume.map(|p| Checkpoint::load(p).context("--resume")).transpose()?;
    let data = gen_synthetic(&cfg.data_spec(), cfg.train.seed).context("data")?;
    let _ = writeln!(err, "training {} samples, writing to {}", data.samples.len(), dir.display());
    let outcome = train::train(&cfg, &data, ck.as_ref()).context("train")?;
    outcome.write(dir).context("--out")?;
    data.save(&dir.join("data")).context("--out")?;
    emit(out, &outcome.log())
}

pub(crate) fn eval(
    ckpt: &Path,
    data_dir: &Path,
    teachers: Option<&Path>,
    human: Option<&Path>,
    split: Split,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let ck = load_checkpoint(ckpt)?;
    let data = load_data(data_dir)?;
    let samples = select(&data, split);
    if samples.is_empty() {
        return Err(CliError::usage("--split: selected split is empty"));
    }
    let first = offset(&data, split);
    let maps: Vec<TeacherMap> = match teachers {
        Some(dir) => (first..first + samples.len())
            .map(|i| read_tim(&sample_file(dir, i, "tim")).context("--teachers"))
            .collect::<Result<_, _>>()?,
        None => samples.iter().map(|s| s.teacher.clone()).collect(),
    };
    let humans: Option<Vec<TeacherMap>> = human
        .map(|dir| {
            (first..first + samples.len())
                .map(|i| {
                    let ann = HumanAnnotation::load(&sample_file(dir, i, "txt")).context("--human")?;
                    human_map(&ann).context("--human")
                })
                .collect::<Result<_, _>>()
        })
        .transpose()?;
    let report = evaluate(&ck.params, &ck.config, samples, &maps, humans.as_deref()).context("eval")?;
    emit(out, &(report.to_json() + "\n"))
}

pub(crate) fn teacher_gen(data_dir: &Path, dir: &Path, sigma: Option<f64>, out: &mut dyn Write) -> Result<(), CliError> {
    let data = load_data(data_dir)?;
    let sigma = sigma.unwrap_or(data.spec.noise_sigma);
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (i, s) in data.samples.iter().enumerate() {
        let map = mask_teacher(&s.mask, sigma, s.seed).context("--sigma")?;
        write_tim(&map, &sample_file(dir, i, "tim")).context("--out")?;
    }
    emit(out, &format!("wrote {} teacher maps to {}\n", data.samples.len(), dir.display()))
}

fn oracle_table(n: usize, kind: Oracle, file: Option<&Path>) -> Result<HarsanyiTable, CliError> {
    match kind {
        Oracle::Additive => harsanyi_and(&FnOracle::new(n, |s: Subset| s.len() as f64)).context("--oracle addl"),
        Oracle::PairAnd => {
            if n < 2 {
                return Err(CliError::usage("--n: the `and` oracle needs at least 2 variables"));
            }
            let pair = Subset::of(&[1, 2]);
            harsanyi_and(&FnOracle::new(n, move |s: Subset| if pair.is_subset_of(s) { 1.0 } else { 0.0 }))
                .context("--oracle and")
        }
        Oracle::File => {
            let path = file.ok_or_else(|| CliError::usage("--file is required with --oracle file"))?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("--file: cannot read {}: {e}", path.display())))?;
            let shown = path.display().to_string();
            let values = text
                .lines()
                .enumerate()
                .flat_map(|(no, line)| {
                    let line = line.split('#').next().unwrap_or("");
                    line.split_whitespace().map(move |t| (no + 1, t))
                })
                .map(|(no, t)| {
                    t.parse::<f64>()
                        .map_err(|_| CliError::from_error("--file", crate::Error::format(&shown, format!("line {no}: `{t}` is not a number"))))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let oracle = TableOracle::new(values).context(&format!("--file {shown}"))?;
            if oracle.variables() != n {
                return Err(CliError::from_error(
                    "--n",
                    crate::Error::InvalidArgument(format!("{shown} holds an oracle over {} variables, not {n}", oracle.variables())),
                ));
            }
            harsanyi_and(&oracle).context(&format!("--file {shown}"))
        }
    }
}

pub(crate) fn decompose(
    n: usize,
    kind: Oracle,
    file: Option<&Path>,
    top: Option<usize>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    if n > crate::interaction::MAX_VARIABLES {
        return Err(CliError::usage(format!(
            "--n: {n} exceeds the limit of {}",
            crate::interaction::MAX_VARIABLES
        )));
    }
    let table = oracle_table(n, kind, file)?;
    match top {
        None => {
            let mut buf = Vec::new();
            table.write_listing(&mut buf).map_err(|e| io_err(Path::new("<stdout>"), e))?;
            out.write_all(&buf).map_err(|e| io_err(Path::new("<stdout>"), e))
        }
        Some(0) => Err(CliError::usage("--top must be at least 1")),
        Some(k) => {
            let width = n.div_ceil(4).max(1);
            let text: String = sparsify(&table, k)
                .into_iter()
                .map(|(s, e)| format!("S={:0width$x} I={e}\n", s.0))
                .collect();
            emit(out, &text)
        }
    }
}

fn parse_scale(text: &str) -> Result<HeatmapScale, CliError> {
    if text == "per-map" {
        return Ok(HeatmapScale::PerMap);
    }
    text.strip_prefix("global:")
        .and_then(|v| v.parse::<f64>().ok())
        .filter(|v| *v > 0.0 && v.is_finite())
        .map(HeatmapScale::Global)
        .ok_or_else(|| CliError::usage(format!("--scale: expected `per-map` or `global:<positive number>`, got `{text}`")))
}

pub(crate) fn visualize(tim: &Path, path: &Path, scale: &str, upsample: usize) -> Result<(), CliError> {
    let scale = parse_scale(scale)?;
    if upsample == 0 {
        return Err(CliError::usage("--upsample must be at least 1"));
    }
    let map = read_tim(tim).context("--tim")?;
    let (gh, gw) = map.grid();
    let pgm = heatmap(&map.to_f64(), gh, gw, scale, upsample).context("--tim")?;
    std::fs::write(path, pgm).map_err(|e| io_err(path, e))
}

pub(crate) fn gate_report(ckpt: &Path, data_dir: &Path, split: Split, out: &mut dyn Write) -> Result<(), CliError> {
    let ck = load_checkpoint(ckpt)?;
    let data = load_data(data_dir)?;
    let trend = gate_trend(&ck.params, &ck.config, select(&data, split)).context("--ckpt")?;
    emit(out, &(trend.to_json() + "\n"))
}

pub(crate) fn ablate(config: &Path, grid: bool, dir: &Path, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let data = gen_synthetic(&cfg.data_spec(), cfg.train.seed).context("data")?;
    let settings = if grid { Switches::grid() } else { vec![cfg.switches] };
    let _ = writeln!(err, "pretraining shared backbone");
    let pre = pretrain(&cfg, &data, None).context("pretrain")?;
    let mut summary = String::from("switches\tiq\tic\tgc\tfinal_val_acc\tbest_val_acc\tfinal_align_loss\n");
    for sw in settings {
        let _ = writeln!(err, "finetuning {}", sw.tag());
        let run = RunConfig { switches: sw, ..cfg.clone() };
        let outcome = finetune(&run, &data, &pre).context("ablate")?;
        let sub = dir.join(sw.tag());
        outcome.write(&sub).context("--out")?;
        let last = outcome.records.last();
        summary.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.6}\n",
            sw.tag(),
            sw.iq as u8,
            sw.ic as u8,
            sw.gc as u8,
            last.map_or(0.0, |r| r.val_acc),
            outcome.best_val_acc,
            last.map_or(0.0, |r| r.align_loss),
        ));
    }
    let path = dir.join("summary.tsv");
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    std::fs::write(&path, &summary).map_err(|e| io_err(&path, e))?;
    emit(out, &summary)
}
