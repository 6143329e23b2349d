//! Task and alignment objectives.

use crate::error::{Error, Result};
use crate::model::{ForwardGraph, InteractionTrace, LayerVars};
use crate::numerics::ops::{kl_rows, smooth, NORM_FLOOR};
use crate::numerics::{Matrix, Scalar, Tape, Var};
use crate::teacher::TeacherMap;

/// Task, alignment and their sum, in nats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub task: f64,
    pub alignment: f64,
    pub total: f64,
}

/// The class token's interaction distribution over patches: head-mean of a
/// stacked `(H·T) × T` matrix, row 0, class column dropped, renormalized.
pub fn class_row<T: Scalar>(stack: &Matrix<T>, heads: usize) -> Result<Vec<f64>> {
    let t = stack.cols();
    if heads == 0 || stack.rows() != heads * t || t < 2 {
        return Err(Error::shape(format!(
            "class_row: {}x{} is not a stack of {heads} square matrices",
            stack.rows(),
            t
        )));
    }
    let mut row = vec![0.0; t - 1];
    for h in 0..heads {
        for (acc, v) in row.iter_mut().zip(&stack.row(h * t)[1..]) {
            *acc += v.as_f64();
        }
    }
    // the head mean cancels in the renormalization but is kept for clarity
    row.iter_mut().for_each(|v| *v /= heads as f64);
    let s = row.iter().sum::<f64>().max(NORM_FLOOR);
    row.iter_mut().for_each(|v| *v /= s);
    Ok(row)
}

fn check_teacher(n: usize, teacher: &TeacherMap) -> Result<()> {
    if teacher.len() != n {
        return Err(Error::shape(format!(
            "teacher has {} patches, model has {n}",
            teacher.len()
        )));
    }
    Ok(())
}

/// Mean over layers of `KL(class row ‖ smoothed teacher)`. Each layer uses
/// `C_AGT`, or `C_VFM` when the interaction pathway is off.
pub fn alignment_loss<T: Scalar>(trace: &InteractionTrace<T>, teacher: &TeacherMap, lambda: f64) -> Result<f64> {
    if trace.layers.is_empty() {
        return Err(Error::invalid("alignment_loss: empty trace"));
    }
    let target = teacher.to_f64();
    let mut total = 0.0;
    for layer in &trace.layers {
        let row = class_row(layer.supervised(), trace.heads)?;
        check_teacher(row.len(), teacher)?;
        total += kl_rows(&row, &target, lambda)?;
    }
    Ok(total / trace.layers.len() as f64)
}

/// `task + alignment`; alignment is zero when `teacher` is `None`.
pub fn total_loss<T: Scalar>(
    logits: &[T],
    label: usize,
    trace: &InteractionTrace<T>,
    teacher: Option<&TeacherMap>,
    lambda: f64,
) -> Result<LossBreakdown> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let z: Vec<f64> = logits.iter().map(|v| v.as_f64()).collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let task = lse - z[label];
    let alignment = match teacher {
        Some(t) => alignment_loss(trace, t, lambda)?,
        None => 0.0,
    };
    Ok(LossBreakdown {
        task,
        alignment,
        total: task + alignment,
    })
}

/// Graph form of [`class_row`] on one layer's supervised matrix.
pub fn class_row_var<T: Scalar>(tape: &mut Tape<'_, T>, stack: Var, heads: usize) -> Result<Var> {
    let t = tape.value(stack).cols();
    let rows = tape.gather_rows(stack, (0..heads).map(|h| h * t).collect())?;
    let mean = tape.mean_rows(rows)?;
    let patches = tape.slice_cols(mean, 1, t - 1)?;
    Ok(tape.normalize_rows(patches))
}

fn supervised_var(layer: &LayerVars) -> Var {
    layer.c_agt.unwrap_or(layer.c_vfm)
}

/// Graph form of [`alignment_loss`].
pub fn alignment_var<T: Scalar>(
    tape: &mut Tape<'_, T>,
    graph: &ForwardGraph,
    heads: usize,
    teacher: &TeacherMap,
    lambda: f64,
) -> Result<Var> {
    if graph.layers.is_empty() {
        return Err(Error::invalid("alignment_loss: no layers"));
    }
    let target: Vec<T> = smooth(&teacher.to_f64(), lambda).into_iter().map(T::lit).collect();
    let mut acc: Option<Var> = None;
    for layer in &graph.layers {
        let row = class_row_var(tape, supervised_var(layer), heads)?;
        check_teacher(tape.value(row).cols(), teacher)?;
        let kl = tape.kl_to_target(row, target.clone())?;
        acc = Some(match acc {
            Some(a) => tape.add(a, kl)?,
            None => kl,
        });
    }
    let sum = acc.expect("at least one layer");
    Ok(tape.scale(sum, T::one() / T::lit(graph.layers.len() as f64)))
}

/// [`alignment_loss`] evaluated on recorded values without adding nodes.
pub fn measured_alignment<T: Scalar>(
    tape: &Tape<'_, T>,
    graph: &ForwardGraph,
    heads: usize,
    teacher: &TeacherMap,
    lambda: f64,
) -> Result<f64> {
    if graph.layers.is_empty() {
        return Err(Error::invalid("alignment_loss: no layers"));
    }
    let target = teacher.to_f64();
    let mut total = 0.0;
    for layer in &graph.layers {
        let row = class_row(tape.value(supervised_var(layer)), heads)?;
        check_teacher(row.len(), teacher)?;
        total += kl_rows(&row, &target, lambda)?;
    }
    Ok(total / graph.layers.len() as f64)
}

/// Handles for the per-sample objective.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub task: Var,
    pub alignment: Option<Var>,
    pub total: Var,
}

/// Cross-entropy plus, when `teacher` is given, the alignment term.
pub fn objective_var<T: Scalar>(
    tape: &mut Tape<'_, T>,
    graph: &ForwardGraph,
    heads: usize,
    label: usize,
    teacher: Option<&TeacherMap>,
    lambda: f64,
) -> Result<LossVars> {
    let task = tape.cross_entropy(graph.logits, label)?;
    let (alignment, total) = match teacher {
        Some(t) => {
            let a = alignment_var(tape, graph, heads, t, lambda)?;
            (Some(a), tape.add(task, a)?)
        }
        None => (None, task),
    };
    Ok(LossVars { task, alignment, total })
}
