//! Two-stage training on the synthetic glyph task, then evaluation against
//! the teacher maps.
//!
//! ```bash
//! cargo run --example train_synthetic
//! cargo run --example train_synthetic -- train.epochs=6 switches.gc=false
//! ```
//!
//! Trailing `key=value` arguments override the config, using the same keys
//! as a config file.

use ivit::analysis::evaluate;
use ivit::teacher::TeacherMap;
use ivit::train::{gen_synthetic, train, RunConfig};

fn main() -> ivit::Result<()> {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("model.image_size", "16"),
        ("model.embed_dim", "16"),
        ("model.heads", "2"),
        ("model.layers", "2"),
        ("model.classes", "4"),
        ("data.classes", "4"),
        ("data.samples", "400"),
        ("train.pretrain_epochs", "8"),
        ("train.epochs", "4"),
        ("train.batch", "16"),
    ] {
        cfg.set(k, v)?;
    }
    for arg in std::env::args().skip(1) {
        let (k, v) = arg
            .split_once('=')
            .ok_or_else(|| ivit::Error::Config(format!("expected key=value, got `{arg}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;

    let data = gen_synthetic(&cfg.data_spec(), cfg.train.seed)?;
    let outcome = train(&cfg, &data, None)?;
    for r in &outcome.records {
        println!(
            "{:<9} {} epoch {:>2}  task {:.3}  align {:.3}  train {:.3}  val {:.3}",
            r.stage, r.switches, r.epoch, r.task_loss, r.align_loss, r.train_acc, r.val_acc
        );
    }

    let teachers: Vec<TeacherMap> = data.val().iter().map(|s| s.teacher.clone()).collect();
    let report = evaluate(&outcome.params, &cfg.model, data.val(), &teachers, None)?;
    println!("{}", report.to_json());
    Ok(())
}
