//! All eight switch settings finetuned from one shared pretrained backbone.
//!
//! ```bash
//! cargo run --example ablation_grid
//! ```

use ivit::train::{ablate, gen_synthetic, pretrain, RunConfig, Switches};

fn main() -> ivit::Result<()> {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("model.image_size", "16"),
        ("model.embed_dim", "16"),
        ("model.heads", "2"),
        ("model.layers", "2"),
        ("model.classes", "4"),
        ("data.classes", "4"),
        ("data.samples", "320"),
        ("data.noise_sigma", "0.1"),
        ("train.pretrain_epochs", "8"),
        ("train.epochs", "3"),
        ("train.batch", "16"),
    ] {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    let data = gen_synthetic(&cfg.data_spec(), cfg.train.seed)?;
    let pre = pretrain(&cfg, &data, None)?;
    let settings = Switches::grid();
    let outcomes = ablate(&cfg, &data, &pre, &settings)?;

    println!("iq ic gc  final val  best val  align");
    for (sw, out) in settings.iter().zip(&outcomes) {
        let last = out.records.last().expect("at least one epoch");
        println!(
            "{:>2} {:>2} {:>2}  {:>9.3}  {:>8.3}  {:.4}",
            u8::from(sw.iq),
            u8::from(sw.ic),
            u8::from(sw.gc),
            last.val_acc,
            out.best_val_acc,
            last.align_loss
        );
    }
    Ok(())
}
