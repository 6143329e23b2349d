//! How the learned fusion gates split between the interaction and the plain
//! attention pathway, layer by layer, before and after finetuning.
//!
//! ```bash
//! cargo run --example gate_trend
//! ```

use ivit::analysis::gate_trend;
use ivit::model::attach_interaction;
use ivit::train::{finetune, gen_synthetic, pretrain, RunConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ivit::Result<()> {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("model.image_size", "16"),
        ("model.embed_dim", "16"),
        ("model.heads", "2"),
        ("model.layers", "3"),
        ("model.classes", "4"),
        ("data.classes", "4"),
        ("data.samples", "320"),
        ("train.pretrain_epochs", "8"),
        ("train.epochs", "6"),
        ("train.batch", "16"),
    ] {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    let data = gen_synthetic(&cfg.data_spec(), cfg.train.seed)?;
    let pre = pretrain(&cfg, &data, None)?;

    let mut fresh = pre.params.clone();
    attach_interaction(&mut fresh, &cfg.model, true, &mut ChaCha8Rng::seed_from_u64(cfg.train.seed))?;
    let before = gate_trend(&fresh, &cfg.model, data.val())?;
    let after = gate_trend(&finetune(&cfg, &data, &pre)?.params, &cfg.model, data.val())?;

    println!("layer  g1 before  g1 after  g2 after");
    for l in 0..cfg.model.layers {
        println!("{l:>5}  {:>9.3}  {:>8.3}  {:>8.3}", before.g1[l], after.g1[l], after.g2[l]);
    }
    Ok(())
}
