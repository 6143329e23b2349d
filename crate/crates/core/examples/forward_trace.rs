//! One forward pass through a freshly initialized I-ViT, inspecting the
//! per-layer interaction matrices, gates and the attention factorization.
//!
//! ```bash
//! cargo run --example forward_trace
//! ```

use ivit::interaction::{factorize_attention, BinarizeRule};
use ivit::model::{attach_interaction, forward, init_backbone, GateMode, ModelConfig, Params};
use ivit::numerics::Matrix;
use ivit::train::{gen_synthetic, DataSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ivit::Result<()> {
    let cfg = ModelConfig {
        image_size: 16,
        embed_dim: 16,
        heads: 2,
        layers: 3,
        classes: 4,
        gate_mode: GateMode::Convex,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params: Params<f32> = init_backbone(&cfg, &mut rng)?;
    attach_interaction(&mut params, &cfg, true, &mut rng)?;
    let data = gen_synthetic(
        &DataSpec {
            classes: 4,
            samples: 2,
            image_size: 16,
            ..DataSpec::default()
        },
        9,
    )?;
    let sample = &data.samples[0];
    let (logits, trace) = forward(&sample.image, &params, &cfg)?;
    println!("label {}  logits {logits:.3?}", sample.label);

    let tokens = cfg.patches() + 1;
    for (l, layer) in trace.layers.iter().enumerate() {
        let (g1, g2) = layer.mean_gates().expect("interaction is on");
        let worst = (0..layer.c_f.rows())
            .map(|r| (layer.c_f.row(r).iter().sum::<f32>() - 1.0).abs())
            .fold(0.0f32, f32::max);
        println!("layer {l}: mean gates {g1:.3} / {g2:.3}, fused rows off by at most {worst:.1e}");
    }

    // Structure and strength of head 0's fused attention in the last layer.
    let last = &trace.layers[cfg.layers - 1].c_f;
    let head0 = Matrix::from_vec(tokens, tokens, last.data()[..tokens * tokens].to_vec())?;
    let (mask, _) = factorize_attention(&head0, BinarizeRule::default_for(tokens))?;
    let kept: Vec<usize> = (0..tokens).filter(|&c| mask.get(0, c)).collect();
    println!("class token keeps {} of {tokens} tokens: {kept:?}", kept.len());
    Ok(())
}
