//! AND-interaction decomposition, first of a hand-written game and then of a
//! model's logit with four image patches as players.
//!
//! ```bash
//! cargo run --example decompose_interactions
//! ```

use ivit::interaction::{harsanyi_and, reconstruct_value, sparsify, FnOracle, MaskedOracle, Subset};
use ivit::model::{attach_interaction, init_backbone, ModelConfig, Params, PatchOracle};
use ivit::train::{gen_synthetic, DataSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ivit::Result<()> {
    // v(S) = 2·[1,2 ∈ S] + [3 ∈ S]: one pairwise effect and one singleton.
    let pair = Subset::of(&[1, 2]);
    let game = FnOracle::new(3, move |s: Subset| {
        let both = if pair.is_subset_of(s) { 2.0 } else { 0.0 };
        both + if s.contains(3) { 1.0 } else { 0.0 }
    });
    let table = harsanyi_and(&game)?;
    println!("toy game:");
    table.write_listing(std::io::stdout()).expect("stdout");

    let cfg = ModelConfig {
        image_size: 16,
        embed_dim: 16,
        heads: 2,
        layers: 2,
        classes: 4,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params: Params<f64> = init_backbone(&cfg, &mut rng)?;
    attach_interaction(&mut params, &cfg, true, &mut rng)?;
    let spec = DataSpec {
        classes: 4,
        samples: 4,
        image_size: 16,
        ..DataSpec::default()
    };
    let data = gen_synthetic(&spec, 7)?;
    let sample = &data.samples[0];
    let glyph: Vec<usize> = (0..sample.mask.len()).filter(|&p| sample.mask[p]).collect();
    let oracle = PatchOracle::new(&params, &cfg, &sample.image, glyph.clone(), sample.label)?;
    let table = harsanyi_and(&oracle)?;

    println!("\nglyph patches {glyph:?}, class {}; strongest effects:", sample.label);
    for (s, effect) in sparsify(&table, 5) {
        println!("  {:?}  {effect:+.5}", s.elements());
    }
    let full = Subset::full(glyph.len());
    println!(
        "sum of effects {:.9}  direct logit {:.9}",
        reconstruct_value(&table, full)?,
        oracle.value(full)?
    );
    Ok(())
}
