//! Checks the tape's gradients of the full training objective against
//! central differences, at 64-bit precision.
//!
//! ```bash
//! cargo run --example grad_check
//! ```

use ivit::model::{attach_interaction, build_forward, init_backbone, ForwardOptions, ModelConfig, Params};
use ivit::numerics::{grad_check, Entries, Matrix, Tape};
use ivit::train::{gen_synthetic, objective_var, DataSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ivit::Result<()> {
    let cfg = ModelConfig {
        image_size: 16,
        embed_dim: 8,
        heads: 2,
        layers: 2,
        classes: 3,
        gcn_hidden: 4,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut params: Params<f64> = init_backbone(&cfg, &mut rng)?;
    attach_interaction(&mut params, &cfg, true, &mut rng)?;
    let spec = DataSpec {
        classes: 3,
        samples: 4,
        image_size: 16,
        ..DataSpec::default()
    };
    let data = gen_synthetic(&spec, 1)?;
    let sample = &data.samples[0];
    let opts = ForwardOptions::infer(&params);
    let all = vec![true; params.len()];

    let objective = |p: &Params<f64>| -> ivit::Result<(f64, Vec<Matrix<f64>>)> {
        let mut tape = Tape::new();
        let graph = build_forward(&mut tape, p, &cfg, &sample.image, opts, Some(&all))?;
        let loss = objective_var(&mut tape, &graph, cfg.heads, sample.label, Some(&sample.teacher), 1e-3)?;
        let value = tape.value(loss.total)[(0, 0)];
        let g = tape.backward(loss.total)?;
        Ok((value, graph.params.iter().map(|&v| g.get_or_zero(v).0).collect()))
    };
    let (loss, analytic) = objective(&params)?;
    println!("loss {loss:.6} over {} tensors", params.len());

    let names = params.names().to_vec();
    let mut tensors = params.tensors().to_vec();
    let reports = grad_check(&names, &mut tensors, &analytic, 1e-5, 1e-6, Entries::Spread(6), |t| {
        let mut p = params.clone();
        p.tensors_mut().clone_from_slice(t);
        Ok(objective(&p)?.0)
    })?;
    for r in reports.iter().take(5) {
        println!(
            "{:<28} analytic {:+.9e}  numeric {:+.9e}  rel {:.2e}",
            r.parameter, r.analytic, r.numeric, r.relative_error
        );
    }
    // Near-zero derivatives carry O(eps^2) truncation error, so an absolute
    // allowance joins the relative one.
    let failed = reports
        .iter()
        .filter(|r| (r.analytic - r.numeric).abs() > 1e-9 + 1e-6 * r.numeric.abs())
        .count();
    println!("{} entries checked, {failed} outside 1e-9 + 1e-6·|numeric|", reports.len());
    Ok(())
}
