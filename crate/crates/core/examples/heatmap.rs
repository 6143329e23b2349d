//! Rendering a teacher map as a PGM image.
//!
//! ```bash
//! cargo run --example heatmap -- crates/core/tests/fixtures/map_3x4.tim map.pgm
//! ```
//!
//! Without arguments a synthetic mask teacher is rendered to stdout.

use ivit::analysis::{heatmap, HeatmapScale};
use ivit::teacher::{mask_teacher, read_tim};

fn main() -> ivit::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let map = match args.first() {
        Some(path) => read_tim(std::path::Path::new(path))?,
        None => {
            let mut mask = vec![false; 16];
            for p in [5, 6, 9, 10] {
                mask[p] = true;
            }
            mask_teacher(&mask, 0.1, 3)?
        }
    };
    let (gh, gw) = map.grid();
    let pgm = heatmap(&map.to_f64(), gh, gw, HeatmapScale::PerMap, 2)?;
    match args.get(1) {
        Some(out) => {
            std::fs::write(out, &pgm).map_err(|source| ivit::Error::Io {
                path: out.into(),
                source,
            })?;
            eprintln!("wrote {gh}x{gw} map to {out}");
        }
        None => print!("{pgm}"),
    }
    Ok(())
}
