//! Building teacher maps from interaction strengths and storing them as TIM
//! files.
//!
//! ```bash
//! cargo run --example teacher_maps
//! ```

use ivit::teacher::{
    classification_teacher, dense_teacher, mask_teacher, read_tim, write_tim, StrengthRole, StrengthVector,
};

fn show(title: &str, values: &[f32], side: usize) {
    println!("{title}");
    for row in values.chunks(side) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
        println!("  {}", cells.join(" "));
    }
}

fn main() -> ivit::Result<()> {
    // A 3x3 grid where the object sits in the top-left corner.
    let fore = StrengthVector::new(StrengthRole::Foreground, vec![0.9, 0.7, 0.1, 0.6, 0.8, 0.1, 0.1, 0.1, 0.1])?;
    let back = StrengthVector::new(StrengthRole::Background, vec![0.2; 9])?;
    let cls = classification_teacher(&fore, &back)?;
    show("classification teacher", cls.map.values(), 3);

    let other = StrengthVector::new(StrengthRole::Object, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.9])?;
    let obj = StrengthVector::new(StrengthRole::Object, fore.values().to_vec())?;
    let dense = dense_teacher(&[obj, other], &back)?;
    show("dense teacher, two objects", dense.map.values(), 3);

    // Nothing beats the background: the teacher falls back to uniform.
    let faint = StrengthVector::new(StrengthRole::Foreground, vec![0.1; 9])?;
    let flat = classification_teacher(&faint, &back)?;
    println!("background dominates everywhere -> degenerate = {}", flat.degenerate);

    let mask = [true, true, false, false, true, false, false, false, false];
    let noisy = mask_teacher(&mask, 0.05, 42)?;
    show("mask teacher, sigma 0.05", noisy.values(), 3);

    let path = std::env::temp_dir().join("ivit-example.tim");
    write_tim(&noisy, &path)?;
    let back_in = read_tim(&path)?;
    println!("round trip through {}: identical = {}", path.display(), back_in == noisy);
    std::fs::remove_file(&path).ok();
    Ok(())
}
