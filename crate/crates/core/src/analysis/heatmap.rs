use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Normalizer for heatmap intensities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HeatmapScale {
    /// Divide by the map's own maximum.
    PerMap,
    /// Divide by a shared value, e.g. the maximum over a set of maps.
    Global(f64),
}

/// Plain `P2` graymap with one `upsample × upsample` cell per patch and
/// intensity `⌊v/scale · 255 + ½⌋`, clamped to `[0, 255]`.
pub fn heatmap(values: &[f64], grid_height: usize, grid_width: usize, scale: HeatmapScale, upsample: usize) -> Result<String> {
    if grid_height == 0 || grid_width == 0 || values.len() != grid_height * grid_width {
        return Err(Error::shape(format!(
            "heatmap grid {grid_height}x{grid_width} with {} values",
            values.len()
        )));
    }
    if upsample == 0 {
        return Err(Error::invalid("upsample factor must be positive"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("heatmap values".into()));
    }
    let s = match scale {
        HeatmapScale::PerMap => values.iter().copied().fold(0.0, f64::max),
        HeatmapScale::Global(s) if s > 0.0 && s.is_finite() => s,
        HeatmapScale::Global(s) => return Err(Error::invalid(format!("global scale {s} must be positive"))),
    };
    let level = |v: f64| -> u32 {
        if s <= 0.0 {
            return 0;
        }
        (v / s * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u32
    };
    let (w, h) = (grid_width * upsample, grid_height * upsample);
    let mut out = format!("P2\n{w} {h}\n255\n");
    for y in 0..h {
        let row = y / upsample;
        let line: Vec<String> = (0..w)
            .map(|x| level(values[row * grid_width + x / upsample]).to_string())
            .collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    Ok(out)
}
