use std::path::Path;

use crate::error::{Error, Result};
use crate::teacher::{PromptId, Provenance, TeacherMap};

const LEVELS: [f64; 3] = [0.0, 0.5, 1.0];

/// Per-patch confidence marks in {0, 0.5, 1}.
#[derive(Clone, Debug, PartialEq)]
pub struct HumanAnnotation {
    grid_height: usize,
    grid_width: usize,
    values: Vec<f64>,
}

impl HumanAnnotation {
    pub fn new(grid_height: usize, grid_width: usize, values: Vec<f64>) -> Result<Self> {
        if grid_height == 0 || grid_width == 0 || values.len() != grid_height * grid_width {
            return Err(Error::shape(format!(
                "annotation grid {grid_height}x{grid_width} with {} values",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !LEVELS.contains(v)) {
            return Err(Error::invalid(format!(
                "annotation value {} at patch {i} is not one of 0, 0.5, 1.0",
                values[i]
            )));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(Error::invalid("annotation marks no patch"));
        }
        Ok(Self {
            grid_height,
            grid_width,
            values,
        })
    }

    /// First line `gh gw`, then `gh` lines of `gw` values.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let fail = |line: usize, msg: String| Error::format(source, format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (no, header) = lines.next().ok_or_else(|| Error::format(source, "empty annotation"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| fail(no + 1, format!("bad grid size `{t}`"))))
            .collect::<Result<_>>()?;
        let [gh, gw] = dims[..] else {
            return Err(fail(no + 1, "expected `gh gw`".into()));
        };
        let mut values = Vec::with_capacity(gh * gw);
        let mut rows = 0;
        for (no, line) in lines {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| match t.parse::<f64>() {
                    Ok(v) if LEVELS.contains(&v) => Ok(v),
                    _ => Err(fail(no + 1, format!("`{t}` is not one of 0, 0.5, 1.0"))),
                })
                .collect::<Result<_>>()?;
            if row.len() != gw {
                return Err(fail(no + 1, format!("{} values, expected {gw}", row.len())));
            }
            values.extend(row);
            rows += 1;
        }
        if rows != gh {
            return Err(Error::format(source, format!("{rows} rows, expected {gh}")));
        }
        Self::new(gh, gw, values).map_err(|e| Error::format(source, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_height, self.grid_width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Confidences renormalized into a human-provenance map.
pub fn human_map(ann: &HumanAnnotation) -> Result<TeacherMap> {
    TeacherMap::from_raw(ann.grid_height, ann.grid_width, &ann.values, Provenance::Human, PromptId::None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_mark_is_one_hot() {
        let a = HumanAnnotation::parse("2 2\n0 1.0\n0 0\n", "a").unwrap();
        let m = human_map(&a).unwrap();
        assert_eq!(m.values(), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(m.provenance, Provenance::Human);
    }

    #[test]
    fn mixed_confidence() {
        let a = HumanAnnotation::parse("1 3\n1 0.5 0\n", "a").unwrap();
        let m = human_map(&a).unwrap();
        assert!((m.values()[0] as f64 - 2.0 / 3.0).abs() < 1e-7);
        assert!((m.values()[1] as f64 - 1.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn schema_violations() {
        for (text, needle) in [
            ("2 2\n0 0.7\n0 0\n", "line 2"),
            ("2 2\n0 0\n0 0\n", "no patch"),
            ("2 2\n0 1\n", "rows"),
            ("2 2\n0 1 0\n0 0\n", "line 2"),
            ("2\n1\n", "line 1"),
            ("", "empty"),
        ] {
            let e = HumanAnnotation::parse(text, "a").unwrap_err();
            assert!(matches!(e, Error::Format { .. }));
            assert!(e.to_string().contains(needle), "{e}");
        }
    }
}
