//! Binary PPM (P6) heat maps of median relative loss, one pixel per cell.

use std::fs;
use std::path::Path;

use dln_core::numfmt::fmt_g;

use crate::error::{LabError, Result};

pub const LOG_LOSS_MIN: f64 = -6.0;
pub const LOG_LOSS_MAX: f64 = 0.0;
pub const MISSING_RGB: [u8; 3] = [255, 0, 0];

/// Linear map of `[−6, 0]` onto `[0, 255]`, clamped, rounding half up.
/// Untrainable (+inf) cells come out white, NaN is treated the same.
pub fn gray_level(v: f64) -> u8 {
    if v.is_nan() {
        return 255;
    }
    let x = (v - LOG_LOSS_MIN) / (LOG_LOSS_MAX - LOG_LOSS_MIN) * 255.0;
    (x.clamp(0.0, 255.0) + 0.5).floor().min(255.0) as u8
}

/// Grid of per-cell values, rows = depths, cols = widths, `None` = missing.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl Grid {
    pub fn to_ppm(&self) -> Vec<u8> {
        let (h, w) = (self.depths.len(), self.widths.len());
        let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
        for row in &self.values {
            for cell in row {
                match cell {
                    Some(v) => out.extend_from_slice(&[gray_level(*v); 3]),
                    None => out.extend_from_slice(&MISSING_RGB),
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("depth,width,median_rel_loss_log10,gray\n");
        for (d, row) in self.depths.iter().zip(&self.values) {
            for (w, cell) in self.widths.iter().zip(row) {
                let (v, g) = match cell {
                    Some(v) => (fmt_g(*v, 10), gray_level(*v).to_string()),
                    None => ("nan".to_string(), "missing".to_string()),
                };
                out.push_str(&format!("{d},{w},{v},{g}\n"));
            }
        }
        out
    }

    pub fn missing(&self) -> usize {
        self.values.iter().flatten().filter(|c| c.is_none()).count()
    }
}

/// Writes `<stem>.ppm` and `<stem>.csv` into `dir`.
pub fn emit_heatmap(grid: &Grid, dir: &Path, stem: &str) -> Result<()> {
    if grid.depths.is_empty() || grid.widths.is_empty() {
        return Err(LabError::usage("heat map needs at least one cell"));
    }
    let io = |p: &Path, e| LabError::Core(dln_core::Error::Io {
        path: p.to_path_buf(),
        source: e,
    });
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let ppm = dir.join(format!("{stem}.ppm"));
    fs::write(&ppm, grid.to_ppm()).map_err(|e| io(&ppm, e))?;
    let csv = dir.join(format!("{stem}.csv"));
    fs::write(&csv, grid.to_csv()).map_err(|e| io(&csv, e))
}
