//! 8-bit binary portable graymaps.

use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, Result};

/// Linear map from values to gray levels: `min` → 0, `max` → 255.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrayScale {
    pub min: f64,
    pub max: f64,
}

/// Encodes a row-major `height × width` field, first row at the top.
pub fn encode(width: usize, height: usize, values: &[f64]) -> (Vec<u8>, GrayScale) {
    assert_eq!(values.len(), width * height);
    let finite = values.iter().filter(|v| v.is_finite());
    let min = finite.clone().fold(f64::INFINITY, |a, &b| a.min(b));
    let max = finite.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let (min, max) = if min <= max { (min, max) } else { (0.0, 0.0) };
    let span = max - min;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if span > 0.0 && v.is_finite() {
            ((v - min) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    (out, GrayScale { min, max })
}

/// Writes a nodal field of the uniform mesh (y-major node order) with +y
/// pointing up.
pub fn write_nodal(path: &Path, n_side: usize, values: &[f64]) -> Result<GrayScale> {
    let flipped: Vec<f64> = (0..n_side)
        .rev()
        .flat_map(|iy| values[iy * n_side..(iy + 1) * n_side].iter().copied())
        .collect();
    let (bytes, scale) = encode(n_side, n_side, &flipped);
    std::fs::write(path, bytes).map_err(|e| CliError::io("writing image", path, e))?;
    Ok(scale)
}

/// Line plot of several curves on a shared linear axis, white background.
pub fn plot_curves(width: usize, height: usize, curves: &[Vec<(f64, f64)>]) -> Vec<u8> {
    let mut img = vec![255u8; width * height];
    let pts = curves
        .iter()
        .flatten()
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) =
        (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let mut header = format!("P5\n{width} {height}\n255\n").into_bytes();
    if !(x0 < x1 && y0 < y1) {
        header.extend(img);
        return header;
    }
    let px = |x: f64| ((x - x0) / (x1 - x0) * (width - 1) as f64).round() as i64;
    let py = |y: f64| ((y1 - y) / (y1 - y0) * (height - 1) as f64).round() as i64;
    let mut set = |x: i64, y: i64, g: u8| {
        if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
            img[y as usize * width + x as usize] = g;
        }
    };
    for (c, curve) in curves.iter().enumerate() {
        let gray = (c * 90 % 200) as u8;
        let mut prev: Option<(i64, i64)> = None;
        for &(x, y) in curve.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let p = (px(x), py(y));
            if let Some(q) = prev {
                let steps = (p.0 - q.0).abs().max((p.1 - q.1).abs()).max(1);
                for s in 0..=steps {
                    let t = s as f64 / steps as f64;
                    let xi = q.0 as f64 + t * (p.0 - q.0) as f64;
                    let yi = q.1 as f64 + t * (p.1 - q.1) as f64;
                    set(xi.round() as i64, yi.round() as i64, gray);
                }
            } else {
                set(p.0, p.1, gray);
            }
            prev = Some(p);
        }
    }
    header.extend(img);
    header
}
