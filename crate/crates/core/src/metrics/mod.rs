//! Frame quality metrics.

mod edges;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{AccumFrame, BinaryFrame};

pub use edges::{
    count_junctions, edge_pipeline, gaussian_blur, label_components, otsu_threshold,
    skeleton_report, zhang_suen, EdgeConfig, EdgeReport, Threshold,
};

/// Entropy in bits of the fraction of set pixels, treating pixels as
/// independent draws of one Bernoulli variable.
pub fn shannon_entropy(frame: &BinaryFrame) -> Result<f64> {
    if frame.bits.is_empty() {
        return Err(Error::config("entropy of an empty frame"));
    }
    let q = frame.popcount() as f64 / frame.bits.len() as f64;
    Ok(binary_entropy(q))
}

/// `-q log2 q - (1 - q) log2 (1 - q)` with `0 log 0 = 0`.
pub fn binary_entropy(q: f64) -> f64 {
    let term = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
    term(q) + term(1.0 - q)
}

/// Population variance of the per-pixel counts.
pub fn frame_variance(frame: &AccumFrame) -> Result<f64> {
    if frame.counts.is_empty() {
        return Err(Error::config("variance of an empty frame"));
    }
    let n = frame.counts.len() as f64;
    let mean = frame.counts.iter().map(|&c| f64::from(c)).sum::<f64>() / n;
    Ok(frame
        .counts
        .iter()
        .map(|&c| (f64::from(c) - mean).powi(2))
        .sum::<f64>()
        / n)
}

/// Mean of `sqrt(Gx² + Gy²)` with forward differences `Gx = f(x+1) - f(x)`,
/// `Gy = f(y+1) - f(y)`; differences across the last column or row are zero.
pub fn gradient_magnitude(frame: &AccumFrame) -> Result<f64> {
    let (w, h) = (frame.width, frame.height);
    if w < 2 || h < 2 {
        return Err(Error::config("gradient needs a frame of at least 2x2"));
    }
    let f = |x: usize, y: usize| f64::from(frame.get(x, y));
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            let gx = if x + 1 < w {
                f(x + 1, y) - f(x, y)
            } else {
                0.0
            };
            let gy = if y + 1 < h {
                f(x, y + 1) - f(x, y)
            } else {
                0.0
            };
            sum += gx.hypot(gy);
        }
    }
    Ok(sum / (w * h) as f64)
}

/// One row of the per-window metrics table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub t0_us: u64,
    pub entropy: f64,
    pub variance: f64,
    pub grad_mag: f64,
    pub num_components: usize,
    pub avg_len: f64,
    pub junctions: usize,
}

/// Which metrics to compute; skipped ones are reported as zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSelection {
    pub entropy: bool,
    pub variance: bool,
    pub gradient: bool,
    pub edges: bool,
}

impl Default for MetricSelection {
    fn default() -> Self {
        MetricSelection {
            entropy: true,
            variance: true,
            gradient: true,
            edges: true,
        }
    }
}

impl MetricSelection {
    /// Parses a comma-separated list of `entropy`, `variance`, `gradient`,
    /// `edges` or `all`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut sel = MetricSelection {
            entropy: false,
            variance: false,
            gradient: false,
            edges: false,
        };
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "entropy" => sel.entropy = true,
                "variance" => sel.variance = true,
                "gradient" | "grad" => sel.gradient = true,
                "edges" => sel.edges = true,
                "all" => sel = MetricSelection::default(),
                other => return Err(Error::config(format!("unknown metric `{other}`"))),
            }
        }
        Ok(sel)
    }
}

pub fn frame_metrics(
    frame: &AccumFrame,
    sel: &MetricSelection,
    edge_cfg: &EdgeConfig,
) -> Result<MetricRow> {
    let mut row = MetricRow {
        t0_us: frame.window.0,
        entropy: 0.0,
        variance: 0.0,
        grad_mag: 0.0,
        num_components: 0,
        avg_len: 0.0,
        junctions: 0,
    };
    if sel.entropy {
        row.entropy = shannon_entropy(&crate::frame::binarize(frame))?;
    }
    if sel.variance {
        row.variance = frame_variance(frame)?;
    }
    if sel.gradient {
        row.grad_mag = gradient_magnitude(frame)?;
    }
    if sel.edges {
        let e = edge_pipeline(frame, edge_cfg);
        row.num_components = e.num_components;
        row.avg_len = e.avg_contour_length;
        row.junctions = e.junction_count;
    }
    Ok(row)
}

/// Metrics of each frame, computed in parallel.
pub fn window_metrics(
    frames: &[AccumFrame],
    sel: &MetricSelection,
    edge_cfg: &EdgeConfig,
) -> Result<Vec<MetricRow>> {
    frames
        .par_iter()
        .map(|f| frame_metrics(f, sel, edge_cfg))
        .collect()
}

pub fn write_metrics_csv<W: Write>(sink: W, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sample standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}
