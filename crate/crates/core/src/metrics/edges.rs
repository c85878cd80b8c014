use serde::{Deserialize, Serialize};

use crate::frame::{AccumFrame, BinaryFrame};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeReport {
    pub num_components: usize,
    /// Mean skeleton pixel count per component.
    pub avg_contour_length: f64,
    pub junction_count: usize,
    pub window: (u64, u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Threshold {
    /// Otsu's threshold over the nonzero pixels.
    Otsu,
    Fixed {
        value: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeConfig {
    /// `None` skips the blur.
    pub blur_sigma: Option<f64>,
    pub threshold: Threshold,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        EdgeConfig {
            blur_sigma: Some(1.5),
            threshold: Threshold::Otsu,
        }
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Separable Gaussian blur with radius `ceil(3 sigma)` and reflected borders.
pub fn gaussian_blur(values: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    assert_eq!(values.len(), width * height);
    if !(sigma > 0.0) || values.is_empty() {
        return values.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);

    let mut tmp = vec![0.0; values.len()];
    for y in 0..height {
        let row = &values[y * width..(y + 1) * width];
        for x in 0..width {
            tmp[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * row[reflect(x as i64 + k as i64 - radius, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; values.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[reflect(y as i64 + k as i64 - radius, height) * width + x])
                .sum();
        }
    }
    out
}

/// Otsu's threshold over the strictly positive values; pixels above it are
/// foreground. `None` when there are no positive values.
pub fn otsu_threshold(values: &[f64]) -> Option<f64> {
    const BINS: usize = 256;
    let support: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).collect();
    let lo = support.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = support.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if support.is_empty() {
        return None;
    }
    if hi - lo <= 1e-12 * hi {
        // a single level: everything nonzero is foreground
        return Some(lo * 0.5);
    }
    let width = (hi - lo) / BINS as f64;
    let mut hist = [0usize; BINS];
    for v in &support {
        hist[(((v - lo) / width) as usize).min(BINS - 1)] += 1;
    }
    let total = support.len() as f64;
    let centre = |k: usize| lo + (k as f64 + 0.5) * width;
    let sum_all: f64 = (0..BINS).map(|k| hist[k] as f64 * centre(k)).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_k) = (-1.0, 0);
    for (k, &count) in hist.iter().enumerate().take(BINS - 1) {
        w0 += count as f64;
        sum0 += count as f64 * centre(k);
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let between = w0 * w1 * (sum0 / w0 - (sum_all - sum0) / w1).powi(2);
        if between > best {
            best = between;
            best_k = k;
        }
    }
    Some(lo + (best_k + 1) as f64 * width)
}

/// Neighbours `P2..P9`, clockwise from north.
#[inline]
fn neighbours(f: &BinaryFrame, x: usize, y: usize) -> [bool; 8] {
    let (x, y) = (x as i64, y as i64);
    [
        f.get_signed(x, y - 1),
        f.get_signed(x + 1, y - 1),
        f.get_signed(x + 1, y),
        f.get_signed(x + 1, y + 1),
        f.get_signed(x, y + 1),
        f.get_signed(x - 1, y + 1),
        f.get_signed(x - 1, y),
        f.get_signed(x - 1, y - 1),
    ]
}

/// Zhang–Suen thinning, iterated until nothing changes.
pub fn zhang_suen(input: &BinaryFrame) -> BinaryFrame {
    let mut img = input.clone();
    let mut marked = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            marked.clear();
            for y in 0..img.height {
                for x in 0..img.width {
                    if !img.get(x, y) {
                        continue;
                    }
                    let p = neighbours(&img, x, y);
                    let b = p.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                    if a != 1 {
                        continue;
                    }
                    let (p2, p4, p6, p8) = (p[0], p[2], p[4], p[6]);
                    let remove = if pass == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if remove {
                        marked.push((x, y));
                    }
                }
            }
            for &(x, y) in &marked {
                img.set(x, y, false);
            }
            changed |= !marked.is_empty();
        }
        if !changed {
            return img;
        }
    }
}

/// 8-connected labels (`0` is background, components numbered from 1) and
/// the component count.
pub fn label_components(img: &BinaryFrame) -> (Vec<u32>, usize) {
    let mut labels = vec![0u32; img.bits.len()];
    let mut count = 0u32;
    let mut stack = Vec::new();
    for start in 0..img.bits.len() {
        if !img.bits[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % img.width) as i64, (i / img.width) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if img.get_signed(nx, ny) {
                        let j = ny as usize * img.width + nx as usize;
                        if labels[j] == 0 {
                            labels[j] = count;
                            stack.push(j);
                        }
                    }
                }
            }
        }
    }
    (labels, count as usize)
}

/// Set pixels with more than two set 8-neighbours.
pub fn count_junctions(img: &BinaryFrame) -> usize {
    let mut n = 0;
    for y in 0..img.height {
        for x in 0..img.width {
            if img.get(x, y) && neighbours(img, x, y).iter().filter(|&&v| v).count() > 2 {
                n += 1;
            }
        }
    }
    n
}

/// Component statistics of an already thinned image.
pub fn skeleton_report(skeleton: &BinaryFrame, window: (u64, u64)) -> EdgeReport {
    let (_, n) = label_components(skeleton);
    EdgeReport {
        num_components: n,
        avg_contour_length: if n == 0 {
            0.0
        } else {
            skeleton.popcount() as f64 / n as f64
        },
        junction_count: count_junctions(skeleton),
        window,
    }
}

/// Blur, binarize, thin, then count components, length and junctions.
pub fn edge_pipeline(frame: &AccumFrame, cfg: &EdgeConfig) -> EdgeReport {
    let raw: Vec<f64> = frame.counts.iter().map(|&c| f64::from(c)).collect();
    let smooth = match cfg.blur_sigma {
        Some(s) => gaussian_blur(&raw, frame.width, frame.height, s),
        None => raw,
    };
    let threshold = match cfg.threshold {
        Threshold::Otsu => otsu_threshold(&smooth),
        Threshold::Fixed { value } => Some(value),
    };
    let bits = match threshold {
        Some(t) => smooth.iter().map(|&v| v > t).collect(),
        None => vec![false; smooth.len()],
    };
    let skeleton = zhang_suen(&BinaryFrame::new(frame.width, frame.height, bits));
    skeleton_report(&skeleton, frame.window)
}
