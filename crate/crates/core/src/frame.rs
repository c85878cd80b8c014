//! Windowed accumulation of events into count and binary frames.

use crate::event::Event;

/// Per-pixel event counts over the half-open window `[t_start, t_end)`.
/// Both polarities are counted together.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccumFrame {
    pub width: usize,
    pub height: usize,
    /// Row-major counts.
    pub counts: Vec<u32>,
    pub window: (u64, u64),
}

impl AccumFrame {
    pub fn zeros(width: usize, height: usize, window: (u64, u64)) -> Self {
        AccumFrame {
            width,
            height,
            counts: vec![0; width * height],
            window,
        }
    }

    /// Builds a frame directly from counts; mostly useful in tests.
    pub fn from_counts(width: usize, height: usize, counts: Vec<u32>) -> Self {
        assert_eq!(
            counts.len(),
            width * height,
            "count buffer does not match frame size"
        );
        AccumFrame {
            width,
            height,
            counts,
            window: (0, 1),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.counts[y * self.width + x]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    /// Adds one event at integer pixel `(x, y)` if it falls in the window and
    /// on the sensor.
    #[inline]
    pub fn add(&mut self, t: u64, x: i64, y: i64) {
        if t < self.window.0 || t >= self.window.1 {
            return;
        }
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return;
        }
        self.counts[y as usize * self.width + x as usize] += 1;
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0; self.counts.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                counts[x * self.height + y] = self.get(x, y);
            }
        }
        AccumFrame {
            width: self.height,
            height: self.width,
            counts,
            window: self.window,
        }
    }

    /// Rotates the frame by 90 degrees counter-clockwise.
    pub fn rotate90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let mut counts = vec![0; self.counts.len()];
        for y in 0..h {
            for x in 0..w {
                // new frame is h wide, w tall
                let nx = y;
                let ny = w - 1 - x;
                counts[ny * h + nx] = self.get(x, y);
            }
        }
        AccumFrame {
            width: h,
            height: w,
            counts,
            window: self.window,
        }
    }
}

/// A {0,1} image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryFrame {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryFrame {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(
            bits.len(),
            width * height,
            "bit buffer does not match frame size"
        );
        BinaryFrame {
            width,
            height,
            bits,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        BinaryFrame {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Out-of-range coordinates read as background.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.get(x as usize, y as usize)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Self {
        BinaryFrame {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn to_counts(&self) -> AccumFrame {
        AccumFrame::from_counts(
            self.width,
            self.height,
            self.bits.iter().map(|&b| u32::from(b)).collect(),
        )
    }
}

/// Counts events with `t0 <= t < t1` per pixel.
pub fn accumulate(events: &[Event], window: (u64, u64), width: usize, height: usize) -> AccumFrame {
    assert!(window.1 > window.0, "accumulation window must have t1 > t0");
    let mut frame = AccumFrame::zeros(width, height, window);
    // Streams are sorted, so the window is a contiguous slice.
    let lo = events.partition_point(|e| e.t < window.0);
    let hi = events.partition_point(|e| e.t < window.1);
    for e in &events[lo..hi] {
        frame.add(e.t, i64::from(e.x), i64::from(e.y));
    }
    frame
}

/// Sets a bit wherever at least one event was counted.
pub fn binarize(frame: &AccumFrame) -> BinaryFrame {
    BinaryFrame {
        width: frame.width,
        height: frame.height,
        bits: frame.counts.iter().map(|&c| c >= 1).collect(),
    }
}

/// Disjoint, back-to-back windows of length `len_us` covering `[start, end)`.
/// A trailing partial window is dropped.
pub fn disjoint_windows(start: u64, end: u64, len_us: u64) -> Vec<(u64, u64)> {
    assert!(len_us > 0, "window length must be positive");
    let mut out = Vec::new();
    let mut t0 = start;
    while t0.checked_add(len_us).is_some_and(|t1| t1 <= end) {
        out.push((t0, t0 + len_us));
        t0 += len_us;
    }
    out
}
