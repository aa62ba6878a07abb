//! Connected-component extraction over label masks.

use crate::mask::Mask;
use crate::vocab::BACKGROUND_ID;

/// One 4-connected component of a single non-background mask value.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    /// Mask value (label index + 1).
    pub mask_value: u8,
    /// Linear pixel indices (`y * width + x`), ascending.
    pub pixels: Vec<u32>,
    /// Inclusive bounding box `(x0, y0, x1, y1)`.
    pub bbox: (u32, u32, u32, u32),
    /// Pixel-center centroid in pixel units `(x, y)`.
    pub centroid: (f64, f64),
}

impl Region {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

/// BFS flood fill in row-major scan order; regions are returned in order of
/// their first-encountered pixel, which makes the output deterministic.
pub fn connected_components(mask: &Mask) -> Vec<Region> {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut visited = vec![false; w * h];
    let mut regions = Vec::new();
    let mut queue = Vec::new();

    for start in 0..w * h {
        if visited[start] || mask.data[start] == BACKGROUND_ID {
            continue;
        }
        let value = mask.data[start];
        visited[start] = true;
        queue.clear();
        queue.push(start);
        let mut pixels = Vec::new();
        while let Some(p) = queue.pop() {
            pixels.push(p as u32);
            let (x, y) = (p % w, p / w);
            let mut try_push = |nx: usize, ny: usize| {
                let np = ny * w + nx;
                if !visited[np] && mask.data[np] == value {
                    visited[np] = true;
                    queue.push(np);
                }
            };
            if x > 0 {
                try_push(x - 1, y);
            }
            if x + 1 < w {
                try_push(x + 1, y);
            }
            if y > 0 {
                try_push(x, y - 1);
            }
            if y + 1 < h {
                try_push(x, y + 1);
            }
        }
        pixels.sort_unstable();
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let (mut sx, mut sy) = (0.0f64, 0.0f64);
        for &p in &pixels {
            let x = p % w as u32;
            let y = p / w as u32;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            sx += x as f64 + 0.5;
            sy += y as f64 + 0.5;
        }
        let n = pixels.len() as f64;
        regions.push(Region {
            mask_value: value,
            pixels,
            bbox: (x0, y0, x1, y1),
            centroid: (sx / n, sy / n),
        });
    }
    regions
}

/// Region IoU between two pixel-index sets (both ascending).
pub fn region_iou(a: &[u32], b: &[u32]) -> f64 {
    let mut inter = 0usize;
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}
