use crate::segmentation::{bits_to_png, decode_binary_raster, SegmentationError};

/// Binary stroke map, row-major, `true` = ink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SketchImage {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl SketchImage {
    pub fn blank(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; (width * height) as usize],
        }
    }

    /// Decodes a 1-bit or 8-bit raster; values above 127 are ink.
    pub fn from_png(bytes: &[u8]) -> Result<Self, SegmentationError> {
        let (width, height, bits) = decode_binary_raster(bytes)?;
        Ok(Self { width, height, bits })
    }

    pub fn to_png(&self) -> Vec<u8> {
        bits_to_png(self.width, self.height, &self.bits)
    }

    pub fn get(&self, u: u32, v: u32) -> bool {
        self.bits[(v * self.width + u) as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, ink: bool) {
        self.bits[(v * self.width + u) as usize] = ink;
    }

    pub fn ink_count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_blank(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Inclusive pixel bounds `(u0, v0, u1, v1)` of the ink.
    pub fn ink_bounds(&self) -> Option<(u32, u32, u32, u32)> {
        let mut bounds: Option<(u32, u32, u32, u32)> = None;
        for v in 0..self.height {
            for u in 0..self.width {
                if self.get(u, v) {
                    bounds = Some(match bounds {
                        None => (u, v, u, v),
                        Some((a, b, c, d)) => (a.min(u), b.min(v), c.max(u), d.max(v)),
                    });
                }
            }
        }
        bounds
    }

    /// Crops to the ink, scales it (aspect preserved) to fit `size - 2 * margin` and centers
    /// it on a `size` x `size` canvas. A target pixel is ink when any source pixel under its
    /// footprint is, so thin strokes survive downsampling. Blank input gives a blank canvas.
    pub fn canonicalize(&self, size: u32, margin: u32) -> SketchImage {
        let mut out = SketchImage::blank(size, size);
        let Some((u0, v0, u1, v1)) = self.ink_bounds() else {
            return out;
        };
        let (bw, bh) = ((u1 - u0 + 1) as f64, (v1 - v0 + 1) as f64);
        let inner = size.saturating_sub(2 * margin).max(1) as f64;
        let scale = inner / bw.max(bh);
        let (tw, th) = (bw * scale, bh * scale);
        let (ox, oy) = ((size as f64 - tw) / 2.0, (size as f64 - th) / 2.0);

        // Integral image of the cropped ink for footprint queries.
        let (cw, ch) = (u1 - u0 + 1, v1 - v0 + 1);
        let stride = (cw + 1) as usize;
        let mut integral = vec![0u32; stride * (ch + 1) as usize];
        for y in 0..ch {
            let mut row = 0u32;
            for x in 0..cw {
                row += self.get(u0 + x, v0 + y) as u32;
                integral[(y as usize + 1) * stride + x as usize + 1] =
                    integral[y as usize * stride + x as usize + 1] + row;
            }
        }
        let sum = |x0: usize, y0: usize, x1: usize, y1: usize| {
            integral[y1 * stride + x1] + integral[y0 * stride + x0]
                - integral[y0 * stride + x1]
                - integral[y1 * stride + x0]
        };

        let tu0 = ox.floor().max(0.0) as u32;
        let tv0 = oy.floor().max(0.0) as u32;
        let tu1 = ((ox + tw).ceil() as u32).min(size);
        let tv1 = ((oy + th).ceil() as u32).min(size);
        for tv in tv0..tv1 {
            let sy0 = ((tv as f64 - oy) / scale).floor().max(0.0) as usize;
            let sy1 = (((tv + 1) as f64 - oy) / scale).ceil().min(bh) as usize;
            if sy1 <= sy0 {
                continue;
            }
            for tu in tu0..tu1 {
                let sx0 = ((tu as f64 - ox) / scale).floor().max(0.0) as usize;
                let sx1 = (((tu + 1) as f64 - ox) / scale).ceil().min(bw) as usize;
                if sx1 > sx0 && sum(sx0, sy0, sx1, sy1) > 0 {
                    out.set(tu, tv, true);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonicalize_centers_and_fills() {
        let mut s = SketchImage::blank(100, 50);
        for u in 10..30 {
            s.set(u, 20, true);
            s.set(u, 29, true);
        }
        for v in 20..30 {
            s.set(10, v, true);
            s.set(29, v, true);
        }
        let c = s.canonicalize(64, 4);
        let (u0, v0, u1, v1) = c.ink_bounds().unwrap();
        assert_eq!((u0, u1), (4, 59));
        // 20 x 10 box keeps its aspect: 56 x 28, centered vertically.
        assert_eq!((v0, v1), (18, 45));
    }

    #[test]
    fn blank_stays_blank() {
        assert!(SketchImage::blank(30, 30).canonicalize(64, 4).is_blank());
    }

    #[test]
    fn thin_lines_survive_downsampling() {
        let mut s = SketchImage::blank(1000, 1000);
        for u in 0..1000 {
            s.set(u, 0, true);
            s.set(u, 999, true);
            s.set(u, 500, true);
        }
        let c = s.canonicalize(100, 0);
        for u in 0..100 {
            assert!(c.get(u, 0) && c.get(u, 99) && c.get(u, 50));
        }
    }
}
