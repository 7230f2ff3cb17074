use std::f64::consts::PI;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{RetrievalParams, SketchImage};

pub const ORIENTATIONS: usize = 4;
pub const GRID: usize = 4;
pub const FEATURE_DIM: usize = GRID * GRID * ORIENTATIONS;

/// Unit-length pooled Gabor energies around one stroke pixel. Entry
/// `(cell_y * GRID + cell_x) * ORIENTATIONS + orientation`; orientation `o` responds to
/// strokes running at `o * 45` degrees (0 = horizontal).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFeature {
    pub vector: [f32; FEATURE_DIM],
    pub keypoint: (u32, u32),
}

/// Gabor filter bank and FFT plans for one image size.
///
/// The filters are narrow band-pass in frequency, so only the spectrum columns where some
/// filter exceeds `GAIN_FLOOR` are transformed along y; the rest never reach an output.
pub struct GaborBank {
    width: usize,
    height: usize,
    /// Frequency columns kept, ascending.
    columns: Vec<usize>,
    /// Per orientation, gains over the kept columns, column-major (`column * height + ky`).
    filters: Vec<Vec<f32>>,
    window: f64,
    row_fft: Arc<dyn Fft<f32>>,
    row_ifft: Arc<dyn Fft<f32>>,
    col_fft: Arc<dyn Fft<f32>>,
    col_ifft: Arc<dyn Fft<f32>>,
}

const GAIN_FLOOR: f64 = 1e-9;

fn signed_frequency(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64 / n as f64
    } else {
        k as f64 / n as f64 - 1.0
    }
}

impl GaborBank {
    pub fn new(width: u32, height: u32, params: &RetrievalParams) -> Self {
        let (width, height) = (width as usize, height as usize);
        let diagonal = (width as f64).hypot(height as f64);
        let wavelength = params.wavelength_ratio * diagonal;
        let f0 = 1.0 / wavelength;
        let sigma = params.envelope_ratio * wavelength;
        let dense: Vec<Vec<f64>> = (0..ORIENTATIONS)
            .map(|o| {
                // Frequency direction is perpendicular to the stroke direction.
                let phi = (o as f64 * 45.0 + 90.0).to_radians();
                let (dx, dy) = (phi.cos(), -phi.sin());
                let mut g = vec![0.0; width * height];
                for kx in 0..width {
                    let fx = signed_frequency(kx, width);
                    for ky in 0..height {
                        let fy = signed_frequency(ky, height);
                        let along = fx * dx + fy * dy - f0;
                        let across = -fx * dy + fy * dx;
                        g[kx * height + ky] =
                            (-2.0 * PI * PI * sigma * sigma * (along * along + across * across)).exp();
                    }
                }
                g
            })
            .collect();
        let columns: Vec<usize> = (0..width)
            .filter(|kx| {
                dense
                    .iter()
                    .any(|g| g[kx * height..(kx + 1) * height].iter().any(|x| *x > GAIN_FLOOR))
            })
            .collect();
        let filters = dense
            .iter()
            .map(|g| {
                columns
                    .iter()
                    .flat_map(|kx| g[kx * height..(kx + 1) * height].iter().map(|x| *x as f32))
                    .collect()
            })
            .collect();
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            columns,
            filters,
            window: params.window_ratio * diagonal,
            row_fft: planner.plan_fft_forward(width),
            row_ifft: planner.plan_fft_inverse(width),
            col_fft: planner.plan_fft_forward(height),
            col_ifft: planner.plan_fft_inverse(height),
        }
    }

    /// Response magnitude per orientation, as summed-area tables of size (w+1) x (h+1).
    fn energy_integrals(&self, image: &SketchImage) -> Vec<Vec<f64>> {
        let (w, h) = (self.width, self.height);
        let zero = Complex::new(0.0f32, 0.0);
        let mut rows: Vec<Complex<f32>> = image
            .bits
            .iter()
            .map(|&b| Complex::new(if b { 1.0 } else { 0.0 }, 0.0))
            .collect();
        self.row_fft.process(&mut rows);
        let mut spectrum = vec![zero; self.columns.len() * h];
        for (c, &kx) in self.columns.iter().enumerate() {
            for y in 0..h {
                spectrum[c * h + y] = rows[y * w + kx];
            }
        }
        self.col_fft.process(&mut spectrum);

        let norm = 1.0 / (w * h) as f64;
        let mut out = vec![zero; w * h];
        self.filters
            .iter()
            .map(|g| {
                let mut resp: Vec<Complex<f32>> = spectrum.iter().zip(g).map(|(s, f)| s * *f).collect();
                self.col_ifft.process(&mut resp);
                out.fill(zero);
                for (c, &kx) in self.columns.iter().enumerate() {
                    for y in 0..h {
                        out[y * w + kx] = resp[c * h + y];
                    }
                }
                self.row_ifft.process(&mut out);
                let stride = w + 1;
                let mut integral = vec![0.0; stride * (h + 1)];
                for y in 0..h {
                    let mut acc = 0.0;
                    for x in 0..w {
                        let z = out[y * w + x];
                        acc += ((z.re as f64).powi(2) + (z.im as f64).powi(2)).sqrt() * norm;
                        integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + acc;
                    }
                }
                integral
            })
            .collect()
    }

    /// Features at up to `samples` stroke pixels drawn uniformly with `seed`.
    pub fn extract(&self, image: &SketchImage, samples: usize, seed: u64) -> Vec<LocalFeature> {
        assert_eq!(
            (image.width as usize, image.height as usize),
            (self.width, self.height),
            "image size differs from the filter bank"
        );
        let strokes: Vec<u32> = image
            .bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| i as u32)
            .collect();
        if strokes.is_empty() || samples == 0 {
            return Vec::new();
        }
        let chosen: Vec<u32> = if strokes.len() <= samples {
            strokes
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked: Vec<u32> = sample(&mut rng, strokes.len(), samples)
                .into_iter()
                .map(|i| strokes[i])
                .collect();
            picked.sort_unstable();
            picked
        };

        let integrals = self.energy_integrals(image);
        let (w, h) = (self.width, self.height);
        let stride = w + 1;
        let clamp_x = |x: f64| (x.round().max(0.0) as usize).min(w);
        let clamp_y = |y: f64| (y.round().max(0.0) as usize).min(h);
        let cell = self.window / GRID as f64;

        chosen
            .into_iter()
            .filter_map(|pix| {
                let (u, v) = (pix as usize % w, pix as usize / w);
                let left = u as f64 + 0.5 - self.window / 2.0;
                let top = v as f64 + 0.5 - self.window / 2.0;
                let mut vector = [0.0f64; FEATURE_DIM];
                for cy in 0..GRID {
                    let y0 = clamp_y(top + cy as f64 * cell);
                    let y1 = clamp_y(top + (cy + 1) as f64 * cell);
                    for cx in 0..GRID {
                        let x0 = clamp_x(left + cx as f64 * cell);
                        let x1 = clamp_x(left + (cx + 1) as f64 * cell);
                        if x1 <= x0 || y1 <= y0 {
                            continue;
                        }
                        for (o, t) in integrals.iter().enumerate() {
                            let s = t[y1 * stride + x1] - t[y0 * stride + x1] - t[y1 * stride + x0]
                                + t[y0 * stride + x0];
                            vector[(cy * GRID + cx) * ORIENTATIONS + o] = s.max(0.0);
                        }
                    }
                }
                let n = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !(n > 1e-12) {
                    return None;
                }
                Some(LocalFeature {
                    vector: vector.map(|x| (x / n) as f32),
                    keypoint: (u as u32, v as u32),
                })
            })
            .collect()
    }
}

/// Convenience wrapper building a one-off filter bank for `image`'s size.
pub fn extract_features(
    image: &SketchImage,
    samples: usize,
    seed: u64,
    params: &RetrievalParams,
) -> Vec<LocalFeature> {
    if image.is_blank() {
        return Vec::new();
    }
    GaborBank::new(image.width, image.height, params).extract(image, samples, seed)
}
