use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{LocalFeature, RetrievalError, FEATURE_DIM};
use crate::error::Warning;

const MAX_ITERATIONS: usize = 50;
const TOLERANCE: f64 = 1e-6;

pub type Word = [f32; FEATURE_DIM];

/// Unit-length visual words.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub centroids: Vec<Word>,
    pub training_seed: u64,
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Word with the largest cosine to `v`; ties go to the lowest id.
    pub fn nearest(&self, v: &Word) -> usize {
        let mut best = (f32::NEG_INFINITY, 0);
        for (i, c) in self.centroids.iter().enumerate() {
            let d = dot(c, v);
            if d > best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// `nearest` for many vectors at once through one matrix product.
    pub fn assign(&self, vs: &[Word]) -> Vec<usize> {
        if vs.is_empty() || self.centroids.is_empty() {
            return Vec::new();
        }
        let centroids = DMatrix::from_row_iterator(self.k(), FEATURE_DIM, self.centroids.iter().flatten().copied());
        let words = DMatrix::from_column_slice(FEATURE_DIM, vs.len(), vs.as_flattened());
        let scores = centroids * words;
        scores
            .column_iter()
            .map(|col| {
                let mut best = (f32::NEG_INFINITY, 0);
                for (i, d) in col.iter().enumerate() {
                    if *d > best.0 {
                        best = (*d, i);
                    }
                }
                best.1
            })
            .collect()
    }
}

#[inline]
fn dot(a: &Word, b: &Word) -> f32 {
    let mut acc = [0.0f32; 8];
    for (ca, cb) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
        for i in 0..8 {
            acc[i] += ca[i] * cb[i];
        }
    }
    acc.iter().sum()
}

/// Word counts of one image. Raw counts until an index applies its idf.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorHistogram {
    pub counts: Vec<u32>,
}

impl DescriptorHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }
}

pub fn quantize(features: &[LocalFeature], codebook: &Codebook) -> DescriptorHistogram {
    let mut counts = vec![0u32; codebook.k()];
    let words: Vec<Word> = features.iter().map(|f| f.vector).collect();
    for w in codebook.assign(&words) {
        counts[w] += 1;
    }
    DescriptorHistogram { counts }
}

fn normalize(v: &[f64; FEATURE_DIM]) -> Option<Word> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 1e-12).then(|| v.map(|x| (x / n) as f32))
}

/// Spherical k-means with k-means++ seeding. `k` shrinks to the number of distinct input
/// vectors when there are fewer, with a `CodebookReduced` warning.
pub fn build_codebook(
    features: &[Word],
    k: usize,
    seed: u64,
) -> Result<(Codebook, Vec<Warning>), RetrievalError> {
    if features.is_empty() || k == 0 {
        return Err(RetrievalError::NoFeatures);
    }
    let mut warnings = Vec::new();
    let distinct: HashSet<[u32; FEATURE_DIM]> =
        features.iter().map(|f| f.map(f32::to_bits)).collect();
    let k = if distinct.len() < k {
        warnings.push(Warning::new(
            "CodebookReduced",
            format!("only {} distinct features, k reduced from {k}", distinct.len()),
        ));
        distinct.len()
    } else {
        k
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Word> = Vec::with_capacity(k);
    centroids.push(features[rng.random_range(0..features.len())]);
    let mut d2: Vec<f64> = features
        .par_iter()
        .map(|f| (2.0 - 2.0 * dot(f, &centroids[0]) as f64).max(0.0))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            break;
        };
        let c = features[next];
        centroids.push(c);
        d2.par_iter_mut().zip(features.par_iter()).for_each(|(d, f)| {
            *d = d.min((2.0 - 2.0 * dot(f, &c) as f64).max(0.0));
        });
    }

    let mut book = Codebook {
        centroids,
        training_seed: seed,
    };
    for _ in 0..MAX_ITERATIONS {
        let assignment: Vec<usize> = features.par_chunks(4096).flat_map_iter(|chunk| book.assign(chunk)).collect();
        let mut sums = vec![[0.0f64; FEATURE_DIM]; book.k()];
        for (f, &a) in features.iter().zip(&assignment) {
            for (s, x) in sums[a].iter_mut().zip(f) {
                *s += *x as f64;
            }
        }
        let mut shift = 0.0f64;
        for (c, s) in book.centroids.iter_mut().zip(&sums) {
            if let Some(n) = normalize(s) {
                let d = c
                    .iter()
                    .zip(&n)
                    .map(|(a, b)| ((a - b) as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                shift = shift.max(d);
                *c = n;
            }
        }
        if shift < TOLERANCE {
            break;
        }
    }
    Ok((book, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(i: usize) -> Word {
        let mut v = [0.0; FEATURE_DIM];
        v[i] = 1.0;
        v
    }

    #[test]
    fn single_word_is_mean_direction() {
        let mut a = [0.0; FEATURE_DIM];
        a[0] = 0.6;
        a[1] = 0.8;
        let feats = vec![unit(0), unit(1), a];
        let (book, w) = build_codebook(&feats, 1, 5).unwrap();
        assert!(w.is_empty());
        let s = [1.6f64, 1.8];
        let n = (s[0] * s[0] + s[1] * s[1]).sqrt();
        assert!((book.centroids[0][0] as f64 - s[0] / n).abs() < 1e-6);
        assert!((book.centroids[0][1] as f64 - s[1] / n).abs() < 1e-6);
    }

    #[test]
    fn k_shrinks_to_distinct_count() {
        let feats = vec![unit(0), unit(1), unit(2), unit(1), unit(0)];
        let (book, w) = build_codebook(&feats, 10, 5).unwrap();
        assert_eq!(book.k(), 3);
        assert_eq!(w[0].code, "CodebookReduced");
        for i in 0..3 {
            for j in i + 1..3 {
                assert_ne!(book.centroids[i], book.centroids[j]);
            }
        }
    }

    #[test]
    fn seeded_training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let feats: Vec<Word> = (0..300)
            .map(|_| {
                let mut v = [0.0f64; FEATURE_DIM];
                for x in v.iter_mut() {
                    *x = rng.random::<f64>();
                }
                normalize(&v).unwrap()
            })
            .collect();
        let (a, _) = build_codebook(&feats, 12, 42).unwrap();
        let (b, _) = build_codebook(&feats, 12, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_input_fails() {
        assert_eq!(build_codebook(&[], 4, 0).unwrap_err(), RetrievalError::NoFeatures);
    }

    #[test]
    fn quantize_counts_and_ties() {
        let book = Codebook {
            centroids: (0..8).map(unit).collect(),
            training_seed: 0,
        };
        let f = |v: Word| LocalFeature { vector: v, keypoint: (0, 0) };
        let h = quantize(&[f(unit(7))], &book);
        assert_eq!(h.counts.iter().position(|&c| c == 1), Some(7));
        assert_eq!(h.total(), 1);
        let mut tie = [0.0; FEATURE_DIM];
        tie[2] = std::f32::consts::FRAC_1_SQRT_2;
        tie[5] = std::f32::consts::FRAC_1_SQRT_2;
        assert_eq!(book.nearest(&tie), 2);
        assert!(quantize(&[], &book).is_empty());
    }
}
