use std::sync::OnceLock;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::codebook::Word;
use super::features::GaborBank;
use super::{
    build_codebook, quantize, render_line_art, Codebook, LineArtSettings, LocalFeature,
    RetrievalError, RetrievalParams, SketchImage, FEATURE_DIM,
};
use crate::error::Warning;
use crate::geometry::{orbit_camera, Camera, ViewSettings};
use crate::mesh::TriangleMesh;

const MAGIC: &[u8; 7] = b"SKRIDX1";
const FORMAT_VERSION: u32 = 1;
const QUERY_SALT: u64 = 0x5eed_0f_9e37_79b9;

/// A mesh to index. Ids must be unique.
#[derive(Debug, Clone, Copy)]
pub struct ComponentEntry<'a> {
    pub id: u32,
    pub name: &'a str,
    pub category: &'a str,
    pub mesh: &'a TriangleMesh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexComponent {
    pub id: u32,
    pub name: String,
    pub category: String,
    pub view_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posting {
    pub component_id: u32,
    pub view_id: u32,
    /// tf-idf weight of the word in the view, divided by the view vector's norm.
    pub weight: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredComponent {
    pub component_id: u32,
    pub score: f64,
}

pub struct RetrievalIndex {
    pub params: RetrievalParams,
    pub codebook: Codebook,
    pub idf: Vec<f32>,
    /// Per word, sorted by (component_id, view_id).
    pub postings: Vec<Vec<Posting>>,
    /// Sorted by id.
    pub components: Vec<IndexComponent>,
    bank: OnceLock<GaborBank>,
}

impl std::fmt::Debug for RetrievalIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RetrievalIndex")
            .field("k", &self.codebook.k())
            .field("components", &self.components.len())
            .field("views", &self.view_count())
            .finish()
    }
}

impl PartialEq for RetrievalIndex {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
            && self.codebook == other.codebook
            && self.idf == other.idf
            && self.postings == other.postings
            && self.components == other.components
    }
}

/// Rig cameras around the mesh's bounding sphere: yaws spread evenly over
/// `[-yaw_span, yaw_span]` at a fixed elevation.
pub fn view_cameras(mesh: &TriangleMesh, params: &RetrievalParams) -> Option<Vec<Camera>> {
    let (center, radius) = mesh.bounding_sphere()?;
    let n = params.views_per_component.max(1);
    let settings = ViewSettings {
        width: params.view_size,
        height: params.view_size,
        ..ViewSettings::default()
    };
    Some(
        (0..n)
            .map(|i| {
                let yaw = if n == 1 {
                    0.0
                } else {
                    -params.yaw_span_deg + 2.0 * params.yaw_span_deg * i as f64 / (n - 1) as f64
                };
                orbit_camera(center, radius, yaw, params.elevation_deg, params.distance_factor, &settings)
            })
            .collect(),
    )
}

fn render_view(mesh: &TriangleMesh, cam: &Camera, params: &RetrievalParams) -> SketchImage {
    let radius = mesh.bounding_sphere().map(|s| s.1).unwrap_or(1.0);
    let settings = LineArtSettings {
        depth_threshold: params.depth_threshold_ratio * radius,
        normal_threshold_deg: params.normal_threshold_deg,
    };
    render_line_art(mesh, cam, &settings)
        .map(|img| img.canonicalize(params.canonical_size, params.canonical_margin))
        .unwrap_or_else(|_| SketchImage::blank(params.canonical_size, params.canonical_size))
}

fn view_seed(seed: u64, view: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(view as u64 + 1)
}

impl RetrievalIndex {
    fn bank(&self) -> &GaborBank {
        self.bank.get_or_init(|| {
            GaborBank::new(self.params.canonical_size, self.params.canonical_size, &self.params)
        })
    }

    pub fn view_count(&self) -> usize {
        self.components.iter().map(|c| c.view_count as usize).sum()
    }

    pub fn component(&self, id: u32) -> Option<&IndexComponent> {
        self.components
            .binary_search_by_key(&id, |c| c.id)
            .ok()
            .map(|i| &self.components[i])
    }

    /// Canonical line-art views of `mesh` exactly as the index sees them.
    pub fn line_art_views(mesh: &TriangleMesh, params: &RetrievalParams) -> Vec<SketchImage> {
        let Some(cameras) = view_cameras(mesh, params) else {
            return Vec::new();
        };
        cameras.iter().map(|cam| render_view(mesh, cam, params)).collect()
    }

    /// Canonical line art from the rig's central viewpoint (yaw 0 at the rig elevation).
    pub fn front_line_art(mesh: &TriangleMesh, params: &RetrievalParams) -> SketchImage {
        Self::line_art_at(mesh, params, 0.0, params.elevation_deg)
    }

    /// Canonical line art from an arbitrary orbit viewpoint at the rig distance.
    pub fn line_art_at(mesh: &TriangleMesh, params: &RetrievalParams, yaw_deg: f64, elevation_deg: f64) -> SketchImage {
        match mesh.bounding_sphere() {
            Some((center, radius)) => {
                let settings = ViewSettings {
                    width: params.view_size,
                    height: params.view_size,
                    ..ViewSettings::default()
                };
                let cam = orbit_camera(center, radius, yaw_deg, elevation_deg, params.distance_factor, &settings);
                render_view(mesh, &cam, params)
            }
            None => SketchImage::blank(params.canonical_size, params.canonical_size),
        }
    }

    /// Ranked components for a sketch of any size. Scores are cosines in [0, 1]; a
    /// component's score is its best view. Ties are broken by ascending id.
    pub fn query(
        &self,
        sketch: &SketchImage,
        top_k: usize,
        category: Option<&str>,
    ) -> Result<Vec<ScoredComponent>, RetrievalError> {
        self.query_with_seed(sketch, top_k, category, self.params.seed ^ QUERY_SALT)
    }

    pub fn query_with_seed(
        &self,
        sketch: &SketchImage,
        top_k: usize,
        category: Option<&str>,
        seed: u64,
    ) -> Result<Vec<ScoredComponent>, RetrievalError> {
        let p = &self.params;
        let canonical = sketch.canonicalize(p.canonical_size, p.canonical_margin);
        let features = self.bank().extract(&canonical, p.samples, seed);
        if features.is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        let hist = quantize(&features, &self.codebook);
        let q: Vec<(usize, f64)> = hist
            .counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(w, c)| (w, *c as f64 * self.idf[w] as f64))
            .filter(|(_, x)| *x > 0.0)
            .collect();
        let q_norm = q.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();

        // View scores live in one flat array, offset per component.
        let mut offsets = Vec::with_capacity(self.components.len());
        let mut total = 0usize;
        for c in &self.components {
            offsets.push(total);
            total += c.view_count as usize;
        }
        let mut view_scores = vec![0.0f64; total];
        if q_norm > 0.0 {
            for (w, x) in &q {
                let qw = x / q_norm;
                for post in &self.postings[*w] {
                    let ci = self
                        .components
                        .binary_search_by_key(&post.component_id, |c| c.id)
                        .expect("posting refers to an indexed component");
                    view_scores[offsets[ci] + post.view_id as usize] += qw * post.weight as f64;
                }
            }
        }

        let mut ranked: Vec<ScoredComponent> = self
            .components
            .iter()
            .enumerate()
            .filter(|(_, c)| category.is_none_or(|cat| c.category == cat))
            .map(|(i, c)| {
                let views = &view_scores[offsets[i]..offsets[i] + c.view_count as usize];
                let best = views.iter().cloned().fold(0.0, f64::max);
                ScoredComponent {
                    component_id: c.id,
                    score: best.clamp(0.0, 1.0),
                }
            })
            .collect();
        ranked.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.component_id.cmp(&b.component_id))
        });
        ranked.truncate(top_k);
        Ok(ranked)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = IndexHeader {
            format_version: FORMAT_VERSION,
            k: self.codebook.k(),
            dim: FEATURE_DIM,
            training_seed: self.codebook.training_seed,
            params: self.params.clone(),
            components: self.components.clone(),
            postings_lengths: self.postings.iter().map(Vec::len).collect(),
        };
        let header = serde_json::to_vec(&header).expect("index header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for c in &self.codebook.centroids {
            for x in c {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        for x in &self.idf {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for list in &self.postings {
            for p in list {
                out.extend_from_slice(&p.component_id.to_le_bytes());
                out.extend_from_slice(&p.view_id.to_le_bytes());
                out.extend_from_slice(&p.weight.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RetrievalError> {
        let bad = |m: &str| RetrievalError::UnsupportedFormat(m.to_owned());
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("missing SKRIDX1 magic"));
        }
        let mut pos = MAGIC.len();
        let header_len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        pos += 4;
        let header_bytes = bytes
            .get(pos..pos + header_len)
            .ok_or_else(|| bad("truncated header"))?;
        let header: IndexHeader =
            serde_json::from_slice(header_bytes).map_err(|e| bad(&format!("header: {e}")))?;
        pos += header_len;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(&format!("index format version {}", header.format_version)));
        }
        if header.dim != FEATURE_DIM || header.postings_lengths.len() != header.k {
            return Err(bad("inconsistent dimensions"));
        }
        let entries: usize = header.postings_lengths.iter().sum();
        let expected = (header.k * FEATURE_DIM + header.k) * 4 + entries * 12;
        if bytes.len() - pos != expected {
            return Err(bad("body length does not match header"));
        }
        let mut read_u32 = || {
            let v = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
            pos += 4;
            v
        };
        let mut centroids = Vec::with_capacity(header.k);
        for _ in 0..header.k {
            let mut c: Word = [0.0; FEATURE_DIM];
            for x in c.iter_mut() {
                *x = f32::from_bits(read_u32());
            }
            centroids.push(c);
        }
        let idf: Vec<f32> = (0..header.k).map(|_| f32::from_bits(read_u32())).collect();
        let postings = header
            .postings_lengths
            .iter()
            .map(|&n| {
                (0..n)
                    .map(|_| Posting {
                        component_id: read_u32(),
                        view_id: read_u32(),
                        weight: f32::from_bits(read_u32()),
                    })
                    .collect()
            })
            .collect();
        Ok(RetrievalIndex {
            params: header.params,
            codebook: Codebook {
                centroids,
                training_seed: header.training_seed,
            },
            idf,
            postings,
            components: header.components,
            bank: OnceLock::new(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    format_version: u32,
    k: usize,
    dim: usize,
    training_seed: u64,
    params: RetrievalParams,
    components: Vec<IndexComponent>,
    postings_lengths: Vec<usize>,
}

/// Renders the view rig of every component, trains the vocabulary on (a seeded subsample
/// of) all view features, and builds tf-idf postings. Components that cannot be rendered
/// are skipped with a warning.
pub fn build_index(
    components: &[ComponentEntry<'_>],
    params: &RetrievalParams,
) -> Result<(RetrievalIndex, Vec<Warning>), RetrievalError> {
    let mut warnings = Vec::new();
    let mut entries: Vec<&ComponentEntry> = components.iter().collect();
    entries.sort_by_key(|e| e.id);

    let bank = GaborBank::new(params.canonical_size, params.canonical_size, params);
    let per_component: Vec<Option<Vec<Vec<LocalFeature>>>> = entries
        .par_iter()
        .map(|e| {
            if e.mesh.is_empty() {
                return None;
            }
            let views = RetrievalIndex::line_art_views(e.mesh, params);
            Some(
                views
                    .iter()
                    .enumerate()
                    .map(|(v, img)| bank.extract(img, params.samples, view_seed(params.seed, v)))
                    .collect(),
            )
        })
        .collect();

    let mut kept: Vec<(IndexComponent, Vec<Vec<LocalFeature>>)> = Vec::new();
    for (e, views) in entries.iter().zip(per_component) {
        match views {
            None => warnings.push(Warning::new(
                "EmptyMesh",
                format!("component {} ({}) has no triangles", e.id, e.name),
            )),
            Some(views) => kept.push((
                IndexComponent {
                    id: e.id,
                    name: e.name.to_owned(),
                    category: e.category.to_owned(),
                    view_count: views.len() as u32,
                },
                views,
            )),
        }
    }
    if kept.is_empty() {
        return Err(RetrievalError::CatalogEmpty);
    }

    let all: Vec<&Word> = kept
        .iter()
        .flat_map(|(_, views)| views.iter().flatten().map(|f| &f.vector))
        .collect();
    if all.is_empty() {
        return Err(RetrievalError::NoFeatures);
    }
    let training: Vec<Word> = if all.len() > params.training_cap {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut picked = sample(&mut rng, all.len(), params.training_cap).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| *all[i]).collect()
    } else {
        all.iter().map(|w| **w).collect()
    };
    drop(all);
    let (codebook, book_warnings) = build_codebook(&training, params.codebook_k, params.seed)?;
    warnings.extend(book_warnings);
    let k = codebook.k();

    let histograms: Vec<Vec<Vec<u32>>> = kept
        .par_iter()
        .map(|(_, views)| views.iter().map(|f| quantize(f, &codebook).counts).collect())
        .collect();
    let n_views: usize = histograms.iter().map(Vec::len).sum();
    let mut df = vec![0usize; k];
    for h in histograms.iter().flatten() {
        for (w, &c) in h.iter().enumerate() {
            if c > 0 {
                df[w] += 1;
            }
        }
    }
    let idf: Vec<f32> = df
        .iter()
        .map(|&d| (n_views as f64 / (1 + d) as f64).ln().max(0.0) as f32)
        .collect();

    let mut postings: Vec<Vec<Posting>> = vec![Vec::new(); k];
    for ((comp, _), views) in kept.iter().zip(&histograms) {
        for (v, h) in views.iter().enumerate() {
            let weights: Vec<f64> = h
                .iter()
                .zip(&idf)
                .map(|(&c, &i)| c as f64 * i as f64)
                .collect();
            let norm = weights.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            for (w, x) in weights.iter().enumerate() {
                if *x > 0.0 {
                    postings[w].push(Posting {
                        component_id: comp.id,
                        view_id: v as u32,
                        weight: (x / norm) as f32,
                    });
                }
            }
        }
    }

    Ok((
        RetrievalIndex {
            params: params.clone(),
            codebook,
            idf,
            postings,
            components: kept.into_iter().map(|(c, _)| c).collect(),
            bank: OnceLock::new(),
        },
        warnings,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::synthetic_suite;

    fn small_params() -> RetrievalParams {
        RetrievalParams {
            codebook_k: 32,
            samples: 150,
            view_size: 128,
            canonical_size: 128,
            canonical_margin: 4,
            ..RetrievalParams::default()
        }
    }

    fn suite_index(n: usize) -> (Vec<crate::fixtures::SuiteComponent>, RetrievalIndex) {
        let suite = synthetic_suite(n, 3);
        let entries: Vec<ComponentEntry> = suite
            .iter()
            .enumerate()
            .map(|(i, c)| ComponentEntry {
                id: i as u32,
                name: &c.name,
                category: c.params.kind.category(),
                mesh: &c.mesh,
            })
            .collect();
        let (index, _) = build_index(&entries, &small_params()).unwrap();
        (suite, index)
    }

    #[test]
    fn bookkeeping_for_three_components() {
        let (_, index) = suite_index(3);
        assert_eq!(index.components.len(), 3);
        assert_eq!(index.view_count(), 15);
        for list in &index.postings {
            assert!(list
                .windows(2)
                .all(|w| (w[0].component_id, w[0].view_id) < (w[1].component_id, w[1].view_id)));
        }
    }

    #[test]
    fn persisted_bytes_round_trip_and_repeat() {
        let (_, a) = suite_index(3);
        let (_, b) = suite_index(3);
        let bytes = a.to_bytes();
        assert_eq!(bytes, b.to_bytes());
        let back = RetrievalIndex::from_bytes(&bytes).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_bytes(), bytes);
        assert!(matches!(
            RetrievalIndex::from_bytes(b"SKRIDX2xxxx"),
            Err(RetrievalError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn blank_sketch_is_empty_query() {
        let (_, index) = suite_index(3);
        assert_eq!(
            index.query(&SketchImage::blank(64, 64), 3, None).unwrap_err(),
            RetrievalError::EmptyQuery
        );
    }

    #[test]
    fn duplicates_rank_adjacent_by_id() {
        let suite = synthetic_suite(3, 3);
        let entries: Vec<ComponentEntry> = [0usize, 1, 2, 1]
            .iter()
            .enumerate()
            .map(|(id, &i)| ComponentEntry {
                id: id as u32 * 10,
                name: &suite[i].name,
                category: "window",
                mesh: &suite[i].mesh,
            })
            .collect();
        let (index, _) = build_index(&entries, &small_params()).unwrap();
        let views = RetrievalIndex::line_art_views(&suite[1].mesh, &index.params);
        let ranked = index.query(&views[2], 10, None).unwrap();
        assert_eq!(ranked.len(), 4);
        let at = ranked.iter().position(|r| r.component_id == 10).unwrap();
        assert_eq!(ranked[at + 1].component_id, 30);
        assert_eq!(ranked[at].score, ranked[at + 1].score);
        assert!(ranked.iter().all(|r| (0.0..=1.0).contains(&r.score)));
    }

    #[test]
    fn category_filter_and_top_k() {
        let (suite, index) = suite_index(6);
        let views = RetrievalIndex::line_art_views(&suite[0].mesh, &index.params);
        let all = index.query(&views[2], 100, None).unwrap();
        assert_eq!(all.len(), 6);
        let cat = suite[0].params.kind.category();
        let filtered = index.query(&views[2], 100, Some(cat)).unwrap();
        assert!(filtered
            .iter()
            .all(|r| index.component(r.component_id).unwrap().category == cat));
        assert_eq!(index.query(&views[2], 2, None).unwrap().len(), 2);
    }

    #[test]
    fn empty_catalog() {
        assert_eq!(
            build_index(&[], &small_params()).unwrap_err(),
            RetrievalError::CatalogEmpty
        );
    }
}
