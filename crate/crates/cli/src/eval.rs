//! Self-retrieval evaluation: every catalog component is queried with its own front line
//! art, once clean and once with a share of its stroke pixels removed. A third query seen
//! straight on (elevation 0, off the view rig) measures robustness to viewpoint.

use std::collections::BTreeMap;

use casement_core::fixtures::drop_strokes;
use casement_core::retrieval::RetrievalError;
use casement_core::{Catalog, Error, RetrievalIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub seed: u64,
    /// Share of ink pixels removed from each query for the robustness score.
    pub dropout: f64,
    pub top_k: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            dropout: 0.2,
            top_k: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub count: usize,
    pub top1: f64,
    pub top5: f64,
    pub top5_under_dropout: f64,
    pub top1_straight_on: f64,
}

/// Where the true component ended up for one query; `None` means outside the top k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub component_id: u32,
    pub category: String,
    pub rank: Option<usize>,
    pub rank_under_dropout: Option<usize>,
    pub rank_straight_on: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub components: usize,
    pub dropout: f64,
    pub top1: f64,
    pub top5: f64,
    pub top5_under_dropout: f64,
    pub top1_straight_on: f64,
    pub per_category: BTreeMap<String, CategoryMetrics>,
    pub outcomes: Vec<QueryOutcome>,
}

fn rank_of(index: &RetrievalIndex, sketch: &casement_core::SketchImage, id: u32, top_k: usize) -> Result<Option<usize>, Error> {
    match index.query(sketch, top_k, None) {
        Ok(ranked) => Ok(ranked.iter().position(|r| r.component_id == id).map(|p| p + 1)),
        Err(RetrievalError::EmptyQuery) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn summarize(outcomes: &[&QueryOutcome]) -> CategoryMetrics {
    let n = outcomes.len().max(1) as f64;
    let share = |f: &dyn Fn(&QueryOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count() as f64 / n;
    CategoryMetrics {
        count: outcomes.len(),
        top1: share(&|o| o.rank == Some(1)),
        top5: share(&|o| o.rank.is_some_and(|r| r <= 5)),
        top5_under_dropout: share(&|o| o.rank_under_dropout.is_some_and(|r| r <= 5)),
        top1_straight_on: share(&|o| o.rank_straight_on == Some(1)),
    }
}

pub fn run_eval_self_retrieval(catalog: &Catalog, options: &EvalOptions) -> Result<EvalReport, Error> {
    let indexed: Vec<u32> = catalog.index.components.iter().map(|c| c.id).collect();
    if indexed.is_empty() {
        return Err(RetrievalError::CatalogEmpty.into());
    }
    let top_k = options.top_k.max(5);
    let outcomes: Vec<QueryOutcome> = indexed
        .par_iter()
        .map(|&id| {
            let mesh = catalog.manifest.load_component(id)?;
            let category = catalog.manifest.record(id).map(|r| r.category.clone()).unwrap_or_default();
            let sketch = RetrievalIndex::front_line_art(&mesh, &catalog.index.params);
            let rank = rank_of(&catalog.index, &sketch, id, top_k)?;
            let rank_under_dropout = if options.dropout > 0.0 {
                let mut dropped = sketch.clone();
                drop_strokes(&mut dropped.bits, options.dropout, options.seed ^ id as u64);
                rank_of(&catalog.index, &dropped, id, top_k)?
            } else {
                rank
            };
            let straight_on = RetrievalIndex::line_art_at(&mesh, &catalog.index.params, 0.0, 0.0);
            let rank_straight_on = rank_of(&catalog.index, &straight_on, id, top_k)?;
            Ok(QueryOutcome {
                component_id: id,
                category,
                rank,
                rank_under_dropout,
                rank_straight_on,
            })
        })
        .collect::<Result<_, Error>>()?;

    let all: Vec<&QueryOutcome> = outcomes.iter().collect();
    let overall = summarize(&all);
    let mut grouped: BTreeMap<String, Vec<&QueryOutcome>> = BTreeMap::new();
    for o in &outcomes {
        grouped.entry(o.category.clone()).or_default().push(o);
    }
    Ok(EvalReport {
        components: outcomes.len(),
        dropout: options.dropout,
        top1: overall.top1,
        top5: overall.top5,
        top5_under_dropout: overall.top5_under_dropout,
        top1_straight_on: overall.top1_straight_on,
        per_category: grouped.iter().map(|(k, v)| (k.clone(), summarize(v))).collect(),
        outcomes,
    })
}
