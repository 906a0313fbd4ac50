//! Positive and negative example retrieval by distance in z-normalized feature space.

use std::collections::BTreeMap;

use crate::catalog::{Catalog, DatabaseDescriptor};
use crate::error::{Error, Result};
use crate::feature::{euclidean, Normalizer, PerformanceFeature};

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub component_id: String,
    pub query_ref: String,
    pub database: DatabaseDescriptor,
    pub feature: PerformanceFeature,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleSet {
    /// Nearest first.
    pub positives: Vec<Example>,
    /// Farthest first.
    pub negatives: Vec<Example>,
}

impl ExampleSet {
    /// The database most positives run on; ties go to the smallest key.
    pub fn preferred_database(&self) -> Option<DatabaseDescriptor> {
        let mut votes: BTreeMap<String, (usize, &DatabaseDescriptor)> = BTreeMap::new();
        for e in &self.positives {
            votes.entry(e.database.key()).or_insert((0, &e.database)).0 += 1;
        }
        let mut best: Option<(usize, &DatabaseDescriptor)> = None;
        for (_, (n, db)) in votes {
            if best.is_none_or(|(m, _)| n > m) {
                best = Some((n, db));
            }
        }
        best.map(|(_, db)| db.clone())
    }
}

/// Ranks every component by distance to `target`, ties broken by id. The `n`
/// nearest become positives and up to `n` of the remaining, farthest first,
/// negatives, so the two sides never overlap.
pub fn retrieve_examples(target: &PerformanceFeature, catalog: &Catalog, n: usize) -> Result<ExampleSet> {
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    catalog.schema().check(target)?;
    let points: Vec<Vec<f64>> = catalog.components().iter().map(|c| c.feature.to_vec()).collect();
    let norm = Normalizer::fit(points.iter().map(|p| p.as_slice()));
    let t = norm.normalize(&target.to_vec());
    let mut ranked: Vec<Example> = catalog
        .components()
        .iter()
        .zip(&points)
        .map(|(c, p)| Example {
            component_id: c.component_id.clone(),
            query_ref: c.query_ref.clone(),
            database: c.database.clone(),
            feature: c.feature.clone(),
            distance: euclidean(&norm.normalize(p), &t),
        })
        .collect();
    ranked.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.component_id.cmp(&b.component_id)));

    let n_pos = n.min(ranked.len());
    let mut negatives = ranked.split_off(n_pos);
    negatives.sort_by(|a, b| b.distance.total_cmp(&a.distance).then_with(|| a.component_id.cmp(&b.component_id)));
    negatives.truncate(n);
    Ok(ExampleSet {
        positives: ranked,
        negatives,
    })
}
