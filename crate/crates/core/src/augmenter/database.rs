//! Known databases and the switching rules used when a database cannot host a target.

use crate::catalog::{DatabaseDescriptor, TableSummary};

use super::hints::{Gap, ScenarioId};

#[derive(Debug, Clone, PartialEq)]
pub struct DatabaseRegistry {
    databases: Vec<DatabaseDescriptor>,
    /// Benchmarks from simplest to most complex schema.
    complexity: Vec<String>,
}

impl DatabaseRegistry {
    pub fn new(databases: impl IntoIterator<Item = DatabaseDescriptor>, complexity: Vec<String>) -> Self {
        let mut r = Self {
            databases: Vec::new(),
            complexity,
        };
        for d in databases {
            r.register(d);
        }
        r
    }

    pub fn databases(&self) -> &[DatabaseDescriptor] {
        &self.databases
    }

    /// Adds `db` unless its key is already known; returns the stored descriptor.
    pub fn register(&mut self, db: DatabaseDescriptor) -> &DatabaseDescriptor {
        let key = db.key();
        let pos = match self.databases.iter().position(|d| d.key() == key) {
            Some(p) => p,
            None => {
                self.databases.push(db);
                self.databases.len() - 1
            }
        };
        &self.databases[pos]
    }

    fn find(&self, pred: impl Fn(&DatabaseDescriptor) -> bool) -> Vec<&DatabaseDescriptor> {
        self.databases.iter().filter(|d| pred(d)).collect()
    }

    /// The database to move to after repeated failures in a database-action
    /// scenario, registering a new descriptor when no known one fits. `None`
    /// when there is nowhere left to go.
    pub fn switch(&mut self, from: &DatabaseDescriptor, scenario: ScenarioId, gap: &Gap) -> Option<DatabaseDescriptor> {
        let next = match scenario {
            ScenarioId::BothLowOrHigh => self.rescale(from, gap.cpu < 0.0),
            ScenarioId::RatioOff => self.reshape(from, gap.ratio < 0.0),
            _ => None,
        }?;
        Some(self.register(next).clone())
    }

    fn rescale(&self, from: &DatabaseDescriptor, up: bool) -> Option<DatabaseDescriptor> {
        let same = |d: &DatabaseDescriptor| d.benchmark_name == from.benchmark_name && d.skewness == from.skewness;
        let known = if up {
            self.find(|d| same(d) && d.scale_factor > from.scale_factor)
                .into_iter()
                .min_by(|a, b| a.scale_factor.total_cmp(&b.scale_factor))
        } else {
            self.find(|d| same(d) && d.scale_factor < from.scale_factor)
                .into_iter()
                .max_by(|a, b| a.scale_factor.total_cmp(&b.scale_factor))
        };
        if let Some(d) = known {
            return Some(d.clone());
        }
        let factor = if up { 2.0 } else { 0.5 };
        Some(DatabaseDescriptor {
            scale_factor: from.scale_factor * factor,
            schema_summary: from
                .schema_summary
                .iter()
                .map(|t| TableSummary {
                    row_count: (t.row_count as f64 * factor).round() as u64,
                    ..t.clone()
                })
                .collect(),
            ..from.clone()
        })
    }

    fn reshape(&self, from: &DatabaseDescriptor, ratio_low: bool) -> Option<DatabaseDescriptor> {
        let with_skew = |skew: u8| {
            self.find(|d| {
                d.benchmark_name == from.benchmark_name && d.scale_factor == from.scale_factor && d.skewness == skew
            })
            .first()
            .map(|d| (*d).clone())
            .unwrap_or_else(|| DatabaseDescriptor {
                skewness: skew,
                ..from.clone()
            })
        };
        if !ratio_low {
            return (from.skewness > 0).then(|| with_skew(from.skewness - 1));
        }
        if from.skewness < 4 {
            return Some(with_skew(from.skewness + 1));
        }
        // skew exhausted: move to a benchmark with a more complex schema
        let rank = self.complexity.iter().position(|b| *b == from.benchmark_name)?;
        let bench = self.complexity.get(rank + 1)?;
        let candidates = self.find(|d| d.benchmark_name == *bench);
        let closest = candidates.into_iter().min_by(|a, b| {
            let da = (a.scale_factor.ln() - from.scale_factor.ln()).abs();
            let db = (b.scale_factor.ln() - from.scale_factor.ln()).abs();
            da.total_cmp(&db).then(a.skewness.cmp(&b.skewness))
        });
        Some(match closest {
            Some(d) => d.clone(),
            None => DatabaseDescriptor {
                benchmark_name: bench.clone(),
                scale_factor: from.scale_factor,
                skewness: 0,
                schema_summary: Vec::new(),
            },
        })
    }
}
