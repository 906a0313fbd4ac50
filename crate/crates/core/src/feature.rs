//! Performance features: a vector of metrics plus a vector of operator
//! statistics, both indexed by a [`FeatureSchema`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Names of the metric and operator dimensions shared by a trace and a catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub metrics: Vec<String>,
    pub operators: Vec<String>,
}

impl FeatureSchema {
    pub fn new<S: Into<String>, T: Into<String>>(
        metrics: impl IntoIterator<Item = S>,
        operators: impl IntoIterator<Item = T>,
    ) -> Self {
        Self {
            metrics: metrics.into_iter().map(Into::into).collect(),
            operators: operators.into_iter().map(Into::into).collect(),
        }
    }

    pub fn n_metrics(&self) -> usize {
        self.metrics.len()
    }

    pub fn n_operators(&self) -> usize {
        self.operators.len()
    }

    pub fn dims(&self) -> usize {
        self.metrics.len() + self.operators.len()
    }

    /// All dimension names, metrics first.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.metrics
            .iter()
            .chain(self.operators.iter())
            .map(String::as_str)
    }

    pub fn metric_index(&self, name: &str) -> Option<usize> {
        self.metrics.iter().position(|m| m == name)
    }

    pub fn zero(&self) -> PerformanceFeature {
        PerformanceFeature {
            metrics: vec![0.0; self.metrics.len()],
            operators: vec![0.0; self.operators.len()],
        }
    }

    pub fn check(&self, feature: &PerformanceFeature) -> Result<()> {
        if feature.metrics.len() != self.n_metrics() {
            return Err(Error::DimensionMismatch {
                expected: self.n_metrics(),
                found: feature.metrics.len(),
            });
        }
        if feature.operators.len() != self.n_operators() {
            return Err(Error::DimensionMismatch {
                expected: self.n_operators(),
                found: feature.operators.len(),
            });
        }
        Ok(())
    }
}

/// `F = <M, O>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PerformanceFeature {
    pub metrics: Vec<f64>,
    pub operators: Vec<f64>,
}

impl PerformanceFeature {
    pub fn new(metrics: Vec<f64>, operators: Vec<f64>) -> Self {
        Self { metrics, operators }
    }

    pub fn dims(&self) -> usize {
        self.metrics.len() + self.operators.len()
    }

    /// Metrics followed by operators.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.metrics.iter().chain(self.operators.iter()).copied()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values().collect()
    }

    /// Inverse of [`PerformanceFeature::to_vec`].
    pub fn from_slice(values: &[f64], n_metrics: usize) -> Self {
        Self {
            metrics: values[..n_metrics].to_vec(),
            operators: values[n_metrics..].to_vec(),
        }
    }

    pub fn is_finite_nonnegative(&self) -> bool {
        self.values().all(|v| v.is_finite() && v >= 0.0)
    }

    pub fn add_scaled(&mut self, other: &PerformanceFeature, factor: f64) {
        for (a, b) in self.metrics.iter_mut().zip(&other.metrics) {
            *a += factor * b;
        }
        for (a, b) in self.operators.iter_mut().zip(&other.operators) {
            *a += factor * b;
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            metrics: self.metrics.iter().map(|v| v * factor).collect(),
            operators: self.operators.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Per-dimension mean and standard deviation used for z-normalization.
#[derive(Debug, Clone)]
pub struct Normalizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Normalizer {
    /// Population statistics over `points`; zero-variance dimensions get unit scale.
    pub fn fit<'a>(points: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let points: Vec<&[f64]> = points.into_iter().collect();
        let dims = points.first().map_or(0, |p| p.len());
        let n = points.len().max(1) as f64;
        let mut mean = vec![0.0; dims];
        for p in &points {
            for (m, v) in mean.iter_mut().zip(p.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dims];
        for p in &points {
            for ((s, v), m) in var.iter_mut().zip(p.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn normalize(&self, point: &[f64]) -> Vec<f64> {
        point
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, point: &[f64]) -> Vec<f64> {
        point
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
