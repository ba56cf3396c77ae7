//! Full-factorial main-effect quality model.
//!
//! Every evaluated sample contributes its `f` to one accumulator per
//! parameter (the accumulator of the value it uses). The quality of a value
//! is the mean `f` over evaluated samples that contain it. Values that have
//! never been evaluated take the mean of their observed siblings, so they stay
//! eligible for mid-range greediness instead of being ruled out early.

use serde::{Deserialize, Serialize};

use crate::space::{ParameterSpace, Sample, SpaceError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
struct Accumulator {
    sum: f64,
    count: u64,
}

impl Accumulator {
    fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoeModel {
    levels: Vec<Vec<Accumulator>>,
    evaluations: u64,
}

/// Per-value entry of a model snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ValueEffect {
    pub value: String,
    pub count: u64,
    pub mean_quality: f64,
}

/// JSON view of a model: one array of [`ValueEffect`] per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoeSnapshot {
    pub params: Vec<ParamEffects>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEffects {
    pub name: String,
    pub values: Vec<ValueEffect>,
}

impl DoeModel {
    pub fn new(space: &ParameterSpace) -> Self {
        Self::with_counts(&space.counts())
    }

    pub fn with_counts(counts: &[usize]) -> Self {
        Self { levels: counts.iter().map(|&c| vec![Accumulator::default(); c]).collect(), evaluations: 0 }
    }

    pub fn dims(&self) -> usize {
        self.levels.len()
    }

    pub fn value_count(&self, param: usize) -> usize {
        self.levels[param].len()
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn ingest(&mut self, sample: &Sample, f: f64) -> Result<(), SpaceError> {
        self.check_sample(sample)?;
        for (acc, &i) in self.levels.iter_mut().zip(sample.indices()) {
            acc[i].sum += f;
            acc[i].count += 1;
        }
        self.evaluations += 1;
        Ok(())
    }

    fn check_sample(&self, sample: &Sample) -> Result<(), SpaceError> {
        if sample.dims() != self.dims() {
            return Err(SpaceError::DimensionMismatch { expected: self.dims(), got: sample.dims() });
        }
        for (param, (&index, acc)) in sample.indices().iter().zip(&self.levels).enumerate() {
            if index >= acc.len() {
                return Err(SpaceError::IndexOutOfRange { param, index, count: acc.len() });
            }
        }
        Ok(())
    }

    fn check_index(&self, param: usize, value: usize) -> Result<(), SpaceError> {
        let Some(acc) = self.levels.get(param) else {
            return Err(SpaceError::DimensionMismatch { expected: self.dims(), got: param + 1 });
        };
        if value >= acc.len() {
            return Err(SpaceError::IndexOutOfRange { param, index: value, count: acc.len() });
        }
        Ok(())
    }

    /// Number of evaluated samples using `value` of `param`.
    pub fn count(&self, param: usize, value: usize) -> Result<u64, SpaceError> {
        self.check_index(param, value)?;
        Ok(self.levels[param][value].count)
    }

    pub fn value_quality(&self, param: usize, value: usize) -> Result<f64, SpaceError> {
        self.check_index(param, value)?;
        Ok(self.level_qualities(param)[value])
    }

    /// Quality of every value of `param`, neutral prior applied.
    pub fn level_qualities(&self, param: usize) -> Vec<f64> {
        let acc = &self.levels[param];
        let observed: Vec<f64> = acc.iter().filter_map(Accumulator::mean).collect();
        let prior = if observed.is_empty() { 0.0 } else { observed.iter().sum::<f64>() / observed.len() as f64 };
        acc.iter().map(|a| a.mean().unwrap_or(prior)).collect()
    }

    /// `(q_min, q_max)` over all values of `param`.
    pub fn quality_range(&self, param: usize) -> Result<(f64, f64), SpaceError> {
        self.check_index(param, 0)?;
        Ok(min_max(&self.level_qualities(param)))
    }

    /// Sum of value qualities over the coordinates of `sample`.
    pub fn estimate(&self, sample: &Sample) -> Result<f64, SpaceError> {
        self.check_sample(sample)?;
        Ok(sample.indices().iter().enumerate().map(|(p, &v)| self.level_qualities(p)[v]).sum())
    }

    /// Estimator over many samples that computes the per-parameter tables once.
    pub fn estimator(&self) -> impl Fn(&Sample) -> f64 + '_ {
        let tables: Vec<Vec<f64>> = (0..self.dims()).map(|p| self.level_qualities(p)).collect();
        move |s: &Sample| s.indices().iter().zip(&tables).map(|(&v, t)| t[v]).sum()
    }

    pub fn snapshot(&self, space: &ParameterSpace) -> DoeSnapshot {
        let params = space
            .params()
            .iter()
            .enumerate()
            .map(|(p, param)| {
                let q = self.level_qualities(p);
                let values = param
                    .values
                    .iter()
                    .zip(&self.levels[p])
                    .zip(q)
                    .map(|((label, acc), mean_quality)| ValueEffect {
                        value: label.clone(),
                        count: acc.count,
                        mean_quality,
                    })
                    .collect();
                ParamEffects { name: param.name.clone(), values }
            })
            .collect();
        DoeSnapshot { params }
    }
}

#[cfg(test)]
impl DoeModel {
    /// Model where each value was seen once with the given quality.
    pub(crate) fn with_qualities(qualities: &[&[f64]]) -> Self {
        let levels = qualities
            .iter()
            .map(|qs| qs.iter().map(|&q| Accumulator { sum: q, count: 1 }).collect())
            .collect();
        let evaluations = qualities.first().map_or(0, |q| q.len() as u64);
        Self { levels, evaluations }
    }
}

pub(crate) fn min_max(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &q| (lo.min(q), hi.max(q)))
}
