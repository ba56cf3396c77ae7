//! Discrete parameter spaces, sample encoding and the scalar quality wrapper.
//!
//! A [`ParameterSpace`] is an ordered list of parameters, each with a finite
//! ordered list of opaque value labels. A [`Sample`] picks one value per
//! parameter and is encoded by the value *indices*; distances are Euclidean
//! over those index vectors.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("parameter space has no parameters")]
    NoParameters,
    #[error("parameter `{0}` has no values")]
    EmptyParameter(String),
    #[error("parameter `{param}` declares value `{value}` more than once")]
    DuplicateValue { param: String, value: String },
    #[error("space size overflows a 64-bit count")]
    SizeOverflow,
    #[error("sample has {got} coordinates, space has {expected} parameters")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index {index} out of range for parameter {param} ({count} values)")]
    IndexOutOfRange { param: usize, index: usize, count: usize },
    #[error("rank {0} is outside the space")]
    RankOutOfRange(u64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QualityError {
    #[error("no outputs to score")]
    EmptyOutputs,
    #[error("mode `{0}` expects exactly one output, got {1}")]
    ExpectedScalar(&'static str, usize),
    #[error("rmse-vs-reference needs a non-empty reference series")]
    MissingReference,
    #[error("output length {outputs} does not match reference length {reference}")]
    LengthMismatch { outputs: usize, reference: usize },
    #[error("non-finite output value")]
    NonFinite,
}

/// One tunable input of the application.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub values: Vec<String>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, values: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self { name: name.into(), values: values.into_iter().map(Into::into).collect() }
    }

    /// Parameter `name` with `count` labels `<name>_1 .. <name>_count`.
    pub fn with_count(name: impl Into<String>, count: usize) -> Self {
        let name = name.into();
        let values = (1..=count).map(|i| format!("{name}_{i}")).collect();
        Self { name, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Validated cartesian product of discrete parameter domains.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSpace", into = "RawSpace")]
pub struct ParameterSpace {
    params: Vec<Parameter>,
    size: u64,
}

#[derive(Serialize, Deserialize)]
struct RawSpace {
    params: Vec<Parameter>,
}

impl TryFrom<RawSpace> for ParameterSpace {
    type Error = SpaceError;

    fn try_from(raw: RawSpace) -> Result<Self, Self::Error> {
        ParameterSpace::new(raw.params)
    }
}

impl From<ParameterSpace> for RawSpace {
    fn from(space: ParameterSpace) -> Self {
        RawSpace { params: space.params }
    }
}

impl ParameterSpace {
    pub fn new(params: Vec<Parameter>) -> Result<Self, SpaceError> {
        if params.is_empty() {
            return Err(SpaceError::NoParameters);
        }
        for p in &params {
            if p.values.is_empty() {
                return Err(SpaceError::EmptyParameter(p.name.clone()));
            }
            let mut seen = HashSet::with_capacity(p.values.len());
            for v in &p.values {
                if !seen.insert(v.as_str()) {
                    return Err(SpaceError::DuplicateValue { param: p.name.clone(), value: v.clone() });
                }
            }
        }
        let size = space_size(params.iter().map(Parameter::len))?;
        Ok(Self { params, size })
    }

    /// Space with parameters `P1..Pn` whose value labels follow the `Vj_k` convention.
    pub fn from_counts(counts: &[usize]) -> Result<Self, SpaceError> {
        let params = counts
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let values = (1..=c).map(|k| format!("V{}_{}", j + 1, k)).collect::<Vec<_>>();
                Parameter::new(format!("P{}", j + 1), values)
            })
            .collect();
        Self::new(params)
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn dims(&self) -> usize {
        self.params.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.params.iter().map(Parameter::len).collect()
    }

    pub fn value_count(&self, param: usize) -> usize {
        self.params[param].len()
    }

    /// Number of distinct samples.
    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn validate(&self, sample: &Sample) -> Result<(), SpaceError> {
        if sample.dims() != self.dims() {
            return Err(SpaceError::DimensionMismatch { expected: self.dims(), got: sample.dims() });
        }
        for (param, (&index, p)) in sample.indices().iter().zip(&self.params).enumerate() {
            if index >= p.len() {
                return Err(SpaceError::IndexOutOfRange { param, index, count: p.len() });
            }
        }
        Ok(())
    }

    pub fn contains(&self, sample: &Sample) -> bool {
        self.validate(sample).is_ok()
    }

    /// Mixed-radix rank of a sample; the last parameter varies fastest.
    pub fn rank(&self, sample: &Sample) -> Result<u64, SpaceError> {
        self.validate(sample)?;
        Ok(sample
            .indices()
            .iter()
            .zip(&self.params)
            .fold(0u64, |acc, (&i, p)| acc * p.len() as u64 + i as u64))
    }

    pub fn unrank(&self, mut rank: u64) -> Result<Sample, SpaceError> {
        if rank >= self.size {
            return Err(SpaceError::RankOutOfRange(rank));
        }
        let mut indices = vec![0usize; self.dims()];
        for (slot, p) in indices.iter_mut().zip(&self.params).rev() {
            let n = p.len() as u64;
            *slot = (rank % n) as usize;
            rank /= n;
        }
        Ok(Sample(indices))
    }

    /// Every sample in rank order.
    pub fn iter(&self) -> impl Iterator<Item = Sample> + '_ {
        (0..self.size).map(move |r| self.unrank(r).expect("rank below size"))
    }

    /// Human-readable value labels of a sample.
    pub fn labels(&self, sample: &Sample) -> Result<Vec<&str>, SpaceError> {
        self.validate(sample)?;
        Ok(sample.indices().iter().zip(&self.params).map(|(&i, p)| p.values[i].as_str()).collect())
    }
}

/// Product of per-parameter value counts with overflow detection.
pub fn space_size(counts: impl IntoIterator<Item = usize>) -> Result<u64, SpaceError> {
    counts
        .into_iter()
        .try_fold(1u64, |acc, c| acc.checked_mul(c as u64))
        .ok_or(SpaceError::SizeOverflow)
}

/// One value index per parameter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sample(Vec<usize>);

impl Sample {
    pub fn new(indices: Vec<usize>) -> Self {
        Self(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }

    /// Squared Euclidean distance in index space. Both samples must have the same length.
    pub fn distance_sq(&self, other: &Sample) -> u64 {
        debug_assert_eq!(self.dims(), other.dims());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| {
                let d = a.abs_diff(b) as u64;
                d * d
            })
            .sum()
    }
}

impl From<Vec<usize>> for Sample {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

impl<const N: usize> From<[usize; N]> for Sample {
    fn from(v: [usize; N]) -> Self {
        Self(v.to_vec())
    }
}

impl fmt::Display for Sample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        f.write_str(")")
    }
}

/// Euclidean distance between two samples in index space.
pub fn distance(a: &Sample, b: &Sample) -> Result<f64, SpaceError> {
    if a.dims() != b.dims() {
        return Err(SpaceError::DimensionMismatch { expected: a.dims(), got: b.dims() });
    }
    Ok((a.distance_sq(b) as f64).sqrt())
}

/// Membership set of samples.
pub type SampleSet = HashSet<Sample>;

/// How raw application outputs become the scalar `f` that is maximized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum QualitySpec {
    /// `f = g`, a single output to be maximized.
    #[default]
    MaximizeRaw,
    /// `f = -g`, a single output to be minimized.
    Negate,
    /// `f = -RMSE(outputs, reference)`.
    RmseVsReference { reference: Vec<f64> },
}

impl QualitySpec {
    pub fn validate(&self) -> Result<(), QualityError> {
        match self {
            QualitySpec::RmseVsReference { reference } if reference.is_empty() => {
                Err(QualityError::MissingReference)
            }
            _ => Ok(()),
        }
    }

    pub fn wrap(&self, raw: &[f64]) -> Result<f64, QualityError> {
        wrap_quality(self, raw)
    }
}

pub fn wrap_quality(spec: &QualitySpec, raw: &[f64]) -> Result<f64, QualityError> {
    if raw.is_empty() {
        return Err(QualityError::EmptyOutputs);
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(QualityError::NonFinite);
    }
    match spec {
        QualitySpec::MaximizeRaw => match raw {
            [g] => Ok(*g),
            _ => Err(QualityError::ExpectedScalar("maximize-raw", raw.len())),
        },
        QualitySpec::Negate => match raw {
            [g] => Ok(-*g),
            _ => Err(QualityError::ExpectedScalar("negate", raw.len())),
        },
        QualitySpec::RmseVsReference { reference } => {
            if reference.is_empty() {
                return Err(QualityError::MissingReference);
            }
            if reference.len() != raw.len() {
                return Err(QualityError::LengthMismatch { outputs: raw.len(), reference: reference.len() });
            }
            let sse: f64 = raw.iter().zip(reference).map(|(o, r)| (o - r) * (o - r)).sum();
            Ok(-(sse / raw.len() as f64).sqrt())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sizes_of_reference_grids() {
        assert_eq!(space_size([6, 6, 6, 6]).unwrap(), 1296);
        assert_eq!(space_size([3, 3, 2, 3]).unwrap(), 54);
        assert_eq!(space_size([22, 20, 20]).unwrap(), 8800);
        assert_eq!(ParameterSpace::from_counts(&[22, 20, 20]).unwrap().size(), 8800);
    }

    #[test]
    fn size_overflow_is_an_error() {
        let counts = vec![1usize << 20; 4];
        assert_eq!(space_size(counts), Err(SpaceError::SizeOverflow));
        let params = (0..4).map(|i| Parameter::with_count(format!("p{i}"), 1 << 20)).collect();
        assert_eq!(ParameterSpace::new(params), Err(SpaceError::SizeOverflow));
    }

    #[test]
    fn invalid_spaces_rejected() {
        assert_eq!(ParameterSpace::new(vec![]), Err(SpaceError::NoParameters));
        assert!(matches!(
            ParameterSpace::new(vec![Parameter::new("a", Vec::<String>::new())]),
            Err(SpaceError::EmptyParameter(_))
        ));
        assert!(matches!(
            ParameterSpace::new(vec![Parameter::new("a", ["x", "x"])]),
            Err(SpaceError::DuplicateValue { .. })
        ));
    }

    #[test]
    fn distances() {
        let d = |a: [usize; 2], b: [usize; 2]| distance(&a.into(), &b.into()).unwrap();
        assert_eq!(d([0, 0], [0, 0]), 0.0);
        assert_eq!(d([0, 0], [1, 0]), 1.0);
        assert_eq!(d([0, 0], [3, 4]), 5.0);
        assert!(distance(&Sample::from([0, 0]), &Sample::from([0, 0, 0])).is_err());
    }

    #[test]
    fn wrap_modes() {
        assert_eq!(wrap_quality(&QualitySpec::Negate, &[7.5]).unwrap(), -7.5);
        assert_eq!(wrap_quality(&QualitySpec::MaximizeRaw, &[2.0]).unwrap(), 2.0);
        let reference = vec![1.0, 2.0, 3.0];
        let spec = QualitySpec::RmseVsReference { reference: reference.clone() };
        assert_eq!(wrap_quality(&spec, &reference).unwrap(), 0.0);
        let spec = QualitySpec::RmseVsReference { reference: vec![0.0, 0.0] };
        let f = wrap_quality(&spec, &[3.0, 4.0]).unwrap();
        assert!((f - (-(12.5f64).sqrt())).abs() < 1e-12);
        assert!((f + 3.5355).abs() < 1e-4);
        assert!(matches!(wrap_quality(&spec, &[1.0]), Err(QualityError::LengthMismatch { .. })));
        assert_eq!(wrap_quality(&spec, &[]), Err(QualityError::EmptyOutputs));
        assert!(QualitySpec::RmseVsReference { reference: vec![] }.validate().is_err());
    }

    #[test]
    fn space_json_shape() {
        let json = r#"{"params":[{"name":"P1","values":["V1_1","V1_2"]},{"name":"P2","values":["a"]}]}"#;
        let space: ParameterSpace = serde_json::from_str(json).unwrap();
        assert_eq!(space.size(), 2);
        assert_eq!(serde_json::to_string(&space).unwrap(), json);
        let bad = r#"{"params":[{"name":"P1","values":[]}]}"#;
        assert!(serde_json::from_str::<ParameterSpace>(bad).is_err());
    }

    #[test]
    fn quality_spec_json() {
        let spec: QualitySpec =
            serde_json::from_str(r#"{"mode":"rmse-vs-reference","reference":[1.0]}"#).unwrap();
        assert_eq!(spec, QualitySpec::RmseVsReference { reference: vec![1.0] });
        let spec: QualitySpec = serde_json::from_str(r#"{"mode":"negate"}"#).unwrap();
        assert_eq!(spec, QualitySpec::Negate);
    }

    #[test]
    fn labels_follow_declared_order() {
        let space = ParameterSpace::from_counts(&[3, 2]).unwrap();
        assert_eq!(space.labels(&Sample::from([2, 0])).unwrap(), vec!["V1_3", "V2_1"]);
    }

    fn small_counts() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..7, 1..5)
    }

    proptest! {
        #[test]
        fn size_matches_enumeration(counts in small_counts()) {
            let space = ParameterSpace::from_counts(&counts).unwrap();
            let all: Vec<Sample> = space.iter().collect();
            prop_assert_eq!(all.len() as u64, space.size());
            let distinct: SampleSet = all.iter().cloned().collect();
            prop_assert_eq!(distinct.len(), all.len());
            for (r, s) in all.iter().enumerate() {
                prop_assert_eq!(space.rank(s).unwrap(), r as u64);
            }
        }

        #[test]
        fn distance_is_a_metric(
            a in prop::collection::vec(0usize..20, 3),
            b in prop::collection::vec(0usize..20, 3),
            c in prop::collection::vec(0usize..20, 3),
        ) {
            let (a, b, c) = (Sample::new(a), Sample::new(b), Sample::new(c));
            let ab = distance(&a, &b).unwrap();
            let ba = distance(&b, &a).unwrap();
            let bc = distance(&b, &c).unwrap();
            let ac = distance(&a, &c).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(ab == 0.0, a == b);
            prop_assert!(ac <= ab + bc + 1e-9);
        }

        #[test]
        fn rmse_wrapper_decreases_with_error(
            reference in prop::collection::vec(-10.0f64..10.0, 1..8),
            bump in 0.001f64..5.0,
            pos in 0usize..8,
        ) {
            let spec = QualitySpec::RmseVsReference { reference: reference.clone() };
            let mut outputs = reference.clone();
            let i = pos % outputs.len();
            outputs[i] += 0.5;
            let before = wrap_quality(&spec, &outputs).unwrap();
            outputs[i] += bump;
            let after = wrap_quality(&spec, &outputs).unwrap();
            prop_assert!(after < before);
        }
    }
}
