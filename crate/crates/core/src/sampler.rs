//! GRASP sample generation.
//!
//! `construction` draws each coordinate uniformly from a restricted candidate
//! list (RCL) built from DOE value qualities; `local_search` then walks
//! outward from that solution and collects the nearest samples that have not
//! been evaluated yet. `sampling` chains the two.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doe::{min_max, DoeModel};
use crate::space::{ParameterSpace, Sample, SampleSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("greediness {0} is outside [0, 1]")]
    InvalidBeta(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct SamplerConfig {
    /// Greediness: 0 draws from every value, 1 only from the best ones.
    pub beta: f64,
    /// Local-search neighbors generated around each constructed solution.
    pub neighbors: usize,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { beta: 0.5, neighbors: 4, rng_seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        check_beta(self.beta)
    }
}

fn check_beta(beta: f64) -> Result<(), SamplerError> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(SamplerError::InvalidBeta(beta))
    }
}

/// Indices of the values of `param` whose quality clears
/// `q_min + beta * (q_max - q_min)`. The best value always qualifies.
pub fn rcl(model: &DoeModel, param: usize, beta: f64) -> Vec<usize> {
    rcl_from_qualities(&model.level_qualities(param), beta)
}

pub(crate) fn rcl_from_qualities(qualities: &[f64], beta: f64) -> Vec<usize> {
    let (lo, hi) = min_max(qualities);
    // Rounding in lo + (hi - lo) can overshoot hi when beta = 1.
    let threshold = (lo + beta * (hi - lo)).min(hi);
    qualities.iter().enumerate().filter(|(_, &q)| q >= threshold).map(|(i, _)| i).collect()
}

pub fn construction<R: Rng + ?Sized>(model: &DoeModel, space: &ParameterSpace, beta: f64, rng: &mut R) -> Sample {
    debug_assert_eq!(model.dims(), space.dims());
    let indices = (0..space.dims())
        .map(|p| {
            let candidates = rcl(model, p, beta);
            candidates[rng.gen_range(0..candidates.len())]
        })
        .collect();
    Sample::new(indices)
}

/// Yields the samples closest to an origin in nondecreasing Euclidean
/// distance, skipping excluded ones; ties at equal distance are drawn
/// uniformly at random without replacement.
///
/// Exploration is best-first over the index lattice: every sample has a
/// lattice neighbor strictly closer to the origin, so popping by squared
/// distance visits whole distance shells in order without scanning the space.
pub struct NearestUnevaluated<'a> {
    counts: Vec<usize>,
    origin: Sample,
    excluded: &'a SampleSet,
    heap: BinaryHeap<(Reverse<u64>, Reverse<u64>, Sample)>,
    seen: HashSet<Sample>,
    tick: u64,
    shell: Vec<Sample>,
}

impl<'a> NearestUnevaluated<'a> {
    pub fn new(space: &ParameterSpace, origin: Sample, excluded: &'a SampleSet) -> Self {
        let mut heap = BinaryHeap::new();
        let mut seen = HashSet::new();
        seen.insert(origin.clone());
        heap.push((Reverse(0), Reverse(0), origin.clone()));
        Self { counts: space.counts(), origin, excluded, heap, seen, tick: 1, shell: Vec::new() }
    }

    fn fill_shell(&mut self) {
        while self.shell.is_empty() {
            let Some((Reverse(d2), _, _)) = self.heap.peek() else { return };
            let d2 = *d2;
            while matches!(self.heap.peek(), Some((Reverse(k), _, _)) if *k == d2) {
                let (_, _, s) = self.heap.pop().expect("peeked");
                self.expand(&s);
                if !self.excluded.contains(&s) {
                    self.shell.push(s);
                }
            }
        }
    }

    fn expand(&mut self, s: &Sample) {
        for p in 0..s.dims() {
            let v = s.indices()[p];
            let mut push = |nv: usize| {
                let mut idx = s.indices().to_vec();
                idx[p] = nv;
                let n = Sample::new(idx);
                if self.seen.insert(n.clone()) {
                    let d2 = n.distance_sq(&self.origin);
                    self.heap.push((Reverse(d2), Reverse(self.tick), n));
                    self.tick += 1;
                }
            };
            if v > 0 {
                push(v - 1);
            }
            if v + 1 < self.counts[p] {
                push(v + 1);
            }
        }
    }

    pub fn next_with<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<Sample> {
        self.fill_shell();
        if self.shell.is_empty() {
            return None;
        }
        let i = rng.gen_range(0..self.shell.len());
        Some(self.shell.swap_remove(i))
    }
}

/// Up to `n` distinct samples nearest to `solution`, none in `evaluated` and
/// none equal to `solution`.
pub fn local_search<R: Rng + ?Sized>(
    space: &ParameterSpace,
    n: usize,
    solution: &Sample,
    evaluated: &SampleSet,
    rng: &mut R,
) -> Vec<Sample> {
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let mut cursor = NearestUnevaluated::new(space, solution.clone(), evaluated);
    while out.len() < n {
        match cursor.next_with(rng) {
            Some(s) if &s == solution => continue,
            Some(s) => out.push(s),
            None => break,
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SamplingOutcome {
    pub samples: Vec<Sample>,
    /// Nothing left to suggest: every sample of the space is excluded.
    pub exhausted: bool,
}

/// One GRASP iteration: the constructed solution (when not yet evaluated)
/// followed by its `config.neighbors` nearest unevaluated neighbors.
pub fn sampling<R: Rng + ?Sized>(
    model: &DoeModel,
    space: &ParameterSpace,
    config: &SamplerConfig,
    evaluated: &SampleSet,
    rng: &mut R,
) -> Result<SamplingOutcome, SamplerError> {
    config.validate()?;
    if evaluated.len() as u64 >= space.size() && space.iter().all(|s| evaluated.contains(&s)) {
        return Ok(SamplingOutcome { samples: Vec::new(), exhausted: true });
    }
    let solution = construction(model, space, config.beta, rng);
    let mut samples = Vec::with_capacity(config.neighbors + 1);
    if !evaluated.contains(&solution) {
        samples.push(solution.clone());
    }
    samples.extend(local_search(space, config.neighbors, &solution, evaluated, rng));
    let exhausted = samples.is_empty() && config.neighbors > 0;
    Ok(SamplingOutcome { samples, exhausted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::ParameterSpace;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model_with(qualities: &[&[f64]]) -> DoeModel {
        DoeModel::with_qualities(qualities)
    }

    #[test]
    fn rcl_thresholds() {
        let m = model_with(&[&[1.0, 2.0, 3.0]]);
        assert_eq!(rcl(&m, 0, 1.0), vec![2]);
        assert_eq!(rcl(&m, 0, 0.0), vec![0, 1, 2]);
        assert_eq!(rcl(&m, 0, 0.5), vec![1, 2]);
    }

    #[test]
    fn degenerate_range_keeps_everything() {
        let m = DoeModel::with_counts(&[4]);
        for beta in [0.0, 0.3, 1.0] {
            assert_eq!(rcl(&m, 0, beta), vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn greedy_construction_is_argmax() {
        let m = model_with(&[&[1.0, 5.0, 2.0], &[0.5, -1.0], &[3.0, 2.0, 9.0, 1.0]]);
        let space = ParameterSpace::from_counts(&[3, 2, 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert_eq!(construction(&m, &space, 1.0, &mut rng), Sample::from([1, 0, 2]));
        }
    }

    #[test]
    fn construction_on_three_sample_table() {
        let mut m = DoeModel::with_counts(&[2, 2]);
        m.ingest(&Sample::from([0, 0]), 2.0).unwrap();
        m.ingest(&Sample::from([0, 1]), 4.0).unwrap();
        m.ingest(&Sample::from([1, 0]), 6.0).unwrap();
        let space = ParameterSpace::from_counts(&[2, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen = HashSet::new();
        for _ in 0..200 {
            let s = construction(&m, &space, 0.5, &mut rng);
            assert_eq!(s.indices()[0], 1);
            seen.insert(s.indices()[1]);
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn local_search_edges() {
        let space = ParameterSpace::from_counts(&[2, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let none = SampleSet::new();
        assert!(local_search(&space, 0, &Sample::from([0, 0]), &none, &mut rng).is_empty());
        let one = local_search(&space, 1, &Sample::from([0, 0]), &none, &mut rng);
        assert_eq!(one.len(), 1);
        assert!(one[0] == Sample::from([0, 1]) || one[0] == Sample::from([1, 0]));
        let all: SampleSet = space.iter().collect();
        assert!(local_search(&space, 3, &Sample::from([0, 0]), &all, &mut rng).is_empty());
    }

    #[test]
    fn local_search_ties_are_random() {
        let space = ParameterSpace::from_counts(&[3, 3]).unwrap();
        let none = SampleSet::new();
        let mut firsts = HashSet::new();
        for seed in 0..64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = local_search(&space, 1, &Sample::from([1, 1]), &none, &mut rng);
            firsts.insert(out[0].clone());
        }
        assert_eq!(firsts.len(), 4);
    }

    #[test]
    fn local_search_order_is_by_distance() {
        let space = ParameterSpace::from_counts(&[7, 7, 5]).unwrap();
        let mut evaluated = SampleSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for s in space.iter() {
            if rng.gen_bool(0.3) {
                evaluated.insert(s);
            }
        }
        let origin = Sample::from([3, 2, 4]);
        let got = local_search(&space, 40, &origin, &evaluated, &mut rng);
        let mut brute: Vec<u64> = space
            .iter()
            .filter(|s| !evaluated.contains(s) && s != &origin)
            .map(|s| s.distance_sq(&origin))
            .collect();
        brute.sort_unstable();
        let got_d: Vec<u64> = got.iter().map(|s| s.distance_sq(&origin)).collect();
        assert_eq!(got_d, brute[..40].to_vec());
    }

    #[test]
    fn sampling_shapes() {
        let space = ParameterSpace::from_counts(&[3, 3, 2, 3]).unwrap();
        let m = DoeModel::new(&space);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = SamplerConfig { beta: 0.5, neighbors: 3, rng_seed: 0 };
        let out = sampling(&m, &space, &cfg, &SampleSet::new(), &mut rng).unwrap();
        assert_eq!(out.samples.len(), 4);
        assert!(!out.exhausted);

        let cfg0 = SamplerConfig { neighbors: 0, ..cfg.clone() };
        let out = sampling(&m, &space, &cfg0, &SampleSet::new(), &mut rng).unwrap();
        assert_eq!(out.samples.len(), 1);

        let left = Sample::from([2, 1, 0, 2]);
        let evaluated: SampleSet = space.iter().filter(|s| s != &left).collect();
        let cfg5 = SamplerConfig { neighbors: 5, ..cfg.clone() };
        let out = sampling(&m, &space, &cfg5, &evaluated, &mut rng).unwrap();
        assert_eq!(out.samples, vec![left.clone()]);

        let all: SampleSet = space.iter().collect();
        let out = sampling(&m, &space, &cfg5, &all, &mut rng).unwrap();
        assert!(out.samples.is_empty());
        assert!(out.exhausted);
    }

    #[test]
    fn invalid_beta() {
        let space = ParameterSpace::from_counts(&[2]).unwrap();
        let m = DoeModel::new(&space);
        let cfg = SamplerConfig { beta: 1.5, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            sampling(&m, &space, &cfg, &SampleSet::new(), &mut rng),
            Err(SamplerError::InvalidBeta(1.5))
        );
    }
}
