//! Synthetic black-box applications and simulated analysts.
//!
//! Three seeded lookup tables reproduce the qualitative search-space shapes
//! of the evaluation applications:
//!
//! * `schedsim-like` (22x20x20): smooth, strictly decreasing along every axis
//!   from the optimum at the origin;
//! * `ifm-like` (6^4): smooth, with a constant plateau over the upper half of
//!   the first parameter and the optimum outside it;
//! * `maze-like` (3x3x2x3): irregular, with every top-decile sample using the
//!   third value of the first parameter.
//!
//! All tables are strictly positive with a unique maximum, so the quality
//! ratio `best / optimum` lies in `(0, 1]`.
//!
//! Agents stand in for analysts: they take part of each batch from the
//! tool's suggestions and draw the rest from their own intuition, a
//! per-value preference concentrated on a sub-box of the space.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::random_unclaimed;
use crate::rng::stream;
use crate::space::{ParameterSpace, Sample, SampleSet, SpaceError};

#[derive(Debug, Error, PartialEq)]
pub enum TestbedError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("confidence must lie in [0, 1], got {0}")]
    InvalidConfidence(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AppKind {
    IfmLike,
    SchedsimLike,
    MazeLike,
}

impl AppKind {
    pub const ALL: [AppKind; 3] = [AppKind::IfmLike, AppKind::SchedsimLike, AppKind::MazeLike];

    pub fn name(self) -> &'static str {
        match self {
            AppKind::IfmLike => "ifm-like",
            AppKind::SchedsimLike => "schedsim-like",
            AppKind::MazeLike => "maze-like",
        }
    }

    pub fn counts(self) -> &'static [usize] {
        match self {
            AppKind::IfmLike => &[6, 6, 6, 6],
            AppKind::SchedsimLike => &[22, 20, 20],
            AppKind::MazeLike => &[3, 3, 2, 3],
        }
    }

    /// Seed of the shipped table.
    pub fn default_seed(self) -> u64 {
        match self {
            AppKind::IfmLike => 3,
            AppKind::SchedsimLike => 1,
            AppKind::MazeLike => 7,
        }
    }
}

impl std::fmt::Display for AppKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Value of the constant region of the ifm-like table.
const IFM_PLATEAU: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticApp {
    pub kind: AppKind,
    pub seed: u64,
    pub space: ParameterSpace,
    /// `f` of every sample, indexed by rank.
    pub table: Vec<f64>,
    pub optimum: Sample,
}

impl SyntheticApp {
    pub fn new(kind: AppKind, seed: u64) -> Self {
        let space = ParameterSpace::from_counts(kind.counts()).expect("static shape");
        let mut rng = stream(seed, &[kind as u64]);
        let table: Vec<f64> = match kind {
            AppKind::SchedsimLike => schedsim_table(&space, &mut rng),
            AppKind::IfmLike => ifm_table(&space, &mut rng),
            AppKind::MazeLike => maze_table(&space, &mut rng),
        };
        let best = table.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).expect("non-empty");
        let optimum = space.unrank(best as u64).expect("rank in range");
        Self { kind, seed, space, table, optimum }
    }

    pub fn default_for(kind: AppKind) -> Self {
        Self::new(kind, kind.default_seed())
    }

    pub fn f(&self, sample: &Sample) -> Result<f64, SpaceError> {
        Ok(self.table[self.space.rank(sample)? as usize])
    }

    pub fn optimum_value(&self) -> f64 {
        self.f(&self.optimum).expect("optimum in space")
    }

    /// The adapter call: raw outputs of one job.
    pub fn run(&self, sample: &Sample) -> Result<Vec<f64>, SpaceError> {
        Ok(vec![self.f(sample)?])
    }

    /// Verifies the shape promised for this kind, exhaustively.
    pub fn check_shape(&self) -> Result<(), String> {
        let max = self.optimum_value();
        let maxima = self.table.iter().filter(|&&f| f == max).count();
        if maxima != 1 {
            return Err(format!("{maxima} samples share the maximum"));
        }
        if self.table.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
            return Err("table values must be positive and finite".into());
        }
        match self.kind {
            AppKind::SchedsimLike => {
                if self.optimum.indices().iter().any(|&i| i != 0) {
                    return Err(format!("optimum {} is not at the origin", self.optimum));
                }
                for s in self.space.iter() {
                    let f = self.f(&s).unwrap();
                    for p in 0..s.dims() {
                        if s.indices()[p] + 1 < self.space.value_count(p) {
                            let mut next = s.clone().into_inner();
                            next[p] += 1;
                            if self.f(&Sample::new(next)).unwrap() >= f {
                                return Err(format!("not decreasing along P{} at {s}", p + 1));
                            }
                        }
                    }
                }
            }
            AppKind::IfmLike => {
                let half = self.space.value_count(0) / 2;
                let plateau: Vec<f64> = self.space.iter().filter(|s| s.indices()[0] >= half).map(|s| self.f(&s).unwrap()).collect();
                if plateau.iter().any(|&f| f != plateau[0]) {
                    return Err("plateau is not constant".into());
                }
                if self.optimum.indices()[0] >= half {
                    return Err("optimum lies on the plateau".into());
                }
            }
            AppKind::MazeLike => {
                let k = top_decile_count(self.table.len());
                let mut ranked: Vec<(f64, u64)> = self.table.iter().enumerate().map(|(i, &f)| (f, i as u64)).collect();
                ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
                for &(_, rank) in &ranked[..k] {
                    if self.space.unrank(rank).unwrap().indices()[0] != 2 {
                        return Err("a top-decile sample has P1 != V1_3".into());
                    }
                }
            }
        }
        Ok(())
    }
}

fn top_decile_count(n: usize) -> usize {
    n.div_ceil(10)
}

/// `1 / (1 + sum w_i t_i^p)` with `t_i` the normalized index: flat near the
/// origin, so the best values are hard to tell apart from their neighbors.
fn schedsim_table<R: Rng>(space: &ParameterSpace, rng: &mut R) -> Vec<f64> {
    let counts = space.counts();
    let weights: Vec<f64> = counts.iter().map(|_| rng.gen_range(2.0..3.0)).collect();
    space
        .iter()
        .map(|s| {
            let cost: f64 = s
                .indices()
                .iter()
                .zip(&counts)
                .zip(&weights)
                .map(|((&i, &n), w)| w * (i as f64 / (n - 1) as f64).powf(2.5))
                .sum();
            1.0 / (1.0 + cost)
        })
        .collect()
}

/// A broad hill over the lower half of P1 and a constant plateau above it.
/// The hill's peak is off the plateau; its far flanks drop below the plateau
/// value, so plateau samples outrank the far side of the non-flat region.
fn ifm_table<R: Rng>(space: &ParameterSpace, rng: &mut R) -> Vec<f64> {
    let counts = space.counts();
    let half = counts[0] / 2;
    let peak: Vec<f64> = counts
        .iter()
        .enumerate()
        .map(|(p, &n)| if p == 0 { rng.gen_range(0..half) as f64 } else { rng.gen_range(1..n - 1) as f64 })
        .collect();
    let jitter: Vec<f64> = (0..space.size()).map(|_| rng.gen_range(0.0..1e-6)).collect();
    space
        .iter()
        .enumerate()
        .map(|(r, s)| {
            if s.indices()[0] >= half {
                return IFM_PLATEAU;
            }
            let d2: f64 = s.indices().iter().zip(&peak).map(|(&i, &c)| (i as f64 - c).powi(2)).sum();
            0.1 + 0.9 * (-d2 / 5.0).exp() + jitter[r]
        })
        .collect()
}

/// Noise for P1 below V1_3; a smooth hill over the P1 = V1_3 slice, so
/// good samples there sit next to other good samples.
fn maze_table<R: Rng>(space: &ParameterSpace, rng: &mut R) -> Vec<f64> {
    let n = space.size() as usize;
    let k = top_decile_count(n);
    let center: Vec<f64> = space.counts()[1..].iter().map(|&c| rng.gen_range(0..c) as f64).collect();
    let mut table: Vec<f64> = space
        .iter()
        .map(|s| {
            if s.indices()[0] == 2 {
                let d2: f64 = s.indices()[1..].iter().zip(&center).map(|(&i, &c)| (i as f64 - c).powi(2)).sum();
                0.35 + 0.65 * (-d2 / 3.0).exp() + rng.gen_range(0.0..1e-3)
            } else {
                rng.gen_range(0.1..0.6)
            }
        })
        .collect();
    // Lift the best P1 = V1_3 samples above everything else.
    let mut third: Vec<usize> = (0..n).filter(|&r| space.unrank(r as u64).unwrap().indices()[0] == 2).collect();
    third.sort_by(|&a, &b| table[b].total_cmp(&table[a]));
    let ceiling = (0..n).filter(|r| !third[..k].contains(r)).map(|r| table[r]).fold(0.0, f64::max);
    for (j, &r) in third[..k].iter().enumerate() {
        table[r] = ceiling + 0.05 + 0.3 * (k - j) as f64 / k as f64 + rng.gen_range(0.0..0.01);
    }
    table
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Insight {
    Bad,
    Good,
    None,
}

impl Insight {
    pub fn name(self) -> &'static str {
        match self {
            Insight::Bad => "bad",
            Insight::Good => "good",
            Insight::None => "none",
        }
    }
}

/// Inclusive index box.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

impl Region {
    pub fn whole(space: &ParameterSpace) -> Self {
        Self { lo: vec![0; space.dims()], hi: space.counts().iter().map(|c| c - 1).collect() }
    }

    pub fn contains(&self, s: &Sample) -> bool {
        s.indices().iter().zip(self.lo.iter().zip(&self.hi)).all(|(&i, (&lo, &hi))| lo <= i && i <= hi)
    }

    pub fn volume(&self) -> u64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l + 1) as u64).product()
    }
}

/// Box side lengths giving roughly `fraction` of the space.
fn box_sides(counts: &[usize], fraction: f64) -> Vec<usize> {
    let per_dim = fraction.powf(1.0 / counts.len() as f64);
    counts.iter().map(|&n| ((n as f64 * per_dim).round() as usize).clamp(1, n)).collect()
}

/// Intuition box around the optimum (good) or as far from it as possible (bad).
pub fn intuition_region<R: Rng + ?Sized>(
    space: &ParameterSpace,
    optimum: &Sample,
    insight: Insight,
    rng: &mut R,
) -> Region {
    let counts = space.counts();
    let sides = box_sides(&counts, 0.1);
    match insight {
        Insight::None => Region::whole(space),
        Insight::Good => {
            let mut lo = Vec::new();
            let mut hi = Vec::new();
            for ((&n, &s), &o) in counts.iter().zip(&sides).zip(optimum.indices()) {
                let first = o.saturating_sub(s - 1);
                let last = o.min(n - s);
                let l = rng.gen_range(first..=last);
                lo.push(l);
                hi.push(l + s - 1);
            }
            Region { lo, hi }
        }
        Insight::Bad => {
            let mut sides = sides;
            loop {
                let (lo, hi): (Vec<usize>, Vec<usize>) = counts
                    .iter()
                    .zip(&sides)
                    .zip(optimum.indices())
                    .map(|((&n, &s), &o)| {
                        // Place the side at whichever end of the axis is farther from the optimum.
                        if o >= n - o - 1 {
                            (0, s - 1)
                        } else {
                            (n - s, n - 1)
                        }
                    })
                    .unzip();
                let region = Region { lo, hi };
                if !region.contains(optimum) {
                    return region;
                }
                // Every axis overlaps the optimum: shrink the longest side.
                let p = (0..sides.len()).max_by_key(|&p| sides[p]).expect("dims > 0");
                sides[p] -= 1;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentProfile {
    pub insight: Insight,
    pub confidence: f64,
    pub learns: bool,
    pub region: Region,
    /// Per parameter, per value preference; each row sums to 1.
    pub value_weights: Vec<Vec<f64>>,
    pub learning_rate: f64,
    /// Relative preference for values outside the region.
    pub leak: f64,
    #[serde(skip)]
    observed: Vec<f64>,
}

const MIN_WEIGHT: f64 = 1e-12;
const INTUITION_RETRIES: usize = 64;

impl AgentProfile {
    pub fn new(
        space: &ParameterSpace,
        optimum: &Sample,
        insight: Insight,
        confidence: f64,
        learns: bool,
        rng: &mut impl Rng,
    ) -> Result<Self, TestbedError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(TestbedError::InvalidConfidence(confidence));
        }
        space.validate(optimum)?;
        let region = intuition_region(space, optimum, insight, rng);
        let value_weights = space.counts().iter().map(|&n| vec![1.0 / n as f64; n]).collect();
        Ok(Self {
            insight,
            confidence,
            learns,
            region,
            value_weights,
            learning_rate: 0.1,
            leak: 0.05,
            observed: Vec::new(),
        })
    }

    /// Split of a `k`-job batch: how many come from the tool's suggestions.
    pub fn from_suggestions(&self, k: usize) -> usize {
        (self.confidence * k as f64).round() as usize
    }

    fn value_distributions(&self) -> Vec<WeightedIndex<f64>> {
        self.value_weights
            .iter()
            .enumerate()
            .map(|(p, w)| {
                let masked: Vec<f64> = w
                    .iter()
                    .enumerate()
                    .map(|(v, &x)| if self.region.lo[p] <= v && v <= self.region.hi[p] { x } else { x * self.leak })
                    .collect();
                WeightedIndex::new(masked).expect("positive weights")
            })
            .collect()
    }

    /// One batch of `k` samples: `round(c k)` from `suggestions` (head
    /// first), the rest drawn from the intuition distribution. Samples in
    /// `claimed` or already chosen are rejected; after a bounded number of
    /// retries a draw falls back to a uniformly random unclaimed sample.
    pub fn select<R: Rng + ?Sized>(
        &self,
        space: &ParameterSpace,
        suggestions: &[Sample],
        k: usize,
        claimed: &SampleSet,
        rng: &mut R,
    ) -> Selection {
        let mut taken = SampleSet::new();
        let mut from_tool = Vec::new();
        for s in suggestions.iter().filter(|s| !claimed.contains(s)) {
            if from_tool.len() == self.from_suggestions(k) {
                break;
            }
            if taken.insert(s.clone()) {
                from_tool.push(s.clone());
            }
        }
        let mut from_intuition = Vec::new();
        let want = k - from_tool.len();
        if want > 0 {
            let dists = self.value_distributions();
            'draw: for _ in 0..want {
                for _ in 0..INTUITION_RETRIES {
                    let s = Sample::new(dists.iter().map(|d| d.sample(rng)).collect());
                    if !claimed.contains(&s) && taken.insert(s.clone()) {
                        from_intuition.push(s);
                        continue 'draw;
                    }
                }
                let mut excluded = claimed.clone();
                excluded.extend(taken.iter().cloned());
                match random_unclaimed(space, &excluded, 1, rng).pop() {
                    Some(s) => {
                        taken.insert(s.clone());
                        from_intuition.push(s);
                    }
                    None => break,
                }
            }
        }
        Selection { from_tool, from_intuition }
    }

    /// Multiplicative preference update from new results: values of samples
    /// above the running median gain `(1 + eta)`, those below lose `(1 - eta)`.
    pub fn learn(&mut self, results: &[(Sample, f64)]) {
        if !self.learns {
            return;
        }
        for (s, f) in results {
            let at = self.observed.partition_point(|x| x < f);
            self.observed.insert(at, *f);
            let median = median_sorted(&self.observed);
            let factor = if *f > median {
                1.0 + self.learning_rate
            } else if *f < median {
                1.0 - self.learning_rate
            } else {
                continue;
            };
            for (w, &v) in self.value_weights.iter_mut().zip(s.indices()) {
                w[v] *= factor;
            }
        }
        for w in &mut self.value_weights {
            let total: f64 = w.iter().sum();
            for x in w.iter_mut() {
                *x = (*x / total).max(MIN_WEIGHT);
            }
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= total);
        }
    }
}

fn median_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Selection {
    pub from_tool: Vec<Sample>,
    pub from_intuition: Vec<Sample>,
}

impl Selection {
    pub fn len(&self) -> usize {
        self.from_tool.len() + self.from_intuition.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> Vec<Sample> {
        self.from_tool.iter().chain(&self.from_intuition).cloned().collect()
    }
}
