//! Interest clusters, SLA-violation prediction and redistribution planning.
//!
//! The analyst's region of interest is learned by running DBSCAN over the
//! evaluated samples judged "good". Unevaluated grid points within `eps` of a
//! cluster's core points are the pending work of the current strategy; when
//! that pending work cannot fit in the remaining job budget a
//! [`StrategyPlan`] splits the budget between exploiting the clusters and
//! exploring outside them.

use std::collections::{HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doe::DoeModel;
use crate::sampler::{sampling, SamplerConfig, SamplerError};
use crate::space::{ParameterSpace, Sample, SampleSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SlaError {
    #[error("eps must be a non-negative number, got {0}")]
    InvalidEps(f64),
    #[error("minPts must be at least 1")]
    InvalidMinPts,
    #[error("top-quantile fraction must lie in (0, 1), got {0}")]
    InvalidQuantile(f64),
    #[error("top-quantile goodness needs at least one evaluated sample")]
    NoEvaluations,
    #[error("manual goodness selected but no analyst labels were given")]
    MissingLabels,
    #[error("exploitation level must lie in [0, 1], got {0}")]
    InvalidExploitation(f64),
    #[error("trigger fraction must lie in (0, 1], got {0}")]
    InvalidTrigger(f64),
    #[error("job budget must be at least 1")]
    ZeroBudget,
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

/// Rule deciding which evaluated samples count as good results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum Goodness {
    /// `f >= tau`.
    Threshold { tau: f64 },
    /// The best `p` fraction of evaluations; ties at the cut are all kept.
    TopQuantile { p: f64 },
    /// Analyst labels each result.
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct ClusterConfig {
    pub eps: f64,
    pub min_pts: usize,
    pub goodness: Goodness,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        // Adjacent grid points (distance 1 or sqrt 2) are neighbors.
        Self { eps: 1.5, min_pts: 3, goodness: Goodness::TopQuantile { p: 0.25 } }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), SlaError> {
        if !self.eps.is_finite() || self.eps < 0.0 {
            return Err(SlaError::InvalidEps(self.eps));
        }
        if self.min_pts == 0 {
            return Err(SlaError::InvalidMinPts);
        }
        if let Goodness::TopQuantile { p } = self.goodness {
            if !(p > 0.0 && p < 1.0) {
                return Err(SlaError::InvalidQuantile(p));
            }
        }
        Ok(())
    }
}

/// Job budget derived from the SLA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SlaContract {
    pub max_jobs: u64,
    /// Fraction of `max_jobs` submitted before the SLA guard starts checking.
    #[serde(default = "default_trigger")]
    pub cluster_trigger_fraction: f64,
    /// The analyst's standing exploitation level used for redistribution plans.
    #[serde(default = "default_exploitation")]
    pub exploitation_level: f64,
}

fn default_trigger() -> f64 {
    0.7
}

fn default_exploitation() -> f64 {
    0.5
}

impl SlaContract {
    pub fn new(max_jobs: u64) -> Self {
        Self { max_jobs, cluster_trigger_fraction: default_trigger(), exploitation_level: default_exploitation() }
    }

    pub fn validate(&self) -> Result<(), SlaError> {
        if self.max_jobs == 0 {
            return Err(SlaError::ZeroBudget);
        }
        let t = self.cluster_trigger_fraction;
        if !(t > 0.0 && t <= 1.0) {
            return Err(SlaError::InvalidTrigger(t));
        }
        check_exploitation(self.exploitation_level)
    }

    /// Whether `submitted` jobs have reached the clustering trigger.
    pub fn triggered(&self, submitted: u64) -> bool {
        submitted as f64 >= self.cluster_trigger_fraction * self.max_jobs as f64
    }

    /// Smallest submitted count at which the trigger fires.
    pub fn trigger_point(&self) -> u64 {
        let exact = self.cluster_trigger_fraction * self.max_jobs as f64;
        (exact - 1e-9).ceil().max(0.0) as u64
    }
}

fn check_exploitation(e_x: f64) -> Result<(), SlaError> {
    if (0.0..=1.0).contains(&e_x) {
        Ok(())
    } else {
        Err(SlaError::InvalidExploitation(e_x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Cluster {
    pub id: usize,
    pub members: Vec<Sample>,
    pub core_points: Vec<Sample>,
    pub mean_quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClusterModel {
    pub eps: f64,
    pub clusters: Vec<Cluster>,
    pub noise: Vec<Sample>,
}

impl ClusterModel {
    pub fn empty(eps: f64) -> Self {
        Self { eps, clusters: Vec::new(), noise: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

/// DBSCAN label of each input point: `Some(cluster)` or `None` for noise.
///
/// Neighborhoods are closed balls (`distance <= eps`) that include the point
/// itself; a point is core when its neighborhood holds at least `min_pts`
/// points. Clusters are numbered in order of their lowest-index core point and
/// a border point joins the first cluster that reaches it.
pub fn dbscan_labels(points: &[Sample], eps: f64, min_pts: usize) -> (Vec<Option<usize>>, Vec<bool>) {
    let n = points.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| within(&points[i], &points[j], eps)).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut labels = vec![None; n];
    let mut next = 0;
    for seed in 0..n {
        if labels[seed].is_some() || !core[seed] {
            continue;
        }
        let cluster = next;
        next += 1;
        labels[seed] = Some(cluster);
        let mut frontier = VecDeque::from([seed]);
        while let Some(p) = frontier.pop_front() {
            for &q in &neighbors[p] {
                if labels[q].is_none() {
                    labels[q] = Some(cluster);
                    if core[q] {
                        frontier.push_back(q);
                    }
                }
            }
        }
    }
    (labels, core)
}

fn within(a: &Sample, b: &Sample, eps: f64) -> bool {
    (a.distance_sq(b) as f64).sqrt() <= eps
}

/// DBSCAN over `(sample, f)` points.
pub fn dbscan(points: &[(Sample, f64)], eps: f64, min_pts: usize) -> ClusterModel {
    let samples: Vec<Sample> = points.iter().map(|(s, _)| s.clone()).collect();
    let (labels, core) = dbscan_labels(&samples, eps, min_pts);
    let count = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut clusters: Vec<Cluster> = (0..count)
        .map(|id| Cluster { id, members: Vec::new(), core_points: Vec::new(), mean_quality: 0.0 })
        .collect();
    let mut noise = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        match label {
            Some(c) => {
                let cl = &mut clusters[*c];
                cl.members.push(points[i].0.clone());
                if core[i] {
                    cl.core_points.push(points[i].0.clone());
                }
                cl.mean_quality += points[i].1;
            }
            None => noise.push(points[i].0.clone()),
        }
    }
    for cl in &mut clusters {
        cl.mean_quality /= cl.members.len() as f64;
    }
    ClusterModel { eps, clusters, noise }
}

/// Evaluated samples that pass the goodness rule, in input order.
pub fn good_samples(
    evaluated: &[(Sample, f64)],
    goodness: &Goodness,
    manual: Option<&HashMap<Sample, bool>>,
) -> Result<Vec<(Sample, f64)>, SlaError> {
    match goodness {
        Goodness::Threshold { tau } => Ok(evaluated.iter().filter(|(_, f)| f >= tau).cloned().collect()),
        Goodness::TopQuantile { p } => {
            if evaluated.is_empty() {
                return Err(SlaError::NoEvaluations);
            }
            let mut fs: Vec<f64> = evaluated.iter().map(|(_, f)| *f).collect();
            fs.sort_by(|a, b| b.total_cmp(a));
            let k = ((p * fs.len() as f64 - 1e-9).ceil() as usize).clamp(1, fs.len());
            let cut = fs[k - 1];
            Ok(evaluated.iter().filter(|(_, f)| *f >= cut).cloned().collect())
        }
        Goodness::Manual => {
            let labels = manual.filter(|m| !m.is_empty()).ok_or(SlaError::MissingLabels)?;
            Ok(evaluated.iter().filter(|(s, _)| labels.get(s).copied().unwrap_or(false)).cloned().collect())
        }
    }
}

pub fn interest_clusters(
    evaluated: &[(Sample, f64)],
    config: &ClusterConfig,
    manual: Option<&HashMap<Sample, bool>>,
) -> Result<ClusterModel, SlaError> {
    config.validate()?;
    let good = good_samples(evaluated, &config.goodness, manual)?;
    Ok(dbscan(&good, config.eps, config.min_pts))
}

/// Unevaluated grid points inside each cluster's interest region (within
/// `eps` of one of its core points). A point reachable from several clusters
/// belongs to the one with the nearest core point, lowest id on ties. Each
/// list is in rank order.
pub fn interest_points(space: &ParameterSpace, model: &ClusterModel, evaluated: &SampleSet) -> Vec<Vec<Sample>> {
    let mut owner: HashMap<Sample, (u64, usize)> = HashMap::new();
    let mut claim = |s: Sample, d2: u64, id: usize| {
        if evaluated.contains(&s) {
            return;
        }
        owner
            .entry(s)
            .and_modify(|cur| {
                if (d2, id) < *cur {
                    *cur = (d2, id);
                }
            })
            .or_insert((d2, id));
    };
    let offsets = ball_offsets(space, model.eps);
    let counts = space.counts();
    match offsets {
        Some(offsets) => {
            for cl in &model.clusters {
                for core in &cl.core_points {
                    'offset: for (off, d2) in &offsets {
                        let mut idx = Vec::with_capacity(counts.len());
                        for ((&c, &o), &n) in core.indices().iter().zip(off).zip(&counts) {
                            let v = c as i64 + o;
                            if v < 0 || v >= n as i64 {
                                continue 'offset;
                            }
                            idx.push(v as usize);
                        }
                        claim(Sample::new(idx), *d2, cl.id);
                    }
                }
            }
        }
        None => {
            for s in space.iter() {
                for cl in &model.clusters {
                    if let Some(d2) = cl.core_points.iter().map(|c| c.distance_sq(&s)).min() {
                        if (d2 as f64).sqrt() <= model.eps {
                            claim(s.clone(), d2, cl.id);
                        }
                    }
                }
            }
        }
    }
    let mut per_cluster: Vec<Vec<Sample>> = vec![Vec::new(); model.clusters.len()];
    let index_of: HashMap<usize, usize> = model.clusters.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
    for (s, (_, id)) in owner {
        per_cluster[index_of[&id]].push(s);
    }
    for pts in &mut per_cluster {
        pts.sort_by_key(|s| space.rank(s).expect("interest point in space"));
    }
    per_cluster
}

/// Integer offsets of the closed `eps` ball, or `None` when the ball is
/// larger than the space and a full scan is cheaper.
fn ball_offsets(space: &ParameterSpace, eps: f64) -> Option<Vec<(Vec<i64>, u64)>> {
    let counts = space.counts();
    let r = eps.floor() as i64;
    let mut volume: u64 = 1;
    for &c in &counts {
        let side = (2 * r + 1).min(2 * c as i64 - 1).max(1) as u64;
        volume = volume.saturating_mul(side);
    }
    if volume > space.size() {
        return None;
    }
    let mut out = Vec::new();
    let mut cur = vec![0i64; counts.len()];
    fn rec(d: usize, counts: &[usize], r: i64, eps: f64, cur: &mut Vec<i64>, out: &mut Vec<(Vec<i64>, u64)>) {
        if d == counts.len() {
            let d2: u64 = cur.iter().map(|&o| (o * o) as u64).sum();
            if (d2 as f64).sqrt() <= eps {
                out.push((cur.clone(), d2));
            }
            return;
        }
        let lim = r.min(counts[d] as i64 - 1);
        for o in -lim..=lim {
            cur[d] = o;
            rec(d + 1, counts, r, eps, cur, out);
        }
    }
    rec(0, &counts, r, eps, &mut cur, &mut out);
    Some(out)
}

/// Number of unevaluated grid points inside any interest region.
pub fn pending_in_clusters(space: &ParameterSpace, model: &ClusterModel, evaluated: &SampleSet) -> usize {
    interest_points(space, model, evaluated).iter().map(Vec::len).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ViolationReport {
    pub violation: bool,
    pub pending: u64,
    pub remaining_budget: u64,
}

/// Flags a violation when the pending in-cluster work does not fit strictly
/// inside the remaining budget (`pending >= remaining`).
pub fn predict_violation(pending: u64, remaining_budget: u64) -> ViolationReport {
    ViolationReport { violation: pending >= remaining_budget, pending, remaining_budget }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClusterAllocation {
    pub cluster_id: usize,
    pub mean_quality: f64,
    pub weight: f64,
    pub available: usize,
    pub job_count: usize,
    pub chosen_samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StrategyPlan {
    pub exploitation_level: f64,
    pub remaining_budget: u64,
    pub planned_total: usize,
    pub per_cluster: Vec<ClusterAllocation>,
    pub outside_count: usize,
    pub outside_samples: Vec<Sample>,
    pub rationale: Vec<String>,
}

impl StrategyPlan {
    pub fn empty(exploitation_level: f64) -> Self {
        Self {
            exploitation_level,
            remaining_budget: 0,
            planned_total: 0,
            per_cluster: Vec::new(),
            outside_count: 0,
            outside_samples: Vec::new(),
            rationale: Vec::new(),
        }
    }

    pub fn in_cluster_count(&self) -> usize {
        self.per_cluster.iter().map(|c| c.job_count).sum()
    }

    /// In-cluster samples (cluster order) followed by the outside samples.
    pub fn samples(&self) -> Vec<Sample> {
        self.per_cluster
            .iter()
            .flat_map(|c| c.chosen_samples.iter().cloned())
            .chain(self.outside_samples.iter().cloned())
            .collect()
    }
}

const MIN_WEIGHT: f64 = 1e-12;

/// Allocation weights from cluster mean qualities. Qualities are shifted by
/// `min(0, lowest mean)` so negative scores (e.g. -RMSE) keep their order.
pub fn cluster_weights(mean_qualities: &[f64]) -> Vec<f64> {
    if mean_qualities.is_empty() {
        return Vec::new();
    }
    let lowest = mean_qualities.iter().copied().fold(f64::INFINITY, f64::min);
    let floor = lowest.min(0.0);
    let raw: Vec<f64> = mean_qualities.iter().map(|q| (q - floor).max(MIN_WEIGHT)).collect();
    if raw.iter().all(|&w| w == raw[0]) {
        return vec![1.0 / raw.len() as f64; raw.len()];
    }
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

/// Largest-remainder apportionment of `total` by `weights`; remainder ties go
/// to the lower index.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    if weights.is_empty() {
        return Vec::new();
    }
    let sum: f64 = weights.iter().sum();
    let shares: Vec<f64> = if sum > 0.0 {
        weights.iter().map(|w| total as f64 * w / sum).collect()
    } else {
        vec![total as f64 / weights.len() as f64; weights.len()]
    };
    let mut alloc: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = shares[a] - shares[a].floor();
        let rb = shares[b] - shares[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        alloc[i] += 1;
    }
    alloc
}

/// Apportions `total` across clusters without exceeding their capacity.
/// Returns the allocation and the part that did not fit anywhere.
fn capped_allocation(total: usize, weights: &[f64], capacity: &[usize]) -> (Vec<usize>, usize) {
    let mut alloc = vec![0usize; weights.len()];
    let mut left = total;
    loop {
        let open: Vec<usize> = (0..weights.len()).filter(|&i| alloc[i] < capacity[i]).collect();
        if left == 0 || open.is_empty() {
            return (alloc, left);
        }
        let w: Vec<f64> = open.iter().map(|&i| weights[i]).collect();
        let share = largest_remainder(left, &w);
        left = 0;
        for (k, &i) in open.iter().enumerate() {
            let room = capacity[i] - alloc[i];
            let take = share[k].min(room);
            alloc[i] += take;
            left += share[k] - take;
        }
    }
}

/// Splits the remaining budget between the interest clusters and the rest
/// of the space.
///
/// `round(e_x * R)` jobs go inside the clusters, apportioned by
/// [`cluster_weights`]; within a cluster the unevaluated interest points are
/// ranked by their DOE-estimated quality. The other jobs come from GRASP
/// sampling restricted to points outside every interest region. Shortfalls
/// on either side are filled from the other when possible.
#[allow(clippy::too_many_arguments)]
pub fn redistribution_plan<R: Rng + ?Sized>(
    space: &ParameterSpace,
    clusters: &ClusterModel,
    evaluated: &SampleSet,
    model: &DoeModel,
    remaining: u64,
    exploitation: f64,
    sampler: &SamplerConfig,
    rng: &mut R,
) -> Result<StrategyPlan, SlaError> {
    check_exploitation(exploitation)?;
    sampler.validate()?;
    let remaining_usize = remaining as usize;
    let estimate = model.estimator();

    let mut ranked = interest_points(space, clusters, evaluated);
    for pts in &mut ranked {
        pts.shuffle(rng);
        let mut keyed: Vec<(f64, Sample)> = pts.drain(..).map(|s| (estimate(&s), s)).collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
        pts.extend(keyed.into_iter().map(|(_, s)| s));
    }
    let capacity: Vec<usize> = ranked.iter().map(Vec::len).collect();
    let means: Vec<f64> = clusters.clusters.iter().map(|c| c.mean_quality).collect();
    let weights = cluster_weights(&means);

    let n_in = (exploitation * remaining as f64).round() as usize;
    let (mut alloc, spill) = capped_allocation(n_in.min(remaining_usize), &weights, &capacity);
    let n_out_target = remaining_usize - alloc.iter().sum::<usize>();

    let mut excluded = evaluated.clone();
    excluded.extend(ranked.iter().flatten().cloned());
    let mut outside = Vec::with_capacity(n_out_target);
    let step = SamplerConfig { neighbors: sampler.neighbors.max(1), ..sampler.clone() };
    let mut stalls = 0;
    while outside.len() < n_out_target && stalls < 64 {
        let out = sampling(model, space, &step, &excluded, rng)?;
        if out.exhausted {
            break;
        }
        if out.samples.is_empty() {
            stalls += 1;
            continue;
        }
        for s in out.samples {
            if outside.len() == n_out_target {
                break;
            }
            excluded.insert(s.clone());
            outside.push(s);
        }
    }
    let shortfall = n_out_target - outside.len();
    if shortfall > 0 {
        let room: Vec<usize> = capacity.iter().zip(&alloc).map(|(c, a)| c - a).collect();
        let (extra, _) = capped_allocation(shortfall, &weights, &room);
        for (a, e) in alloc.iter_mut().zip(extra) {
            *a += e;
        }
    }

    let per_cluster: Vec<ClusterAllocation> = clusters
        .clusters
        .iter()
        .enumerate()
        .map(|(i, c)| ClusterAllocation {
            cluster_id: c.id,
            mean_quality: c.mean_quality,
            weight: weights[i],
            available: capacity[i],
            job_count: alloc[i],
            chosen_samples: ranked[i][..alloc[i]].to_vec(),
        })
        .collect();
    let in_count: usize = alloc.iter().sum();
    let pending: usize = capacity.iter().sum();
    let mut rationale = vec![
        format!(
            "{pending} unevaluated points lie inside {} interest cluster(s); {remaining} jobs remain in the budget",
            clusters.clusters.len()
        ),
        format!(
            "exploitation level {exploitation:.2}: {n_in} of {remaining} jobs planned inside clusters, {} outside",
            remaining_usize.saturating_sub(n_in)
        ),
    ];
    for a in &per_cluster {
        rationale.push(format!(
            "cluster {}: mean quality {:.4}, weight {:.3}, {} of {} interest points scheduled",
            a.cluster_id, a.mean_quality, a.weight, a.job_count, a.available
        ));
    }
    if spill > 0 {
        rationale.push(format!("{spill} in-cluster job(s) exceeded the interest regions and moved outside"));
    }
    if shortfall > 0 {
        rationale.push(format!("outside pool ran short by {shortfall}; filled from clusters where possible"));
    }
    Ok(StrategyPlan {
        exploitation_level: exploitation,
        remaining_budget: remaining,
        planned_total: in_count + outside.len(),
        per_cluster,
        outside_count: outside.len(),
        outside_samples: outside,
        rationale,
    })
}
