//! Radio-domain trajectories: fingerprints, route mining with k-means,
//! prefix matching, coverage look-ahead and handover prediction.
//!
//! Everything here works on per-cell RSRP vectors. Physical position is
//! generator ground truth and is never read.

use std::collections::BTreeMap;
use std::path::Path;

use log::debug;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::metrics::adjusted_rand_index;
use crate::radioenv::{gen_trajectories, EnvConfig, Trajectory};
use crate::rng;

const MODEL_FORMAT: &str = "steersim-trajectory-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobilityConfig {
    /// Value imputed for cells that are missing or not detected.
    pub floor_dbm: f64,
    /// Cells weaker than this are reported as not detected.
    pub detection_dbm: f64,
    /// Steps every trajectory is resampled to; `None` uses the longest input.
    pub steps: Option<usize>,
    pub max_iterations: usize,
    /// Independent k-means++ starts; the lowest-inertia run is kept.
    pub restarts: usize,
    pub seed: u64,
    pub static_max_db_per_step: f64,
    pub slow_max_db_per_step: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            floor_dbm: -140.0,
            detection_dbm: -125.0,
            steps: None,
            max_iterations: 100,
            restarts: 10,
            seed: 0,
            static_max_db_per_step: 0.5,
            slow_max_db_per_step: 3.0,
        }
    }
}

impl MobilityConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.floor_dbm.is_finite() || !self.detection_dbm.is_finite() {
            return Err(Error::config(
                "mobility.floor_dbm",
                "floor and detection level must be finite",
            ));
        }
        if self.floor_dbm > self.detection_dbm {
            return Err(Error::config(
                "mobility.floor_dbm",
                "must not exceed detection_dbm",
            ));
        }
        if matches!(self.steps, Some(s) if s < 2) {
            return Err(Error::config("mobility.steps", "need at least two steps"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("mobility.max_iterations", "must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::config("mobility.restarts", "must be positive"));
        }
        if !(0.0 <= self.static_max_db_per_step
            && self.static_max_db_per_step <= self.slow_max_db_per_step)
        {
            return Err(Error::config(
                "mobility.static_max_db_per_step",
                "need 0 <= static <= slow threshold",
            ));
        }
        Ok(())
    }
}

/// Per-cell RSRP keyed by cell id; `None` marks a cell that was not detected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    values: BTreeMap<u32, Option<f64>>,
}

impl Fingerprint {
    pub fn new(values: BTreeMap<u32, Option<f64>>) -> Result<Self> {
        if !values.values().any(|v| v.is_some()) {
            return Err(Error::invariant("fingerprint", "no detected cell"));
        }
        if values.values().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invariant("fingerprint", "RSRP must be finite"));
        }
        Ok(Self { values })
    }

    /// Cells indexed by position in `rsrp`; cells below `detection_dbm` are
    /// marked not detected.
    pub fn from_rsrp(rsrp: &[f64], detection_dbm: f64) -> Result<Self> {
        Self::new(
            rsrp.iter()
                .enumerate()
                .map(|(i, &v)| (i as u32, (v >= detection_dbm).then_some(v)))
                .collect(),
        )
    }

    pub fn values(&self) -> &BTreeMap<u32, Option<f64>> {
        &self.values
    }

    pub fn get(&self, cell: u32) -> Option<f64> {
        self.values.get(&cell).copied().flatten()
    }

    /// Dense vector over `cells` with missing values at `floor_dbm`. Detected
    /// values below the floor are raised to it.
    pub fn dense(&self, cells: &[u32], floor_dbm: f64) -> Vec<f64> {
        cells
            .iter()
            .map(|&c| self.get(c).map_or(floor_dbm, |v| v.max(floor_dbm)))
            .collect()
    }

    /// Strongest detected cell, lowest id on ties.
    pub fn strongest(&self) -> u32 {
        let mut best: Option<(u32, f64)> = None;
        for (&c, v) in &self.values {
            if let Some(v) = *v {
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((c, v));
                }
            }
        }
        best.expect("fingerprint has a detected cell").0
    }
}

/// Euclidean distance over the union of both key sets.
pub fn fingerprint_distance(a: &Fingerprint, b: &Fingerprint, floor_dbm: f64) -> f64 {
    let cells: Vec<u32> = a
        .values
        .keys()
        .chain(b.values.keys())
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    euclid(&a.dense(&cells, floor_dbm), &b.dense(&cells, floor_dbm))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// One mined route: step-wise centroids plus what members did at each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteTemplate {
    pub route_id: u32,
    /// Dense centroid per step over the model's cell list.
    pub centroids: Vec<Vec<f64>>,
    /// Most common serving cell per step (lowest id on ties).
    pub serving: Vec<u32>,
    /// Fraction of members with secondary coverage per step.
    pub coverage: Vec<f64>,
    pub member_devices: Vec<u64>,
    /// Serving cell per step for each member, parallel to `member_devices`.
    pub member_serving: Vec<Vec<u32>>,
    /// Resampled dense fingerprints per member and step.
    pub member_tracks: Vec<Vec<Vec<f64>>>,
}

impl RouteTemplate {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryModel {
    pub cells: Vec<u32>,
    pub floor_dbm: f64,
    pub detection_dbm: f64,
    pub period_s: f64,
    pub inertia: f64,
    pub templates: Vec<RouteTemplate>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: TrajectoryModel,
}

impl TrajectoryModel {
    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::invariant("templates", "model has no templates"));
        }
        if self.cells.is_empty() {
            return Err(Error::invariant("cells", "model has no cells"));
        }
        for (i, t) in self.templates.iter().enumerate() {
            let steps = t.len();
            if steps < 2 {
                return Err(Error::invariant(
                    format!("templates[{i}]"),
                    "needs at least two steps",
                ));
            }
            if t.serving.len() != steps || t.coverage.len() != steps {
                return Err(Error::invariant(
                    format!("templates[{i}]"),
                    "serving and coverage must have one entry per step",
                ));
            }
            if t.centroids.iter().any(|c| c.len() != self.cells.len()) {
                return Err(Error::invariant(
                    format!("templates[{i}].centroids"),
                    "centroid width differs from the cell list",
                ));
            }
            if t.coverage.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invariant(
                    format!("templates[{i}].coverage"),
                    "outside [0,1]",
                ));
            }
            if t.member_serving.len() != t.member_devices.len()
                || t.member_serving.iter().any(|s| s.len() != steps)
                || t.member_tracks.len() != t.member_devices.len()
                || t.member_tracks.iter().any(|s| s.len() != steps)
            {
                return Err(Error::invariant(
                    format!("templates[{i}].member_serving"),
                    "one full-length sequence per member required",
                ));
            }
        }
        Ok(())
    }

    pub fn template(&self, route_id: u32) -> Result<&RouteTemplate> {
        self.templates
            .iter()
            .find(|t| t.route_id == route_id)
            .ok_or_else(|| Error::OutOfRange(format!("no route {route_id} in model")))
    }

    /// Mined route of a training device.
    pub fn route_of(&self, device_id: u64) -> Option<u32> {
        self.templates
            .iter()
            .find(|t| t.member_devices.contains(&device_id))
            .map(|t| t.route_id)
    }

    /// Centroid of one template step as a fingerprint.
    pub fn centroid_fingerprint(&self, route_id: u32, step: usize) -> Result<Fingerprint> {
        let t = self.template(route_id)?;
        let c = t
            .centroids
            .get(step)
            .ok_or_else(|| Error::OutOfRange(format!("step {step} beyond template")))?;
        let values = self
            .cells
            .iter()
            .zip(c)
            .map(|(&cell, &v)| (cell, (v >= self.detection_dbm).then_some(v)))
            .collect();
        Fingerprint::new(values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(
            &ModelDoc {
                format: MODEL_FORMAT.into(),
                version: MODEL_VERSION,
                model: self.clone(),
            },
            path,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let doc: ModelDoc = read_json(path)?;
        Self::from_doc(doc)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_doc(serde_json::from_str(text)?)
    }

    fn from_doc(doc: ModelDoc) -> Result<Self> {
        if doc.format != MODEL_FORMAT {
            return Err(Error::ModelFormat(format!(
                "expected `{MODEL_FORMAT}`, got `{}`",
                doc.format
            )));
        }
        if doc.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported version {}",
                doc.version
            )));
        }
        doc.model.validate()?;
        Ok(doc.model)
    }
}

/// A trajectory resampled onto the common step grid.
struct Resampled {
    device_id: u64,
    vector: Vec<f64>,
    serving: Vec<u32>,
    covered: Vec<f64>,
}

fn resample(traj: &Trajectory, steps: usize, config: &MobilityConfig) -> Resampled {
    let n = traj.samples.len();
    let m = traj.samples[0].sample.primary_rsrp.len();
    let dense: Vec<Vec<f64>> = traj
        .samples
        .iter()
        .map(|s| {
            s.sample
                .primary_rsrp
                .iter()
                .map(|&v| {
                    if v >= config.detection_dbm {
                        v.max(config.floor_dbm)
                    } else {
                        config.floor_dbm
                    }
                })
                .collect()
        })
        .collect();
    let mut vector = Vec::with_capacity(steps * m);
    let mut serving = Vec::with_capacity(steps);
    let mut covered = Vec::with_capacity(steps);
    for s in 0..steps {
        let x = s as f64 * (n - 1) as f64 / (steps - 1) as f64;
        let lo = (x.floor() as usize).min(n - 1);
        let hi = (lo + 1).min(n - 1);
        let w = x - lo as f64;
        vector.extend(
            dense[lo]
                .iter()
                .zip(&dense[hi])
                .map(|(a, b)| (1.0 - w) * a + w * b),
        );
        let nearest = &traj.samples[(x.round() as usize).min(n - 1)].sample;
        serving.push(nearest.serving_cell() as u32);
        covered.push(if nearest.covered { 1.0 } else { 0.0 });
    }
    Resampled {
        device_id: traj.device_id,
        vector,
        serving,
        covered,
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centre, lowest index on ties.
fn nearest(point: &[f64], centres: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centres.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_pp<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centres = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        centres.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centres[centres.len() - 1]));
        }
    }
    centres
}

/// Lloyd iterations from a k-means++ start. Returns assignments and inertia.
fn lloyd<R: Rng>(points: &[Vec<f64>], k: usize, max_iter: usize, rng: &mut R) -> (Vec<usize>, f64) {
    let dim = points[0].len();
    let mut centres = kmeans_pp(points, k, rng);
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(points) {
            let (j, _) = nearest(p, &centres);
            if *a != j {
                *a = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assign.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // Re-seed an empty cluster at the point worst served by its centre.
                let far = (0..points.len())
                    .map(|i| (i, sq_dist(&points[i], &centres[assign[i]])))
                    .fold((0, -1.0), |b, x| if x.1 > b.1 { x } else { b })
                    .0;
                centres[j] = points[far].clone();
                assign[far] = j;
            } else {
                centres[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }
    let inertia = points
        .iter()
        .zip(&assign)
        .map(|(p, &a)| sq_dist(p, &centres[a]))
        .sum();
    (assign, inertia)
}

/// Cluster trajectories into `k_routes` templates.
///
/// Each trajectory is resampled to a common step count and flattened into one
/// vector of per-step, per-cell RSRP (undetected cells at the floor). Clusters
/// are numbered by their lowest-index member, so the result does not depend
/// on which restart found the partition.
pub fn mine_trajectories(
    trajectories: &[Trajectory],
    k_routes: usize,
    config: &MobilityConfig,
) -> Result<TrajectoryModel> {
    config.validate()?;
    if k_routes == 0 {
        return Err(Error::config("mobility.k_routes", "must be positive"));
    }
    if trajectories.len() < k_routes {
        return Err(Error::Insufficient(format!(
            "{} trajectories for {k_routes} routes",
            trajectories.len()
        )));
    }
    let period = trajectories[0].period_s;
    let m = trajectories[0]
        .samples
        .first()
        .map(|s| s.sample.primary_rsrp.len())
        .unwrap_or(0);
    for (i, t) in trajectories.iter().enumerate() {
        if t.samples.len() < 2 {
            return Err(Error::invariant(
                format!("trajectories[{i}]"),
                "needs at least two samples",
            ));
        }
        if (t.period_s - period).abs() > 1e-9 * period.abs().max(1.0) {
            return Err(Error::invariant(
                format!("trajectories[{i}].period_s"),
                format!("expected {period}, got {}", t.period_s),
            ));
        }
        if t.samples.iter().any(|s| s.sample.primary_rsrp.len() != m) || m == 0 {
            return Err(Error::invariant(
                format!("trajectories[{i}]"),
                "every sample must report the same nonempty cell set",
            ));
        }
    }
    let steps = config.steps.unwrap_or_else(|| {
        trajectories
            .iter()
            .map(|t| t.samples.len())
            .max()
            .unwrap_or(2)
    });
    let resampled: Vec<Resampled> = trajectories
        .iter()
        .map(|t| resample(t, steps, config))
        .collect();
    let points: Vec<Vec<f64>> = resampled.iter().map(|r| r.vector.clone()).collect();

    let mut best: Option<(Vec<usize>, f64)> = None;
    for r in 0..config.restarts {
        let mut rng = rng::rng_from(rng::derive_indexed(config.seed, r as u64));
        let (assign, inertia) = lloyd(&points, k_routes, config.max_iterations, &mut rng);
        debug!("k-means restart {r}: inertia {inertia:.1}");
        if best.as_ref().is_none_or(|b| inertia < b.1) {
            best = Some((assign, inertia));
        }
    }
    let (assign, inertia) = best.expect("at least one restart");

    // Canonical numbering by first appearance.
    let mut relabel = vec![usize::MAX; k_routes];
    let mut next = 0;
    for &a in &assign {
        if relabel[a] == usize::MAX {
            relabel[a] = next;
            next += 1;
        }
    }
    let cells: Vec<u32> = (0..m as u32).collect();
    let mut templates = Vec::with_capacity(next);
    for route in 0..next {
        let members: Vec<&Resampled> = assign
            .iter()
            .zip(&resampled)
            .filter(|(&a, _)| relabel[a] == route)
            .map(|(_, r)| r)
            .collect();
        let count = members.len() as f64;
        let centroids = (0..steps)
            .map(|s| {
                (0..m)
                    .map(|c| members.iter().map(|r| r.vector[s * m + c]).sum::<f64>() / count)
                    .collect()
            })
            .collect();
        let member_seqs: Vec<&[u32]> = members.iter().map(|r| r.serving.as_slice()).collect();
        let serving = modal_sequence(&member_seqs, steps);
        let coverage = (0..steps)
            .map(|s| members.iter().map(|r| r.covered[s]).sum::<f64>() / count)
            .collect();
        templates.push(RouteTemplate {
            route_id: route as u32,
            centroids,
            serving,
            coverage,
            member_devices: members.iter().map(|r| r.device_id).collect(),
            member_serving: members.iter().map(|r| r.serving.clone()).collect(),
            member_tracks: members
                .iter()
                .map(|r| r.vector.chunks(m).map(<[f64]>::to_vec).collect())
                .collect(),
        });
    }
    let model = TrajectoryModel {
        cells,
        floor_dbm: config.floor_dbm,
        detection_dbm: config.detection_dbm,
        period_s: period,
        inertia,
        templates,
    };
    model.validate()?;
    Ok(model)
}

/// Fingerprints of a trajectory, one per sample.
pub fn trajectory_fingerprints(traj: &Trajectory, detection_dbm: f64) -> Result<Vec<Fingerprint>> {
    traj.samples
        .iter()
        .map(|s| Fingerprint::from_rsrp(&s.sample.primary_rsrp, detection_dbm))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteMatch {
    pub route_id: u32,
    pub score: f64,
    /// Mean per-step distance over the best window, dB.
    pub distance: f64,
    /// Template step aligned with the first prefix fingerprint.
    pub offset: usize,
}

impl RouteMatch {
    /// Template step aligned with the last prefix fingerprint.
    pub fn current_step(&self, prefix_len: usize) -> usize {
        self.offset + prefix_len - 1
    }
}

/// Rank templates by how well their best contiguous window matches the prefix.
/// Scores are a softmax of negative mean distances; equal scores keep route order.
pub fn match_trajectory(
    model: &TrajectoryModel,
    prefix: &[Fingerprint],
) -> Result<Vec<RouteMatch>> {
    if prefix.is_empty() {
        return Err(Error::EmptyInput("prefix must contain a fingerprint"));
    }
    let longest = model
        .templates
        .iter()
        .map(RouteTemplate::len)
        .max()
        .unwrap_or(0);
    if prefix.len() > longest {
        return Err(Error::OutOfRange(format!(
            "prefix of {} steps is longer than every template ({longest})",
            prefix.len()
        )));
    }
    let observed: Vec<Vec<f64>> = prefix
        .iter()
        .map(|f| f.dense(&model.cells, model.floor_dbm))
        .collect();
    let mut matches = Vec::new();
    for t in &model.templates {
        if t.len() < prefix.len() {
            continue;
        }
        let mut best = (0, f64::INFINITY);
        for offset in 0..=t.len() - prefix.len() {
            let d = observed
                .iter()
                .enumerate()
                .map(|(i, o)| euclid(o, &t.centroids[offset + i]))
                .sum::<f64>()
                / prefix.len() as f64;
            if d < best.1 {
                best = (offset, d);
            }
        }
        matches.push(RouteMatch {
            route_id: t.route_id,
            score: 0.0,
            distance: best.1,
            offset: best.0,
        });
    }
    let min_d = matches
        .iter()
        .map(|m| m.distance)
        .fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = matches.iter().map(|m| (min_d - m.distance).exp()).collect();
    let total: f64 = weights.iter().sum();
    for (m, w) in matches.iter_mut().zip(weights) {
        m.score = w / total;
    }
    matches.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.route_id.cmp(&b.route_id))
    });
    Ok(matches)
}

fn check_window(t: &RouteTemplate, current_step: usize, horizon: usize) -> Result<()> {
    if current_step + horizon >= t.len() {
        return Err(Error::OutOfRange(format!(
            "step {current_step} + horizon {horizon} exceeds template of {} steps",
            t.len()
        )));
    }
    Ok(())
}

/// Stored coverage probabilities for steps `current_step + 1 ..= current_step + horizon`.
pub fn predict_coverage_ahead(
    model: &TrajectoryModel,
    route_id: u32,
    current_step: usize,
    horizon: usize,
) -> Result<Vec<f64>> {
    let t = model.template(route_id)?;
    check_window(t, current_step, horizon)?;
    Ok(t.coverage[current_step + 1..=current_step + horizon].to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    Static,
    Slow,
    Fast,
}

/// Mean per-step fingerprint displacement in dB.
pub fn mean_displacement(prefix: &[Fingerprint], floor_dbm: f64) -> Result<f64> {
    if prefix.len() < 2 {
        return Err(Error::Insufficient(
            "dynamics need at least two fingerprints".into(),
        ));
    }
    let total: f64 = prefix
        .windows(2)
        .map(|w| fingerprint_distance(&w[0], &w[1], floor_dbm))
        .sum();
    Ok(total / (prefix.len() - 1) as f64)
}

/// Classify how fast the radio environment changes; a displacement equal to a
/// threshold falls in the lower class.
pub fn estimate_dynamics(prefix: &[Fingerprint], config: &MobilityConfig) -> Result<Dynamics> {
    let d = mean_displacement(prefix, config.floor_dbm)?;
    Ok(if d <= config.static_max_db_per_step {
        Dynamics::Static
    } else if d <= config.slow_max_db_per_step {
        Dynamics::Slow
    } else {
        Dynamics::Fast
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoverCandidate {
    pub cell: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoverPrediction {
    /// Upcoming cells in order of first appearance in the template.
    pub candidates: Vec<HandoverCandidate>,
    /// Steps until the template's serving cell first changes; `None` when it
    /// stays put over the horizon.
    pub steps_to_handover: Option<usize>,
}

/// Look up the next serving-cell change on the matched template.
///
/// A candidate's score is the fraction of the route's training members whose
/// own first serving-cell change in the window goes to that cell, so scores
/// sum to at most one.
pub fn predict_handover(
    model: &TrajectoryModel,
    route_id: u32,
    current_step: usize,
    horizon: usize,
) -> Result<HandoverPrediction> {
    let t = model.template(route_id)?;
    check_window(t, current_step, horizon)?;
    let members: Vec<&[u32]> = t.member_serving.iter().map(Vec::as_slice).collect();
    Ok(scan_handover(&t.serving, &members, current_step, horizon))
}

/// Training members of a route closest to `prefix` aligned at `offset`,
/// nearest first (lower member index on ties).
pub fn nearest_members(
    model: &TrajectoryModel,
    route_id: u32,
    prefix: &[Fingerprint],
    offset: usize,
    count: usize,
) -> Result<Vec<usize>> {
    let t = model.template(route_id)?;
    if prefix.is_empty() {
        return Err(Error::EmptyInput("prefix must contain a fingerprint"));
    }
    if offset + prefix.len() > t.len() {
        return Err(Error::OutOfRange(
            "prefix window runs past the template".into(),
        ));
    }
    let observed: Vec<Vec<f64>> = prefix
        .iter()
        .map(|f| f.dense(&model.cells, model.floor_dbm))
        .collect();
    let mut dist: Vec<(usize, f64)> = t
        .member_tracks
        .iter()
        .enumerate()
        .map(|(i, track)| {
            let d = observed
                .iter()
                .enumerate()
                .map(|(k, o)| euclid(o, &track[offset + k]))
                .sum::<f64>();
            (i, d)
        })
        .collect();
    dist.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(dist
        .into_iter()
        .take(count.max(1))
        .map(|(i, _)| i)
        .collect())
}

/// Handover lookup restricted to the `neighbours` training members whose
/// tracks best match the observed prefix. Devices on the same route but at a
/// different lateral offset can see the cell border several steps apart;
/// the nearest members share that offset. With `neighbours` at least the
/// member count this equals [`predict_handover`].
pub fn predict_handover_near(
    model: &TrajectoryModel,
    route_id: u32,
    prefix: &[Fingerprint],
    offset: usize,
    horizon: usize,
    neighbours: usize,
) -> Result<HandoverPrediction> {
    let t = model.template(route_id)?;
    let current_step = offset + prefix.len().max(1) - 1;
    check_window(t, current_step, horizon)?;
    if neighbours >= t.member_serving.len() {
        return predict_handover(model, route_id, current_step, horizon);
    }
    let picked = nearest_members(model, route_id, prefix, offset, neighbours)?;
    let members: Vec<&[u32]> = picked
        .iter()
        .map(|&i| t.member_serving[i].as_slice())
        .collect();
    let serving = modal_sequence(&members, t.len());
    Ok(scan_handover(&serving, &members, current_step, horizon))
}

/// Most common entry per step, lowest cell id on ties.
fn modal_sequence(seqs: &[&[u32]], steps: usize) -> Vec<u32> {
    (0..steps)
        .map(|s| {
            let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
            for seq in seqs {
                *votes.entry(seq[s]).or_default() += 1;
            }
            votes
                .iter()
                .fold((0, 0), |b, (&c, &n)| if n > b.1 { (c, n) } else { b })
                .0
        })
        .collect()
}

fn scan_handover(
    serving: &[u32],
    members: &[&[u32]],
    current_step: usize,
    horizon: usize,
) -> HandoverPrediction {
    let window = current_step + 1..=current_step + horizon;
    let now = serving[current_step];
    let steps_to_handover = window
        .clone()
        .find(|&s| serving[s] != now)
        .map(|s| s - current_step);
    let mut order: Vec<u32> = Vec::new();
    for s in window.clone() {
        let c = serving[s];
        if c != now && !order.contains(&c) {
            order.push(c);
        }
    }
    let total = members.len().max(1) as f64;
    let mut firsts: BTreeMap<u32, usize> = BTreeMap::new();
    for seq in members {
        let own = seq[current_step];
        if let Some(s) = window.clone().find(|&s| seq[s] != own) {
            *firsts.entry(seq[s]).or_default() += 1;
        }
    }
    let candidates = order
        .into_iter()
        .map(|cell| HandoverCandidate {
            cell,
            score: firsts.get(&cell).copied().unwrap_or(0) as f64 / total,
        })
        .collect();
    HandoverPrediction {
        candidates,
        steps_to_handover,
    }
}

/// Route-recovery experiment on generated trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobilityExperiment {
    pub routes: usize,
    pub train_devices_per_route: usize,
    pub heldout_devices_per_route: usize,
    pub samples_per_trajectory: usize,
    /// Fraction of each held-out trajectory shown to the matcher.
    pub prefix_fraction: f64,
    /// Allowed error on the predicted handover step.
    pub handover_tolerance_steps: usize,
    /// Training members consulted for the handover lookup.
    pub handover_neighbours: usize,
}

impl Default for MobilityExperiment {
    fn default() -> Self {
        Self {
            routes: 3,
            train_devices_per_route: 20,
            heldout_devices_per_route: 10,
            samples_per_trajectory: 30,
            prefix_fraction: 0.5,
            handover_tolerance_steps: 1,
            handover_neighbours: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityReport {
    pub adjusted_rand_index: f64,
    pub top1_accuracy: f64,
    pub handover_accuracy: f64,
    pub heldout_devices: usize,
    pub handover_events: usize,
}

/// First step after `from` whose entry differs from `seq[from]`.
fn first_change(seq: &[u32], from: usize) -> Option<usize> {
    (from + 1..seq.len()).find(|&s| seq[s] != seq[from])
}

/// Generate the route fixture and evaluate it with [`evaluate_mobility`].
pub fn run_mobility_experiment(
    env: &EnvConfig,
    exp: &MobilityExperiment,
    config: &MobilityConfig,
) -> Result<(TrajectoryModel, MobilityReport)> {
    let per_route = exp.train_devices_per_route + exp.heldout_devices_per_route;
    let all = gen_trajectories(env, exp.routes, per_route, exp.samples_per_trajectory)?;
    evaluate_mobility(&all, exp, config)
}

/// Mine on the first `train_devices_per_route` devices (by id) of each
/// ground-truth route, then match prefixes of the remaining devices and check
/// the matched route and the next handover step against their own samples.
pub fn evaluate_mobility(
    trajectories: &[Trajectory],
    exp: &MobilityExperiment,
    config: &MobilityConfig,
) -> Result<(TrajectoryModel, MobilityReport)> {
    if !(exp.prefix_fraction > 0.0 && exp.prefix_fraction < 1.0) {
        return Err(Error::config(
            "mobility.prefix_fraction",
            "must lie in (0,1)",
        ));
    }
    let mut by_route: BTreeMap<u32, Vec<&Trajectory>> = BTreeMap::new();
    for t in trajectories {
        by_route.entry(t.route_id).or_default().push(t);
    }
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for group in by_route.values_mut() {
        group.sort_by_key(|t| t.device_id);
        for (i, t) in group.iter().enumerate() {
            if i < exp.train_devices_per_route {
                train.push((*t).clone());
            } else {
                heldout.push((*t).clone());
            }
        }
    }
    if heldout.is_empty() {
        return Err(Error::Insufficient(
            "no held-out trajectories to evaluate".into(),
        ));
    }
    let model = mine_trajectories(&train, exp.routes, config)?;

    let truth: Vec<usize> = train.iter().map(|t| t.route_id as usize).collect();
    let found: Vec<usize> = train
        .iter()
        .map(|t| {
            model
                .route_of(t.device_id)
                .expect("training device in model") as usize
        })
        .collect();
    let ari = adjusted_rand_index(&truth, &found)?;

    // Majority ground-truth route of each template.
    let mut template_route = BTreeMap::new();
    for t in &model.templates {
        let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
        for d in &t.member_devices {
            let r = train
                .iter()
                .find(|x| x.device_id == *d)
                .expect("member")
                .route_id;
            *votes.entry(r).or_default() += 1;
        }
        let best = votes
            .iter()
            .fold((0, 0), |b, (&r, &n)| if n > b.1 { (r, n) } else { b });
        template_route.insert(t.route_id, best.0);
    }

    let mut hits = 0;
    let mut handover_hits = 0;
    let mut events = 0;
    for traj in &heldout {
        let fps = trajectory_fingerprints(traj, config.detection_dbm)?;
        let p = ((fps.len() as f64 * exp.prefix_fraction).round() as usize).clamp(1, fps.len() - 1);
        let ranked = match_trajectory(&model, &fps[..p])?;
        let top = &ranked[0];
        if template_route[&top.route_id] == traj.route_id {
            hits += 1;
        }
        let current = top.current_step(p);
        let template_len = model.template(top.route_id)?.len();
        let horizon = template_len - 1 - current;
        let predicted = predict_handover_near(
            &model,
            top.route_id,
            &fps[..p],
            top.offset,
            horizon,
            exp.handover_neighbours,
        )?
        .steps_to_handover
        .map(|s| p - 1 + s);
        let actual = first_change(
            &traj
                .serving_cells()
                .iter()
                .map(|&c| c as u32)
                .collect::<Vec<_>>(),
            p - 1,
        );
        if actual.is_some() {
            events += 1;
        }
        let ok = match (predicted, actual) {
            (Some(a), Some(b)) => a.abs_diff(b) <= exp.handover_tolerance_steps,
            (None, None) => true,
            _ => false,
        };
        if ok {
            handover_hits += 1;
        }
    }
    let n = heldout.len() as f64;
    Ok((
        model,
        MobilityReport {
            adjusted_rand_index: ari,
            top1_accuracy: hits as f64 / n,
            handover_accuracy: handover_hits as f64 / n,
            heldout_devices: heldout.len(),
            handover_events: events,
        },
    ))
}
