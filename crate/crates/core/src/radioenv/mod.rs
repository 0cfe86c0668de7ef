//! Synthetic two-carrier radio environment.
//!
//! Received power follows log-distance path loss plus log-normal shadowing.
//! Shadowing is a spatial field, so a location always sees the same fading;
//! each secondary cell's field is correlated at `shadow_correlation` with the
//! field of its nearest primary site, which is what makes secondary coverage
//! predictable from primary measurements.

mod routes;
mod shadow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl};
use crate::rng;
use routes::Route;
use shadow::LatticeField;

pub use routes::build_routes;

const AUX_FIELD_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub area_size_m: f64,
    pub primary_cells: Vec<[f64; 2]>,
    pub secondary_cells: Vec<[f64; 2]>,
    pub pathloss_exponent_primary: f64,
    pub pathloss_exponent_secondary: f64,
    /// Reference-signal power per resource element.
    pub tx_power_primary_dbm: f64,
    pub tx_power_secondary_dbm: f64,
    /// Path loss at the reference distance.
    pub pl0_primary_db: f64,
    pub pl0_secondary_db: f64,
    pub reference_distance_m: f64,
    pub shadow_sigma_db: f64,
    pub shadow_correlation: f64,
    /// Lattice spacing of the shadowing field.
    pub shadow_decorrelation_m: f64,
    /// Fixed coverage threshold; when absent it is calibrated to hit
    /// `target_secondary_coverage`.
    pub coverage_threshold_dbm: Option<f64>,
    pub target_secondary_coverage: f64,
    /// Uniform draws used to calibrate the environment-wide threshold that
    /// trajectories are labelled with.
    pub calibration_samples: usize,
    pub sample_period_s: f64,
    /// Standard deviation of each device's lateral offset from its route.
    pub route_jitter_m: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            area_size_m: 1000.0,
            primary_cells: vec![
                [500.0, 500.0],
                [120.0, 160.0],
                [880.0, 160.0],
                [500.0, 930.0],
            ],
            secondary_cells: vec![[500.0, 500.0]],
            pathloss_exponent_primary: 3.0,
            pathloss_exponent_secondary: 3.4,
            tx_power_primary_dbm: 15.0,
            tx_power_secondary_dbm: 10.0,
            pl0_primary_db: 43.3,
            pl0_secondary_db: 61.4,
            reference_distance_m: 1.0,
            shadow_sigma_db: 6.0,
            shadow_correlation: 0.8,
            shadow_decorrelation_m: 25.0,
            coverage_threshold_dbm: None,
            target_secondary_coverage: 0.22,
            calibration_samples: 10_000,
            sample_period_s: 10.0,
            route_jitter_m: 5.0,
            seed: 1,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        fn positive(field: &str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(
                    field,
                    format!("must be positive and finite, got {v}"),
                ))
            }
        }
        positive("env.area_size_m", self.area_size_m)?;
        positive(
            "env.pathloss_exponent_primary",
            self.pathloss_exponent_primary,
        )?;
        positive(
            "env.pathloss_exponent_secondary",
            self.pathloss_exponent_secondary,
        )?;
        positive("env.reference_distance_m", self.reference_distance_m)?;
        positive("env.shadow_decorrelation_m", self.shadow_decorrelation_m)?;
        positive("env.sample_period_s", self.sample_period_s)?;
        if self.primary_cells.is_empty() {
            return Err(Error::config(
                "env.primary_cells",
                "at least one cell required",
            ));
        }
        if self.secondary_cells.is_empty() {
            return Err(Error::config(
                "env.secondary_cells",
                "at least one cell required",
            ));
        }
        for (name, cells) in [
            ("env.primary_cells", &self.primary_cells),
            ("env.secondary_cells", &self.secondary_cells),
        ] {
            if cells.iter().flatten().any(|c| !c.is_finite()) {
                return Err(Error::config(name, "cell positions must be finite"));
            }
        }
        if !(self.shadow_correlation >= 0.0 && self.shadow_correlation <= 1.0) {
            return Err(Error::config(
                "env.shadow_correlation",
                format!("must lie in [0,1], got {}", self.shadow_correlation),
            ));
        }
        if !(self.shadow_sigma_db >= 0.0 && self.shadow_sigma_db.is_finite()) {
            return Err(Error::config("env.shadow_sigma_db", "must be nonnegative"));
        }
        if !(self.target_secondary_coverage > 0.0 && self.target_secondary_coverage < 1.0) {
            return Err(Error::config(
                "env.target_secondary_coverage",
                "must lie strictly between 0 and 1",
            ));
        }
        if !(self.route_jitter_m >= 0.0 && self.route_jitter_m.is_finite()) {
            return Err(Error::config("env.route_jitter_m", "must be nonnegative"));
        }
        if self.calibration_samples < 2 && self.coverage_threshold_dbm.is_none() {
            return Err(Error::config("env.calibration_samples", "need at least 2"));
        }
        for (field, v) in [
            ("env.tx_power_primary_dbm", self.tx_power_primary_dbm),
            ("env.tx_power_secondary_dbm", self.tx_power_secondary_dbm),
            ("env.pl0_primary_db", self.pl0_primary_db),
            ("env.pl0_secondary_db", self.pl0_secondary_db),
        ] {
            if !v.is_finite() {
                return Err(Error::config(field, "must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioSample {
    pub device_id: u64,
    /// Generator ground truth; never part of any feature vector.
    pub position: [f64; 2],
    pub primary_rsrp: Vec<f64>,
    pub secondary_rsrp: f64,
    pub covered: bool,
}

impl RadioSample {
    /// Index of the strongest primary cell (lowest index on ties).
    pub fn serving_cell(&self) -> usize {
        strongest(&self.primary_rsrp)
    }
}

pub(crate) fn strongest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Samples together with the threshold their `covered` flags were derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioSampleSet {
    pub threshold_dbm: f64,
    pub samples: Vec<RadioSample>,
}

impl RadioSampleSet {
    pub fn covered_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().filter(|s| s.covered).count() as f64 / self.samples.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedSample {
    pub t: f64,
    pub sample: RadioSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub device_id: u64,
    /// Generator ground truth.
    pub route_id: u32,
    pub period_s: f64,
    pub samples: Vec<TimedSample>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if self.period_s.is_nan() || self.period_s <= 0.0 {
            return Err(Error::invariant("period_s", "must be positive"));
        }
        for (i, s) in self.samples.iter().enumerate() {
            let expected = i as f64 * self.period_s;
            if (s.t - expected).abs() > 1e-9 * expected.max(1.0) {
                return Err(Error::invariant(
                    format!("samples[{i}].t"),
                    format!("expected {expected}, got {}", s.t),
                ));
            }
        }
        Ok(())
    }

    pub fn serving_cells(&self) -> Vec<usize> {
        self.samples
            .iter()
            .map(|s| s.sample.serving_cell())
            .collect()
    }
}

/// Log-distance path loss in dB, with distance clamped below at `d0`.
pub fn path_loss_db(distance_m: f64, pl0_db: f64, exponent: f64, d0_m: f64) -> f64 {
    pl0_db + 10.0 * exponent * (distance_m.max(d0_m) / d0_m).log10()
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Constructed environment: cells, shadowing fields and the calibrated
/// environment-wide coverage threshold.
#[derive(Debug, Clone)]
pub struct RadioEnvironment {
    config: EnvConfig,
    field: LatticeField,
    /// Primary site each secondary cell's shadowing is correlated with.
    paired_primary: Vec<usize>,
    reference_threshold_dbm: f64,
}

impl RadioEnvironment {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let field = LatticeField::new(
            rng::derive_named(config.seed, "shadowing"),
            config.shadow_decorrelation_m,
        );
        let paired_primary = config
            .secondary_cells
            .iter()
            .map(|&s| {
                let mut best = 0;
                for (i, &p) in config.primary_cells.iter().enumerate() {
                    if distance(s, p) < distance(s, config.primary_cells[best]) {
                        best = i;
                    }
                }
                best
            })
            .collect();
        let mut env = Self {
            config,
            field,
            paired_primary,
            reference_threshold_dbm: f64::NAN,
        };
        env.reference_threshold_dbm = match env.config.coverage_threshold_dbm {
            Some(t) => t,
            None => {
                let stream = rng::derive_named(env.config.seed, "calibration");
                let values: Vec<f64> = (0..env.config.calibration_samples as u64)
                    .map(|i| env.best_secondary_rsrp(env.place_device(stream, i)))
                    .collect();
                calibrate_threshold(&values, env.config.target_secondary_coverage)?
            }
        };
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn n_primary(&self) -> usize {
        self.config.primary_cells.len()
    }

    /// Threshold calibrated on a large uniform draw (or the configured one).
    pub fn reference_threshold_dbm(&self) -> f64 {
        self.reference_threshold_dbm
    }

    /// Primary-carrier shadowing at `pos`, in dB.
    pub fn shadow_primary(&self, cell: usize, pos: [f64; 2]) -> f64 {
        self.config.shadow_sigma_db * self.field.value(cell as u64, pos)
    }

    /// Secondary-carrier shadowing at `pos`, in dB.
    pub fn shadow_secondary(&self, cell: usize, pos: [f64; 2]) -> f64 {
        let rho = self.config.shadow_correlation;
        let shared = self.field.value(self.paired_primary[cell] as u64, pos);
        let own = if rho < 1.0 {
            self.field.value(AUX_FIELD_BASE + cell as u64, pos)
        } else {
            0.0
        };
        self.config.shadow_sigma_db * (rho * shared + (1.0 - rho * rho).sqrt() * own)
    }

    pub fn rsrp_primary(&self, cell: usize, pos: [f64; 2]) -> f64 {
        let c = &self.config;
        let d = distance(pos, c.primary_cells[cell]);
        c.tx_power_primary_dbm
            - path_loss_db(
                d,
                c.pl0_primary_db,
                c.pathloss_exponent_primary,
                c.reference_distance_m,
            )
            + self.shadow_primary(cell, pos)
    }

    pub fn rsrp_secondary(&self, cell: usize, pos: [f64; 2]) -> f64 {
        let c = &self.config;
        let d = distance(pos, c.secondary_cells[cell]);
        c.tx_power_secondary_dbm
            - path_loss_db(
                d,
                c.pl0_secondary_db,
                c.pathloss_exponent_secondary,
                c.reference_distance_m,
            )
            + self.shadow_secondary(cell, pos)
    }

    pub fn best_secondary_rsrp(&self, pos: [f64; 2]) -> f64 {
        (0..self.config.secondary_cells.len())
            .map(|j| self.rsrp_secondary(j, pos))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn primary_vector(&self, pos: [f64; 2]) -> Vec<f64> {
        (0..self.n_primary())
            .map(|i| self.rsrp_primary(i, pos))
            .collect()
    }

    pub fn sample_at(&self, device_id: u64, pos: [f64; 2], threshold_dbm: f64) -> RadioSample {
        let secondary_rsrp = self.best_secondary_rsrp(pos);
        RadioSample {
            device_id,
            position: pos,
            primary_rsrp: self.primary_vector(pos),
            secondary_rsrp,
            covered: secondary_rsrp >= threshold_dbm,
        }
    }

    /// Uniform position for device `index` of the placement stream `stream`.
    pub fn place_device(&self, stream: u64, index: u64) -> [f64; 2] {
        let mut r = rng::rng_from(rng::derive_indexed(stream, index));
        let a = self.config.area_size_m;
        [r.random_range(0.0..a), r.random_range(0.0..a)]
    }

    /// Draw `n` devices from placement stream `stream` and label coverage with
    /// a threshold calibrated on this very draw (or the configured one).
    pub fn draw_samples(&self, n: usize, stream: u64) -> Result<RadioSampleSet> {
        let positions: Vec<[f64; 2]> = (0..n as u64)
            .map(|i| self.place_device(stream, i))
            .collect();
        let secondary: Vec<f64> = positions
            .iter()
            .map(|&p| self.best_secondary_rsrp(p))
            .collect();
        let threshold_dbm = match self.config.coverage_threshold_dbm {
            Some(t) => t,
            None if n == 0 => self.reference_threshold_dbm,
            None => calibrate_threshold(&secondary, self.config.target_secondary_coverage)?,
        };
        let samples = positions
            .into_iter()
            .enumerate()
            .map(|(i, p)| self.sample_at(i as u64, p, threshold_dbm))
            .collect();
        Ok(RadioSampleSet {
            threshold_dbm,
            samples,
        })
    }

    pub fn routes(&self, count: usize) -> Vec<Route> {
        build_routes(&self.config, count)
    }
}

/// Generate `n_devices` radio samples, coverage calibrated on the draw itself.
pub fn gen_radio_samples(config: &EnvConfig, n_devices: usize) -> Result<RadioSampleSet> {
    let env = RadioEnvironment::new(config.clone())?;
    env.draw_samples(n_devices, rng::derive_named(config.seed, "devices"))
}

/// Threshold such that a `target_fraction` share of `values` lies at or above
/// it: the midpoint between the k-th and (k+1)-th largest values, with
/// k = round(target·n), falling back to the other neighbouring k on ties.
pub fn calibrate_threshold(values: &[f64], target_fraction: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("calibration needs at least one sample"));
    }
    if !(target_fraction > 0.0 && target_fraction < 1.0) {
        return Err(Error::OutOfRange(format!(
            "target fraction {target_fraction} not in (0,1)"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Calibration("non-finite RSRP value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len();
    let target = target_fraction * n as f64;
    let rounded = target.round() as usize;
    let other = if (rounded as f64) < target {
        target.ceil() as usize
    } else {
        target.floor() as usize
    };
    for k in [rounded, other] {
        if k == 0 {
            return Ok(sorted[0] + 1.0);
        }
        if k == n {
            return Ok(sorted[n - 1] - 1.0);
        }
        if sorted[k - 1] > sorted[k] {
            return Ok(0.5 * (sorted[k - 1] + sorted[k]));
        }
    }
    Err(Error::Calibration(format!(
        "no threshold separates {target:.1} of {n} samples (tied RSRP values)"
    )))
}

/// Generate trajectories along `routes` canonical routes.
pub fn gen_trajectories(
    config: &EnvConfig,
    routes: usize,
    devices_per_route: usize,
    samples_per_trajectory: usize,
) -> Result<Vec<Trajectory>> {
    if routes == 0 {
        return Err(Error::config(
            "trajectories.routes",
            "need at least one route",
        ));
    }
    if samples_per_trajectory < 2 {
        return Err(Error::config(
            "trajectories.samples_per_trajectory",
            "need at least two samples",
        ));
    }
    let env = RadioEnvironment::new(config.clone())?;
    let threshold = env.reference_threshold_dbm();
    let route_set = env.routes(routes);
    let jitter_stream = rng::derive_named(config.seed, "route-jitter");
    let period = config.sample_period_s;
    let mut out = Vec::with_capacity(routes * devices_per_route);
    for route in &route_set {
        for d in 0..devices_per_route {
            let device_id = (route.id as usize * devices_per_route + d) as u64;
            let offset =
                route_device_offset(jitter_stream, route.id, d as u64, config.route_jitter_m);
            let samples = (0..samples_per_trajectory)
                .map(|k| {
                    let u = k as f64 / (samples_per_trajectory - 1) as f64;
                    let pos = route.point_at(u, offset);
                    TimedSample {
                        t: k as f64 * period,
                        sample: env.sample_at(device_id, pos, threshold),
                    }
                })
                .collect();
            out.push(Trajectory {
                device_id,
                route_id: route.id,
                period_s: period,
                samples,
            });
        }
    }
    Ok(out)
}

fn route_device_offset(stream: u64, route: u32, device: u64, jitter_m: f64) -> f64 {
    if jitter_m == 0.0 {
        return 0.0;
    }
    let mut r = rng::rng_from(rng::hash_words(&[stream, route as u64, device]));
    let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut r);
    jitter_m * z
}

pub fn write_radio_samples(
    samples: &[RadioSample],
    path: impl AsRef<std::path::Path>,
) -> Result<()> {
    write_jsonl(samples, path)
}

/// Read radio samples and check that coverage labels are a threshold function
/// of the secondary RSRP. Returns the samples and that threshold.
pub fn read_radio_samples(path: impl AsRef<std::path::Path>) -> Result<RadioSampleSet> {
    let samples: Vec<RadioSample> = read_jsonl(path)?;
    let threshold_dbm = infer_threshold(&samples)?;
    Ok(RadioSampleSet {
        threshold_dbm,
        samples,
    })
}

/// Midpoint between the weakest covered and strongest uncovered secondary RSRP.
pub fn infer_threshold(samples: &[RadioSample]) -> Result<f64> {
    let Some(first) = samples.first() else {
        return Ok(f64::NAN);
    };
    let width = first.primary_rsrp.len();
    let mut min_covered = f64::INFINITY;
    let mut max_uncovered = f64::NEG_INFINITY;
    for (i, s) in samples.iter().enumerate() {
        if s.primary_rsrp.len() != width || width == 0 {
            return Err(Error::invariant(
                format!("samples[{i}].primary_rsrp"),
                format!("expected {width} cells, got {}", s.primary_rsrp.len()),
            ));
        }
        if s.covered {
            min_covered = min_covered.min(s.secondary_rsrp);
        } else {
            max_uncovered = max_uncovered.max(s.secondary_rsrp);
        }
    }
    if max_uncovered >= min_covered {
        return Err(Error::invariant(
            "covered",
            "coverage labels are not a threshold of secondary_rsrp",
        ));
    }
    Ok(match (min_covered.is_finite(), max_uncovered.is_finite()) {
        (true, true) => 0.5 * (min_covered + max_uncovered),
        (true, false) => min_covered,
        _ => max_uncovered + 1.0,
    })
}

pub fn write_trajectories(trajs: &[Trajectory], path: impl AsRef<std::path::Path>) -> Result<()> {
    write_jsonl(trajs, path)
}

pub fn read_trajectories(path: impl AsRef<std::path::Path>) -> Result<Vec<Trajectory>> {
    let trajs: Vec<Trajectory> = read_jsonl(path)?;
    for t in &trajs {
        t.validate()?;
    }
    Ok(trajs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_shadow() -> EnvConfig {
        EnvConfig {
            shadow_sigma_db: 0.0,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn rsrp_at_reference_distance() {
        let cfg = no_shadow();
        let env = RadioEnvironment::new(cfg.clone()).unwrap();
        let cell = cfg.primary_cells[0];
        let pos = [cell[0] + cfg.reference_distance_m, cell[1]];
        let rsrp = env.rsrp_primary(0, pos);
        assert!((rsrp - (cfg.tx_power_primary_dbm - cfg.pl0_primary_db)).abs() < 1e-12);
    }

    #[test]
    fn rsrp_decreases_with_distance_without_shadowing() {
        let env = RadioEnvironment::new(no_shadow()).unwrap();
        let mut prev = f64::INFINITY;
        for k in 1..400 {
            let pos = [500.0 + k as f64, 500.0];
            let v = env.rsrp_primary(0, pos);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn calibrate_examples() {
        let t = calibrate_threshold(&[-100.0, -90.0, -80.0, -70.0], 0.25).unwrap();
        assert!(t > -80.0 && t < -70.0);
        let t = calibrate_threshold(&[-3.0, -1.0, 1.0, 3.0], 0.5).unwrap();
        assert_eq!(t, 0.0);
        assert!(matches!(
            calibrate_threshold(&[], 0.3),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            calibrate_threshold(&[-90.0; 10], 0.3),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn calibration_on_gaussian_samples() {
        use rand_distr::{Distribution, Normal};
        let mut r = rng::rng_from(4);
        let normal = Normal::new(-95.0, 8.0).unwrap();
        let values: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut r)).collect();
        let t = calibrate_threshold(&values, 0.22).unwrap();
        let covered = values.iter().filter(|&&v| v >= t).count() as f64 / 1e4;
        assert!((covered - 0.22).abs() <= 0.005);
    }

    #[test]
    fn perfect_correlation_matches_primary_shadow() {
        let cfg = EnvConfig {
            shadow_correlation: 1.0,
            primary_cells: vec![[500.0, 500.0]],
            secondary_cells: vec![[500.0, 500.0]],
            pathloss_exponent_secondary: 3.0,
            pl0_secondary_db: 43.3,
            tx_power_secondary_dbm: 15.0,
            ..EnvConfig::default()
        };
        let set = gen_radio_samples(&cfg, 500).unwrap();
        for s in &set.samples {
            assert!((s.primary_rsrp[0] - s.secondary_rsrp).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_correlation() {
        let cfg = EnvConfig {
            shadow_correlation: 1.5,
            ..EnvConfig::default()
        };
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "env.shadow_correlation"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trajectories_have_constant_period() {
        let trajs = gen_trajectories(&EnvConfig::default(), 3, 20, 12).unwrap();
        assert_eq!(trajs.len(), 60);
        for r in 0..3 {
            assert_eq!(trajs.iter().filter(|t| t.route_id == r).count(), 20);
        }
        for t in &trajs {
            t.validate().unwrap();
            assert_eq!(t.samples.len(), 12);
        }
    }

    #[test]
    fn zero_jitter_devices_share_fingerprints() {
        let cfg = EnvConfig {
            route_jitter_m: 0.0,
            ..EnvConfig::default()
        };
        let trajs = gen_trajectories(&cfg, 2, 2, 10).unwrap();
        let a: Vec<_> = trajs[0]
            .samples
            .iter()
            .map(|s| &s.sample.primary_rsrp)
            .collect();
        let b: Vec<_> = trajs[1]
            .samples
            .iter()
            .map(|s| &s.sample.primary_rsrp)
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn labels_must_be_threshold_consistent() {
        let mut set = gen_radio_samples(&EnvConfig::default(), 50).unwrap();
        assert!(infer_threshold(&set.samples).is_ok());
        let idx = set.samples.iter().position(|s| !s.covered).unwrap();
        set.samples[idx].covered = true;
        set.samples[idx].secondary_rsrp = -1e3;
        assert!(infer_threshold(&set.samples).is_err());
    }
}
