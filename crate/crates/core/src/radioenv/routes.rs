use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EnvConfig;
use crate::rng;

/// Fixed polyline devices travel along. Routes enter on a circle around the
/// area centre at evenly spread angles, bend near the centre and leave on the
/// roughly opposite side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub id: u32,
    pub waypoints: Vec<[f64; 2]>,
}

impl Route {
    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
            .sum()
    }

    /// Point at arc-length fraction `u` in [0,1], shifted `lateral_m` to the
    /// left of the direction of travel.
    pub fn point_at(&self, u: f64, lateral_m: f64) -> [f64; 2] {
        let target = u.clamp(0.0, 1.0) * self.length();
        let mut walked = 0.0;
        let last = self.waypoints.len() - 2;
        for (i, w) in self.waypoints.windows(2).enumerate() {
            let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
            let seg = (dx * dx + dy * dy).sqrt();
            if walked + seg >= target || i == last {
                let s = if seg > 0.0 {
                    ((target - walked) / seg).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (nx, ny) = if seg > 0.0 {
                    (-dy / seg, dx / seg)
                } else {
                    (0.0, 0.0)
                };
                return [
                    w[0][0] + s * dx + lateral_m * nx,
                    w[0][1] + s * dy + lateral_m * ny,
                ];
            }
            walked += seg;
        }
        unreachable!("route has at least two waypoints")
    }
}

pub fn build_routes(config: &EnvConfig, count: usize) -> Vec<Route> {
    let mut r = rng::rng_from(rng::derive_named(config.seed, "routes"));
    let a = config.area_size_m;
    let centre = [0.5 * a, 0.5 * a];
    let radius = 0.45 * a;
    let base: f64 = r.random_range(0.0..2.0 * PI);
    (0..count)
        .map(|i| {
            let enter = base + 2.0 * PI * i as f64 / count as f64;
            let leave = enter + PI + r.random_range(-0.5..0.5);
            let bend = [
                centre[0] + r.random_range(-0.15..0.15) * a,
                centre[1] + r.random_range(-0.15..0.15) * a,
            ];
            Route {
                id: i as u32,
                waypoints: vec![
                    [
                        centre[0] + radius * enter.cos(),
                        centre[1] + radius * enter.sin(),
                    ],
                    bend,
                    [
                        centre[0] + radius * leave.cos(),
                        centre[1] + radius * leave.sin(),
                    ],
                ],
            }
        })
        .collect()
}
