use std::net::Ipv4Addr;

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal, Pareto};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::{Direction, FlowKey, FlowRecord, PacketMeta, PROTO_TCP, PROTO_UDP};
use crate::error::{Error, Result};
use crate::rng;

/// Largest volume the generator emits (100 GB); keeps aggregated segments in `u32`.
const MAX_VOLUME: f64 = 1e11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VolumeModel {
    LogNormal { median_bytes: f64, sigma: f64 },
    Pareto { scale_bytes: f64, shape: f64 },
}

impl VolumeModel {
    /// P(volume > bytes).
    pub fn exceedance(&self, bytes: f64) -> f64 {
        match *self {
            VolumeModel::LogNormal {
                median_bytes,
                sigma,
            } => {
                let z = (bytes.ln() - median_bytes.ln()) / sigma;
                0.5 * erfc(z / std::f64::consts::SQRT_2)
            }
            VolumeModel::Pareto { scale_bytes, shape } => {
                if bytes < scale_bytes {
                    1.0
                } else {
                    (scale_bytes / bytes).powf(shape)
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            VolumeModel::LogNormal {
                median_bytes,
                sigma,
            } => median_bytes * (0.5 * sigma * sigma).exp(),
            VolumeModel::Pareto { scale_bytes, shape } if shape > 1.0 => {
                shape * scale_bytes / (shape - 1.0)
            }
            VolumeModel::Pareto { .. } => f64::INFINITY,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            VolumeModel::LogNormal {
                median_bytes,
                sigma,
            } => LogNormal::new(median_bytes.ln(), sigma)
                .expect("validated lognormal")
                .sample(rng),
            VolumeModel::Pareto { scale_bytes, shape } => Pareto::new(scale_bytes, shape)
                .expect("validated pareto")
                .sample(rng),
        }
    }

    fn validate(&self, field: &str) -> Result<()> {
        let ok = match *self {
            VolumeModel::LogNormal {
                median_bytes,
                sigma,
            } => median_bytes >= 1.0 && sigma > 0.0 && sigma.is_finite(),
            VolumeModel::Pareto { scale_bytes, shape } => {
                scale_bytes >= 1.0 && shape > 0.0 && shape.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(field, "volume model parameters out of range"))
        }
    }
}

/// One synthetic service: who it talks to, on which ports, and how much.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceProfile {
    pub name: String,
    pub share: f64,
    pub protocol: u8,
    pub dst_ports: Vec<u16>,
    /// First two octets of the server address pool.
    pub server_prefix: [u8; 2],
    /// Inclusive range of the first packet's size in bytes.
    pub first_packet_bytes: [u32; 2],
    pub volume: VolumeModel,
    /// Mean gap between packets, seconds.
    pub mean_gap_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowGenConfig {
    /// When false, the volume is drawn from a service chosen independently of
    /// the one that determines addresses, ports and the first packet.
    pub planted_signal: bool,
    pub services: Vec<ServiceProfile>,
    pub segment_bytes: u32,
    /// Packet count cap; large flows are emitted as aggregated segments.
    pub max_packets: u32,
}

impl Default for FlowGenConfig {
    fn default() -> Self {
        Self {
            planted_signal: true,
            services: vec![
                ServiceProfile {
                    name: "dns".into(),
                    share: 0.35,
                    protocol: PROTO_UDP,
                    dst_ports: vec![53],
                    server_prefix: [9, 9],
                    first_packet_bytes: [40, 90],
                    volume: VolumeModel::LogNormal {
                        median_bytes: 180.0,
                        sigma: 0.6,
                    },
                    mean_gap_s: 0.02,
                },
                ServiceProfile {
                    name: "api".into(),
                    share: 0.527,
                    protocol: PROTO_TCP,
                    dst_ports: vec![443, 8443],
                    server_prefix: [151, 101],
                    first_packet_bytes: [200, 600],
                    volume: VolumeModel::LogNormal {
                        median_bytes: 1800.0,
                        sigma: 0.9,
                    },
                    mean_gap_s: 0.03,
                },
                ServiceProfile {
                    name: "web".into(),
                    share: 0.093,
                    protocol: PROTO_TCP,
                    dst_ports: vec![80, 8080],
                    server_prefix: [93, 184],
                    first_packet_bytes: [300, 800],
                    volume: VolumeModel::LogNormal {
                        median_bytes: 30_000.0,
                        sigma: 1.0,
                    },
                    mean_gap_s: 0.01,
                },
                ServiceProfile {
                    name: "bulk".into(),
                    share: 0.03,
                    protocol: PROTO_TCP,
                    dst_ports: vec![1935, 6881],
                    server_prefix: [23, 246],
                    first_packet_bytes: [500, 1400],
                    volume: VolumeModel::Pareto {
                        scale_bytes: 80_000.0,
                        shape: 1.2,
                    },
                    mean_gap_s: 0.002,
                },
            ],
            segment_bytes: 1460,
            max_packets: 256,
        }
    }
}

impl FlowGenConfig {
    /// Same mixture with the volume decoupled from every observable field.
    pub fn signal_free() -> Self {
        Self {
            planted_signal: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.services.is_empty() {
            return Err(Error::config(
                "flows.services",
                "at least one service required",
            ));
        }
        let mut total = 0.0;
        for (i, s) in self.services.iter().enumerate() {
            let field = |name: &str| format!("flows.services[{i}].{name}");
            if !(s.share > 0.0 && s.share.is_finite()) {
                return Err(Error::config(field("share"), "must be positive"));
            }
            if s.dst_ports.is_empty() {
                return Err(Error::config(field("dst_ports"), "must not be empty"));
            }
            let [lo, hi] = s.first_packet_bytes;
            if lo == 0 || lo > hi {
                return Err(Error::config(
                    field("first_packet_bytes"),
                    "need 1 <= min <= max",
                ));
            }
            if !(s.mean_gap_s > 0.0 && s.mean_gap_s.is_finite()) {
                return Err(Error::config(field("mean_gap_s"), "must be positive"));
            }
            s.volume.validate(&field("volume"))?;
            total += s.share;
        }
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::config(
                "flows.services",
                format!("shares must sum to 1, got {total}"),
            ));
        }
        if self.segment_bytes == 0 {
            return Err(Error::config("flows.segment_bytes", "must be positive"));
        }
        if self.max_packets < 2 {
            return Err(Error::config("flows.max_packets", "must be at least 2"));
        }
        Ok(())
    }

    /// Mixture probability that a flow exceeds `bytes`.
    pub fn exceedance(&self, bytes: f64) -> f64 {
        self.services
            .iter()
            .map(|s| s.share * s.volume.exceedance(bytes))
            .sum()
    }

    fn pick_service<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, s) in self.services.iter().enumerate() {
            acc += s.share;
            if u < acc {
                return i;
            }
        }
        self.services.len() - 1
    }

    /// Generate `n` flows; flow `i` draws from its own stream so any prefix of a
    /// larger corpus equals the smaller corpus.
    pub fn generate(&self, n: usize, seed: u64) -> Vec<FlowRecord> {
        (0..n as u64).map(|i| self.generate_one(i, seed)).collect()
    }

    pub fn generate_one(&self, flow_id: u64, seed: u64) -> FlowRecord {
        let mut rng = rng::rng_from(rng::derive_indexed(seed, flow_id));
        let service_idx = self.pick_service(&mut rng);
        let volume_idx = if self.planted_signal {
            service_idx
        } else {
            self.pick_service(&mut rng)
        };
        let service = &self.services[service_idx];

        let key = FlowKey {
            src_addr: Ipv4Addr::new(10, rng.random(), rng.random(), rng.random_range(1..=254)),
            dst_addr: Ipv4Addr::new(
                service.server_prefix[0],
                service.server_prefix[1],
                rng.random(),
                rng.random_range(1..=254),
            ),
            src_port: rng.random_range(32768..=60999),
            dst_port: service.dst_ports[rng.random_range(0..service.dst_ports.len())],
            protocol: service.protocol,
        };

        let [lo, hi] = service.first_packet_bytes;
        let first_size = rng.random_range(lo..=hi);
        let sampled = self.services[volume_idx].volume.sample(&mut rng);
        let volume = (sampled.round().clamp(1.0, MAX_VOLUME) as u64).max(first_size as u64);

        let packets = self.packetize(volume, first_size, service.mean_gap_s, &mut rng);
        FlowRecord::new(flow_id, key, packets, service_idx as u8)
            .expect("generator produces valid flows")
    }

    fn packetize<R: Rng + ?Sized>(
        &self,
        volume: u64,
        first_size: u32,
        mean_gap_s: f64,
        rng: &mut R,
    ) -> Vec<PacketMeta> {
        let mut packets = vec![PacketMeta::new(0.0, first_size, Direction::Uplink)];
        let mut remaining = volume - first_size as u64;
        if remaining == 0 {
            return packets;
        }
        let slots = (self.max_packets - 1) as u64;
        let segment = (self.segment_bytes as u64).max(remaining.div_ceil(slots));
        let gaps = Exp::new(1.0 / mean_gap_s).expect("positive rate");
        let mut t = 0.0f64;
        while remaining > 0 {
            let size = remaining.min(segment);
            t += gaps.sample(rng);
            let stamp = (t * 1e6).round() / 1e6;
            packets.push(PacketMeta::new(stamp, size as u32, Direction::Downlink));
            remaining -= size;
        }
        packets
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        FlowGenConfig::default().validate().unwrap();
        FlowGenConfig::signal_free().validate().unwrap();
    }

    #[test]
    fn analytic_exceedance_is_calibrated() {
        let p = FlowGenConfig::default().exceedance(10_000.0);
        assert!((p - 0.125).abs() < 0.001, "p = {p}");
    }

    #[test]
    fn packets_respect_cap_and_sum() {
        let cfg = FlowGenConfig::default();
        for f in cfg.generate(300, 5) {
            assert!(f.packets().len() <= cfg.max_packets as usize);
            assert_eq!(
                f.total_volume(),
                f.packets().iter().map(|p| p.size as u64).sum::<u64>()
            );
        }
    }

    #[test]
    fn generation_is_prefix_stable() {
        let cfg = FlowGenConfig::default();
        let small = cfg.generate(20, 9);
        let large = cfg.generate(50, 9);
        assert_eq!(&large[..20], &small[..]);
    }

    #[test]
    fn shares_must_sum_to_one() {
        let mut cfg = FlowGenConfig::default();
        cfg.services[0].share = 0.5;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("flows.services"));
    }
}
