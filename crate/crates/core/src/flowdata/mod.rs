//! Flow data model: first-packet metadata, packet sequences and the
//! volume-threshold labels the traffic predictor learns.

mod generator;
mod jsonl;

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generator::{FlowGenConfig, ServiceProfile, VolumeModel};
pub use jsonl::{read_flows, write_flows, FlowFormat};

/// Volume thresholds in bytes (decimal kB).
pub const THRESHOLD_1KB: u64 = 1_000;
pub const THRESHOLD_10KB: u64 = 10_000;
pub const THRESHOLD_100KB: u64 = 100_000;
pub const VOLUME_THRESHOLDS: [u64; 3] = [THRESHOLD_1KB, THRESHOLD_10KB, THRESHOLD_100KB];

pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "ul")]
    Uplink,
    #[serde(rename = "dl")]
    Downlink,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketMeta {
    /// Seconds since the first packet of the flow.
    #[serde(rename = "t")]
    pub arrival_time: f64,
    pub size: u32,
    #[serde(rename = "dir")]
    pub direction: Direction,
}

impl PacketMeta {
    pub fn new(arrival_time: f64, size: u32, direction: Direction) -> Self {
        Self {
            arrival_time,
            size,
            direction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FlowKey {
    pub src_addr: Ipv4Addr,
    pub dst_addr: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
}

/// One network flow. Volume and duration are derived from the packets at
/// construction and cannot drift from them.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    flow_id: u64,
    key: FlowKey,
    packets: Vec<PacketMeta>,
    total_volume: u64,
    duration: f64,
    service_class: u8,
}

impl FlowRecord {
    pub fn new(
        flow_id: u64,
        key: FlowKey,
        packets: Vec<PacketMeta>,
        service_class: u8,
    ) -> Result<Self> {
        let first = packets
            .first()
            .ok_or_else(|| Error::invariant("packets", "flow has no packets"))?;
        if first.arrival_time != 0.0 {
            return Err(Error::invariant(
                "packets[0].t",
                format!("first packet must arrive at 0, got {}", first.arrival_time),
            ));
        }
        let mut prev = 0.0;
        for (i, p) in packets.iter().enumerate() {
            if !p.arrival_time.is_finite() || p.arrival_time < prev {
                return Err(Error::invariant(
                    format!("packets[{i}].t"),
                    "arrival times must be finite and nondecreasing",
                ));
            }
            if p.size == 0 {
                return Err(Error::invariant(
                    format!("packets[{i}].size"),
                    "packet size must be at least 1 byte",
                ));
            }
            prev = p.arrival_time;
        }
        let total_volume = packets.iter().map(|p| p.size as u64).sum();
        Ok(Self {
            flow_id,
            key,
            total_volume,
            duration: prev,
            packets,
            service_class,
        })
    }

    pub fn flow_id(&self) -> u64 {
        self.flow_id
    }

    pub fn key(&self) -> &FlowKey {
        &self.key
    }

    pub fn packets(&self) -> &[PacketMeta] {
        &self.packets
    }

    pub fn first_packet(&self) -> &PacketMeta {
        &self.packets[0]
    }

    pub fn total_volume(&self) -> u64 {
        self.total_volume
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Generator-side tag. Feature extractors never see it.
    pub fn service_class(&self) -> u8 {
        self.service_class
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeLabel {
    pub exceeds_1kb: bool,
    pub exceeds_10kb: bool,
    pub exceeds_100kb: bool,
}

impl VolumeLabel {
    pub fn from_volume(total_volume: u64) -> Self {
        Self {
            exceeds_1kb: total_volume > THRESHOLD_1KB,
            exceeds_10kb: total_volume > THRESHOLD_10KB,
            exceeds_100kb: total_volume > THRESHOLD_100KB,
        }
    }

    /// Label for one of the three thresholds.
    pub fn exceeds(&self, threshold: u64) -> Result<bool> {
        match threshold {
            THRESHOLD_1KB => Ok(self.exceeds_1kb),
            THRESHOLD_10KB => Ok(self.exceeds_10kb),
            THRESHOLD_100KB => Ok(self.exceeds_100kb),
            other => Err(Error::UnknownThreshold(other)),
        }
    }
}

pub fn label_flow(flow: &FlowRecord) -> VolumeLabel {
    VolumeLabel::from_volume(flow.total_volume())
}

/// Human label for a threshold, as used in file names ("1kB", "10kB", "100kB").
pub fn threshold_name(threshold: u64) -> String {
    format!("{}kB", threshold / 1000)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn key() -> FlowKey {
        FlowKey {
            src_addr: Ipv4Addr::new(10, 0, 0, 1),
            dst_addr: Ipv4Addr::new(93, 184, 216, 34),
            src_port: 50000,
            dst_port: 443,
            protocol: PROTO_TCP,
        }
    }

    fn flow_with_volume(volume: u32) -> FlowRecord {
        FlowRecord::new(
            1,
            key(),
            vec![PacketMeta::new(0.0, volume, Direction::Uplink)],
            0,
        )
        .unwrap()
    }

    #[test]
    fn labels_at_examples() {
        let l = label_flow(&flow_with_volume(500));
        assert_eq!(
            (l.exceeds_1kb, l.exceeds_10kb, l.exceeds_100kb),
            (false, false, false)
        );
        let l = label_flow(&flow_with_volume(10_000));
        assert_eq!(
            (l.exceeds_1kb, l.exceeds_10kb, l.exceeds_100kb),
            (true, false, false)
        );
        let l = label_flow(&flow_with_volume(250_000));
        assert_eq!(
            (l.exceeds_1kb, l.exceeds_10kb, l.exceeds_100kb),
            (true, true, true)
        );
    }

    #[test]
    fn derived_fields() {
        let f = FlowRecord::new(
            3,
            key(),
            vec![
                PacketMeta::new(0.0, 100, Direction::Uplink),
                PacketMeta::new(0.5, 1400, Direction::Downlink),
                PacketMeta::new(0.5, 60, Direction::Uplink),
            ],
            2,
        )
        .unwrap();
        assert_eq!(f.total_volume(), 1560);
        assert_eq!(f.duration(), 0.5);
    }

    #[test]
    fn rejects_bad_packets() {
        assert!(FlowRecord::new(1, key(), vec![], 0).is_err());
        let late_start = vec![PacketMeta::new(0.1, 10, Direction::Uplink)];
        assert!(FlowRecord::new(1, key(), late_start, 0).is_err());
        let backwards = vec![
            PacketMeta::new(0.0, 10, Direction::Uplink),
            PacketMeta::new(2.0, 10, Direction::Uplink),
            PacketMeta::new(1.0, 10, Direction::Uplink),
        ];
        match FlowRecord::new(1, key(), backwards, 0) {
            Err(Error::Invariant { field, .. }) => assert_eq!(field, "packets[2].t"),
            other => panic!("unexpected {other:?}"),
        }
        let empty = vec![PacketMeta::new(0.0, 0, Direction::Uplink)];
        assert!(FlowRecord::new(1, key(), empty, 0).is_err());
    }

    #[test]
    fn unknown_threshold() {
        let l = VolumeLabel::from_volume(7000);
        assert!(matches!(
            l.exceeds(5000),
            Err(Error::UnknownThreshold(5000))
        ));
        assert!(l.exceeds(THRESHOLD_1KB).unwrap());
    }

    proptest! {
        #[test]
        fn labels_are_monotone(volume in 0u64..10_000_000) {
            let l = VolumeLabel::from_volume(volume);
            prop_assert!(!l.exceeds_100kb || l.exceeds_10kb);
            prop_assert!(!l.exceeds_10kb || l.exceeds_1kb);
        }

        #[test]
        fn label_depends_only_on_volume(volume in 1u32..1_000_000, port in 0u16..u16::MAX, class in 0u8..8) {
            let mut k = key();
            k.dst_port = port;
            let f = FlowRecord::new(9, k, vec![PacketMeta::new(0.0, volume, Direction::Downlink)], class).unwrap();
            prop_assert_eq!(label_flow(&f), VolumeLabel::from_volume(volume as u64));
        }
    }
}
