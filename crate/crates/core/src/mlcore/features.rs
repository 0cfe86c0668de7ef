//! Feature extraction. The flow encoder sees only the five-tuple and the
//! first packet; the radio encoder sees only primary-carrier RSRP.
//!
//! Flow schema (54 values, in order):
//!
//! | index  | feature                                          |
//! |--------|--------------------------------------------------|
//! | 0      | source port                                      |
//! | 1      | destination port                                 |
//! | 2..18  | destination port equals the i-th frequent port   |
//! | 18     | destination port < 1024                          |
//! | 19     | IP protocol number                               |
//! | 20..28 | source /16 prefix, hashed one-hot                |
//! | 28..36 | source /24 prefix, hashed one-hot                |
//! | 36..44 | destination /16 prefix, hashed one-hot           |
//! | 44..52 | destination /24 prefix, hashed one-hot           |
//! | 52     | first packet size in bytes                       |
//! | 53     | first packet is uplink                           |
//!
//! Radio schema for `m` primary cells (2m + 1 values): RSRP sorted
//! descending, strongest minus second strongest (0 for one cell), one-hot
//! index of the strongest cell.

use std::collections::HashMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::FeatureVector;
use crate::flowdata::{Direction, FlowKey, PacketMeta};
use crate::radioenv::{strongest, RadioSample};
use crate::rng::mix64;

pub const FLOW_SCHEMA_ID: u32 = 1;
pub const RADIO_SCHEMA_BASE: u32 = 1000;

pub const TOP_PORTS: usize = 16;
pub const PREFIX_BUCKETS: usize = 8;
pub const FLOW_FEATURES: usize = 2 + TOP_PORTS + 2 + 4 * PREFIX_BUCKETS + 2;

const SALT_SRC16: u64 = 0x5231_0016;
const SALT_SRC24: u64 = 0x5231_0024;
const SALT_DST16: u64 = 0xd571_0016;
const SALT_DST24: u64 = 0xd571_0024;

/// Flow feature encoder. The frequent-port list is the only state learned
/// from training data.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlowEncoder {
    pub top_ports: Vec<u16>,
}

impl FlowEncoder {
    /// The 16 most frequent destination ports, ties broken by lower port.
    pub fn fit<'a>(keys: impl IntoIterator<Item = &'a FlowKey>) -> Self {
        let mut counts: HashMap<u16, usize> = HashMap::new();
        for k in keys {
            *counts.entry(k.dst_port).or_default() += 1;
        }
        let mut ranked: Vec<(u16, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        Self {
            top_ports: ranked.into_iter().take(TOP_PORTS).map(|(p, _)| p).collect(),
        }
    }

    pub fn encode(&self, key: &FlowKey, first_packet: &PacketMeta) -> FeatureVector {
        encode_flow_features(self, key, first_packet)
    }
}

fn prefix_bucket(addr: Ipv4Addr, bits: u32, salt: u64) -> usize {
    let prefix = u32::from(addr) >> (32 - bits);
    (mix64(prefix as u64 ^ salt) % PREFIX_BUCKETS as u64) as usize
}

fn one_hot(out: &mut Vec<f64>, hot: usize, width: usize) {
    out.extend((0..width).map(|i| if i == hot { 1.0 } else { 0.0 }));
}

pub fn encode_flow_features(
    encoder: &FlowEncoder,
    key: &FlowKey,
    first_packet: &PacketMeta,
) -> FeatureVector {
    let mut v = Vec::with_capacity(FLOW_FEATURES);
    v.push(key.src_port as f64);
    v.push(key.dst_port as f64);
    for slot in 0..TOP_PORTS {
        let hit = encoder.top_ports.get(slot) == Some(&key.dst_port);
        v.push(if hit { 1.0 } else { 0.0 });
    }
    v.push(if key.dst_port < 1024 { 1.0 } else { 0.0 });
    v.push(key.protocol as f64);
    one_hot(
        &mut v,
        prefix_bucket(key.src_addr, 16, SALT_SRC16),
        PREFIX_BUCKETS,
    );
    one_hot(
        &mut v,
        prefix_bucket(key.src_addr, 24, SALT_SRC24),
        PREFIX_BUCKETS,
    );
    one_hot(
        &mut v,
        prefix_bucket(key.dst_addr, 16, SALT_DST16),
        PREFIX_BUCKETS,
    );
    one_hot(
        &mut v,
        prefix_bucket(key.dst_addr, 24, SALT_DST24),
        PREFIX_BUCKETS,
    );
    v.push(first_packet.size as f64);
    v.push(if first_packet.direction == Direction::Uplink {
        1.0
    } else {
        0.0
    });
    debug_assert_eq!(v.len(), FLOW_FEATURES);
    FeatureVector {
        values: v,
        schema_id: FLOW_SCHEMA_ID,
    }
}

pub fn radio_schema_id(n_cells: usize) -> u32 {
    RADIO_SCHEMA_BASE + n_cells as u32
}

pub fn encode_radio_features(sample: &RadioSample) -> FeatureVector {
    encode_primary_rsrp(&sample.primary_rsrp)
}

/// Radio features from the primary-carrier RSRP vector alone.
pub fn encode_primary_rsrp(primary_rsrp: &[f64]) -> FeatureVector {
    let m = primary_rsrp.len();
    let mut sorted = primary_rsrp.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let margin = if m >= 2 { sorted[0] - sorted[1] } else { 0.0 };
    let mut v = sorted;
    v.push(margin);
    one_hot(&mut v, strongest(primary_rsrp), m);
    FeatureVector {
        values: v,
        schema_id: radio_schema_id(m),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowdata::PROTO_TCP;

    fn key(dst_port: u16) -> FlowKey {
        FlowKey {
            src_addr: Ipv4Addr::new(10, 3, 4, 5),
            dst_addr: Ipv4Addr::new(151, 101, 7, 9),
            src_port: 40000,
            dst_port,
            protocol: PROTO_TCP,
        }
    }

    fn first() -> PacketMeta {
        PacketMeta::new(0.0, 517, Direction::Uplink)
    }

    #[test]
    fn flow_vector_length_and_purity() {
        let enc = FlowEncoder::fit([key(443), key(443), key(80)].iter());
        assert_eq!(enc.top_ports, vec![443, 80]);
        let a = enc.encode(&key(443), &first());
        let b = enc.encode(&key(443), &first());
        assert_eq!(a, b);
        assert_eq!(a.len(), FLOW_FEATURES);
        assert_eq!(FLOW_FEATURES, 54);
    }

    #[test]
    fn port_buckets_differ() {
        let enc = FlowEncoder::fit([key(443)].iter());
        let a = enc.encode(&key(443), &first());
        let b = enc.encode(&key(51000), &first());
        assert_eq!(a.values[1], 443.0);
        assert_eq!(b.values[1], 51000.0);
        assert_eq!(a.values[2], 1.0);
        assert_eq!(b.values[2], 0.0);
        assert_eq!(a.values[18], 1.0);
        assert_eq!(b.values[18], 0.0);
    }

    #[test]
    fn prefix_one_hots_have_single_bit() {
        let enc = FlowEncoder::default();
        let v = enc.encode(&key(443), &first()).values;
        for group in 0..4 {
            let start = 20 + group * PREFIX_BUCKETS;
            let ones = v[start..start + PREFIX_BUCKETS]
                .iter()
                .filter(|&&x| x == 1.0)
                .count();
            assert_eq!(ones, 1);
        }
    }

    #[test]
    fn single_cell_radio_vector() {
        let v = encode_primary_rsrp(&[-90.0]);
        assert_eq!(v.values, vec![-90.0, 0.0, 1.0]);
    }

    #[test]
    fn radio_sorted_part_is_permutation_invariant() {
        let a = encode_primary_rsrp(&[-100.0, -80.0, -95.0]);
        let b = encode_primary_rsrp(&[-95.0, -100.0, -80.0]);
        assert_eq!(a.values[..4], b.values[..4]);
        assert_eq!(a.values[..3], [-80.0, -95.0, -100.0]);
        assert_eq!(a.values[3], 15.0);
        assert_eq!(a.values[4..], [0.0, 1.0, 0.0]);
        assert_eq!(b.values[4..], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn radio_features_ignore_secondary_and_position() {
        let base = RadioSample {
            device_id: 1,
            position: [1.0, 2.0],
            primary_rsrp: vec![-90.0, -100.0],
            secondary_rsrp: -110.0,
            covered: false,
        };
        let other = RadioSample {
            device_id: 2,
            position: [900.0, 20.0],
            secondary_rsrp: -60.0,
            covered: true,
            ..base.clone()
        };
        assert_eq!(encode_radio_features(&base), encode_radio_features(&other));
    }
}
