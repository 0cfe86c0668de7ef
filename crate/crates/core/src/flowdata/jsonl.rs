use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FlowKey, FlowRecord, PacketMeta};
use crate::error::{Error, Result};

/// On-disk flow corpus formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlowFormat {
    /// One JSON object per line.
    #[default]
    Jsonl,
}

#[derive(Serialize, Deserialize)]
struct FlowLine {
    flow_id: u64,
    src_addr: Ipv4Addr,
    dst_addr: Ipv4Addr,
    src_port: u16,
    dst_port: u16,
    protocol: u8,
    service_class: u8,
    packets: Vec<PacketMeta>,
    // Derived fields are never written; if a producer includes them they must agree.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    total_volume: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    duration: Option<f64>,
}

impl From<&FlowRecord> for FlowLine {
    fn from(f: &FlowRecord) -> Self {
        let k = f.key();
        FlowLine {
            flow_id: f.flow_id(),
            src_addr: k.src_addr,
            dst_addr: k.dst_addr,
            src_port: k.src_port,
            dst_port: k.dst_port,
            protocol: k.protocol,
            service_class: f.service_class(),
            packets: f.packets().to_vec(),
            total_volume: None,
            duration: None,
        }
    }
}

impl FlowLine {
    fn into_record(self) -> Result<FlowRecord> {
        let key = FlowKey {
            src_addr: self.src_addr,
            dst_addr: self.dst_addr,
            src_port: self.src_port,
            dst_port: self.dst_port,
            protocol: self.protocol,
        };
        let record = FlowRecord::new(self.flow_id, key, self.packets, self.service_class)?;
        if let Some(v) = self.total_volume {
            if v != record.total_volume() {
                return Err(Error::invariant(
                    "total_volume",
                    format!("stated {v} but packets sum to {}", record.total_volume()),
                ));
            }
        }
        if let Some(d) = self.duration {
            if d != record.duration() {
                return Err(Error::invariant(
                    "duration",
                    format!("stated {d} but last arrival is {}", record.duration()),
                ));
            }
        }
        Ok(record)
    }
}

pub fn flow_to_json(flow: &FlowRecord) -> String {
    serde_json::to_string(&FlowLine::from(flow)).expect("flow line serializes")
}

pub fn read_flows(path: impl AsRef<Path>, format: FlowFormat) -> Result<Vec<FlowRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        FlowFormat::Jsonl => parse_jsonl(BufReader::new(file), path),
    }
}

fn parse_jsonl(reader: impl BufRead, path: &Path) -> Result<Vec<FlowRecord>> {
    let mut flows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let parsed: FlowLine = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: lineno,
            message: e.to_string(),
        })?;
        let record = parsed.into_record().map_err(|e| match e {
            Error::Invariant { field, message } => Error::Invariant {
                field,
                message: format!("line {lineno}: {message}"),
            },
            other => other,
        })?;
        flows.push(record);
    }
    Ok(flows)
}

pub fn write_flows(flows: &[FlowRecord], path: impl AsRef<Path>, format: FlowFormat) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        FlowFormat::Jsonl => {
            for f in flows {
                writeln!(w, "{}", flow_to_json(f)).map_err(|e| Error::io(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
