//! Checkpoint container.
//!
//! ```text
//! gen3d-checkpoint
//! version 1
//! segments <count>
//! <name> <offset> <length>        (one line per segment, offsets in elements)
//! data f32le <total>
//! <total * 4 bytes, little-endian IEEE-754 binary32>
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::params::{ParameterLayout, ParameterStore};
use crate::error::{Error, Result};

const MAGIC: &str = "gen3d-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(store: &ParameterStore<f32>) -> Vec<u8> {
    let layout = store.layout();
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("version {FORMAT_VERSION}\n"));
    out.push_str(&format!("segments {}\n", layout.num_segments()));
    for (_, name, offset, len) in layout.iter() {
        out.push_str(&format!("{name} {offset} {len}\n"));
    }
    out.push_str(&format!("data f32le {}\n", layout.total_len()));
    let mut bytes = out.into_bytes();
    bytes.reserve(store.len() * 4);
    for v in store.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub fn decode<R: Read>(reader: R) -> Result<ParameterStore<f32>> {
    let mut reader = BufReader::new(reader);
    let mut line = String::new();
    let mut next_line = |reader: &mut BufReader<R>| -> Result<String> {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| Error::Parse(format!("checkpoint header: {e}")))?;
        if n == 0 {
            return Err(Error::Parse("checkpoint header truncated".into()));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };
    let bad = |what: &str, got: &str| Error::Parse(format!("checkpoint: expected {what}, got `{got}`"));

    let magic = next_line(&mut reader)?;
    if magic != MAGIC {
        return Err(bad(MAGIC, &magic));
    }
    let version = next_line(&mut reader)?;
    match version.strip_prefix("version ").map(str::parse::<u32>) {
        Some(Ok(FORMAT_VERSION)) => {}
        _ => return Err(bad("`version 1`", &version)),
    }
    let seg_line = next_line(&mut reader)?;
    let count: usize = seg_line
        .strip_prefix("segments ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("`segments <n>`", &seg_line))?;

    let mut layout = ParameterLayout::new();
    for _ in 0..count {
        let l = next_line(&mut reader)?;
        let parts: Vec<&str> = l.split(' ').collect();
        let [name, offset, len] = parts[..] else {
            return Err(bad("`<name> <offset> <length>`", &l));
        };
        let offset: usize = offset.parse().map_err(|_| bad("offset", offset))?;
        let len: usize = len.parse().map_err(|_| bad("length", len))?;
        if offset != layout.total_len() {
            return Err(Error::Parse(format!(
                "checkpoint: segment `{name}` offset {offset} is not contiguous"
            )));
        }
        layout.push(name, len)?;
    }
    let data_line = next_line(&mut reader)?;
    let total: usize = data_line
        .strip_prefix("data f32le ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("`data f32le <n>`", &data_line))?;
    if total != layout.total_len() {
        return Err(Error::Parse(format!(
            "checkpoint: data length {total} disagrees with segment table {}",
            layout.total_len()
        )));
    }
    let mut raw = Vec::with_capacity(total * 4);
    reader
        .read_to_end(&mut raw)
        .map_err(|e| Error::Parse(format!("checkpoint data: {e}")))?;
    if raw.len() != total * 4 {
        return Err(Error::Parse(format!(
            "checkpoint: expected {} data bytes, found {}",
            total * 4,
            raw.len()
        )));
    }
    let values = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    ParameterStore::from_values(Arc::new(layout), values)
}

pub fn save(store: &ParameterStore<f32>, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(store)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParameterStore<f32>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    decode(f)
}
