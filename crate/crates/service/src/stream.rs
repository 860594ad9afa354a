//! `PTS1` point stream: a 16-byte header (magic, `u32` count, `u64` revision)
//! followed by `count` packed 19-byte records of `f32` x, y, z, `u8` r, g, b
//! and `i32` instance id. All integers and floats are little-endian.

use pointlift_core::ScenePointCloud;

pub const MAGIC: [u8; 4] = *b"PTS1";
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 19;

/// Indices to send: alive filter, then every `ceil(n / max_points)`-th point.
pub fn select(cloud: &ScenePointCloud, only_alive: bool, max_points: Option<usize>) -> Vec<usize> {
    let all: Vec<usize> = (0..cloud.len()).filter(|&i| !only_alive || cloud.alive[i]).collect();
    match max_points {
        Some(m) if m > 0 && all.len() > m => {
            let stride = all.len().div_ceil(m);
            all.into_iter().step_by(stride).collect()
        }
        _ => all,
    }
}

pub fn header(count: usize, revision: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(count as u32).to_le_bytes());
    out.extend_from_slice(&revision.to_le_bytes());
    out
}

pub fn encode_records(cloud: &ScenePointCloud, indices: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(indices.len() * RECORD_LEN);
    for &i in indices {
        let p = &cloud.positions[i];
        for c in [p.x, p.y, p.z] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        out.extend_from_slice(&cloud.colors[i]);
        out.extend_from_slice(&cloud.instance_id[i].to_le_bytes());
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamRecord {
    pub position: [f32; 3],
    pub color: [u8; 3],
    pub instance: i32,
}

/// Parses a complete stream; returns the revision and the records.
pub fn decode(bytes: &[u8]) -> Result<(u64, Vec<StreamRecord>), String> {
    if bytes.len() < HEADER_LEN || bytes[..4] != MAGIC {
        return Err("not a PTS1 stream".into());
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let revision = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    if body.len() != count * RECORD_LEN {
        return Err(format!("expected {count} records, got {} bytes", body.len()));
    }
    let f = |b: &[u8]| f32::from_le_bytes(b.try_into().unwrap());
    let records = body
        .chunks_exact(RECORD_LEN)
        .map(|r| StreamRecord {
            position: [f(&r[0..4]), f(&r[4..8]), f(&r[8..12])],
            color: [r[12], r[13], r[14]],
            instance: i32::from_le_bytes(r[15..19].try_into().unwrap()),
        })
        .collect();
    Ok((revision, records))
}
