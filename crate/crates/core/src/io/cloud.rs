use std::path::Path;

use log::warn;

use super::{file_stem, write_atomic};
use crate::error::{Error, Location, Result};
use crate::geometry::{clamp_intensity, Point, PointCloud};

const RECORD: usize = 16;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CloudReadStats {
    /// Records dropped for a non-finite coordinate.
    pub dropped_non_finite: usize,
}

/// Decodes consecutive little-endian `f32` quadruples `(x, y, z, intensity)`.
pub fn decode_cloud(bytes: &[u8], frame_id: &str, path: &Path) -> Result<(PointCloud, CloudReadStats)> {
    if !bytes.len().is_multiple_of(RECORD) {
        let offset = (bytes.len() - bytes.len() % RECORD) as u64;
        return Err(Error::format(
            path,
            Location::Byte(offset),
            format!("{} bytes is not a multiple of {RECORD}; partial record", bytes.len()),
        ));
    }
    let mut stats = CloudReadStats::default();
    let mut points = Vec::with_capacity(bytes.len() / RECORD);
    for rec in bytes.chunks_exact(RECORD) {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
        let p = Point { x: f(0), y: f(1), z: f(2), intensity: clamp_intensity(f(3)) };
        if !p.is_finite() {
            stats.dropped_non_finite += 1;
            continue;
        }
        points.push(p);
    }
    if stats.dropped_non_finite > 0 {
        warn!("{}: dropped {} non-finite points", path.display(), stats.dropped_non_finite);
    }
    Ok((PointCloud::new(frame_id, points), stats))
}

pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * RECORD);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads a KITTI `.bin` scan; the frame id is the file stem.
pub fn read_cloud(path: &Path) -> Result<(PointCloud, CloudReadStats)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cloud(&bytes, &file_stem(path), path)
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_atomic(path, &encode_cloud(cloud))
}
