use std::path::Path;

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};
use crate::scalar::Scalar;

/// Four little-endian `f32`: x, y, z, intensity.
pub const CLOUD_RECORD_BYTES: usize = 16;

pub fn decode_cloud<T: Scalar>(bytes: &[u8], origin: &Path) -> Result<PointCloud<T>> {
    if !bytes.len().is_multiple_of(CLOUD_RECORD_BYTES) {
        return Err(Error::Length {
            path: origin.to_path_buf(),
            len: bytes.len() as u64,
            record: CLOUD_RECORD_BYTES as u64,
        });
    }
    let points = bytes
        .chunks_exact(CLOUD_RECORD_BYTES)
        .map(|rec| {
            let f = |i: usize| {
                let v = f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap());
                T::from_f32(v).unwrap_or_else(T::nan)
            };
            Point::new(f(0), f(1), f(2), f(3))
        })
        .collect();
    PointCloud::new(points)
}

pub fn encode_cloud<T: Scalar>(cloud: &PointCloud<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * CLOUD_RECORD_BYTES);
    for p in cloud.iter() {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    out
}

pub fn read_cloud_bin<T: Scalar>(path: &Path) -> Result<PointCloud<T>> {
    decode_cloud(&read_bytes(path)?, path)
}

pub fn write_cloud_bin<T: Scalar>(cloud: &PointCloud<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_cloud(cloud))
}
