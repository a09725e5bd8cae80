//! KITTI-style calibration text: `P<cam>:` (3×4 projection) and `Tr:`
//! (3×4 LiDAR→camera). An optional `S<cam>: W H` line carries the image size.

use std::collections::HashMap;
use std::path::Path;

use super::{read_text, write_atomic};
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::projection::{CalibrationRig, ImageSize};
use crate::scalar::Scalar;

fn floats(context: &str, lineno: usize, key: &str, body: &str, want: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = body
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(context, lineno, format!("{key}: invalid number {t:?}")))
        })
        .collect::<Result<_>>()?;
    if vals.len() != want {
        return Err(Error::parse(
            context,
            lineno,
            format!("{key}: expected {want} values, found {}", vals.len()),
        ));
    }
    Ok(vals)
}

/// Parses calibration text for camera `camera` (2 for the left color camera).
///
/// The image size comes from the `S<cam>:` line if present, otherwise from
/// `fallback_size`.
pub fn decode_calib<T: Scalar>(
    text: &str,
    camera: u8,
    fallback_size: Option<ImageSize>,
    context: &str,
) -> Result<CalibrationRig<T>> {
    let mut lines: HashMap<&str, (usize, &str)> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if let Some((key, body)) = line.split_once(':') {
            lines.insert(key.trim(), (i + 1, body));
        }
    }
    let p_key = format!("P{camera}");
    let s_key = format!("S{camera}");
    let get = |key: &str| {
        lines
            .get(key)
            .copied()
            .ok_or_else(|| Error::parse(context, 0, format!("missing \"{key}:\" line")))
    };
    let (pl, pb) = get(&p_key)?;
    let p = floats(context, pl, &p_key, pb, 12)?;
    let (tl, tb) = get("Tr")?;
    let tr = floats(context, tl, "Tr", tb, 12)?;
    let size = match lines.get(s_key.as_str()) {
        Some(&(sl, sb)) => {
            let s = floats(context, sl, &s_key, sb, 2)?;
            if s.iter().any(|v| *v < 1.0 || v.fract() != 0.0 || *v > u32::MAX as f64) {
                return Err(Error::parse(context, sl, format!("{s_key}: image size must be positive integers")));
            }
            ImageSize::new(s[0] as u32, s[1] as u32)
        }
        None => fallback_size.ok_or_else(|| Error::parse(context, 0, format!("missing \"{s_key}:\" image size")))?,
    };
    let projection: [[T; 4]; 3] = std::array::from_fn(|r| std::array::from_fn(|c| T::lit(p[r * 4 + c])));
    let rotation: [[T; 3]; 3] = std::array::from_fn(|r| std::array::from_fn(|c| T::lit(tr[r * 4 + c])));
    let translation: [T; 3] = std::array::from_fn(|r| T::lit(tr[r * 4 + 3]));
    let extrinsic = RigidTransform::new(rotation, translation)
        .map_err(|e| Error::parse(context, tl, format!("Tr: {e}")))?;
    CalibrationRig::new(projection, extrinsic, size).map_err(|e| Error::parse(context, 0, e.to_string()))
}

pub fn read_calib<T: Scalar>(path: &Path, camera: u8, fallback_size: Option<ImageSize>) -> Result<CalibrationRig<T>> {
    decode_calib(&read_text(path)?, camera, fallback_size, &path.display().to_string())
}

pub fn encode_calib<T: Scalar>(rig: &CalibrationRig<T>, camera: u8) -> String {
    let fmt = |v: T| format!("{:e}", v.as_f64());
    let p: Vec<String> = rig.projection().iter().flatten().map(|&v| fmt(v)).collect();
    let h = rig.extrinsic().to_homogeneous();
    let tr: Vec<String> = h[..3].iter().flatten().map(|&v| fmt(v)).collect();
    format!(
        "P{camera}: {}\nTr: {}\nS{camera}: {} {}\n",
        p.join(" "),
        tr.join(" "),
        rig.size().width,
        rig.size().height
    )
}

pub fn write_calib<T: Scalar>(rig: &CalibrationRig<T>, camera: u8, path: &Path) -> Result<()> {
    write_atomic(path, encode_calib(rig, camera).as_bytes())
}
