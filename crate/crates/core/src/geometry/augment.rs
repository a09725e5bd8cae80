//! Seeded training augmentations. Each call takes its own 64-bit seed; there
//! is no global RNG state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cloud::{LabelArray, Point, PointCloud};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_TRANSLATE_RANGE_M: f64 = 0.5;
pub const DEFAULT_SQUEEZE_RANGE: (f64, f64) = (0.9, 1.1);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng, low: f64, high: f64) -> f64 {
    if low == high {
        low
    } else {
        rng.gen_range(low..=high)
    }
}

/// Offset drawn for [`translate_jitter`], exposed for inspection.
pub fn jitter_offset(seed: u64, range_m: f64) -> [f64; 3] {
    if range_m == 0.0 {
        return [0.0; 3];
    }
    let mut r = rng(seed);
    [
        uniform(&mut r, -range_m, range_m),
        uniform(&mut r, -range_m, range_m),
        uniform(&mut r, -range_m, range_m),
    ]
}

/// Shifts the whole cloud by one seeded offset, each axis in `[−range, range]`.
pub fn translate_jitter<T: Scalar>(cloud: &PointCloud<T>, seed: u64, range_m: f64) -> Result<PointCloud<T>> {
    if !(range_m >= 0.0) || !range_m.is_finite() {
        return Err(Error::Config(format!("translation range {range_m} must be finite and >= 0")));
    }
    if range_m == 0.0 {
        return Ok(cloud.clone());
    }
    let [dx, dy, dz] = jitter_offset(seed, range_m).map(T::lit);
    Ok(cloud.map_points(|p| Point::new(p.x + dx, p.y + dy, p.z + dz, p.intensity)))
}

/// Factor drawn for [`squeeze`].
pub fn squeeze_factor(seed: u64, range: (f64, f64)) -> Result<f64> {
    let (low, high) = range;
    if !(low > 0.0 && low <= high && high.is_finite()) {
        return Err(Error::Config(format!("squeeze range [{low}, {high}] must satisfy 0 < low <= high")));
    }
    Ok(uniform(&mut rng(seed), low, high))
}

/// Scales x and y by one seeded factor; z is untouched.
pub fn squeeze<T: Scalar>(cloud: &PointCloud<T>, seed: u64, range: (f64, f64)) -> Result<PointCloud<T>> {
    let factor = squeeze_factor(seed, range)?;
    Ok(squeeze_by(cloud, T::lit(factor)))
}

pub fn squeeze_by<T: Scalar>(cloud: &PointCloud<T>, factor: T) -> PointCloud<T> {
    if factor == T::one() {
        return cloud.clone();
    }
    cloud.map_points(|p| Point {
        x: p.x * factor,
        y: p.y * factor,
        ..*p
    })
}

/// Azimuth sector `[start, start + width)`, wrapping at 2π.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub start: f64,
    pub width: f64,
}

impl Sector {
    pub fn contains<T: Scalar>(&self, p: &Point<T>) -> bool {
        let tau = std::f64::consts::TAU;
        let mut rel = p.azimuth().as_f64() - self.start;
        if rel < 0.0 {
            rel += tau;
        }
        if rel >= tau {
            rel -= tau;
        }
        rel < self.width
    }
}

/// Range of sector widths drawn by [`sector_mix`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorWidthRange {
    pub min: f64,
    pub max: f64,
}

impl Default for SectorWidthRange {
    fn default() -> Self {
        Self {
            min: std::f64::consts::FRAC_PI_2,
            max: std::f64::consts::PI,
        }
    }
}

pub fn draw_sector(seed: u64, widths: SectorWidthRange) -> Result<Sector> {
    if !(widths.min > 0.0 && widths.min <= widths.max && widths.max <= std::f64::consts::TAU) {
        return Err(Error::Config(format!(
            "sector widths [{}, {}] must satisfy 0 < min <= max <= 2π",
            widths.min, widths.max
        )));
    }
    let mut r = rng(seed);
    let start = r.gen_range(0.0..std::f64::consts::TAU);
    let width = uniform(&mut r, widths.min, widths.max);
    Ok(Sector { start, width })
}

/// A cloud together with its per-point labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud<T> {
    pub cloud: PointCloud<T>,
    pub labels: LabelArray,
}

impl<T: Scalar> LabeledCloud<T> {
    pub fn new(cloud: PointCloud<T>, labels: LabelArray) -> Result<Self> {
        if cloud.len() != labels.len() {
            return Err(Error::SizeMismatch {
                expected: cloud.len(),
                found: labels.len(),
            });
        }
        Ok(Self { cloud, labels })
    }
}

/// Swaps the points inside `sector` between the two clouds.
///
/// Output `a` holds a's points outside the sector (original order) followed
/// by b's points inside it; output `b` is the mirror image.
pub fn sector_swap<T: Scalar>(
    a: &LabeledCloud<T>,
    b: &LabeledCloud<T>,
    sector: Sector,
) -> (LabeledCloud<T>, LabeledCloud<T>) {
    let split = |lc: &LabeledCloud<T>| {
        let mut outside = (Vec::new(), Vec::new());
        let mut inside = (Vec::new(), Vec::new());
        for (p, &l) in lc.cloud.iter().zip(lc.labels.iter()) {
            let dst = if sector.contains(p) { &mut inside } else { &mut outside };
            dst.0.push(*p);
            dst.1.push(l);
        }
        (outside, inside)
    };
    let (mut a_out, a_in) = split(a);
    let (mut b_out, b_in) = split(b);
    a_out.0.extend(b_in.0);
    a_out.1.extend(b_in.1);
    b_out.0.extend(a_in.0);
    b_out.1.extend(a_in.1);
    let build = |(pts, labels): (Vec<Point<T>>, Vec<_>)| LabeledCloud {
        cloud: PointCloud::from_points_unchecked(pts),
        labels: LabelArray::new(labels),
    };
    (build(a_out), build(b_out))
}

/// CutMix-style azimuth sector exchange with a seeded sector.
pub fn sector_mix<T: Scalar>(
    a: &LabeledCloud<T>,
    b: &LabeledCloud<T>,
    seed: u64,
    widths: SectorWidthRange,
) -> Result<(LabeledCloud<T>, LabeledCloud<T>)> {
    let sector = draw_sector(seed, widths)?;
    Ok(sector_swap(a, b, sector))
}
