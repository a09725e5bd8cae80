//! Camera model: project LiDAR points into the image, decide which points
//! the camera sees, and lift per-pixel class probabilities onto points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PerPointProbs, PointCloud, RigidTransform};
use crate::io::TensorFile;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }
}

/// Intrinsics `P` (3×4, pixels), extrinsics `T` (sensor → camera) and the
/// image raster size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationRig<T> {
    projection: [[T; 4]; 3],
    extrinsic: RigidTransform<T>,
    size: ImageSize,
}

impl<T: Scalar> CalibrationRig<T> {
    pub fn new(projection: [[T; 4]; 3], extrinsic: RigidTransform<T>, size: ImageSize) -> Result<Self> {
        if size.width == 0 || size.height == 0 {
            return Err(Error::DimMismatch(format!(
                "image size {}x{} must be positive",
                size.width, size.height
            )));
        }
        if projection.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite projection matrix".into()));
        }
        Ok(Self {
            projection,
            extrinsic,
            size,
        })
    }

    /// Pinhole `P = [[f,0,cx,0],[0,f,cy,0],[0,0,1,0]]`.
    pub fn pinhole(focal: T, cx: T, cy: T, extrinsic: RigidTransform<T>, size: ImageSize) -> Result<Self> {
        let (o, z) = (T::one(), T::zero());
        Self::new([[focal, z, cx, z], [z, focal, cy, z], [z, z, o, z]], extrinsic, size)
    }

    pub fn projection(&self) -> &[[T; 4]; 3] {
        &self.projection
    }

    pub fn extrinsic(&self) -> &RigidTransform<T> {
        &self.extrinsic
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    pub fn with_size(mut self, size: ImageSize) -> Result<Self> {
        if size.width == 0 || size.height == 0 {
            return Err(Error::DimMismatch("image size must be positive".into()));
        }
        self.size = size;
        Ok(self)
    }

    /// Projects one sensor-frame point.
    #[inline]
    pub fn project(&self, p: [T; 3]) -> PixelProjection<T> {
        let cam = self.extrinsic.apply(p);
        let row = |r: usize| {
            let m = &self.projection[r];
            m[0] * cam[0] + m[1] * cam[1] + m[2] * cam[2] + m[3]
        };
        let (x, y, w) = (row(0), row(1), row(2));
        let depth = cam[2];
        let valid = depth > T::zero() && w > T::zero();
        PixelProjection {
            u: x / w,
            v: y / w,
            depth,
            valid,
        }
    }

    /// Half-open raster test `[0,W)×[0,H)` on a valid projection.
    #[inline]
    pub fn in_image(&self, p: &PixelProjection<T>) -> bool {
        let w = T::from_u32(self.size.width).unwrap();
        let h = T::from_u32(self.size.height).unwrap();
        p.valid && p.u >= T::zero() && p.u < w && p.v >= T::zero() && p.v < h
    }
}

/// Pixel coordinates and camera-frame depth; `valid` is false for points
/// at or behind the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelProjection<T> {
    pub u: T,
    pub v: T,
    pub depth: T,
    pub valid: bool,
}

pub fn project_points<T: Scalar>(cloud: &PointCloud<T>, rig: &CalibrationRig<T>) -> Vec<PixelProjection<T>> {
    cloud.iter().map(|p| rig.project(p.xyz())).collect()
}

/// Per-point visibility in one camera plus the positions of visible points.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FovMask {
    mask: Vec<bool>,
    index_map: Vec<usize>,
}

impl FovMask {
    pub fn from_bools(mask: Vec<bool>) -> Self {
        let index_map = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
        Self { mask, index_map }
    }

    pub fn all(n: usize, value: bool) -> Self {
        Self::from_bools(vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn count(&self) -> usize {
        self.index_map.len()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, i: usize) -> bool {
        self.mask[i]
    }

    /// Strictly increasing positions of the `true` entries.
    pub fn index_map(&self) -> &[usize] {
        &self.index_map
    }

    /// Writes `sliced[j]` back to position `index_map[j]` of `full`.
    pub fn scatter<V: Clone>(&self, sliced: &[V], full: &mut [V]) -> Result<()> {
        if sliced.len() != self.count() {
            return Err(Error::SizeMismatch {
                expected: self.count(),
                found: sliced.len(),
            });
        }
        if full.len() != self.len() {
            return Err(Error::SizeMismatch {
                expected: self.len(),
                found: full.len(),
            });
        }
        for (&i, v) in self.index_map.iter().zip(sliced) {
            full[i] = v.clone();
        }
        Ok(())
    }

    /// Gathers the values at the visible positions.
    pub fn gather<V: Clone>(&self, full: &[V]) -> Result<Vec<V>> {
        if full.len() != self.len() {
            return Err(Error::SizeMismatch {
                expected: self.len(),
                found: full.len(),
            });
        }
        Ok(self.index_map.iter().map(|&i| full[i].clone()).collect())
    }

    /// 1-D `u8` PTNS tensor of 0/1 values.
    pub fn to_tensor(&self) -> TensorFile {
        TensorFile::u8(vec![self.len() as u32], self.mask.iter().map(|&m| m as u8).collect())
            .expect("dims match payload")
    }

    pub fn from_tensor(t: &TensorFile) -> Result<Self> {
        let [_n] = t.shape::<1>()?;
        let bytes = t.as_u8()?;
        if let Some(bad) = bytes.iter().find(|&&b| b > 1) {
            return Err(Error::DimMismatch(format!("mask value {bad} is not 0/1")));
        }
        Ok(Self::from_bools(bytes.iter().map(|&b| b == 1).collect()))
    }

    /// Pointwise union of masks of equal length.
    pub fn union(masks: &[FovMask]) -> Result<Self> {
        let n = masks.first().map_or(0, FovMask::len);
        if let Some(m) = masks.iter().find(|m| m.len() != n) {
            return Err(Error::SizeMismatch {
                expected: n,
                found: m.len(),
            });
        }
        Ok(Self::from_bools((0..n).map(|i| masks.iter().any(|m| m.get(i))).collect()))
    }
}

/// `true` iff depth > 0 and the projection falls inside `[0,W)×[0,H)`.
pub fn fov_mask<T: Scalar>(cloud: &PointCloud<T>, rig: &CalibrationRig<T>) -> FovMask {
    FovMask::from_bools(cloud.iter().map(|p| rig.in_image(&rig.project(p.xyz()))).collect())
}

/// Keeps the masked points in original order.
pub fn slice_cloud<T: Scalar>(cloud: &PointCloud<T>, mask: &FovMask) -> Result<(PointCloud<T>, Vec<usize>)> {
    let points = mask.gather(cloud.points())?;
    Ok((points.into_iter().collect(), mask.index_map().to_vec()))
}

/// H×W×C per-pixel class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap<T> {
    height: usize,
    width: usize,
    classes: usize,
    data: Vec<T>,
}

impl<T: Scalar> ProbMap<T> {
    pub fn new(height: usize, width: usize, classes: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || classes == 0 {
            return Err(Error::DimMismatch(format!("empty probability map {height}x{width}x{classes}")));
        }
        if data.len() != height * width * classes {
            return Err(Error::SizeMismatch {
                expected: height * width * classes,
                found: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            classes,
            data,
        })
    }

    pub fn from_tensor(t: &TensorFile) -> Result<Self> {
        let [h, w, c] = t.shape::<3>()?;
        Self::new(h, w, c, t.as_f32()?.iter().map(|&v| T::lit(v as f64)).collect())
    }

    pub fn to_tensor(&self) -> TensorFile {
        TensorFile::f32(
            vec![self.height as u32, self.width as u32, self.classes as u32],
            self.data.iter().map(|v| v.as_f32()).collect(),
        )
        .expect("dims match payload")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[T] {
        let start = (row * self.width + col) * self.classes;
        &self.data[start..start + self.classes]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [T] {
        let start = (row * self.width + col) * self.classes;
        &mut self.data[start..start + self.classes]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Row of the pixel containing the projection.
    #[default]
    Nearest,
    /// Convex blend of the four surrounding pixel centers.
    Bilinear,
}

/// Lifts per-pixel probabilities onto the points the camera sees.
///
/// Points outside the view get masked rows.
pub fn lift_probs<T: Scalar>(
    prob_map: &ProbMap<T>,
    cloud: &PointCloud<T>,
    rig: &CalibrationRig<T>,
    sampling: Sampling,
) -> Result<(PerPointProbs<T>, FovMask)> {
    let size = rig.size();
    if prob_map.width != size.width as usize || prob_map.height != size.height as usize {
        return Err(Error::DimMismatch(format!(
            "probability map is {}x{} (HxW) but calibration expects {}x{}",
            prob_map.height, prob_map.width, size.height, size.width
        )));
    }
    let c = prob_map.classes;
    let mut probs = PerPointProbs::masked(cloud.len(), c);
    let mut visible = vec![false; cloud.len()];
    let mut blend = vec![T::zero(); c];
    for (i, p) in cloud.iter().enumerate() {
        let proj = rig.project(p.xyz());
        if !rig.in_image(&proj) {
            continue;
        }
        visible[i] = true;
        match sampling {
            Sampling::Nearest => {
                let col = proj.u.floor().to_usize().unwrap().min(prob_map.width - 1);
                let row = proj.v.floor().to_usize().unwrap().min(prob_map.height - 1);
                probs.set_row(i, prob_map.pixel(row, col));
            }
            Sampling::Bilinear => {
                bilinear(prob_map, proj.u, proj.v, &mut blend);
                probs.set_row(i, &blend);
            }
        }
    }
    Ok((probs, FovMask::from_bools(visible)))
}

fn bilinear<T: Scalar>(map: &ProbMap<T>, u: T, v: T, out: &mut [T]) {
    let half = T::lit(0.5);
    let clamp = |x: T, hi: usize| x.max(T::zero()).min(T::from_usize_lossy(hi - 1));
    let x = clamp(u - half, map.width);
    let y = clamp(v - half, map.height);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (c0, r0) = (x0.to_usize().unwrap(), y0.to_usize().unwrap());
    let (c1, r1) = ((c0 + 1).min(map.width - 1), (r0 + 1).min(map.height - 1));
    let one = T::one();
    let taps = [
        (r0, c0, (one - fx) * (one - fy)),
        (r0, c1, fx * (one - fy)),
        (r1, c0, (one - fx) * fy),
        (r1, c1, fx * fy),
    ];
    out.iter_mut().for_each(|o| *o = T::zero());
    for (r, col, w) in taps {
        for (o, &p) in out.iter_mut().zip(map.pixel(r, col)) {
            *o = *o + w * p;
        }
    }
}

/// Averages the rows of several cameras; a point is masked only if every
/// camera masks it.
pub fn merge_cameras<T: Scalar>(views: &[PerPointProbs<T>]) -> Result<PerPointProbs<T>> {
    let first = views
        .first()
        .ok_or_else(|| Error::EmptyInput("no camera views to merge".into()))?;
    let (n, c) = (first.len(), first.num_classes());
    if let Some(v) = views.iter().find(|v| v.len() != n || v.num_classes() != c) {
        return Err(Error::DimMismatch(format!(
            "camera views disagree: {}x{} vs {}x{}",
            n,
            c,
            v.len(),
            v.num_classes()
        )));
    }
    let mut out = PerPointProbs::masked(n, c);
    let mut acc = vec![T::zero(); c];
    for i in 0..n {
        let seen: Vec<&PerPointProbs<T>> = views.iter().filter(|v| !v.is_masked(i)).collect();
        if seen.is_empty() {
            continue;
        }
        acc.iter_mut().for_each(|a| *a = T::zero());
        for v in &seen {
            for (a, &p) in acc.iter_mut().zip(v.row(i)) {
                *a = *a + p;
            }
        }
        let k = T::from_usize_lossy(seen.len());
        acc.iter_mut().for_each(|a| *a = *a / k);
        out.set_row(i, &acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud<f64> {
        PointCloud::new(pts.iter().map(|p| Point::new(p[0], p[1], p[2], 0.0)).collect()).unwrap()
    }

    fn rig(f: f64, cx: f64, cy: f64, w: u32, h: u32) -> CalibrationRig<f64> {
        CalibrationRig::pinhole(f, cx, cy, RigidTransform::identity(), ImageSize::new(w, h)).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let r = rig(500.0, 320.0, 120.0, 640, 240);
        let p = r.project([0.0, 0.0, 5.0]);
        assert_eq!((p.u, p.v, p.depth, p.valid), (320.0, 120.0, 5.0, true));
    }

    #[test]
    fn behind_camera_invalid() {
        let r = rig(500.0, 320.0, 120.0, 640, 240);
        assert!(!r.project([0.0, 0.0, -1.0]).valid);
        assert!(!fov_mask(&cloud(&[[0.0, 0.0, -1.0]]), &r).get(0));
    }

    #[test]
    fn hand_computed_column() {
        // u = f·x/z = 100·1/5
        let r = rig(100.0, 0.0, 0.0, 64, 64);
        assert_eq!(r.project([1.0, 0.0, 5.0]).u, 20.0);
    }

    #[test]
    fn half_open_bounds() {
        let r = rig(100.0, 0.0, 0.0, 20, 20);
        // u = 100·2/10 = 20 = W exactly
        let m = fov_mask(&cloud(&[[2.0, 0.0, 10.0], [0.0, 0.0, 10.0], [1.9, 1.9, 10.0]]), &r);
        assert_eq!(m.as_slice(), &[false, true, true]);
        assert_eq!(fov_mask(&PointCloud::<f64>::empty(), &r).len(), 0);
    }

    #[test]
    fn slice_cases() {
        let c = cloud(&[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let (s, idx) = slice_cloud(&c, &FovMask::from_bools(vec![true, false, true])).unwrap();
        assert_eq!(idx, vec![0, 2]);
        assert_eq!(s.points()[1].x, 3.0);
        assert_eq!(slice_cloud(&c, &FovMask::all(3, true)).unwrap().0, c);
        assert!(slice_cloud(&c, &FovMask::all(3, false)).unwrap().0.is_empty());
        assert!(matches!(slice_cloud(&c, &FovMask::all(2, true)), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn scatter_round_trip() {
        let m = FovMask::from_bools(vec![false, true, true, false]);
        let mut full = vec![9u16; 4];
        let sliced = m.gather(&[1u16, 2, 3, 4]).unwrap();
        m.scatter(&sliced, &mut full).unwrap();
        assert_eq!(full, vec![9, 2, 3, 9]);
        assert_eq!(FovMask::from_tensor(&m.to_tensor()).unwrap(), m);
    }

    #[test]
    fn lift_two_by_two() {
        // f = 1, principal point (1,1): pixel of (x,y,1) is (x+1, y+1)
        let r = rig(1.0, 1.0, 1.0, 2, 2);
        let map = ProbMap::new(
            2,
            2,
            2,
            vec![
                1.0, 0.0, // (row 0, col 0)
                0.75, 0.25, // (row 0, col 1)
                0.25, 0.75, // (row 1, col 0)
                0.0, 1.0, // (row 1, col 1)
            ],
        )
        .unwrap();
        let c = cloud(&[[0.5, 0.5, 1.0], [-0.5, -0.5, 1.0], [0.5, -0.5, 1.0], [-0.5, 0.5, 1.0], [5.0, 0.0, 1.0]]);
        let (probs, mask) = lift_probs(&map, &c, &r, Sampling::Nearest).unwrap();
        assert_eq!(probs.row(0), &[0.0, 1.0]);
        assert_eq!(probs.row(1), &[1.0, 0.0]);
        assert_eq!(probs.row(2), &[0.75, 0.25]);
        assert_eq!(probs.row(3), &[0.25, 0.75]);
        assert!(probs.is_masked(4));
        assert_eq!(mask.index_map(), &[0, 1, 2, 3]);
    }

    #[test]
    fn lift_dim_mismatch() {
        let r = rig(1.0, 1.0, 1.0, 3, 2);
        let map = ProbMap::new(2, 2, 1, vec![1.0; 4]).unwrap();
        assert!(matches!(
            lift_probs(&map, &cloud(&[[0.0, 0.0, 1.0]]), &r, Sampling::Nearest),
            Err(Error::DimMismatch(_))
        ));
    }

    #[test]
    fn bilinear_is_convex() {
        let r = rig(10.0, 5.0, 5.0, 10, 10);
        let data: Vec<f64> = (0..100).flat_map(|i| {
            let a = (i % 7) as f64 / 6.0;
            [a, 1.0 - a]
        }).collect();
        let map = ProbMap::new(10, 10, 2, data).unwrap();
        let c = cloud(&[[0.13, -0.27, 1.0], [0.49, 0.49, 1.0], [-0.5, -0.5, 1.0]]);
        let (probs, _) = lift_probs(&map, &c, &r, Sampling::Bilinear).unwrap();
        probs.validate().unwrap();
    }

    #[test]
    fn merge_averages_visible_views() {
        let a = PerPointProbs::from_rows(2, vec![1.0, 0.0, 0.0, 0.0], vec![false, true]).unwrap();
        let b = PerPointProbs::from_rows(2, vec![0.0, 1.0, 0.0, 0.0], vec![false, true]).unwrap();
        let m = merge_cameras(&[a, b]).unwrap();
        assert_eq!(m.row(0), &[0.5, 0.5]);
        assert!(m.is_masked(1));
    }
}
