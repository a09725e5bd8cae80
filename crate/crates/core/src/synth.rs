//! Deterministic synthetic street scenes and a noisy image "teacher".
//!
//! A simple ray caster produces a LiDAR sweep with exact per-point ground
//! truth, plus a pinhole camera looking along +x. The teacher's per-pixel
//! probabilities are derived from the rendered label image, with errors
//! concentrated in a band around class boundaries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ClassId, LabelArray, Point, PointCloud, RigidTransform, IGNORE_ID};
use crate::io::ClassMap;
use crate::projection::{CalibrationRig, ImageSize, ProbMap};
use crate::scalar::Scalar;

pub const ROAD: ClassId = 1;
pub const CAR: ClassId = 2;
pub const BUILDING: ClassId = 3;
pub const VEGETATION: ClassId = 4;
pub const PERSON: ClassId = 5;

/// Number of classes in [`synthetic_class_map`].
pub const NUM_CLASSES: usize = 6;

/// Class table used by generated scenes.
pub fn synthetic_class_map() -> ClassMap {
    ClassMap::new(
        ["unlabeled", "road", "car", "building", "vegetation", "person"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    )
    .expect("static class map is valid")
}

/// Width in pixels of the boundary band on each side of a class edge.
pub const BORDER_BAND_PX: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneObject {
    /// Square patch `|x|, |y| <= extent` of the plane at height `z`.
    Ground { class: ClassId, z: f64, extent: f64 },
    /// Axis-aligned box.
    Box {
        class: ClassId,
        center: [f64; 3],
        size: [f64; 3],
    },
    /// Vertical cylinder standing on `base[2]`.
    Cylinder {
        class: ClassId,
        base: [f64; 3],
        radius: f64,
        height: f64,
    },
}

impl SceneObject {
    pub fn class(&self) -> ClassId {
        match *self {
            SceneObject::Ground { class, .. } | SceneObject::Box { class, .. } | SceneObject::Cylinder { class, .. } => {
                class
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            SceneObject::Ground { z, extent, .. } => z.is_finite() && *extent > 0.0 && extent.is_finite(),
            SceneObject::Box { center, size, .. } => {
                center.iter().all(|v| v.is_finite()) && size.iter().all(|&s| s > 0.0 && s.is_finite())
            }
            SceneObject::Cylinder {
                base, radius, height, ..
            } => base.iter().all(|v| v.is_finite()) && *radius > 0.0 && *height > 0.0 && radius.is_finite() && height.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::DegenerateSpec(format!("degenerate object {self:?}")))
        }
    }

    /// Smallest positive ray parameter of an intersection.
    fn intersect(&self, o: [f64; 3], d: [f64; 3]) -> Option<f64> {
        const EPS: f64 = 1e-9;
        match *self {
            SceneObject::Ground { z, extent, .. } => {
                if d[2].abs() < 1e-15 {
                    return None;
                }
                let t = (z - o[2]) / d[2];
                let (x, y) = (o[0] + t * d[0], o[1] + t * d[1]);
                (t > EPS && x.abs() <= extent && y.abs() <= extent).then_some(t)
            }
            SceneObject::Box { center, size, .. } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for a in 0..3 {
                    let lo = center[a] - size[a] / 2.0;
                    let hi = center[a] + size[a] / 2.0;
                    if d[a].abs() < 1e-15 {
                        if o[a] < lo || o[a] > hi {
                            return None;
                        }
                        continue;
                    }
                    let (mut ta, mut tb) = ((lo - o[a]) / d[a], (hi - o[a]) / d[a]);
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                    }
                    t0 = t0.max(ta);
                    t1 = t1.min(tb);
                }
                if t0 > t1 {
                    return None;
                }
                if t0 > EPS {
                    Some(t0)
                } else if t1 > EPS {
                    Some(t1)
                } else {
                    None
                }
            }
            SceneObject::Cylinder {
                base, radius, height, ..
            } => {
                let (zlo, zhi) = (base[2], base[2] + height);
                let mut best: Option<f64> = None;
                let mut consider = |t: f64| {
                    if t > EPS && best.is_none_or(|b| t < b) {
                        best = Some(t);
                    }
                };
                let (px, py) = (o[0] - base[0], o[1] - base[1]);
                let a = d[0] * d[0] + d[1] * d[1];
                if a > 1e-15 {
                    let b = 2.0 * (px * d[0] + py * d[1]);
                    let c = px * px + py * py - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 {
                        let sq = disc.sqrt();
                        for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                            let z = o[2] + t * d[2];
                            if z >= zlo && z <= zhi {
                                consider(t);
                            }
                        }
                    }
                }
                if d[2].abs() > 1e-15 {
                    for zc in [zlo, zhi] {
                        let t = (zc - o[2]) / d[2];
                        let (x, y) = (px + t * d[0], py + t * d[1]);
                        if x * x + y * y <= radius * radius {
                            consider(t);
                        }
                    }
                }
                best
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LidarSpec {
    pub beams: usize,
    pub azimuth_steps: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub max_range: f64,
    /// Standard deviation-free uniform range jitter, meters.
    pub range_noise_m: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            beams: 32,
            azimuth_steps: 1024,
            elevation_min_deg: -24.9,
            elevation_max_deg: 2.0,
            max_range: 80.0,
            range_noise_m: 0.0,
        }
    }
}

/// Pinhole camera at the LiDAR origin looking along +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSpec {
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            width: 512,
            height: 160,
            focal: 256.0,
            cx: 256.0,
            cy: 24.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub lidar: LidarSpec,
    #[serde(default)]
    pub camera: CameraSpec,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let l = &self.lidar;
        if l.beams == 0 || l.azimuth_steps == 0 {
            return Err(Error::DegenerateSpec("LiDAR needs at least one beam and azimuth step".into()));
        }
        if !(l.elevation_min_deg <= l.elevation_max_deg) || !(l.max_range > 0.0) || !(l.range_noise_m >= 0.0) {
            return Err(Error::DegenerateSpec("invalid LiDAR elevation range, max range or noise".into()));
        }
        let c = &self.camera;
        if c.width == 0 || c.height == 0 || !(c.focal > 0.0) || !c.cx.is_finite() || !c.cy.is_finite() {
            return Err(Error::DegenerateSpec("camera needs positive size and focal length".into()));
        }
        self.objects.iter().try_for_each(SceneObject::validate)
    }

    /// LiDAR → camera axes: camera x = −y, camera y = −z, camera z = x.
    pub fn rig<T: Scalar>(&self) -> Result<CalibrationRig<T>> {
        let (o, z) = (T::one(), T::zero());
        let axes = RigidTransform::new([[z, -o, z], [z, z, -o], [o, z, z]], [z; 3])?;
        let c = &self.camera;
        CalibrationRig::pinhole(T::lit(c.focal), T::lit(c.cx), T::lit(c.cy), axes, ImageSize::new(c.width, c.height))
    }

    /// Nearest hit along a ray: `(t, class)`.
    fn cast(&self, o: [f64; 3], d: [f64; 3], max_t: f64) -> Option<(f64, ClassId)> {
        let mut best: Option<(f64, ClassId)> = None;
        for obj in &self.objects {
            if let Some(t) = obj.intersect(o, d) {
                if t <= max_t && best.is_none_or(|(b, _)| t < b) {
                    best = Some((t, obj.class()));
                }
            }
        }
        best
    }

    /// A randomized street: road, building rows, parked cars, trees and
    /// pedestrians, with several objects in front of the camera.
    pub fn street(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_57ee7);
        let mut objects = vec![SceneObject::Ground {
            class: ROAD,
            z: -1.73,
            extent: 50.0,
        }];
        let ground = -1.73;
        for side in [-1.0, 1.0] {
            let mut x = -45.0;
            while x < 45.0 {
                let len = rng.gen_range(8.0..16.0);
                let depth = rng.gen_range(4.0..8.0);
                let h = rng.gen_range(6.0..15.0);
                let y = side * (rng.gen_range(10.0..13.0) + depth / 2.0);
                objects.push(SceneObject::Box {
                    class: BUILDING,
                    center: [x + len / 2.0, y, ground + h / 2.0],
                    size: [len, depth, h],
                });
                x += len + rng.gen_range(1.0..5.0);
            }
        }
        let cars = rng.gen_range(5..9);
        for i in 0..cars {
            let x = if i < 4 { rng.gen_range(6.0..28.0) } else { rng.gen_range(-30.0..30.0) };
            let y = if rng.gen_bool(0.5) { rng.gen_range(-6.0..-2.0) } else { rng.gen_range(2.0..6.0) };
            let (len, w, h) = (rng.gen_range(3.8..4.8), rng.gen_range(1.7..2.0), rng.gen_range(1.4..1.8));
            objects.push(SceneObject::Box {
                class: CAR,
                center: [x, y, ground + h / 2.0],
                size: [len, w, h],
            });
        }
        let trees = rng.gen_range(6..12);
        for _ in 0..trees {
            let side: f64 = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
            objects.push(SceneObject::Cylinder {
                class: VEGETATION,
                base: [rng.gen_range(-40.0..40.0), side * rng.gen_range(7.0..9.0), ground],
                radius: rng.gen_range(0.4..1.2),
                height: rng.gen_range(3.0..7.0),
            });
        }
        let people = rng.gen_range(2..5);
        for _ in 0..people {
            let x = rng.gen_range(5.0..22.0);
            objects.push(SceneObject::Cylinder {
                class: PERSON,
                base: [x, rng.gen_range(-0.6..0.6) * x, ground],
                radius: rng.gen_range(0.25..0.35),
                height: rng.gen_range(1.6..1.9),
            });
        }
        Self {
            seed,
            objects,
            lidar: LidarSpec::default(),
            camera: CameraSpec::default(),
        }
    }
}

/// LiDAR sweep, per-point truth, and the camera rig of a rendered scene.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScene<T> {
    pub cloud: PointCloud<T>,
    pub gt: LabelArray,
    pub rig: CalibrationRig<T>,
}

/// Ray-casts one LiDAR sweep from the origin.
pub fn render_scene<T: Scalar>(spec: &SceneSpec) -> Result<RenderedScene<T>> {
    spec.validate()?;
    let l = &spec.lidar;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points = Vec::new();
    let mut gt = Vec::new();
    for b in 0..l.beams {
        let elev = if l.beams == 1 {
            l.elevation_min_deg
        } else {
            l.elevation_min_deg + (l.elevation_max_deg - l.elevation_min_deg) * b as f64 / (l.beams - 1) as f64
        }
        .to_radians();
        for a in 0..l.azimuth_steps {
            let az = std::f64::consts::TAU * a as f64 / l.azimuth_steps as f64;
            let d = [elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin()];
            let Some((t, class)) = spec.cast([0.0; 3], d, l.max_range) else {
                continue;
            };
            let t = if l.range_noise_m > 0.0 {
                t + rng.gen_range(-l.range_noise_m..=l.range_noise_m)
            } else {
                t
            };
            let intensity = rng.gen_range(0.0..1.0);
            points.push(Point::new(T::lit(t * d[0]), T::lit(t * d[1]), T::lit(t * d[2]), T::lit(intensity)));
            gt.push(class);
        }
    }
    Ok(RenderedScene {
        cloud: PointCloud::new(points)?,
        gt: LabelArray::new(gt),
        rig: spec.rig()?,
    })
}

/// Per-pixel ground truth: the class hit by each pixel-center ray, then
/// overwritten by the class of the nearest LiDAR return projecting into the
/// pixel so that image and point labels agree exactly.
pub fn render_label_image<T: Scalar>(spec: &SceneSpec, scene: &RenderedScene<T>) -> Result<Vec<ClassId>> {
    spec.validate()?;
    let cam = &spec.camera;
    let (w, h) = (cam.width as usize, cam.height as usize);
    let rig: CalibrationRig<f64> = spec.rig()?;
    let to_sensor = rig.extrinsic().inverse();
    let origin = to_sensor.apply([0.0; 3]);
    let mut image = vec![IGNORE_ID; w * h];
    for row in 0..h {
        for col in 0..w {
            let dc = [
                (col as f64 + 0.5 - cam.cx) / cam.focal,
                (row as f64 + 0.5 - cam.cy) / cam.focal,
                1.0,
            ];
            let tip = to_sensor.apply(dc);
            let d = [tip[0] - origin[0], tip[1] - origin[1], tip[2] - origin[2]];
            if let Some((_, class)) = spec.cast(origin, d, f64::INFINITY) {
                image[row * w + col] = class;
            }
        }
    }
    let mut depth = vec![f64::INFINITY; w * h];
    for (p, &class) in scene.cloud.iter().zip(scene.gt.iter()) {
        let proj = scene.rig.project(p.xyz());
        if !scene.rig.in_image(&proj) {
            continue;
        }
        let col = proj.u.floor().to_usize().unwrap().min(w - 1);
        let row = proj.v.floor().to_usize().unwrap().min(h - 1);
        let k = row * w + col;
        let z = proj.depth.as_f64();
        if z < depth[k] {
            depth[k] = z;
            image[k] = class;
        }
    }
    Ok(image)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherNoise {
    /// Probability that a pixel within the boundary band flips to the
    /// neighboring class.
    pub border_rate: f64,
    /// Probability that any other pixel flips to a random class.
    pub body_rate: f64,
}

impl TeacherNoise {
    pub fn new(border_rate: f64, body_rate: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&border_rate) || !(0.0..=1.0).contains(&body_rate) {
            return Err(Error::Config(format!(
                "noise rates must lie in [0,1], got {border_rate} and {body_rate}"
            )));
        }
        Ok(Self { border_rate, body_rate })
    }
}

/// Most frequent other class within the band window, lowest id on ties.
fn neighbor_class(image: &[ClassId], w: usize, h: usize, row: usize, col: usize, counts: &mut [u32]) -> Option<ClassId> {
    let own = image[row * w + col];
    counts.iter_mut().for_each(|c| *c = 0);
    let r = BORDER_BAND_PX;
    for y in row.saturating_sub(r)..=(row + r).min(h - 1) {
        for x in col.saturating_sub(r)..=(col + r).min(w - 1) {
            let c = image[y * w + x];
            if c != own {
                counts[c as usize] += 1;
            }
        }
    }
    let (best, &n) = counts.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
    (n > 0).then_some(best as ClassId)
}

/// Spreads `mass` evenly over every class except `skip` (and the ignore
/// class when another choice exists).
fn spread(row: &mut [f64], mass: f64, skip: &[usize]) {
    let mut targets: Vec<usize> = (1..row.len()).filter(|c| !skip.contains(c)).collect();
    if targets.is_empty() {
        targets = (0..row.len()).filter(|c| !skip.contains(c)).collect();
    }
    if targets.is_empty() {
        row[skip[0]] += mass;
        return;
    }
    let share = mass / targets.len() as f64;
    for t in targets {
        row[t] += share;
    }
}

/// Produces an H×W×C probability map from the rendered label image.
///
/// Clean pixels put 0.8–1.0 on the true class (0.55–0.9 inside the boundary
/// band). A flipped pixel puts 0.5–0.85 on the wrong class and at most 40 %
/// of the remainder on the true class.
pub fn simulate_teacher<T: Scalar>(
    spec: &SceneSpec,
    scene: &RenderedScene<T>,
    num_classes: usize,
    noise: TeacherNoise,
    seed: u64,
) -> Result<ProbMap<T>> {
    let image = render_label_image(spec, scene)?;
    teacher_from_labels(&image, spec.camera.width as usize, spec.camera.height as usize, num_classes, noise, seed)
}

/// Teacher simulation on an existing label image (row-major, `w × h`).
pub fn teacher_from_labels<T: Scalar>(
    image: &[ClassId],
    w: usize,
    h: usize,
    num_classes: usize,
    noise: TeacherNoise,
    seed: u64,
) -> Result<ProbMap<T>> {
    TeacherNoise::new(noise.border_rate, noise.body_rate)?;
    if image.len() != w * h {
        return Err(Error::SizeMismatch {
            expected: w * h,
            found: image.len(),
        });
    }
    if let Some(&bad) = image.iter().find(|&&c| c as usize >= num_classes) {
        return Err(Error::UnknownClass {
            class: bad as u32,
            index: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = num_classes;
    let mut data = Vec::with_capacity(w * h * c);
    let mut counts = vec![0u32; c];
    let mut row = vec![0f64; c];
    for y in 0..h {
        for x in 0..w {
            let own = image[y * w + x] as usize;
            let neighbor = neighbor_class(image, w, h, y, x, &mut counts);
            let in_band = neighbor.is_some();
            let flip_p = if in_band { noise.border_rate } else { noise.body_rate };
            // always draw the same number of variates per pixel
            let (u_flip, u_conf, u_share, u_other) = (
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0usize..c.max(2) - 1),
            );
            row.iter_mut().for_each(|r| *r = 0.0);
            let wrong = match neighbor {
                Some(n) => Some(n as usize),
                None => (c > 1).then(|| {
                    let o = if own == 0 { 1 + u_other % (c - 1) } else { (own + u_other % (c - 1).max(1)) % c };
                    if o == own { (own + 1) % c } else { o }
                }),
            };
            match wrong {
                Some(wc) if u_flip < flip_p && wc != own => {
                    let p_wrong = 0.5 + 0.35 * u_conf;
                    let p_own = (1.0 - p_wrong) * 0.4 * u_share;
                    row[wc] = p_wrong;
                    row[own] = p_own;
                    spread(&mut row, 1.0 - p_wrong - p_own, &[wc, own]);
                }
                _ => {
                    let p_own = if in_band { 0.55 + 0.35 * u_conf } else { 0.8 + 0.2 * u_conf };
                    row[own] = p_own;
                    spread(&mut row, 1.0 - p_own, &[own]);
                }
            }
            data.extend(row.iter().map(|&p| T::lit(p)));
        }
    }
    ProbMap::new(h, w, c, data)
}

/// Seed of the `index`-th scene of a corpus.
pub fn scene_seed(corpus_seed: u64, index: usize) -> u64 {
    corpus_seed.wrapping_add(index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xC0FF_EE00
}

/// What [`write_corpus`] produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub scenes: usize,
    pub seed: u64,
    pub noise: TeacherNoise,
    #[serde(default = "default_sequence")]
    pub sequence: String,
    #[serde(default = "default_camera")]
    pub camera: u8,
}

fn default_sequence() -> String {
    "00".into()
}

fn default_camera() -> u8 {
    crate::config::DEFAULT_CAMERA
}

impl CorpusSpec {
    pub fn new(scenes: usize, seed: u64, noise: TeacherNoise) -> Self {
        Self {
            scenes,
            seed,
            noise,
            sequence: default_sequence(),
            camera: default_camera(),
        }
    }
}

/// Writes one scene as frame `index` of `corpus.sequence` (the sequence's
/// `calib.txt` is left to the caller). Returns the point count.
pub fn write_scene(root: &std::path::Path, scene_spec: &SceneSpec, corpus: &CorpusSpec, index: usize) -> Result<usize> {
    use crate::io::{write_cloud_bin, write_labels, write_tensor};

    let seq = root.join("sequences").join(&corpus.sequence);
    let scene: RenderedScene<f32> = render_scene(scene_spec)?;
    let map = simulate_teacher(scene_spec, &scene, NUM_CLASSES, corpus.noise, scene_spec.seed ^ 0x7EAC)?;
    let frame = format!("{index:06}");
    write_cloud_bin(&scene.cloud, &seq.join("velodyne").join(format!("{frame}.bin")))?;
    write_labels(&scene.gt, &seq.join("labels").join(format!("{frame}.label")))?;
    let probs = root
        .join("probs_2d/sequences")
        .join(&corpus.sequence)
        .join(format!("image_{}", corpus.camera))
        .join(format!("{frame}.ptns"));
    write_tensor(&map.to_tensor(), &probs)?;
    Ok(scene.cloud.len())
}

/// Writes `classes.csv` and the sequence's `calib.txt` for scenes sharing
/// `scene_spec`'s camera.
pub fn write_corpus_header(root: &std::path::Path, scene_spec: &SceneSpec, corpus: &CorpusSpec) -> Result<()> {
    crate::io::write_atomic(&root.join("classes.csv"), synthetic_class_map().to_csv().as_bytes())?;
    let calib = root.join("sequences").join(&corpus.sequence).join("calib.txt");
    crate::io::write_calib(&scene_spec.rig::<f32>()?, corpus.camera, &calib)
}

/// Writes a street corpus in the dataset layout: clouds, ground-truth
/// labels, calibration, teacher probability maps and `classes.csv`.
/// Every scene shares the default camera. Returns the total point count.
pub fn write_corpus(root: &std::path::Path, spec: &CorpusSpec) -> Result<usize> {
    use rayon::prelude::*;

    write_corpus_header(root, &SceneSpec::street(scene_seed(spec.seed, 0)), spec)?;
    let counts = (0..spec.scenes)
        .into_par_iter()
        .map(|i| write_scene(root, &SceneSpec::street(scene_seed(spec.seed, i)), spec, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(counts.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::{fov_mask, lift_probs, Sampling};
    use crate::scalar::argmax;

    fn tiny_camera() -> CameraSpec {
        CameraSpec {
            width: 128,
            height: 48,
            focal: 64.0,
            cx: 64.0,
            cy: 8.0,
        }
    }

    fn lidar(beams: usize, steps: usize) -> LidarSpec {
        LidarSpec {
            beams,
            azimuth_steps: steps,
            ..LidarSpec::default()
        }
    }

    #[test]
    fn ground_only_is_road() {
        let spec = SceneSpec {
            seed: 1,
            objects: vec![SceneObject::Ground {
                class: ROAD,
                z: -1.73,
                extent: 30.0,
            }],
            lidar: lidar(16, 256),
            camera: tiny_camera(),
        };
        let s: RenderedScene<f32> = render_scene(&spec).unwrap();
        assert!(!s.cloud.is_empty());
        assert!(s.gt.iter().all(|&c| c == ROAD));
        for p in s.cloud.iter() {
            assert!((p.z + 1.73).abs() < 1e-4);
        }
    }

    #[test]
    fn empty_scene_is_empty_cloud() {
        let spec = SceneSpec {
            seed: 1,
            objects: vec![],
            lidar: lidar(8, 64),
            camera: tiny_camera(),
        };
        let s: RenderedScene<f64> = render_scene(&spec).unwrap();
        assert!(s.cloud.is_empty() && s.gt.is_empty());
    }

    #[test]
    fn degenerate_specs() {
        let mut spec = SceneSpec::street(3);
        spec.lidar.beams = 0;
        assert!(matches!(render_scene::<f32>(&spec), Err(Error::DegenerateSpec(_))));
        let mut spec = SceneSpec::street(3);
        spec.objects.push(SceneObject::Box {
            class: CAR,
            center: [1.0, 1.0, 1.0],
            size: [1.0, 0.0, 1.0],
        });
        assert!(matches!(render_scene::<f32>(&spec), Err(Error::DegenerateSpec(_))));
        let mut spec = SceneSpec::street(3);
        spec.camera.width = 0;
        assert!(render_scene::<f32>(&spec).is_err());
    }

    #[test]
    fn box_in_frustum_is_visible() {
        let spec = SceneSpec {
            seed: 4,
            objects: vec![SceneObject::Box {
                class: CAR,
                center: [12.0, 0.5, -0.9],
                size: [4.0, 1.8, 1.5],
            }],
            lidar: lidar(32, 512),
            camera: tiny_camera(),
        };
        let s: RenderedScene<f64> = render_scene(&spec).unwrap();
        assert!(s.cloud.len() > 20);
        let mask = fov_mask(&s.cloud, &s.rig);
        assert_eq!(mask.count(), s.cloud.len());
        // brute force through the homogeneous camera chain
        let p = s.rig.projection();
        let t = s.rig.extrinsic().to_homogeneous();
        for q in s.cloud.iter() {
            let h = [q.x, q.y, q.z, 1.0];
            let cam: Vec<f64> = (0..4).map(|r| (0..4).map(|k| t[r][k] * h[k]).sum()).collect();
            let img: Vec<f64> = (0..3).map(|r| (0..4).map(|k| p[r][k] * cam[k]).sum()).collect();
            let (u, v) = (img[0] / img[2], img[1] / img[2]);
            assert!(cam[2] > 0.0 && (0.0..128.0).contains(&u) && (0.0..48.0).contains(&v));
        }
    }

    #[test]
    fn render_is_deterministic() {
        let spec = SceneSpec::street(11);
        let a: RenderedScene<f32> = render_scene(&spec).unwrap();
        let b: RenderedScene<f32> = render_scene(&spec).unwrap();
        assert_eq!(a, b);
        assert!(a.cloud.len() > 10_000, "{} points", a.cloud.len());
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<SceneSpec>(&json).unwrap(), spec);
    }

    #[test]
    fn noiseless_teacher_reproduces_gt_in_view() {
        let spec = SceneSpec::street(2);
        let s: RenderedScene<f32> = render_scene(&spec).unwrap();
        let map = simulate_teacher(&spec, &s, 6, TeacherNoise::new(0.0, 0.0).unwrap(), 9).unwrap();
        let (probs, mask) = lift_probs(&map, &s.cloud, &s.rig, Sampling::Nearest).unwrap();
        assert!(mask.count() > 1000);
        probs.validate().unwrap();
        let lifted = probs.argmax_labels();
        for &i in mask.index_map() {
            assert_eq!(lifted[i], s.gt[i], "point {i}");
        }
    }

    #[test]
    fn full_border_rate_flips_every_band_pixel() {
        let spec = SceneSpec::street(5);
        let s: RenderedScene<f64> = render_scene(&spec).unwrap();
        let image = render_label_image(&spec, &s).unwrap();
        let (w, h) = (spec.camera.width as usize, spec.camera.height as usize);
        let map: ProbMap<f64> = teacher_from_labels(&image, w, h, 6, TeacherNoise::new(1.0, 0.0).unwrap(), 3).unwrap();
        let mut counts = vec![0u32; 6];
        let mut band = 0;
        for y in 0..h {
            for x in 0..w {
                let pred = argmax(map.pixel(y, x)).unwrap() as ClassId;
                if neighbor_class(&image, w, h, y, x, &mut counts).is_some() {
                    band += 1;
                    assert_ne!(pred, image[y * w + x]);
                } else {
                    assert_eq!(pred, image[y * w + x]);
                }
            }
        }
        assert!(band > 100);
    }

    #[test]
    fn teacher_rows_normalized() {
        let image: Vec<ClassId> = (0..20 * 10).map(|i| ((i / 7) % 6) as ClassId).collect();
        let map: ProbMap<f32> = teacher_from_labels(&image, 20, 10, 6, TeacherNoise::new(0.5, 0.1).unwrap(), 1).unwrap();
        for y in 0..10 {
            for x in 0..20 {
                let s: f32 = map.pixel(y, x).iter().sum();
                assert!((s - 1.0).abs() < 1e-5);
                assert!(map.pixel(y, x).iter().all(|&p| (0.0..=1.0).contains(&p)));
            }
        }
        assert!(TeacherNoise::new(1.5, 0.0).is_err());
    }

    #[test]
    fn cylinder_and_box_intersections() {
        let cyl = SceneObject::Cylinder {
            class: PERSON,
            base: [10.0, 0.0, -1.0],
            radius: 0.5,
            height: 2.0,
        };
        assert!((cyl.intersect([0.0; 3], [1.0, 0.0, 0.0]).unwrap() - 9.5).abs() < 1e-12);
        assert!(cyl.intersect([0.0; 3], [0.0, 1.0, 0.0]).is_none());
        // straight down onto the top cap
        assert!((cyl.intersect([10.0, 0.0, 5.0], [0.0, 0.0, -1.0]).unwrap() - 4.0).abs() < 1e-12);
        let bx = SceneObject::Box {
            class: CAR,
            center: [5.0, 0.0, 0.0],
            size: [2.0, 2.0, 2.0],
        };
        assert!((bx.intersect([0.0; 3], [1.0, 0.0, 0.0]).unwrap() - 4.0).abs() < 1e-12);
        assert!(bx.intersect([0.0; 3], [-1.0, 0.0, 0.0]).is_none());
    }
}
