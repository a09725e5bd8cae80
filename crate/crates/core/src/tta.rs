//! Test-time augmentation variants, prediction aggregation, and greedy
//! checkpoint soups.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{flip, yaw_rotate, FlipAxis, PerPointProbs, PointCloud};
use crate::io::{write_tensor, TensorFile};
use crate::scalar::Scalar;

/// Yaw step between rotation variants, in degrees.
pub const YAW_STEP_DEG: f64 = 40.0;
pub const NUM_ROTATIONS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "transform", rename_all = "snake_case")]
pub enum TtaVariant {
    Identity,
    Flip { axis: FlipAxis },
    Yaw { degrees: f64 },
}

impl TtaVariant {
    pub fn apply<T: Scalar>(&self, cloud: &PointCloud<T>) -> PointCloud<T> {
        match *self {
            TtaVariant::Identity => cloud.clone(),
            TtaVariant::Flip { axis } => flip(cloud, axis),
            TtaVariant::Yaw { degrees } => yaw_rotate(cloud, T::lit(degrees.to_radians())),
        }
    }

    pub fn name(&self) -> String {
        match self {
            TtaVariant::Identity => "identity".into(),
            TtaVariant::Flip { axis } => format!("flip_{}", format!("{axis:?}").to_lowercase()),
            TtaVariant::Yaw { degrees } => format!("yaw_{degrees:03}"),
        }
    }
}

/// Original, three flips, then yaw rotations of k·40° for k = 1..8.
pub fn default_variants() -> Vec<TtaVariant> {
    let mut v = vec![
        TtaVariant::Identity,
        TtaVariant::Flip { axis: FlipAxis::X },
        TtaVariant::Flip { axis: FlipAxis::Y },
        TtaVariant::Flip { axis: FlipAxis::XY },
    ];
    v.extend((1..=NUM_ROTATIONS).map(|k| TtaVariant::Yaw {
        degrees: k as f64 * YAW_STEP_DEG,
    }));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub name: String,
    pub file: String,
    #[serde(flatten)]
    pub variant: TtaVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantManifest {
    pub source: String,
    pub num_points: usize,
    pub variants: Vec<ManifestEntry>,
}

/// Applies every variant; point order is preserved in each output.
pub fn emit_variants<T: Scalar>(
    cloud: &PointCloud<T>,
    variants: &[TtaVariant],
    source: &str,
) -> (Vec<PointCloud<T>>, VariantManifest) {
    let clouds = variants.iter().map(|v| v.apply(cloud)).collect();
    let entries = variants
        .iter()
        .enumerate()
        .map(|(index, v)| ManifestEntry {
            index,
            name: v.name(),
            file: format!("{index:02}_{}.bin", v.name()),
            variant: *v,
        })
        .collect();
    (
        clouds,
        VariantManifest {
            source: source.to_string(),
            num_points: cloud.len(),
            variants: entries,
        },
    )
}

/// Per-point mean over variants. Each entry is summed in sorted order so
/// the result does not depend on the order of `variants`. A point is masked
/// only if every variant masks it.
pub fn aggregate_tta<T: Scalar>(variants: &[PerPointProbs<T>]) -> Result<PerPointProbs<T>> {
    let first = variants
        .first()
        .ok_or_else(|| Error::EmptyInput("no TTA predictions".into()))?;
    let (n, c) = (first.len(), first.num_classes());
    if let Some(v) = variants.iter().find(|v| v.len() != n || v.num_classes() != c) {
        return Err(Error::DimMismatch(format!(
            "TTA predictions disagree: {n}x{c} vs {}x{}",
            v.len(),
            v.num_classes()
        )));
    }
    let mut out = PerPointProbs::masked(n, c);
    let mut row = vec![T::zero(); c];
    let mut column = Vec::with_capacity(variants.len());
    for i in 0..n {
        let seen: Vec<&PerPointProbs<T>> = variants.iter().filter(|v| !v.is_masked(i)).collect();
        if seen.is_empty() {
            continue;
        }
        let count = T::from_usize_lossy(seen.len());
        for (j, r) in row.iter_mut().enumerate() {
            column.clear();
            column.extend(seen.iter().map(|v| v.row(i)[j]));
            column.sort_by(|a, b| a.partial_cmp(b).expect("finite probabilities"));
            *r = column.iter().copied().fold(T::zero(), |a, b| a + b) / count;
        }
        out.set_row(i, &row);
    }
    Ok(out)
}

/// Flat checkpoint parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(pub Vec<f32>);

impl WeightVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn from_tensor(t: &TensorFile) -> Result<Self> {
        let [_n] = t.shape::<1>()?;
        Ok(Self(t.as_f32()?.to_vec()))
    }

    pub fn to_tensor(&self) -> TensorFile {
        TensorFile::f32(vec![self.0.len() as u32], self.0.clone()).expect("dims match payload")
    }

    /// Uniform mean, accumulated in `f64`.
    pub fn mean(members: &[&WeightVector]) -> Result<WeightVector> {
        let first = members
            .first()
            .ok_or_else(|| Error::EmptyInput("no weight vectors to average".into()))?;
        let n = first.len();
        let mut acc = vec![0f64; n];
        for m in members {
            if m.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    found: m.len(),
                });
            }
            for (a, &w) in acc.iter_mut().zip(&m.0) {
                *a += w as f64;
            }
        }
        let k = members.len() as f64;
        Ok(WeightVector(acc.into_iter().map(|a| (a / k) as f32).collect()))
    }
}

/// Scores a weight vector; higher is better.
pub trait SoupEvaluator {
    fn evaluate(&mut self, weights: &WeightVector) -> Result<f64>;
}

impl<F: FnMut(&WeightVector) -> Result<f64>> SoupEvaluator for F {
    fn evaluate(&mut self, weights: &WeightVector) -> Result<f64> {
        self(weights)
    }
}

/// Runs an external program as `argv... <weight_file>` and parses a single
/// decimal number from its standard output.
#[derive(Debug, Clone)]
pub struct CommandEvaluator {
    argv: Vec<String>,
    scratch: PathBuf,
    calls: usize,
}

impl CommandEvaluator {
    pub fn new(argv: Vec<String>, scratch: &Path) -> Result<Self> {
        if argv.is_empty() {
            return Err(Error::Config("evaluation command is empty".into()));
        }
        Ok(Self {
            argv,
            scratch: scratch.to_path_buf(),
            calls: 0,
        })
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl SoupEvaluator for CommandEvaluator {
    fn evaluate(&mut self, weights: &WeightVector) -> Result<f64> {
        let path = self.scratch.join(format!("soup_eval_{:04}.ptns", self.calls));
        self.calls += 1;
        write_tensor(&weights.to_tensor(), &path)?;
        let output = Command::new(&self.argv[0])
            .args(&self.argv[1..])
            .arg(&path)
            .output()
            .map_err(|e| Error::EvalCommandFailed(format!("{}: {e}", self.argv[0])))?;
        let _ = std::fs::remove_file(&path);
        if !output.status.success() {
            return Err(Error::EvalCommandFailed(format!(
                "{} exited with {}: {}",
                self.argv[0],
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        stdout
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::EvalCommandFailed(format!("unparseable metric {:?}", stdout.trim())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoupStep {
    /// Position in the caller's candidate list.
    pub candidate: usize,
    pub solo_metric: f64,
    /// Metric of the soup with this candidate added (the solo metric for
    /// the first, always-included candidate).
    pub trial_metric: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoupResult {
    pub weights: WeightVector,
    pub metric: f64,
    pub log: Vec<SoupStep>,
    pub evaluations: usize,
}

/// Greedy soup: rank candidates by solo metric (descending, input order on
/// ties), start from the best, and keep each next candidate if the uniform
/// average including it scores at least as well as the current soup.
pub fn greedy_soup(candidates: &[WeightVector], eval: &mut dyn SoupEvaluator) -> Result<SoupResult> {
    let first = candidates
        .first()
        .ok_or_else(|| Error::EmptyInput("no soup candidates".into()))?;
    if let Some(c) = candidates.iter().find(|c| c.len() != first.len()) {
        return Err(Error::LengthMismatch {
            expected: first.len(),
            found: c.len(),
        });
    }
    let mut evaluations = 0usize;
    let mut solo = Vec::with_capacity(candidates.len());
    for c in candidates {
        solo.push(eval.evaluate(c)?);
        evaluations += 1;
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| solo[b].partial_cmp(&solo[a]).expect("finite metrics").then(a.cmp(&b)));

    let best = order[0];
    let mut members = vec![&candidates[best]];
    let mut soup = candidates[best].clone();
    let mut metric = solo[best];
    let mut log = vec![SoupStep {
        candidate: best,
        solo_metric: solo[best],
        trial_metric: solo[best],
        accepted: true,
    }];
    for &i in &order[1..] {
        members.push(&candidates[i]);
        let trial = WeightVector::mean(&members)?;
        let score = eval.evaluate(&trial)?;
        evaluations += 1;
        let accepted = score >= metric;
        if accepted {
            soup = trial;
            metric = score;
        } else {
            members.pop();
        }
        log.push(SoupStep {
            candidate: i,
            solo_metric: solo[i],
            trial_metric: score,
            accepted,
        });
    }
    Ok(SoupResult {
        weights: soup,
        metric,
        log,
        evaluations,
    })
}
