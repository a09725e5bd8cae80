//! Batch stages over a dataset directory.
//!
//! Input layout (SemanticKITTI style):
//!
//! ```text
//! <dataset_root>/sequences/<seq>/velodyne/<frame>.bin
//! <dataset_root>/sequences/<seq>/labels/<frame>.label     (optional ground truth)
//! <dataset_root>/sequences/<seq>/calib.txt
//! <dataset_root>/probs_2d/sequences/<seq>/image_<cam>/<frame>.ptns
//! ```
//!
//! Every stage writes under `<output_root>/sequences/<seq>/<stage>/` plus a
//! few CSV tables at `<output_root>`. Scans run on a bounded worker pool and
//! each output depends only on its own inputs, so the worker count never
//! changes a byte of output.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{summarize, ConfusionMatrix, EvalSummary};
use crate::geometry::{LabelArray, PerPointProbs, PointCloud};
use crate::io::{
    encode_histogram, encode_thresholds, read_calib, read_class_map, read_cloud_bin, read_histogram, read_label_remap,
    read_labels, read_tensor, write_atomic, write_cloud_bin, write_labels, write_tensor, ClassMap, LabelRemap,
    TensorFile,
};
use crate::projection::{lift_probs, merge_cameras, slice_cloud, FovMask, ProbMap};
use crate::refine::{refine, KdTree, RefineScheme};
use crate::threshold::{apply_threshold, thresholds_for, ClassHistogram, Reduction};

pub const PROBS_3D: &str = "probs_3d";
pub const FOV_MASK: &str = "fov_mask";
pub const REFINED: &str = "refined";
pub const REFINED_LABELS: &str = "refined_labels";
pub const PREDICTIONS: &str = "predictions";
pub const VELODYNE_FOV: &str = "velodyne_fov";
pub const PREDICTIONS_FOV: &str = "predictions_fov";

pub const HISTOGRAM_CSV: &str = "histogram.csv";
pub const THRESHOLDS_CSV: &str = "thresholds.csv";
pub const EVAL_CSV: &str = "eval.csv";

/// One scan of one sequence.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ScanId {
    pub sequence: String,
    pub frame: String,
}

/// Path conventions of a dataset and an output tree.
#[derive(Debug, Clone)]
pub struct Layout {
    pub dataset_root: PathBuf,
    pub output_root: PathBuf,
}

impl Layout {
    pub fn new(dataset_root: impl Into<PathBuf>, output_root: impl Into<PathBuf>) -> Self {
        Self {
            dataset_root: dataset_root.into(),
            output_root: output_root.into(),
        }
    }

    pub fn sequence_dir(&self, seq: &str) -> PathBuf {
        self.dataset_root.join("sequences").join(seq)
    }

    pub fn velodyne(&self, s: &ScanId) -> PathBuf {
        self.sequence_dir(&s.sequence).join("velodyne").join(format!("{}.bin", s.frame))
    }

    pub fn gt_labels(&self, s: &ScanId) -> PathBuf {
        self.sequence_dir(&s.sequence).join("labels").join(format!("{}.label", s.frame))
    }

    pub fn calib(&self, seq: &str) -> PathBuf {
        self.sequence_dir(seq).join("calib.txt")
    }

    pub fn probs_2d(&self, s: &ScanId, camera: u8) -> PathBuf {
        self.dataset_root
            .join("probs_2d/sequences")
            .join(&s.sequence)
            .join(format!("image_{camera}"))
            .join(format!("{}.ptns", s.frame))
    }

    /// `<output_root>/sequences/<seq>/<stage>/<frame>.<ext>`
    pub fn output(&self, s: &ScanId, stage: &str, ext: &str) -> PathBuf {
        self.output_root
            .join("sequences")
            .join(&s.sequence)
            .join(stage)
            .join(format!("{}.{ext}", s.frame))
    }

    pub fn table(&self, name: &str) -> PathBuf {
        self.output_root.join(name)
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Lists every `velodyne/*.bin` scan, sorted by sequence then frame.
/// An empty `sequences` filter selects all sequences.
pub fn discover_scans(dataset_root: &Path, sequences: &[String]) -> Result<Vec<ScanId>> {
    let seq_root = dataset_root.join("sequences");
    let names: Vec<String> = if sequences.is_empty() {
        sorted_entries(&seq_root)?
            .into_iter()
            .filter(|p| p.is_dir())
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect()
    } else {
        let mut s = sequences.to_vec();
        s.sort();
        s.dedup();
        s
    };
    let mut scans = Vec::new();
    for seq in names {
        let dir = seq_root.join(&seq).join("velodyne");
        for path in sorted_entries(&dir)? {
            if path.extension().is_some_and(|e| e == "bin") {
                if let Some(stem) = path.file_stem() {
                    scans.push(ScanId {
                        sequence: seq.clone(),
                        frame: stem.to_string_lossy().into_owned(),
                    });
                }
            }
        }
    }
    Ok(scans)
}

/// Writes per-point probabilities as an N×C float32 tensor; masked rows are
/// zeros and the mask lives in a separate file.
pub fn write_point_probs(probs: &PerPointProbs<f32>, path: &Path) -> Result<()> {
    let t = TensorFile::f32(vec![probs.len() as u32, probs.num_classes() as u32], probs.to_f32_vec())?;
    write_tensor(&t, path)
}

pub fn read_point_probs(probs_path: &Path, mask_path: &Path) -> Result<(PerPointProbs<f32>, FovMask)> {
    let mask = FovMask::from_tensor(&read_tensor(mask_path)?)?;
    let t = read_tensor(probs_path)?;
    let [n, c] = t.shape::<2>()?;
    if n != mask.len() {
        return Err(Error::SizeMismatch {
            expected: mask.len(),
            found: n,
        });
    }
    let data = t.as_f32()?.to_vec();
    let masked = mask.as_slice().iter().map(|&m| !m).collect();
    Ok((PerPointProbs::from_rows(c, data, masked)?, mask))
}

/// Largest odd K not above `available`.
fn usable_k(k: usize, available: usize) -> usize {
    if k <= available {
        k
    } else if available % 2 == 1 {
        available
    } else {
        available.saturating_sub(1).max(1)
    }
}

/// Lift → refine for one in-memory scan. Returns refined labels and the
/// probabilities thresholding should read.
pub fn refine_scan(
    cloud: &PointCloud<f32>,
    probs: &PerPointProbs<f32>,
    mask: &FovMask,
    scheme: RefineScheme,
    opts: &crate::refine::RefineOptions,
) -> Result<(LabelArray, PerPointProbs<f32>)> {
    opts.validate()?;
    if scheme == RefineScheme::None || mask.count() == 0 {
        return refine(RefineScheme::None, probs, None, opts);
    }
    let tree = KdTree::build(cloud, mask)?;
    let available = if opts.include_self { tree.len() } else { tree.len() - 1 };
    let mut opts = *opts;
    let k = usable_k(opts.k, available);
    if k != opts.k {
        warn!("only {available} points in view; using K={k} instead of {}", opts.k);
        opts.k = k;
    }
    if available == 0 {
        return refine(RefineScheme::None, probs, None, &opts);
    }
    refine(scheme, probs, Some(&tree), &opts)
}

/// Totals reported by the lift stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LiftSummary {
    pub scans: usize,
    pub points: usize,
    pub in_view: usize,
}

/// A loaded config plus everything derived from it.
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub classes: ClassMap,
    pub remap: Option<LabelRemap>,
    pub layout: Layout,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let classes = read_class_map(&cfg.class_map)?;
        let remap = cfg.label_remap.as_deref().map(read_label_remap).transpose()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.jobs)))?;
        let layout = Layout::new(&cfg.dataset_root, &cfg.output_root);
        Ok(Self {
            cfg,
            classes,
            remap,
            layout,
            pool,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn scans(&self) -> Result<Vec<ScanId>> {
        let scans = discover_scans(&self.cfg.dataset_root, &self.cfg.sequences)?;
        if scans.is_empty() {
            return Err(Error::EmptyInput(format!(
                "no scans under {}",
                self.cfg.dataset_root.join("sequences").display()
            )));
        }
        Ok(scans)
    }

    /// Runs `f` over every scan on the worker pool, keeping scan order.
    fn per_scan<R: Send>(&self, scans: &[ScanId], f: impl Fn(&ScanId) -> Result<R> + Sync) -> Result<Vec<R>> {
        self.pool.install(|| scans.par_iter().map(&f).collect())
    }

    fn lift_one(&self, s: &ScanId) -> Result<(usize, usize)> {
        let cloud: PointCloud<f32> = read_cloud_bin(&self.layout.velodyne(s))?;
        let mut views = Vec::with_capacity(self.cfg.cameras.len());
        let mut masks = Vec::with_capacity(self.cfg.cameras.len());
        for &cam in &self.cfg.cameras {
            let rig = read_calib(&self.layout.calib(&s.sequence), cam, self.cfg.image_size)?;
            let map_path = self.layout.probs_2d(s, cam);
            let map = ProbMap::from_tensor(&read_tensor(&map_path)?)?;
            if map.classes() != self.num_classes() {
                return Err(Error::DimMismatch(format!(
                    "{}: {} classes, class map has {}",
                    map_path.display(),
                    map.classes(),
                    self.num_classes()
                )));
            }
            let (p, m) = lift_probs(&map, &cloud, &rig, self.cfg.sampling)
                .map_err(|e| Error::DimMismatch(format!("{}: {e}", map_path.display())))?;
            views.push(p);
            masks.push(m);
        }
        let probs = if views.len() == 1 { views.pop().unwrap() } else { merge_cameras(&views)? };
        let mask = FovMask::union(&masks)?;
        write_point_probs(&probs, &self.layout.output(s, PROBS_3D, "ptns"))?;
        write_tensor(&mask.to_tensor(), &self.layout.output(s, FOV_MASK, "ptns"))?;
        Ok((cloud.len(), mask.count()))
    }

    /// Projects every scan's points into its camera(s) and lifts the image
    /// probabilities.
    pub fn lift(&self) -> Result<LiftSummary> {
        let scans = self.scans()?;
        let counts = self.per_scan(&scans, |s| self.lift_one(s))?;
        let summary = LiftSummary {
            scans: scans.len(),
            points: counts.iter().map(|c| c.0).sum(),
            in_view: counts.iter().map(|c| c.1).sum(),
        };
        info!(
            "lifted {} scans: {} of {} points in view",
            summary.scans, summary.in_view, summary.points
        );
        Ok(summary)
    }

    fn load_lifted(&self, s: &ScanId) -> Result<(PerPointProbs<f32>, FovMask)> {
        read_point_probs(&self.layout.output(s, PROBS_3D, "ptns"), &self.layout.output(s, FOV_MASK, "ptns"))
    }

    /// Neighborhood refinement of the lifted predictions. Returns the number
    /// of labels that changed.
    pub fn refine(&self) -> Result<usize> {
        let scans = self.scans()?;
        let opts = self.cfg.refinement.options();
        opts.validate()?;
        let changed = self.per_scan(&scans, |s| {
            let cloud: PointCloud<f32> = read_cloud_bin(&self.layout.velodyne(s))?;
            let (probs, mask) = self.load_lifted(s)?;
            if mask.len() != cloud.len() {
                return Err(Error::SizeMismatch {
                    expected: cloud.len(),
                    found: mask.len(),
                });
            }
            let (labels, refined) = refine_scan(&cloud, &probs, &mask, self.cfg.refinement.scheme, &opts)?;
            let before = probs.argmax_labels();
            write_point_probs(&refined, &self.layout.output(s, REFINED, "ptns"))?;
            write_labels(&labels, &self.layout.output(s, REFINED_LABELS, "label"))?;
            Ok(before.iter().zip(labels.iter()).filter(|(a, b)| a != b).count())
        })?;
        let changed = changed.iter().sum();
        info!("refined {} scans, {changed} labels changed", scans.len());
        Ok(changed)
    }

    /// Corpus first pass: class histogram of the refined labels.
    pub fn stats(&self) -> Result<ClassHistogram> {
        let scans = self.scans()?;
        let c = self.num_classes();
        let parts = self.per_scan(&scans, |s| {
            let labels = read_labels(&self.layout.output(s, REFINED_LABELS, "label"), c, None)?;
            let mut h = ClassHistogram::zeros(c);
            h.accumulate(&labels)?;
            Ok(h)
        })?;
        let mut hist = ClassHistogram::zeros(c);
        for h in &parts {
            hist.merge(h)?;
        }
        write_atomic(&self.layout.table(HISTOGRAM_CSV), encode_histogram(&hist).as_bytes())?;
        Ok(hist)
    }

    /// Applies per-class cutoffs (from the stored histogram) to the refined
    /// labels, writing the final pseudo-labels.
    pub fn threshold(&self) -> Result<(Vec<f32>, Reduction)> {
        let scans = self.scans()?;
        let c = self.num_classes();
        let hist = read_histogram(&self.layout.table(HISTOGRAM_CSV))?;
        if hist.num_classes() != c {
            return Err(Error::DimMismatch(format!(
                "histogram has {} classes, class map has {c}",
                hist.num_classes()
            )));
        }
        let taus: Vec<f32> = thresholds_for(&self.cfg.threshold, &hist)?;
        write_atomic(&self.layout.table(THRESHOLDS_CSV), encode_thresholds(&taus).as_bytes())?;
        let reductions = self.per_scan(&scans, |s| {
            let labels = read_labels(&self.layout.output(s, REFINED_LABELS, "label"), c, None)?;
            let (probs, _) = read_point_probs(
                &self.layout.output(s, REFINED, "ptns"),
                &self.layout.output(s, FOV_MASK, "ptns"),
            )?;
            let (kept, red) = apply_threshold(&labels, &probs.confidences(), &taus)?;
            write_labels(&kept, &self.layout.output(s, PREDICTIONS, "label"))?;
            Ok(red)
        })?;
        let total: Reduction = reductions.into_iter().sum();
        info!(
            "thresholding removed {} of {} labels ({:.2}%)",
            total.removed,
            total.labeled,
            100.0 * total.fraction()
        );
        Ok((taus, total))
    }

    /// Cuts every scan (and its pseudo-labels, when present) to the camera
    /// view. The FOV mask doubles as the index map back to the full scan.
    pub fn slice(&self) -> Result<usize> {
        let scans = self.scans()?;
        let c = self.num_classes();
        let kept = self.per_scan(&scans, |s| {
            let cloud: PointCloud<f32> = read_cloud_bin(&self.layout.velodyne(s))?;
            let mask = FovMask::from_tensor(&read_tensor(&self.layout.output(s, FOV_MASK, "ptns"))?)?;
            let (sliced, _) = slice_cloud(&cloud, &mask)?;
            write_cloud_bin(&sliced, &self.layout.output(s, VELODYNE_FOV, "bin"))?;
            let pred_path = self.layout.output(s, PREDICTIONS, "label");
            if pred_path.exists() {
                let labels = read_labels(&pred_path, c, None)?;
                let cut = LabelArray::new(mask.gather(labels.as_slice())?);
                write_labels(&cut, &self.layout.output(s, PREDICTIONS_FOV, "label"))?;
            }
            Ok(sliced.len())
        })?;
        Ok(kept.iter().sum())
    }

    /// Scores one output stage against the ground-truth labels, inside the
    /// camera view.
    pub fn evaluate_stage(&self, stage: &str, reduction: Option<Reduction>) -> Result<EvalSummary> {
        let scans = self.scans()?;
        let c = self.num_classes();
        let matrices = self.per_scan(&scans, |s| {
            let gt = read_labels(&self.layout.gt_labels(s), c, self.remap.as_ref())?;
            let pred = read_labels(&self.layout.output(s, stage, "label"), c, None)?;
            let mask = FovMask::from_tensor(&read_tensor(&self.layout.output(s, FOV_MASK, "ptns"))?)?;
            let mut m = ConfusionMatrix::new(c);
            m.accumulate(&gt, &pred, Some(&mask))?;
            Ok(m)
        })?;
        let reductions: Vec<Reduction> = reduction.into_iter().collect();
        summarize(&matrices, &reductions)
    }

    /// True when every scan has a ground-truth label file.
    pub fn has_ground_truth(&self) -> Result<bool> {
        Ok(self.scans()?.iter().all(|s| self.layout.gt_labels(s).is_file()))
    }

    /// lift → refine → stats → threshold, then evaluation when ground truth
    /// is available.
    pub fn run(&self) -> Result<PipelineReport> {
        let lift = self.lift()?;
        let changed = self.refine()?;
        let histogram = self.stats()?;
        let (thresholds, reduction) = self.threshold()?;
        let eval = if self.has_ground_truth()? {
            let summary = self.evaluate_stage(PREDICTIONS, Some(reduction))?;
            write_atomic(&self.layout.table(EVAL_CSV), summary.to_csv(Some(&self.classes)).as_bytes())?;
            Some(summary)
        } else {
            None
        };
        Ok(PipelineReport {
            lift,
            changed,
            histogram,
            thresholds,
            reduction,
            eval,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub lift: LiftSummary,
    pub changed: usize,
    pub histogram: ClassHistogram,
    pub thresholds: Vec<f32>,
    pub reduction: Reduction,
    pub eval: Option<EvalSummary>,
}

/// Pairs every `*.label` file under `pred_dir` with the file at the same
/// relative path under `gt_dir` (and the `.ptns` mask under `mask_dir`).
pub fn label_pairs(pred_dir: &Path, gt_dir: &Path, mask_dir: Option<&Path>) -> Result<Vec<(PathBuf, PathBuf, Option<PathBuf>)>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for p in sorted_entries(dir)? {
            if p.is_dir() {
                walk(&p, out)?;
            } else if p.extension().is_some_and(|e| e == "label") {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut preds = Vec::new();
    walk(pred_dir, &mut preds)?;
    if preds.is_empty() {
        return Err(Error::EmptyInput(format!("no .label files under {}", pred_dir.display())));
    }
    Ok(preds
        .into_iter()
        .map(|p| {
            let rel = p.strip_prefix(pred_dir).expect("walked below pred_dir").to_path_buf();
            let mask = mask_dir.map(|m| m.join(&rel).with_extension("ptns"));
            (p, gt_dir.join(&rel), mask)
        })
        .collect())
}

/// Dataset-level scores of prediction files against ground-truth files.
pub fn evaluate_files(
    pairs: &[(PathBuf, PathBuf, Option<PathBuf>)],
    num_classes: usize,
    remap: Option<&LabelRemap>,
) -> Result<EvalSummary> {
    let matrices = pairs
        .par_iter()
        .map(|(pred, gt, mask)| {
            let pred = read_labels(pred, num_classes, None)?;
            let gt = read_labels(gt, num_classes, remap)?;
            let mask = mask
                .as_deref()
                .map(|m| read_tensor(m).and_then(|t| FovMask::from_tensor(&t)))
                .transpose()?;
            let mut m = ConfusionMatrix::new(num_classes);
            m.accumulate(&gt, &pred, mask.as_ref())?;
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(&matrices, &[])
}
