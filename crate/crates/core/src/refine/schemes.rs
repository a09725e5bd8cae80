use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kdtree::{KdTree, Neighborhood};
use crate::error::{Error, Result};
use crate::geometry::{ClassId, LabelArray, PerPointProbs, IGNORE_ID};
use crate::scalar::{argmax, Scalar};

pub const DEFAULT_K: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineScheme {
    /// Lifted predictions as they are.
    None,
    Majority,
    DistanceWeighted,
    #[default]
    ConfidenceAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestClass,
    /// Keep the point's own argmax label when it is among the tied classes.
    KeepOriginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineOptions {
    pub k: usize,
    pub include_self: bool,
    pub tie_break: TieBreak,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            include_self: true,
            tie_break: TieBreak::LowestClass,
        }
    }
}

impl RefineOptions {
    pub fn with_k(k: usize) -> Self {
        Self { k, ..Self::default() }
    }

    /// K must be odd and at least 1.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k.is_multiple_of(2) {
            return Err(Error::BadK {
                k: self.k,
                reason: "must be odd and >= 1".into(),
            });
        }
        Ok(())
    }
}

/// `1 − softmax(d)` over a neighborhood's distances.
pub fn distance_weights<T: Scalar>(distances: &[T]) -> Vec<T> {
    let max = distances.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = distances.iter().map(|&d| (d - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| T::one() - e / total).collect()
}

/// Best-scoring class among `candidates` (classes that received a vote).
fn pick<S: PartialOrd + Copy>(scores: &[S], voted: &[bool], original: ClassId, tie: TieBreak) -> ClassId {
    let mut best: Option<(usize, S)> = None;
    for (c, (&s, &v)) in scores.iter().zip(voted).enumerate() {
        if !v {
            continue;
        }
        match best {
            Some((_, b)) if !(s > b) => {}
            _ => best = Some((c, s)),
        }
    }
    let Some((winner, top)) = best else {
        return original;
    };
    if tie == TieBreak::KeepOriginal {
        let o = original as usize;
        if o < scores.len() && voted[o] && !(scores[o] < top) && !(scores[o] > top) {
            return original;
        }
    }
    winner as ClassId
}

fn row_label<T: Scalar>(probs: &PerPointProbs<T>, i: usize) -> ClassId {
    argmax(probs.row(i)).unwrap_or(0) as ClassId
}

fn check_dims<T: Scalar>(probs: &PerPointProbs<T>, tree: &KdTree<T>, opts: &RefineOptions) -> Result<()> {
    opts.validate()?;
    let available = if opts.include_self { tree.len() } else { tree.len().saturating_sub(1) };
    if opts.k > available {
        return Err(Error::BadK {
            k: opts.k,
            reason: format!("only {available} indexed neighbors available"),
        });
    }
    if let Some(i) = tree.indexed().into_iter().find(|&i| i >= probs.len() || probs.is_masked(i)) {
        return Err(Error::DimMismatch(format!("indexed point {i} has no probability row")));
    }
    Ok(())
}

fn per_point<T: Scalar, R: Send>(
    probs: &PerPointProbs<T>,
    tree: &KdTree<T>,
    opts: &RefineOptions,
    f: impl Fn(&Neighborhood<T>) -> R + Sync + Send,
) -> Result<Vec<(usize, R)>> {
    check_dims(probs, tree, opts)?;
    let hoods = tree.all_neighborhoods(opts.k, opts.include_self)?;
    Ok(hoods.par_iter().map(|n| (n.query, f(n))).collect())
}

fn scatter_labels(n: usize, results: impl IntoIterator<Item = (usize, ClassId)>) -> LabelArray {
    let mut labels = vec![IGNORE_ID; n];
    for (i, l) in results {
        labels[i] = l;
    }
    LabelArray::new(labels)
}

/// Most frequent argmax label among the K neighbors.
pub fn refine_majority<T: Scalar>(probs: &PerPointProbs<T>, tree: &KdTree<T>, opts: &RefineOptions) -> Result<LabelArray> {
    let c = probs.num_classes();
    let results = per_point(probs, tree, opts, |n| {
        let mut votes = vec![0u32; c];
        let mut voted = vec![false; c];
        for &j in &n.indices {
            let l = row_label(probs, j) as usize;
            votes[l] += 1;
            voted[l] = true;
        }
        pick(&votes, &voted, row_label(probs, n.query), opts.tie_break)
    })?;
    Ok(scatter_labels(probs.len(), results))
}

/// Votes weighted by `1 − softmax(distances)`; only classes that received a
/// vote compete.
pub fn refine_distance_weighted<T: Scalar>(
    probs: &PerPointProbs<T>,
    tree: &KdTree<T>,
    opts: &RefineOptions,
) -> Result<LabelArray> {
    let c = probs.num_classes();
    let results = per_point(probs, tree, opts, |n| {
        let weights = distance_weights(&n.distances);
        let mut scores = vec![T::zero(); c];
        let mut voted = vec![false; c];
        for (&j, &w) in n.indices.iter().zip(&weights) {
            let l = row_label(probs, j) as usize;
            scores[l] = scores[l] + w;
            voted[l] = true;
        }
        pick(&scores, &voted, row_label(probs, n.query), opts.tie_break)
    })?;
    Ok(scatter_labels(probs.len(), results))
}

/// Unweighted mean of the neighbors' probability rows, then argmax.
pub fn refine_confidence_avg<T: Scalar>(
    probs: &PerPointProbs<T>,
    tree: &KdTree<T>,
    opts: &RefineOptions,
) -> Result<(LabelArray, PerPointProbs<T>)> {
    let c = probs.num_classes();
    let results = per_point(probs, tree, opts, |n| {
        let mut mean = vec![T::zero(); c];
        for &j in &n.indices {
            for (m, &p) in mean.iter_mut().zip(probs.row(j)) {
                *m = *m + p;
            }
        }
        let k = T::from_usize_lossy(n.indices.len());
        mean.iter_mut().for_each(|m| *m = *m / k);
        let label = pick(&mean, &vec![true; c], row_label(probs, n.query), opts.tie_break);
        (label, mean)
    })?;
    let mut refined = PerPointProbs::masked(probs.len(), c);
    let mut labels = vec![IGNORE_ID; probs.len()];
    for (i, (l, row)) in results {
        labels[i] = l;
        refined.set_row(i, &row);
    }
    Ok((LabelArray::new(labels), refined))
}

fn one_hot<T: Scalar>(labels: &LabelArray, template: &PerPointProbs<T>) -> PerPointProbs<T> {
    let c = template.num_classes();
    let mut out = PerPointProbs::masked(template.len(), c);
    let mut row = vec![T::zero(); c];
    for (i, &l) in labels.iter().enumerate() {
        if template.is_masked(i) {
            continue;
        }
        row.iter_mut().for_each(|r| *r = T::zero());
        row[l as usize] = T::one();
        out.set_row(i, &row);
    }
    out
}

/// Runs `scheme` and returns labels plus the probabilities that downstream
/// thresholding should read. Voting schemes yield one-hot rows.
pub fn refine<T: Scalar>(
    scheme: RefineScheme,
    probs: &PerPointProbs<T>,
    tree: Option<&KdTree<T>>,
    opts: &RefineOptions,
) -> Result<(LabelArray, PerPointProbs<T>)> {
    let need_tree = || tree.ok_or_else(|| Error::EmptyInput("refinement needs a KD-tree".into()));
    match scheme {
        RefineScheme::None => Ok((probs.argmax_labels(), probs.clone())),
        RefineScheme::Majority => {
            let labels = refine_majority(probs, need_tree()?, opts)?;
            let hot = one_hot(&labels, probs);
            Ok((labels, hot))
        }
        RefineScheme::DistanceWeighted => {
            let labels = refine_distance_weighted(probs, need_tree()?, opts)?;
            let hot = one_hot(&labels, probs);
            Ok((labels, hot))
        }
        RefineScheme::ConfidenceAverage => refine_confidence_avg(probs, need_tree()?, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point, PointCloud};

    fn line_cloud(xs: &[f64]) -> PointCloud<f64> {
        xs.iter().map(|&x| Point::new(x, 0.0, 0.0, 0.0)).collect()
    }

    fn one_hot_rows(labels: &[usize], c: usize) -> PerPointProbs<f64> {
        let data = labels
            .iter()
            .flat_map(|&l| (0..c).map(move |j| if j == l { 1.0 } else { 0.0 }))
            .collect();
        PerPointProbs::from_dense(c, data).unwrap()
    }

    const BUILDING: usize = 1;
    const CAR: usize = 2;

    #[test]
    fn k1_is_argmax() {
        let c = line_cloud(&[0.0, 1.0, 2.0]);
        let p = PerPointProbs::from_dense(3, vec![0.1, 0.7, 0.2, 0.5, 0.1, 0.4, 0.0, 0.3, 0.7]).unwrap();
        let t = KdTree::build_all(&c).unwrap();
        let o = RefineOptions::with_k(1);
        assert_eq!(refine_majority(&p, &t, &o).unwrap(), p.argmax_labels());
        assert_eq!(refine_distance_weighted(&p, &t, &o).unwrap(), p.argmax_labels());
        let (l, r) = refine_confidence_avg(&p, &t, &o).unwrap();
        assert_eq!(l, p.argmax_labels());
        assert_eq!(r, p);
    }

    #[test]
    fn strict_majority() {
        let c = line_cloud(&[0.0, 0.1, 0.2]);
        let p = one_hot_rows(&[CAR, CAR, BUILDING], 3);
        let t = KdTree::build_all(&c).unwrap();
        let l = refine_majority(&p, &t, &RefineOptions::with_k(3)).unwrap();
        assert_eq!(l.as_slice(), &[CAR as u16; 3]);
    }

    #[test]
    fn three_way_tie_lowest_class() {
        let c = line_cloud(&[0.0, 0.1, 0.2]);
        let p = one_hot_rows(&[3, 2, 1], 4);
        let t = KdTree::build_all(&c).unwrap();
        let l = refine_majority(&p, &t, &RefineOptions::with_k(3)).unwrap();
        assert_eq!(l.as_slice(), &[1, 1, 1]);
        let keep = RefineOptions {
            tie_break: TieBreak::KeepOriginal,
            ..RefineOptions::with_k(3)
        };
        assert_eq!(refine_majority(&p, &t, &keep).unwrap().as_slice(), &[3, 2, 1]);
    }

    #[test]
    fn softmax_weights_hand_example() {
        // d = [0,1,1]: softmax = [1, e, e] / (1 + 2e)
        let w = distance_weights(&[0.0f64, 1.0, 1.0]);
        let e = std::f64::consts::E;
        let s0 = 1.0 / (1.0 + 2.0 * e);
        assert!((w[0] - (1.0 - s0)).abs() < 1e-15);
        assert!((w[0] - 0.8446).abs() < 1e-4 && (w[1] - 0.5777).abs() < 1e-4 && w[1] == w[2]);
    }

    #[test]
    fn distance_weighted_hand_example() {
        // query at 0 (building), two cars both 1 m away
        let c = PointCloud::new(vec![
            Point::new(0.0, 0.0, 0.0, 0.0),
            Point::new(1.0, 0.0, 0.0, 0.0),
            Point::new(-1.0, 0.0, 0.0, 0.0),
            Point::new(0.0, 50.0, 0.0, 0.0),
        ])
        .unwrap();
        let p = one_hot_rows(&[BUILDING, CAR, CAR, BUILDING], 3);
        let t = KdTree::build_all(&c).unwrap();
        let l = refine_distance_weighted(&p, &t, &RefineOptions::with_k(3)).unwrap();
        assert_eq!(l[0], CAR as u16);
    }

    #[test]
    fn equal_distances_match_majority() {
        // query at the center of a regular triangle: all neighbors 1 m away,
        // self excluded so every weight is equal
        let pts: Vec<Point<f64>> = std::iter::once(Point::new(0.0, 0.0, 0.0, 0.0))
            .chain((0..3).map(|k| {
                let a = k as f64 * std::f64::consts::TAU / 3.0;
                Point::new(a.cos(), a.sin(), 0.0, 0.0)
            }))
            .collect();
        let c = PointCloud::new(pts).unwrap();
        let p = one_hot_rows(&[1, 2, 1, 2], 3);
        let t = KdTree::build_all(&c).unwrap();
        let o = RefineOptions {
            include_self: false,
            ..RefineOptions::with_k(3)
        };
        let n = t.neighbors_excluding(0, 3).unwrap();
        assert!(n.distances.iter().all(|&d| (d - 1.0).abs() < 1e-12));
        assert_eq!(
            refine_distance_weighted(&p, &t, &o).unwrap()[0],
            refine_majority(&p, &t, &o).unwrap()[0]
        );
    }

    #[test]
    fn confidence_average_hand_example() {
        let c = line_cloud(&[0.0, 0.1, 0.2]);
        let p = PerPointProbs::from_dense(2, vec![0.9, 0.1, 0.2, 0.8, 0.1, 0.9]).unwrap();
        let t = KdTree::build_all(&c).unwrap();
        let (l, r) = refine_confidence_avg(&p, &t, &RefineOptions::with_k(3)).unwrap();
        assert_eq!(l[0], 1);
        assert!((r.row(0)[0] - 0.4).abs() < 1e-12 && (r.row(0)[1] - 0.6).abs() < 1e-12);
        assert!((r.confidences()[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn shared_row_unchanged() {
        let c = line_cloud(&[0.0, 0.5, 1.0, 1.5, 2.0]);
        let row = [0.25, 0.5, 0.25];
        let p = PerPointProbs::from_dense(3, row.repeat(5)).unwrap();
        let t = KdTree::build_all(&c).unwrap();
        let (_, r) = refine_confidence_avg(&p, &t, &RefineOptions::with_k(5)).unwrap();
        for i in 0..5 {
            assert_eq!(r.row(i), &row);
        }
    }

    #[test]
    fn bad_k() {
        let c = line_cloud(&[0.0, 1.0, 2.0]);
        let p = one_hot_rows(&[1, 1, 1], 2);
        let t = KdTree::build_all(&c).unwrap();
        for k in [0, 2, 5] {
            assert!(matches!(refine_majority(&p, &t, &RefineOptions::with_k(k)), Err(Error::BadK { .. })));
        }
        let excl = RefineOptions {
            include_self: false,
            ..RefineOptions::with_k(3)
        };
        assert!(matches!(refine_majority(&p, &t, &excl), Err(Error::BadK { .. })));
    }

    #[test]
    fn masked_points_stay_ignored() {
        let c = line_cloud(&[0.0, 1.0, 2.0, 3.0]);
        let p = PerPointProbs::from_rows(2, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0], vec![false, true, false, false])
            .unwrap();
        let mask = crate::projection::FovMask::from_bools(vec![true, false, true, true]);
        let t = KdTree::build(&c, &mask).unwrap();
        let (l, r) = refine(RefineScheme::ConfidenceAverage, &p, Some(&t), &RefineOptions::with_k(3)).unwrap();
        assert_eq!(l.as_slice(), &[1, 0, 1, 1]);
        assert!(r.is_masked(1));
        let (lm, hot) = refine(RefineScheme::Majority, &p, Some(&t), &RefineOptions::with_k(3)).unwrap();
        assert_eq!(lm.as_slice(), &[1, 0, 1, 1]);
        assert_eq!(hot.row(0), &[0.0, 1.0]);
        // tree indexes a point without a probability row
        let all = KdTree::build_all(&c).unwrap();
        assert!(matches!(refine_majority(&p, &all, &RefineOptions::with_k(1)), Err(Error::DimMismatch(_))));
    }
}
