//! Boundary benchmark: correspondence matching, precision/recall over 99
//! thresholds, ODS/OIS/AP summaries and the occlusion curves.
//!
//! Conventions:
//! - precision is 1 when nothing is predicted, recall is 1 when there is no
//!   ground truth, and F is 0 when both precision and recall are 0;
//! - dataset rows pool counts over images before computing ratios;
//! - occlusion precision (OPR) and accuracy (AOR) pool counts the same way
//!   and omit thresholds with no matched pixel.

mod matching;

use crate::angle::angular_distance;
use crate::error::{Error, Result};
use crate::maps::{BinaryMap, GroundTruth, OrientationMap, ProbabilityMap, ScalarMap};
use crate::parallel::Execution;

/// Number of thresholds in a sweep, `k/100` for `k = 1..=99`.
pub const N_THRESHOLDS: usize = 99;

pub fn thresholds() -> impl Iterator<Item = f64> {
    (1..=N_THRESHOLDS).map(|k| k as f64 / 100.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchParams {
    /// Match radius as a fraction of the image diagonal.
    pub d_max_frac: f64,
    /// Lower bound on the match radius in pixels.
    pub d_max_floor: f64,
    /// Orientations closer than this (folded) count as correct.
    pub orient_tol: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            d_max_frac: 0.0075,
            d_max_floor: std::f64::consts::SQRT_2,
            orient_tol: std::f64::consts::FRAC_PI_2,
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_max_frac > 0.0 && self.d_max_frac.is_finite()) {
            return Err(Error::param(format!(
                "d_max_frac must be > 0, got {}",
                self.d_max_frac
            )));
        }
        if !(self.d_max_floor >= 0.0 && self.d_max_floor.is_finite()) {
            return Err(Error::param(format!(
                "d_max_floor must be >= 0, got {}",
                self.d_max_floor
            )));
        }
        if !(self.orient_tol > 0.0 && self.orient_tol <= std::f64::consts::PI) {
            return Err(Error::param(format!(
                "orient_tol must lie in (0, pi], got {}",
                self.orient_tol
            )));
        }
        Ok(())
    }

    /// Match radius for a `width`×`height` image.
    pub fn d_max(&self, width: usize, height: usize) -> f64 {
        let diag = ((width * width + height * height) as f64).sqrt();
        self.d_max_floor.max(self.d_max_frac * diag)
    }
}

pub fn f_measure(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PRPoint {
    pub threshold: f64,
    pub tp: usize,
    pub n_pred: usize,
    pub n_gt: usize,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl PRPoint {
    pub fn from_counts(threshold: f64, tp: usize, n_pred: usize, n_gt: usize) -> Self {
        let precision = if n_pred == 0 { 1.0 } else { tp as f64 / n_pred as f64 };
        let recall = if n_gt == 0 { 1.0 } else { tp as f64 / n_gt as f64 };
        Self {
            threshold,
            tp,
            n_pred,
            n_gt,
            precision,
            recall,
            f: f_measure(precision, recall),
        }
    }
}

/// Matches predicted boundary pixels to ground-truth pixels one to one.
/// Returns the matched subsets of each side.
pub fn match_boundaries(
    pred: &BinaryMap,
    gt: &BinaryMap,
    params: &MatchParams,
) -> Result<(BinaryMap, BinaryMap)> {
    params.validate()?;
    if !pred.same_dims(gt) {
        return Err(Error::validation(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let pairs = matched_pairs(pred, gt, params.d_max(pred.width(), pred.height()));
    let (w, h) = (pred.width(), pred.height());
    let mut pm = vec![false; w * h];
    let mut gm = vec![false; w * h];
    for ((pr, pc), (gr, gc)) in pairs {
        pm[pr * w + pc] = true;
        gm[gr * w + gc] = true;
    }
    Ok((BinaryMap::from_mask(w, h, &pm)?, BinaryMap::from_mask(w, h, &gm)?))
}

/// Matched `(pred pixel, gt pixel)` pairs as `(row, col)` coordinates.
pub fn matched_pairs(
    pred: &BinaryMap,
    gt: &BinaryMap,
    d_max: f64,
) -> Vec<((usize, usize), (usize, usize))> {
    let pp = pred.pixels();
    let gp = gt.pixels();
    let cands = matching::candidates(&pp, &gp, pred.width(), pred.height(), d_max);
    matching::solve(&cands, pp.len(), gp.len(), |_| true)
        .into_iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|j| (pp[i], gp[j])))
        .collect()
}

/// Raw counts for one image at one threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub n_pred: usize,
    pub n_gt: usize,
    /// Matched pixels whose orientation agrees with the matched ground truth.
    pub orient_correct: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.tp += o.tp;
        self.n_pred += o.n_pred;
        self.n_gt += o.n_gt;
        self.orient_correct += o.orient_correct;
    }
}

fn check_batch(n_pred: usize, gts: &[GroundTruth]) -> Result<()> {
    if n_pred != gts.len() {
        return Err(Error::validation(format!(
            "{n_pred} predictions but {} ground truths",
            gts.len()
        )));
    }
    if gts.is_empty() {
        return Err(Error::validation("no images to evaluate"));
    }
    Ok(())
}

fn check_dims(i: usize, name: &str, map: &ScalarMap, gt: &GroundTruth) -> Result<()> {
    if !map.same_dims(&gt.boundary) {
        return Err(Error::validation(format!(
            "record {i}: {name} is {}x{} but ground truth is {}x{}",
            map.width(),
            map.height(),
            gt.width(),
            gt.height()
        )));
    }
    Ok(())
}

/// Counts at every threshold for one image. `orient` enables the
/// orientation-agreement count.
pub fn sweep_image(
    prob: &ProbabilityMap,
    orient: Option<&OrientationMap>,
    gt: &GroundTruth,
    params: &MatchParams,
) -> Vec<Counts> {
    let (w, h) = (prob.width(), prob.height());
    let t_min = 1.0 / 100.0;
    let pred_px: Vec<(usize, usize)> = (0..w * h)
        .filter(|&i| prob.values()[i] as f64 >= t_min)
        .map(|i| (i / w, i % w))
        .collect();
    let pred_val: Vec<f64> = pred_px.iter().map(|&(r, c)| prob.get(r, c) as f64).collect();
    let gt_px = gt.boundary.pixels();
    let cands = matching::candidates(&pred_px, &gt_px, w, h, params.d_max(w, h));
    thresholds()
        .map(|t| {
            let m = matching::solve(&cands, pred_px.len(), gt_px.len(), |i| pred_val[i] >= t);
            let mut c = Counts {
                n_pred: pred_val.iter().filter(|&&v| v >= t).count(),
                n_gt: gt_px.len(),
                ..Counts::default()
            };
            for (i, j) in m.iter().enumerate() {
                let Some(j) = *j else { continue };
                c.tp += 1;
                if let Some(o) = orient {
                    let (pr, pc) = pred_px[i];
                    let (gr, gc) = gt_px[j];
                    let d = angular_distance(o.get(pr, pc) as f64, gt.orientation.get(gr, gc) as f64);
                    if d < params.orient_tol {
                        c.orient_correct += 1;
                    }
                }
            }
            c
        })
        .collect()
}

/// Per-image and pooled precision/recall tables.
#[derive(Clone, Debug, PartialEq)]
pub struct PrSweep {
    pub per_image: Vec<Vec<PRPoint>>,
    pub dataset: Vec<PRPoint>,
}

fn tables(per_image_counts: &[Vec<Counts>]) -> PrSweep {
    let per_image = per_image_counts
        .iter()
        .map(|rows| {
            thresholds()
                .zip(rows)
                .map(|(t, c)| PRPoint::from_counts(t, c.tp, c.n_pred, c.n_gt))
                .collect()
        })
        .collect();
    let dataset = pooled(per_image_counts)
        .iter()
        .zip(thresholds())
        .map(|(c, t)| PRPoint::from_counts(t, c.tp, c.n_pred, c.n_gt))
        .collect();
    PrSweep { per_image, dataset }
}

fn pooled(per_image_counts: &[Vec<Counts>]) -> Vec<Counts> {
    let mut total = vec![Counts::default(); N_THRESHOLDS];
    for rows in per_image_counts {
        for (acc, c) in total.iter_mut().zip(rows) {
            *acc += *c;
        }
    }
    total
}

/// Precision/recall at the 99 thresholds. Predictions must already be
/// thinned.
pub fn pr_sweep(
    preds: &[ProbabilityMap],
    gts: &[GroundTruth],
    params: &MatchParams,
) -> Result<PrSweep> {
    pr_sweep_with(preds, gts, params, Execution::default())
}

pub fn pr_sweep_with(
    preds: &[ProbabilityMap],
    gts: &[GroundTruth],
    params: &MatchParams,
    exec: Execution,
) -> Result<PrSweep> {
    params.validate()?;
    check_batch(preds.len(), gts)?;
    for (i, (p, gt)) in preds.iter().zip(gts).enumerate() {
        check_dims(i, "prediction", p, gt)?;
    }
    let counts = exec.map_range(preds.len(), |i| sweep_image(&preds[i], None, &gts[i], params));
    Ok(tables(&counts))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSummary {
    pub ods_f: f64,
    pub ods_threshold: f64,
    pub ois_f: f64,
    pub ap: f64,
}

/// Index of the best F, lowest index on ties.
fn best_f(rows: &[PRPoint]) -> usize {
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.f > rows[best].f {
            best = i;
        }
    }
    best
}

/// ODS, OIS and AP from the tables of [`pr_sweep`].
pub fn summarize(dataset: &[PRPoint], per_image: &[Vec<PRPoint>]) -> Result<EvalSummary> {
    if dataset.is_empty() || per_image.is_empty() || per_image.iter().any(|r| r.is_empty()) {
        return Err(Error::validation("summary needs non-empty tables"));
    }
    let ods = best_f(dataset);
    let (mut tp, mut n_pred, mut n_gt) = (0, 0, 0);
    for rows in per_image {
        let b = &rows[best_f(rows)];
        tp += b.tp;
        n_pred += b.n_pred;
        n_gt += b.n_gt;
    }
    let ois = PRPoint::from_counts(0.0, tp, n_pred, n_gt);
    Ok(EvalSummary {
        ods_f: dataset[ods].f,
        ods_threshold: dataset[ods].threshold,
        ois_f: ois.f,
        ap: average_precision(dataset),
    })
}

/// Mean interpolated precision at recall levels 0.01, 0.02, …, 1.00.
pub fn average_precision(rows: &[PRPoint]) -> f64 {
    let total: f64 = (1..=100)
        .map(|k| {
            let r = k as f64 / 100.0;
            rows.iter()
                .filter(|p| p.recall >= r - 1e-12)
                .map(|p| p.precision)
                .fold(0.0, f64::max)
        })
        .sum();
    total / 100.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OcclusionCurvePoint {
    pub threshold: f64,
    pub recall: f64,
    pub value: f64,
}

fn occlusion_points(pooled: &[Counts]) -> Vec<OcclusionCurvePoint> {
    thresholds()
        .zip(pooled)
        .filter(|(_, c)| c.tp > 0)
        .map(|(t, c)| OcclusionCurvePoint {
            threshold: t,
            recall: if c.n_gt == 0 { 1.0 } else { c.tp as f64 / c.n_gt as f64 },
            value: c.orient_correct as f64 / c.tp as f64,
        })
        .collect()
}

fn occlusion_counts(
    preds: &[(ProbabilityMap, OrientationMap)],
    gts: &[GroundTruth],
    params: &MatchParams,
    exec: Execution,
) -> Result<Vec<Vec<Counts>>> {
    params.validate()?;
    check_batch(preds.len(), gts)?;
    for (i, ((p, o), gt)) in preds.iter().zip(gts).enumerate() {
        check_dims(i, "prediction", p, gt)?;
        check_dims(i, "orientation", o, gt)?;
    }
    Ok(exec.map_range(preds.len(), |i| {
        sweep_image(&preds[i].0, Some(&preds[i].1), &gts[i], params)
    }))
}

/// Occlusion precision against boundary recall: the fraction of correctly
/// detected boundary pixels whose orientation is also correct.
pub fn opr_curve(
    preds: &[(ProbabilityMap, OrientationMap)],
    gts: &[GroundTruth],
    params: &MatchParams,
) -> Result<Vec<OcclusionCurvePoint>> {
    let counts = occlusion_counts(preds, gts, params, Execution::default())?;
    Ok(occlusion_points(&pooled(&counts)))
}

/// Occlusion accuracy against boundary recall: correct-orientation pixels
/// over correctly labelled boundary pixels, with recall the detected
/// fraction of ground-truth boundary.
pub fn aor_curve(
    preds: &[(ProbabilityMap, OrientationMap)],
    gts: &[GroundTruth],
    params: &MatchParams,
) -> Result<Vec<OcclusionCurvePoint>> {
    // same pooled ratio as OPR under these definitions
    let counts = occlusion_counts(preds, gts, params, Execution::default())?;
    Ok(occlusion_points(&pooled(&counts)))
}

/// Everything the `eval` pipeline reports, from a single matching pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub sweep: PrSweep,
    pub summary: EvalSummary,
    pub opr: Vec<OcclusionCurvePoint>,
    pub aor: Vec<OcclusionCurvePoint>,
}

pub fn evaluate(
    preds: &[(ProbabilityMap, OrientationMap)],
    gts: &[GroundTruth],
    params: &MatchParams,
    exec: Execution,
) -> Result<Evaluation> {
    let counts = occlusion_counts(preds, gts, params, exec)?;
    let sweep = tables(&counts);
    let summary = summarize(&sweep.dataset, &sweep.per_image)?;
    let opr = occlusion_points(&pooled(&counts));
    Ok(Evaluation {
        sweep,
        summary,
        aor: opr.clone(),
        opr,
    })
}

/// `threshold,recall,precision,f`
pub fn pr_csv(rows: &[PRPoint]) -> String {
    let mut out = String::from("threshold,recall,precision,f\n");
    for r in rows {
        out.push_str(&format!("{:?},{:?},{:?},{:?}\n", r.threshold, r.recall, r.precision, r.f));
    }
    out
}

/// `threshold,recall,value`
pub fn occlusion_csv(points: &[OcclusionCurvePoint]) -> String {
    let mut out = String::from("threshold,recall,value\n");
    for p in points {
        out.push_str(&format!("{:?},{:?},{:?}\n", p.threshold, p.recall, p.value));
    }
    out
}

/// `ods_f,ods_threshold,ois_f,ap` header plus one row.
pub fn summary_csv(s: &EvalSummary) -> String {
    format!(
        "ods_f,ods_threshold,ois_f,ap\n{:?},{:?},{:?},{:?}\n",
        s.ods_f, s.ods_threshold, s.ois_f, s.ap
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bmap(w: usize, h: usize, px: &[(usize, usize)]) -> BinaryMap {
        let mut mask = vec![false; w * h];
        for &(r, c) in px {
            mask[r * w + c] = true;
        }
        BinaryMap::from_mask(w, h, &mask).unwrap()
    }

    fn gt_of(b: BinaryMap, theta: f32) -> GroundTruth {
        let o = ScalarMap::new(
            b.width(),
            b.height(),
            b.values().iter().map(|&v| v * theta).collect(),
        )
        .unwrap();
        GroundTruth::new(b, OrientationMap::new(o)).unwrap()
    }

    #[test]
    fn f_measure_examples() {
        assert_eq!(f_measure(1.0, 1.0), 1.0);
        assert_eq!(f_measure(0.5, 0.5), 0.5);
        assert_eq!(f_measure(1.0, 0.0), 0.0);
        assert_eq!(f_measure(0.0, 0.0), 0.0);
    }

    #[test]
    fn match_examples() {
        let p = MatchParams::default();
        let a = bmap(8, 8, &[(1, 1), (2, 2), (5, 6)]);
        let (pm, gm) = match_boundaries(&a, &a, &p).unwrap();
        assert_eq!((pm.count(), gm.count()), (3, 3));

        let pred = bmap(8, 8, &[(3, 3)]);
        let gt = bmap(8, 8, &[(3, 4)]);
        let (pm, gm) = match_boundaries(&pred, &gt, &p).unwrap();
        assert_eq!((pm.count(), gm.count()), (1, 1));

        let far = bmap(8, 8, &[(3, 6)]);
        assert_eq!(match_boundaries(&pred, &far, &p).unwrap().0.count(), 0);

        assert!(match_boundaries(&pred, &bmap(7, 8, &[]), &p).is_err());
    }

    #[test]
    fn prpoint_conventions() {
        let empty = PRPoint::from_counts(0.5, 0, 0, 10);
        assert_eq!((empty.precision, empty.recall, empty.f), (1.0, 0.0, 0.0));
        let no_gt = PRPoint::from_counts(0.5, 0, 4, 0);
        assert_eq!((no_gt.precision, no_gt.recall), (0.0, 1.0));
    }

    /// Two images with hand-picked counts at three active thresholds.
    #[test]
    fn summary_matches_hand_calculation() {
        let mk = |rows: &[(usize, usize, usize)]| -> Vec<PRPoint> {
            rows.iter()
                .enumerate()
                .map(|(k, &(tp, np, ng))| PRPoint::from_counts((k + 1) as f64 / 100.0, tp, np, ng))
                .collect()
        };
        // image A: t1 (8,16,10) F=.6154  t2 (6,8,10) F=.6667  t3 (2,2,10) F=.3333
        // image B: t1 (9,10,10) F=.9     t2 (5,5,10) F=.6667  t3 (1,1,10) F=.1818
        let a = mk(&[(8, 16, 10), (6, 8, 10), (2, 2, 10)]);
        let b = mk(&[(9, 10, 10), (5, 5, 10), (1, 1, 10)]);
        let dataset = mk(&[(17, 26, 20), (11, 13, 20), (3, 3, 20)]);
        let s = summarize(&dataset, &[a, b]).unwrap();
        // dataset F: t1 2·(17/26)(17/20)/(17/26+17/20) = 34/46, t2 22/33, t3 6/23
        assert!((s.ods_f - 34.0 / 46.0).abs() < 1e-12);
        assert_eq!(s.ods_threshold, 0.01);
        // OIS: A at t2 (6,8,10), B at t1 (9,10,10) -> P=15/18, R=15/20
        let (p, r) = (15.0 / 18.0, 15.0 / 20.0);
        assert!((s.ois_f - 2.0 * p * r / (p + r)).abs() < 1e-12);
        // AP: recall levels <= .15 reach P=1 (t3), <= .55 reach 11/13, <= .85 reach 17/26
        let ap = (15.0 * 1.0 + 40.0 * 11.0 / 13.0 + 30.0 * 17.0 / 26.0) / 100.0;
        assert!((s.ap - ap).abs() < 1e-12);
    }

    #[test]
    fn single_image_ois_equals_ods() {
        let gt = gt_of(bmap(12, 12, &[(3, 3), (3, 4), (3, 5), (8, 8)]), 0.5);
        let pred = ProbabilityMap::new(
            ScalarMap::from_fn(12, 12, |r, c| match (r, c) {
                (3, 3) => 0.9,
                (3, 5) => 0.4,
                (9, 9) => 0.7,
                (6, 1) => 0.2,
                _ => 0.0,
            })
            .unwrap(),
        )
        .unwrap();
        let sw = pr_sweep(&[pred], &[gt], &MatchParams::default()).unwrap();
        let s = summarize(&sw.dataset, &sw.per_image).unwrap();
        assert_eq!(s.ois_f, s.ods_f);
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let b = bmap(16, 16, &[(4, 4), (4, 5), (4, 6), (10, 2)]);
        let gt = gt_of(b.clone(), 1.0);
        let params = MatchParams::default();
        let sw = pr_sweep(&[b.as_probability()], &[gt.clone()], &params).unwrap();
        assert!(sw.dataset.iter().all(|r| (r.precision, r.recall, r.f) == (1.0, 1.0, 1.0)));
        let s = summarize(&sw.dataset, &sw.per_image).unwrap();
        assert_eq!((s.ods_f, s.ods_threshold, s.ois_f, s.ap), (1.0, 0.01, 1.0, 1.0));

        let zero = ProbabilityMap::new(ScalarMap::zeros(16, 16)).unwrap();
        let sw = pr_sweep(&[zero], &[gt], &params).unwrap();
        assert!(sw.dataset.iter().all(|r| (r.precision, r.recall, r.f) == (1.0, 0.0, 0.0)));
        assert!(pr_sweep(&[], &[], &params).is_err());
    }

    #[test]
    fn occlusion_curves_flip_and_perturb() {
        let b = bmap(16, 16, &[(4, 4), (4, 5), (4, 6), (10, 2)]);
        let gt = gt_of(b.clone(), 1.0);
        let params = MatchParams::default();
        let exact = OrientationMap::new(gt.orientation.as_map().clone());
        let pts = opr_curve(&[(b.as_probability(), exact)], &[gt.clone()], &params).unwrap();
        assert_eq!(pts.len(), 99);
        assert!(pts.iter().all(|p| p.value == 1.0 && p.recall == 1.0));

        let flipped = OrientationMap::new(
            ScalarMap::from_fn(16, 16, |r, c| if b.is_set(r, c) { 1.0 - std::f32::consts::PI } else { 0.0 })
                .unwrap(),
        );
        let pts = opr_curve(&[(b.as_probability(), flipped)], &[gt.clone()], &params).unwrap();
        assert!(pts.iter().all(|p| p.value == 0.0));

        let perturbed = OrientationMap::new(
            ScalarMap::from_fn(16, 16, |r, c| {
                if b.is_set(r, c) {
                    1.0 + if (r + c) % 2 == 0 { 0.3 } else { -0.3 }
                } else {
                    0.0
                }
            })
            .unwrap(),
        );
        let pts = aor_curve(&[(b.as_probability(), perturbed)], &[gt.clone()], &params).unwrap();
        assert!(pts.iter().all(|p| p.value == 1.0));

        let zero = ProbabilityMap::new(ScalarMap::zeros(16, 16)).unwrap();
        let o = OrientationMap::new(ScalarMap::zeros(16, 16));
        assert!(aor_curve(&[(zero, o)], &[gt], &params).unwrap().is_empty());
    }

    #[test]
    fn csv_layouts() {
        let s = EvalSummary {
            ods_f: 1.0,
            ods_threshold: 0.01,
            ois_f: 1.0,
            ap: 1.0,
        };
        assert_eq!(summary_csv(&s), "ods_f,ods_threshold,ois_f,ap\n1.0,0.01,1.0,1.0\n");
        let rows = vec![PRPoint::from_counts(0.5, 1, 2, 2)];
        assert_eq!(pr_csv(&rows), "threshold,recall,precision,f\n0.5,0.5,0.5,0.5\n");
        let pts = vec![OcclusionCurvePoint { threshold: 0.25, recall: 1.0, value: 0.5 }];
        assert_eq!(occlusion_csv(&pts), "threshold,recall,value\n0.25,1.0,0.5\n");
    }
}
