//! Boundary and orientation losses with analytic first derivatives.
//!
//! All probability-domain losses clamp `p` to `[eps, 1 − eps]` before taking
//! logs or fractional powers and report the derivative at the clamped point.

use std::fmt;

use crate::angle::is_stored_angle;
use crate::error::{Error, Result};
use crate::maps::{BinaryMap, GroundTruth, OrientationMap, ProbabilityMap, ScalarMap};

pub const DEFAULT_CLAMP_EPS: f64 = 1e-6;

/// Loss value and its derivative with respect to the input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub grad: f64,
}

/// Modulation of the attention loss: factors `β^{(1−p)^γ}` on positives and
/// `β^{p^γ}` on negatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionParams {
    beta: f64,
    gamma: f64,
}

impl AttentionParams {
    pub fn new(beta: f64, gamma: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::param(format!("beta must be > 0, got {beta}")));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::param(format!("gamma must be >= 0, got {gamma}")));
        }
        Ok(Self { beta, gamma })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Default for AttentionParams {
    fn default() -> Self {
        Self {
            beta: 4.0,
            gamma: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalParams {
    alpha: f64,
    gamma: f64,
}

impl FocalParams {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::param(format!("focal alpha must lie in (0, 1), got {alpha}")));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::param(format!("focal gamma must be >= 0, got {gamma}")));
        }
        Ok(Self { alpha, gamma })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

/// Which per-pixel loss drives the boundary head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundaryLoss {
    Cce,
    Focal(FocalParams),
    Attention(AttentionParams),
}

impl Default for BoundaryLoss {
    fn default() -> Self {
        BoundaryLoss::Attention(AttentionParams::default())
    }
}

impl fmt::Display for BoundaryLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryLoss::Cce => write!(f, "cce"),
            BoundaryLoss::Focal(p) => write!(f, "focal(alpha={}, gamma={})", p.alpha, p.gamma),
            BoundaryLoss::Attention(p) => {
                write!(f, "attention(beta={}, gamma={})", p.beta, p.gamma)
            }
        }
    }
}

impl BoundaryLoss {
    /// Per-pixel loss; `alpha` is the batch class balance (ignored by focal,
    /// which carries its own weight).
    pub fn eval(&self, p: f64, positive: bool, alpha: f64, eps: f64) -> Result<LossEval> {
        check_probability(p, eps)?;
        check_alpha(alpha)?;
        Ok(self.eval_unchecked(p, positive, alpha, eps))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, p: f64, positive: bool, alpha: f64, eps: f64) -> LossEval {
        match self {
            BoundaryLoss::Cce => cce_unchecked(p, positive, alpha, eps),
            BoundaryLoss::Focal(fp) => focal_unchecked(p, positive, fp, eps),
            BoundaryLoss::Attention(ap) => attention_unchecked(p, positive, alpha, ap, eps),
        }
    }
}

/// Weighting and shape parameters of the combined boundary + orientation
/// objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultiTaskParams {
    pub boundary: BoundaryLoss,
    sigma: f64,
    lambda: f64,
    clamp_eps: f64,
}

impl MultiTaskParams {
    pub fn new(boundary: BoundaryLoss, sigma: f64, lambda: f64, clamp_eps: f64) -> Result<Self> {
        check_sigma(sigma)?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::param(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(clamp_eps > 0.0 && clamp_eps < 0.01) {
            return Err(Error::param(format!(
                "clamp eps must lie in (0, 0.01), got {clamp_eps}"
            )));
        }
        Ok(Self {
            boundary,
            sigma,
            lambda,
            clamp_eps,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn clamp_eps(&self) -> f64 {
        self.clamp_eps
    }

    pub fn with_boundary(mut self, boundary: BoundaryLoss) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_lambda(self, lambda: f64) -> Result<Self> {
        Self::new(self.boundary, self.sigma, lambda, self.clamp_eps)
    }
}

impl Default for MultiTaskParams {
    fn default() -> Self {
        Self {
            boundary: BoundaryLoss::default(),
            sigma: 3.0,
            lambda: 0.5,
            clamp_eps: DEFAULT_CLAMP_EPS,
        }
    }
}

/// Fraction of non-boundary pixels over a whole batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassBalance {
    pub alpha: f64,
}

pub fn compute_alpha<'a, I>(gts: I) -> Result<ClassBalance>
where
    I: IntoIterator<Item = &'a BinaryMap>,
{
    let mut total = 0usize;
    let mut boundary = 0usize;
    for gt in gts {
        total += gt.len();
        boundary += gt.count();
    }
    if total == 0 {
        return Err(Error::param("class balance needs at least one map"));
    }
    Ok(ClassBalance {
        alpha: (total - boundary) as f64 / total as f64,
    })
}

fn check_probability(p: f64, eps: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::param(format!("probability {p} outside [0, 1]")));
    }
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::param(format!("clamp eps {eps} must lie in (0, 0.5)")));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("sigma must be > 0, got {sigma}")));
    }
    Ok(())
}

#[inline]
fn clamp_p(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0 - eps)
}

/// Class-balanced cross entropy.
pub fn cce(p: f64, positive: bool, alpha: f64, eps: f64) -> Result<LossEval> {
    check_probability(p, eps)?;
    check_alpha(alpha)?;
    Ok(cce_unchecked(p, positive, alpha, eps))
}

#[inline]
fn cce_unchecked(p: f64, positive: bool, alpha: f64, eps: f64) -> LossEval {
    let p = clamp_p(p, eps);
    if positive {
        LossEval {
            loss: -alpha * p.ln(),
            grad: -alpha / p,
        }
    } else {
        let q = 1.0 - p;
        LossEval {
            loss: -(1.0 - alpha) * q.ln(),
            grad: (1.0 - alpha) / q,
        }
    }
}

/// Focal loss; the negative branch mirrors the positive one with weight
/// `1 − α` and modulation `p^γ`.
pub fn focal(p: f64, positive: bool, params: &FocalParams, eps: f64) -> Result<LossEval> {
    check_probability(p, eps)?;
    Ok(focal_unchecked(p, positive, params, eps))
}

#[inline]
fn focal_unchecked(p: f64, positive: bool, params: &FocalParams, eps: f64) -> LossEval {
    let p = clamp_p(p, eps);
    let g = params.gamma;
    // (weight, probability of the true class, sign of d(true prob)/dp)
    let (w, t, s) = if positive {
        (params.alpha, p, 1.0)
    } else {
        (1.0 - params.alpha, 1.0 - p, -1.0)
    };
    let m = 1.0 - t;
    let mod_factor = m.powf(g);
    let ln_t = t.ln();
    let dmod = if g == 0.0 { 0.0 } else { -g * m.powf(g - 1.0) };
    // L = -w m^g ln t,  dL/dt = -w (dmod ln t + m^g / t)
    let dl_dt = -w * (dmod * ln_t + mod_factor / t);
    LossEval {
        loss: -(w * mod_factor) * ln_t,
        grad: s * dl_dt,
    }
}

/// Attention loss. `β = 1` reduces exactly to [`cce`].
pub fn attention(
    p: f64,
    positive: bool,
    alpha: f64,
    params: &AttentionParams,
    eps: f64,
) -> Result<LossEval> {
    check_probability(p, eps)?;
    check_alpha(alpha)?;
    Ok(attention_unchecked(p, positive, alpha, params, eps))
}

#[inline]
fn attention_unchecked(
    p: f64,
    positive: bool,
    alpha: f64,
    params: &AttentionParams,
    eps: f64,
) -> LossEval {
    if params.beta == 1.0 {
        return cce_unchecked(p, positive, alpha, eps);
    }
    let p = clamp_p(p, eps);
    let g = params.gamma;
    let ln_beta = params.beta.ln();
    // Written in terms of the true-class probability t and the miss m = 1 − t:
    // L = -w β^{m^γ} ln t
    let (w, t, s) = if positive {
        (alpha, p, 1.0)
    } else {
        (1.0 - alpha, 1.0 - p, -1.0)
    };
    let m = 1.0 - t;
    let scale = params.beta.powf(m.powf(g));
    let ln_t = t.ln();
    // d(m^γ)/dt = -γ m^{γ-1}
    let dexp = if g == 0.0 { 0.0 } else { -g * m.powf(g - 1.0) };
    let dl_dt = -w * scale * (ln_beta * dexp * ln_t + 1.0 / t);
    LossEval {
        loss: -(w * scale) * ln_t,
        grad: s * dl_dt,
    }
}

/// Smooth L1 with a quadratic zone of half-width `1/σ²`.
pub fn smooth_l1(x: f64, sigma: f64) -> Result<LossEval> {
    check_sigma(sigma)?;
    if !x.is_finite() {
        return Err(Error::param(format!("smooth L1 input {x} is not finite")));
    }
    Ok(smooth_l1_unchecked(x, sigma))
}

#[inline]
fn smooth_l1_unchecked(x: f64, sigma: f64) -> LossEval {
    let s2 = sigma * sigma;
    if x.abs() < 1.0 / s2 {
        LossEval {
            loss: 0.5 * s2 * x * x,
            grad: s2 * x,
        }
    } else {
        LossEval {
            loss: x.abs() - 0.5 / s2,
            grad: x.signum(),
        }
    }
}

/// Orientation residual: `θ + θ̄` when the prediction overshoots `(−π, π]` on
/// the same side as the target, `θ − θ̄` otherwise. Differences are not
/// wrapped across the ±π seam.
pub fn angle_fold(theta: f64, theta_gt: f64) -> Result<f64> {
    use std::f64::consts::PI;
    if !(theta_gt > -PI && theta_gt <= PI) && !is_stored_angle(theta_gt as f32) {
        return Err(Error::param(format!(
            "target orientation {theta_gt} outside (-pi, pi]"
        )));
    }
    Ok(angle_fold_unchecked(theta, theta_gt))
}

#[inline]
fn angle_fold_unchecked(theta: f64, theta_gt: f64) -> f64 {
    use std::f64::consts::PI;
    if (theta > PI && theta_gt > 0.0) || (theta < -PI && theta_gt < 0.0) {
        theta + theta_gt
    } else {
        theta - theta_gt
    }
}

/// Smooth-L1 orientation loss summed over ground-truth boundary pixels, with
/// its gradient per predicted angle (zero off the boundary).
pub fn orientation_loss(
    pred: &OrientationMap,
    gt: &GroundTruth,
    sigma: f64,
) -> Result<(f64, ScalarMap)> {
    check_sigma(sigma)?;
    if !pred.same_dims(&gt.boundary) {
        return Err(dims_error("predicted orientation", pred, gt));
    }
    let theta: Vec<f64> = pred.values().iter().map(|&v| v as f64).collect();
    let mut grad = vec![0.0; theta.len()];
    let loss = orientation_sum(&theta, gt, sigma, 1.0, &mut grad);
    Ok((loss, to_map(gt, &grad)))
}

fn orientation_sum(theta: &[f64], gt: &GroundTruth, sigma: f64, scale: f64, grad: &mut [f64]) -> f64 {
    let mut loss = 0.0;
    for (j, ((&b, &tg), &t)) in gt
        .boundary
        .values()
        .iter()
        .zip(gt.orientation.values())
        .zip(theta)
        .enumerate()
    {
        if b == 0.0 {
            continue;
        }
        let r = smooth_l1_unchecked(angle_fold_unchecked(t, tg as f64), sigma);
        loss += r.loss;
        // the fold is a ±θ̄ shift, so its derivative in θ is 1 on both branches
        grad[j] = scale * r.grad;
    }
    loss
}

fn dims_error(name: &str, map: &ScalarMap, gt: &GroundTruth) -> Error {
    Error::validation(format!(
        "{name} is {}x{} but ground truth is {}x{}",
        map.width(),
        map.height(),
        gt.width(),
        gt.height()
    ))
}

fn to_map(gt: &GroundTruth, grad: &[f64]) -> ScalarMap {
    ScalarMap::from_raw(
        gt.width(),
        gt.height(),
        grad.iter().map(|&g| g as f32).collect(),
    )
}

/// One image of raw network outputs paired with its labels.
#[derive(Clone, Copy, Debug)]
pub struct LossInput<'a> {
    pub prob: &'a [f64],
    pub orient: &'a [f64],
    pub gt: &'a GroundTruth,
}

/// Batch objective with per-pixel gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    /// `(boundary + λ·orientation) / N`.
    pub loss: f64,
    /// Boundary term already divided by `N`.
    pub boundary: f64,
    /// Unweighted orientation term divided by `N`.
    pub orientation: f64,
    pub alpha: f64,
    pub grad_prob: Vec<Vec<f64>>,
    pub grad_orient: Vec<Vec<f64>>,
}

/// Multi-task objective over a batch of raw `f64` outputs.
///
/// Sums run in ascending (image, row, column) order.
pub fn multitask_loss_f64(inputs: &[LossInput<'_>], params: &MultiTaskParams) -> Result<BatchLoss> {
    if inputs.is_empty() {
        return Err(Error::validation("batch is empty"));
    }
    for (i, inp) in inputs.iter().enumerate() {
        let n = inp.gt.boundary.len();
        if inp.prob.len() != n || inp.orient.len() != n {
            return Err(Error::validation(format!(
                "record {i}: outputs have {} and {} values but ground truth has {n}",
                inp.prob.len(),
                inp.orient.len()
            )));
        }
        if let Some(j) = inp.prob.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::validation(format!(
                "record {i}: probability {} at pixel {j} outside [0, 1]",
                inp.prob[j]
            )));
        }
    }
    let alpha = compute_alpha(inputs.iter().map(|i| &i.gt.boundary))?.alpha;
    let inv_n = 1.0 / inputs.len() as f64;
    let eps = params.clamp_eps;
    let mut boundary = 0.0;
    let mut orientation = 0.0;
    let mut grad_prob = Vec::with_capacity(inputs.len());
    let mut grad_orient = Vec::with_capacity(inputs.len());
    for inp in inputs {
        let mut gp = vec![0.0; inp.prob.len()];
        for ((g, &p), &b) in gp.iter_mut().zip(inp.prob).zip(inp.gt.boundary.values()) {
            let e = params.boundary.eval_unchecked(p, b != 0.0, alpha, eps);
            boundary += e.loss;
            *g = e.grad * inv_n;
        }
        let mut go = vec![0.0; inp.orient.len()];
        if params.lambda != 0.0 {
            orientation += orientation_sum(
                inp.orient,
                inp.gt,
                params.sigma,
                params.lambda * inv_n,
                &mut go,
            );
        }
        grad_prob.push(gp);
        grad_orient.push(go);
    }
    Ok(BatchLoss {
        loss: (boundary + params.lambda * orientation) * inv_n,
        boundary: boundary * inv_n,
        orientation: orientation * inv_n,
        alpha,
        grad_prob,
        grad_orient,
    })
}

/// Result of [`multitask_loss`] over map-typed predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiTaskLoss {
    pub loss: f64,
    pub alpha: f64,
    pub grad_b: Vec<ScalarMap>,
    pub grad_o: Vec<ScalarMap>,
}

pub fn multitask_loss(
    preds: &[(ProbabilityMap, OrientationMap)],
    gts: &[GroundTruth],
    params: &MultiTaskParams,
) -> Result<MultiTaskLoss> {
    if preds.len() != gts.len() {
        return Err(Error::validation(format!(
            "{} predictions but {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    let mut probs = Vec::with_capacity(preds.len());
    let mut orients = Vec::with_capacity(preds.len());
    for (i, ((p, o), gt)) in preds.iter().zip(gts).enumerate() {
        if !p.same_dims(&gt.boundary) || !o.same_dims(&gt.boundary) {
            return Err(Error::validation(format!(
                "record {i}: prediction is {}x{} but ground truth is {}x{}",
                p.width(),
                p.height(),
                gt.width(),
                gt.height()
            )));
        }
        probs.push(p.values().iter().map(|&v| v as f64).collect::<Vec<_>>());
        orients.push(o.values().iter().map(|&v| v as f64).collect::<Vec<_>>());
    }
    let inputs: Vec<LossInput<'_>> = gts
        .iter()
        .enumerate()
        .map(|(i, gt)| LossInput {
            prob: &probs[i],
            orient: &orients[i],
            gt,
        })
        .collect();
    let out = multitask_loss_f64(&inputs, params)?;
    Ok(MultiTaskLoss {
        loss: out.loss,
        alpha: out.alpha,
        grad_b: gts
            .iter()
            .zip(&out.grad_prob)
            .map(|(gt, g)| to_map(gt, g))
            .collect(),
        grad_o: gts
            .iter()
            .zip(&out.grad_orient)
            .map(|(gt, g)| to_map(gt, g))
            .collect(),
    })
}

/// Worst disagreement between an analytic derivative and central finite
/// differences over a grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// Grid point where the worst error occurred.
    pub worst_at: f64,
    pub points: usize,
}

const FD_STEP: f64 = 1e-6;

fn grad_rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

impl GradCheck {
    fn update(&mut self, at: f64, analytic: f64, numeric: f64) {
        let e = grad_rel_err(analytic, numeric);
        if e > self.max_rel_err || self.points == 0 {
            self.max_rel_err = self.max_rel_err.max(e);
            self.worst_at = at;
        }
        self.points += 1;
    }
}

/// Checks `d loss / dp` of both branches at `p = k / (grid + 1)`,
/// `k = 1..=grid`, against central differences with step 1e-6.
pub fn check_boundary_gradient(
    kind: &BoundaryLoss,
    alpha: f64,
    grid: usize,
    eps: f64,
) -> Result<GradCheck> {
    if grid == 0 {
        return Err(Error::param("gradient grid needs at least one point"));
    }
    check_alpha(alpha)?;
    check_probability(0.5, eps)?;
    let mut out = GradCheck { max_rel_err: 0.0, worst_at: 0.0, points: 0 };
    for k in 1..=grid {
        let p = k as f64 / (grid + 1) as f64;
        for positive in [true, false] {
            let f = |q: f64| kind.eval_unchecked(q, positive, alpha, eps).loss;
            let numeric = (f(p + FD_STEP) - f(p - FD_STEP)) / (2.0 * FD_STEP);
            out.update(p, kind.eval_unchecked(p, positive, alpha, eps).grad, numeric);
        }
    }
    Ok(out)
}

/// Checks the smooth-L1 derivative on `grid` points spread over
/// `[−3, 3]`, skipping points within 1e-3 of the branch switch.
pub fn check_smooth_l1_gradient(sigma: f64, grid: usize) -> Result<GradCheck> {
    check_sigma(sigma)?;
    if grid < 2 {
        return Err(Error::param("gradient grid needs at least two points"));
    }
    let knot = 1.0 / (sigma * sigma);
    let mut out = GradCheck { max_rel_err: 0.0, worst_at: 0.0, points: 0 };
    for k in 0..grid {
        let x = -3.0 + 6.0 * k as f64 / (grid - 1) as f64;
        if (x.abs() - knot).abs() < 1e-3 || x == 0.0 {
            continue;
        }
        let f = |v: f64| smooth_l1_unchecked(v, sigma).loss;
        let numeric = (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP);
        out.update(x, smooth_l1_unchecked(x, sigma).grad, numeric);
    }
    Ok(out)
}

/// One row of a loss curve: both branches at probability `p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub p: f64,
    pub loss_pos: f64,
    pub loss_neg: f64,
}

/// Tabulates both branches of `kind` on a uniform grid over `[eps, 1 − eps]`.
pub fn loss_curve_table(
    kind: &BoundaryLoss,
    alpha: f64,
    n_points: usize,
    eps: f64,
) -> Result<Vec<CurvePoint>> {
    if n_points < 2 {
        return Err(Error::param(format!("need at least 2 points, got {n_points}")));
    }
    check_alpha(alpha)?;
    check_probability(0.5, eps)?;
    let span = 1.0 - 2.0 * eps;
    Ok((0..n_points)
        .map(|i| {
            let p = eps + span * i as f64 / (n_points - 1) as f64;
            CurvePoint {
                p,
                loss_pos: kind.eval_unchecked(p, true, alpha, eps).loss,
                loss_neg: kind.eval_unchecked(p, false, alpha, eps).loss,
            }
        })
        .collect())
}

/// CSV with header `p,loss_pos,loss_neg`.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("p,loss_pos,loss_neg\n");
    for pt in points {
        out.push_str(&format!("{:?},{:?},{:?}\n", pt.p, pt.loss_pos, pt.loss_neg));
    }
    out
}
