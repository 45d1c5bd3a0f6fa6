//! The batch objective against a direct per-pixel loop over the scalar
//! losses.

use occbound::losses::{
    angle_fold, attention, cce, compute_alpha, focal, multitask_loss, multitask_loss_f64,
    smooth_l1, BoundaryLoss, FocalParams, LossInput, MultiTaskParams,
};
use occbound::maps::{GroundTruth, OrientationMap, ProbabilityMap, ScalarMap};
use occbound::synth::{generate_scenes, SceneSpec};
use occbound::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<GroundTruth>) {
    let spec = SceneSpec { width: 24, height: 20, radius_range: (3.0, 6.0), seed, ..SceneSpec::default() };
    let gts: Vec<_> = generate_scenes(n, &spec, Execution::Sequential)
        .unwrap()
        .into_iter()
        .map(|s| s.gt)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probs = gts
        .iter()
        .map(|g| (0..g.boundary.len()).map(|_| rng.random_range(0.0..=1.0)).collect())
        .collect();
    let orients = gts
        .iter()
        .map(|g| (0..g.boundary.len()).map(|_| rng.random_range(-4.0..4.0)).collect())
        .collect();
    (probs, orients, gts)
}

struct Reference {
    loss: f64,
    grad_prob: Vec<Vec<f64>>,
    grad_orient: Vec<Vec<f64>>,
}

fn reference(probs: &[Vec<f64>], orients: &[Vec<f64>], gts: &[GroundTruth], params: &MultiTaskParams) -> Reference {
    let alpha = compute_alpha(gts.iter().map(|g| &g.boundary)).unwrap().alpha;
    let n = gts.len() as f64;
    let eps = params.clamp_eps();
    let mut total = 0.0;
    let mut grad_prob = Vec::new();
    let mut grad_orient = Vec::new();
    for ((p, o), gt) in probs.iter().zip(orients).zip(gts) {
        let mut gp = vec![0.0; p.len()];
        let mut go = vec![0.0; p.len()];
        for j in 0..p.len() {
            let positive = gt.boundary.values()[j] == 1.0;
            let e = match params.boundary {
                BoundaryLoss::Cce => cce(p[j], positive, alpha, eps),
                BoundaryLoss::Focal(f) => focal(p[j], positive, &f, eps),
                BoundaryLoss::Attention(a) => attention(p[j], positive, alpha, &a, eps),
            }
            .unwrap();
            total += e.loss;
            gp[j] = e.grad / n;
            if positive {
                let tg = gt.orientation.values()[j] as f64;
                let s = smooth_l1(angle_fold(o[j], tg).unwrap(), params.sigma()).unwrap();
                total += params.lambda() * s.loss;
                go[j] = params.lambda() * s.grad / n;
            }
        }
        grad_prob.push(gp);
        grad_orient.push(go);
    }
    Reference { loss: total / n, grad_prob, grad_orient }
}

fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn matches_scalar_loop() {
    let kinds = [BoundaryLoss::Cce, BoundaryLoss::Focal(FocalParams::default()), BoundaryLoss::default()];
    for (seed, kind) in kinds.into_iter().enumerate() {
        let (probs, orients, gts) = batch(seed as u64 + 3, 4);
        let params = MultiTaskParams::default().with_boundary(kind);
        let inputs: Vec<_> = (0..gts.len())
            .map(|i| LossInput { prob: &probs[i], orient: &orients[i], gt: &gts[i] })
            .collect();
        let got = multitask_loss_f64(&inputs, &params).unwrap();
        let want = reference(&probs, &orients, &gts, &params);
        assert!((got.loss - want.loss).abs() <= 1e-10 * want.loss.max(1.0), "{kind}");
        assert!(max_diff(&got.grad_prob, &want.grad_prob) < 1e-10, "{kind}");
        assert!(max_diff(&got.grad_orient, &want.grad_orient) < 1e-10, "{kind}");
        assert!((got.loss - (got.boundary + params.lambda() * got.orientation)).abs() < 1e-10);
    }
}

#[test]
fn lambda_zero_is_boundary_only() {
    let (probs, orients, gts) = batch(11, 3);
    let params = MultiTaskParams::default().with_lambda(0.0).unwrap();
    let inputs: Vec<_> = (0..3)
        .map(|i| LossInput { prob: &probs[i], orient: &orients[i], gt: &gts[i] })
        .collect();
    let out = multitask_loss_f64(&inputs, &params).unwrap();
    assert_eq!(out.loss, out.boundary);
    assert!(out.grad_orient.iter().flatten().all(|&g| g == 0.0));
}

#[test]
fn map_api_agrees_with_slices() {
    let (probs, orients, gts) = batch(5, 2);
    let params = MultiTaskParams::default();
    let maps: Vec<_> = (0..2)
        .map(|i| {
            let (w, h) = (gts[i].width(), gts[i].height());
            let p = ScalarMap::new(w, h, probs[i].iter().map(|&v| v as f32).collect()).unwrap();
            // in-range angles so the map form is lossless after f32 rounding
            let o = ScalarMap::new(w, h, orients[i].iter().map(|&v| (v * 0.7) as f32).collect()).unwrap();
            (ProbabilityMap::new(p).unwrap(), OrientationMap::new(o))
        })
        .collect();
    let as_f64: Vec<(Vec<f64>, Vec<f64>)> = maps
        .iter()
        .map(|(p, o)| {
            (
                p.values().iter().map(|&v| v as f64).collect(),
                o.values().iter().map(|&v| v as f64).collect(),
            )
        })
        .collect();
    let inputs: Vec<_> = (0..2)
        .map(|i| LossInput { prob: &as_f64[i].0, orient: &as_f64[i].1, gt: &gts[i] })
        .collect();
    let slices = multitask_loss_f64(&inputs, &params).unwrap();
    let mapped = multitask_loss(&maps, &gts, &params).unwrap();
    assert_eq!(mapped.loss, slices.loss);
    assert_eq!(mapped.alpha, slices.alpha);
    for i in 0..2 {
        for (g, s) in mapped.grad_b[i].values().iter().zip(&slices.grad_prob[i]) {
            assert_eq!(*g, *s as f32);
        }
    }
}
