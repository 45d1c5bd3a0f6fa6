use super::*;
use crate::losses::FocalParams;
use crate::synth::{generate_scene, generate_scenes, SceneSpec};

fn small_scene(seed: u64) -> (ScalarMap, GroundTruth) {
    let scene = generate_scene(&SceneSpec {
        width: 12,
        height: 12,
        n_shapes: 2,
        radius_range: (2.5, 3.5),
        seed,
        ..SceneSpec::default()
    })
    .unwrap();
    (scene.image, scene.gt)
}

fn records(n: usize, seed: u64) -> Vec<(ScalarMap, GroundTruth)> {
    generate_scenes(n, &SceneSpec { seed, ..SceneSpec::default() }, Execution::Sequential)
        .unwrap()
        .into_iter()
        .map(|s| (s.image, s.gt))
        .collect()
}

/// Relative error with an absolute floor, so gradients at round-off level
/// are compared absolutely.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

fn gradient_check(boundary: BoundaryLoss) {
    let (img, gt) = small_scene(5);
    assert!(gt.boundary.count() > 0);
    let mut net = init_params(9);
    net.head_o_b[0] = 0.3;
    let params = MultiTaskParams::default().with_boundary(boundary);
    let batch = vec![(img, gt)];
    let analytic = batch_gradient(&net, &batch, &params, Execution::Sequential).unwrap();
    let h = 1e-4;
    let mut worst = (0.0, 0);
    for k in 0..net.n_params() {
        let mut plus = net.clone();
        *plus.param_mut(k) += h;
        let mut minus = net.clone();
        *minus.param_mut(k) -= h;
        let numeric = (batch_loss(&plus, &batch, &params).unwrap()
            - batch_loss(&minus, &batch, &params).unwrap())
            / (2.0 * h);
        let e = rel_err(analytic.grads.param(k), numeric);
        if e > worst.0 {
            worst = (e, k);
        }
    }
    assert!(worst.0 < 1e-4, "{boundary}: parameter {} rel err {}", worst.1, worst.0);
}

#[test]
fn gradient_check_cce() {
    gradient_check(BoundaryLoss::Cce);
}

#[test]
fn gradient_check_focal() {
    gradient_check(BoundaryLoss::Focal(FocalParams::default()));
}

#[test]
fn gradient_check_attention() {
    gradient_check(BoundaryLoss::default());
}

#[test]
fn orientation_head_is_idle_without_orientation_loss() {
    let (img, gt) = small_scene(2);
    let net = init_params(1);
    let params = MultiTaskParams::default().with_lambda(0.0).unwrap();
    let (_, g) = backward(&net, &img, &gt, &params).unwrap();
    assert!(g.head_o_w.iter().chain(&g.head_o_b).all(|&v| v == 0.0));

    let empty = GroundTruth::new(
        crate::maps::BinaryMap::new(ScalarMap::zeros(12, 12)).unwrap(),
        OrientationMap::new(ScalarMap::zeros(12, 12)),
    )
    .unwrap();
    let (_, g) = backward(&net, &img, &empty, &MultiTaskParams::default()).unwrap();
    assert!(g.head_o_w.iter().chain(&g.head_o_b).all(|&v| v == 0.0));
}

#[test]
fn batch_gradient_ignores_execution_mode() {
    let recs: Vec<_> = (0..4).map(small_scene).collect();
    let net = init_params(3);
    let p = MultiTaskParams::default();
    let a = batch_gradient(&net, &recs, &p, Execution::Sequential).unwrap();
    let b = batch_gradient(&net, &recs, &p, Execution::Parallel).unwrap();
    assert_eq!(a.grads, b.grads);
    assert_eq!(a.loss, b.loss);
}

#[test]
fn sgd_step_rules() {
    let mut net = init_params(0);
    let start = net.clone();
    let mut grads = TinyNet::zeros();
    grads.conv1_w[0] = 2.0;
    let mut v = TinyNet::zeros();
    let plain = Sgd { lr: 0.1, momentum: 0.0, weight_decay: 0.0 };
    sgd_step(&mut net, &grads, &mut v, &plain);
    assert_eq!(net.conv1_w[0], start.conv1_w[0] - 0.2);
    assert_eq!(net.conv1_w[1..], start.conv1_w[1..]);

    let mut net = start.clone();
    let mut v = TinyNet::zeros();
    let decay = Sgd { lr: 0.1, momentum: 0.9, weight_decay: 0.5 };
    sgd_step(&mut net, &TinyNet::zeros(), &mut v, &decay);
    for k in 0..net.n_params() {
        assert_eq!(net.param(k), start.param(k) - 0.1 * (0.5 * start.param(k)));
    }

    let mut net = start.clone();
    let mut v = TinyNet::zeros();
    let mom = Sgd { lr: 0.1, momentum: 0.9, weight_decay: 0.0 };
    sgd_step(&mut net, &grads, &mut v, &mom);
    let first = net.conv1_w[0] - start.conv1_w[0];
    let before = net.conv1_w[0];
    sgd_step(&mut net, &grads, &mut v, &mom);
    let second = net.conv1_w[0] - before;
    assert!((second / first - 1.9).abs() < 1e-12);
}

#[test]
fn draws_are_counter_based() {
    let dims = |_| (64, 64);
    let a = sample_draw(4, 17, 10, dims, 32, FlipMode::Random);
    assert_eq!(a, sample_draw(4, 17, 10, dims, 32, FlipMode::Random));
    let never = sample_draw(4, 17, 10, dims, 32, FlipMode::Never);
    let always = sample_draw(4, 17, 10, dims, 32, FlipMode::Always);
    assert_eq!((never.record, never.row, never.col), (a.record, a.row, a.col));
    assert_eq!((always.flip, never.flip), (true, false));
    let flips = (0..200)
        .filter(|&c| sample_draw(4, c, 10, dims, 32, FlipMode::Random).flip)
        .count();
    assert!((60..140).contains(&flips));
    for c in 0..200 {
        let d = sample_draw(1, c, 3, dims, 32, FlipMode::Random);
        assert!(d.record < 3 && d.row <= 32 && d.col <= 32);
    }
}

fn short_config(iters: usize) -> TrainConfig {
    TrainConfig { iters, seed: 7, ..TrainConfig::default() }
}

#[test]
fn training_is_deterministic() {
    let recs = records(6, 0);
    let a = train_records(&recs, &short_config(5), Execution::Parallel).unwrap();
    let b = train_records(&recs, &short_config(5), Execution::Sequential).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.history.len(), 5);
    assert_eq!(a.history[0].iter, 1);
}

#[test]
fn flip_augmentation_matches_flipped_dataset() {
    let recs = records(6, 3);
    let flipped: Vec<_> = recs
        .iter()
        .map(|(i, g)| (i.flip_horizontal(), g.flip_horizontal()))
        .collect();
    let aug = TrainConfig { flip: FlipMode::Always, ..short_config(5) };
    let plain = TrainConfig { flip: FlipMode::Never, ..short_config(5) };
    let a = train_records(&recs, &aug, Execution::Sequential).unwrap();
    let b = train_records(&flipped, &plain, Execution::Sequential).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.net, b.net);
}

#[test]
fn gt_flip_twice_is_identity() {
    for (_, gt) in records(5, 8) {
        assert_eq!(gt.flip_horizontal().flip_horizontal(), gt);
    }
}

#[test]
fn iter_size_averages_batches() {
    let recs = records(4, 1);
    let cfg = TrainConfig { iters: 1, batch_size: 2, iter_size: 2, ..short_config(1) };
    let out = train_records(&recs, &cfg, Execution::Sequential).unwrap();
    let net = init_params(cfg.seed);
    let mut grads = TinyNet::zeros();
    let mut loss = 0.0;
    for half in 0..2u64 {
        let batch: Vec<_> = (0..2u64)
            .map(|j| {
                let d = sample_draw(cfg.seed, 2 * half + j, 4, |_| (64, 64), cfg.crop, cfg.flip);
                make_sample(&recs, d, cfg.crop).unwrap()
            })
            .collect();
        let g = batch_gradient(&net, &batch, &cfg.loss, Execution::Sequential).unwrap();
        grads.add_scaled(&g.grads, 0.5);
        loss += g.loss.loss / 2.0;
    }
    assert_eq!(out.history[0].loss, loss);
    let mut expected = net.clone();
    sgd_step(&mut expected, &grads, &mut TinyNet::zeros(), &cfg.sgd());
    assert_eq!(out.net, expected);
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig { lr: 0.0, ..TrainConfig::default() },
        TrainConfig { momentum: 1.0, ..TrainConfig::default() },
        TrainConfig { weight_decay: -1.0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { crop: 7, ..TrainConfig::default() },
        TrainConfig { iters: 0, ..TrainConfig::default() },
        TrainConfig { iter_size: 0, ..TrainConfig::default() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
    let tiny = vec![small_scene(0)];
    assert!(train_records(&tiny, &short_config(1), Execution::Sequential).is_err());
}

#[test]
fn history_csv_layout() {
    let rows = [HistoryRow { iter: 1, loss: 1.0, loss_boundary: 0.5, loss_orient: 1.0 }];
    assert_eq!(history_csv(&rows), "iter,loss,loss_boundary,loss_orient\n1,1.0,0.5,1.0\n");
}

#[test]
fn beta_one_sweep_row_is_the_cce_baseline() {
    let recs = records(5, 2);
    let (train, hold) = recs.split_at(4);
    let base = TrainConfig { iters: 3, ..short_config(3) };
    let rows = sweep_beta_gamma(train, hold, &base, &[1.0, 4.0], &[0.5, 0.2], Execution::Parallel)
        .unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!((rows[2].beta, rows[2].gamma), (4.0, 0.5));
    let cce = TrainConfig { loss: base.loss.with_boundary(BoundaryLoss::Cce), ..base.clone() };
    let net = train_records(train, &cce, Execution::Sequential).unwrap().net;
    let eval = evaluate_net(&net, hold, &NmsParams::default(), &MatchParams::default(), Execution::Sequential)
        .unwrap();
    for row in &rows[..2] {
        assert_eq!(row.ods, eval.summary.ods_f);
        assert_eq!(row.ap, eval.summary.ap);
    }
    assert!(sweep_csv(&rows).lines().count() == 5);
}

#[test]
fn holdout_split_sizes() {
    let rec = crate::maps::ManifestRecord {
        image: "a".into(),
        boundary: "b".into(),
        orientation: "c".into(),
    };
    let m = DatasetManifest { records: vec![rec; 10] };
    let (t, h) = holdout_split(&m).unwrap();
    assert_eq!((t.len(), h.len()), (8, 2));
    let one = DatasetManifest { records: m.records[..1].to_vec() };
    assert!(holdout_split(&one).is_err());
}
