use occbound::maps::{save_map, load_map};
use occbound::synth::{generate_scenes, SceneSpec};
use occbound::trainer::{encode_checkpoint, init_params, predict, train_records, TrainConfig};
use occbound::Execution;

#[test]
fn loss_goes_down() {
    let recs: Vec<_> = generate_scenes(100, &SceneSpec { seed: 300, ..SceneSpec::default() }, Execution::default())
        .unwrap()
        .into_iter()
        .map(|s| (s.image, s.gt))
        .collect();
    let config = TrainConfig { iters: 200, seed: 1, ..TrainConfig::default() };
    let out = train_records(&recs, &config, Execution::default()).unwrap();
    let mean = |rows: &[occbound::trainer::HistoryRow]| rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64;
    let (first, last) = (mean(&out.history[..10]), mean(&out.history[190..]));
    assert!(last < first, "first {first} last {last}");
    assert!(out.net.is_finite());
}

#[test]
fn predictions_are_reproducible_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let scene = &generate_scenes(1, &SceneSpec { seed: 9, ..SceneSpec::default() }, Execution::Sequential).unwrap()[0];
    let net = init_params(21);
    assert_eq!(encode_checkpoint(&net), encode_checkpoint(&init_params(21)));
    let mut files = Vec::new();
    for k in 0..2 {
        let (p, o) = predict(&net, &scene.image);
        let (pp, op) = (dir.path().join(format!("p{k}.occm")), dir.path().join(format!("o{k}.occm")));
        save_map(&p, &pp).unwrap();
        save_map(&o, &op).unwrap();
        assert!(load_map(&op).unwrap().values().iter().all(|&v| occbound::angle::is_stored_angle(v)));
        files.push((std::fs::read(pp).unwrap(), std::fs::read(op).unwrap()));
    }
    assert_eq!(files[0], files[1]);
}
