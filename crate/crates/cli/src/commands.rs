use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use occbound::benchmark::{evaluate, occlusion_csv, pr_csv, summary_csv, MatchParams};
use occbound::losses::{
    check_boundary_gradient, check_smooth_l1_gradient, curve_csv, loss_curve_table,
    AttentionParams, BoundaryLoss, FocalParams, MultiTaskParams, DEFAULT_CLAMP_EPS,
};
use occbound::maps::{
    load_map, save_map, DatasetManifest, ManifestRecord, OrientationMap, ProbabilityMap,
};
use occbound::synth::{generate_dataset_with, SceneSpec};
use occbound::thinning::{adjust_orientations, nms_thin, support, NmsParams};
use occbound::trainer::{
    history_csv, holdout_split, load_checkpoint, predict, save_checkpoint, sweep_beta_gamma,
    sweep_csv, train_with, FlipMode, TrainConfig,
};
use occbound::Execution;

use crate::args::*;
use crate::plot::{line_plot, Series};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    let show = cli.show_config;
    match cli.command {
        Command::Synth(a) => synth(a, show),
        Command::Train(a) => train(a, show),
        Command::Predict(a) => predict_cmd(a, show),
        Command::Nms(a) => nms(a, show),
        Command::Adjust(a) => adjust(a, show),
        Command::Eval(a) => eval(a, show, cli.svg),
        Command::Losscheck(a) => losscheck(a, show),
        Command::Sweep(a) => sweep(a, show),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(occbound::Error::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn file_name(path: &Path) -> Result<&std::ffi::OsStr> {
    path.file_name()
        .ok_or_else(|| CliError::Usage(format!("{} has no file name", path.display())))
}

fn load_probability(path: &Path) -> Result<ProbabilityMap> {
    ProbabilityMap::new(load_map(path)?).map_err(|e| {
        CliError::Core(occbound::Error::Validation(format!("{}: {e}", path.display())))
    })
}

/// Output path inside `dir` keeping the source file name; refuses
/// duplicates so two records never overwrite each other.
fn keep_name(dir: &Path, src: &Path, seen: &mut HashSet<PathBuf>) -> Result<PathBuf> {
    let out = dir.join(file_name(src)?);
    if !seen.insert(out.clone()) {
        return Err(CliError::Usage(format!(
            "two records would both write {}",
            out.display()
        )));
    }
    Ok(out)
}

fn synth(a: SynthArgs, show: bool) -> Result<()> {
    let spec = SceneSpec {
        width: a.width,
        height: a.height,
        n_shapes: a.shapes,
        noise_sigma: a.noise,
        seed: a.seed,
        ..SceneSpec::default()
    };
    if show {
        println!("n = {}\nout = {}\n{spec:#?}", a.n, a.out.display());
        return Ok(());
    }
    let manifest = generate_dataset_with(a.n, &spec, &a.out, Execution::default())?;
    eprintln!("wrote {} scenes to {}", manifest.len(), a.out.display());
    Ok(())
}

fn train_config(opts: &TrainOpts, boundary: BoundaryLoss) -> Result<TrainConfig> {
    let config = TrainConfig {
        lr: opts.lr,
        momentum: opts.momentum,
        weight_decay: opts.weight_decay,
        batch_size: opts.batch,
        crop: opts.crop,
        iters: opts.iters,
        iter_size: opts.iter_size,
        seed: opts.seed,
        flip: match opts.flip {
            Flip::Random => FlipMode::Random,
            Flip::Never => FlipMode::Never,
            Flip::Always => FlipMode::Always,
        },
        loss: MultiTaskParams::new(boundary, opts.sigma, opts.lambda, DEFAULT_CLAMP_EPS)?,
    };
    config.validate()?;
    Ok(config)
}

fn train(a: TrainArgs, show: bool) -> Result<()> {
    let boundary = match a.loss {
        LossKind::Cce => BoundaryLoss::Cce,
        LossKind::Focal => {
            BoundaryLoss::Focal(FocalParams::new(a.focal_alpha, a.gamma.unwrap_or(2.0))?)
        }
        LossKind::Attention => {
            BoundaryLoss::Attention(AttentionParams::new(a.beta, a.gamma.unwrap_or(0.5))?)
        }
    };
    let config = train_config(&a.opts, boundary)?;
    let history = a.history.clone().unwrap_or_else(|| a.out_ckpt.with_extension("csv"));
    if show {
        println!(
            "manifest = {}\nout_ckpt = {}\nhistory = {}\n{config:#?}",
            a.manifest.display(),
            a.out_ckpt.display(),
            history.display()
        );
        return Ok(());
    }
    let manifest = DatasetManifest::load(&a.manifest)?;
    let outcome = train_with(&manifest, &config, Execution::default())?;
    save_checkpoint(&outcome.net, &a.out_ckpt)?;
    write(&history, history_csv(&outcome.history))?;
    if let Some(last) = outcome.history.last() {
        eprintln!("trained {} iterations, final loss {:.6}", last.iter, last.loss);
    }
    Ok(())
}

fn predict_cmd(a: PredictArgs, show: bool) -> Result<()> {
    if show {
        println!("{a:#?}");
        return Ok(());
    }
    let net = load_checkpoint(&a.ckpt)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    mkdir(&a.out)?;
    let records = Execution::default().try_map_range(manifest.len(), |i| {
        let src = &manifest.records[i];
        let (prob, orient) = predict(&net, &load_map(&src.image)?);
        let record = ManifestRecord {
            image: src.image.clone(),
            boundary: a.out.join(format!("pred_{i:05}_boundary.occm")),
            orientation: a.out.join(format!("pred_{i:05}_orient.occm")),
        };
        save_map(&prob, &record.boundary)?;
        save_map(&orient, &record.orientation)?;
        Ok::<_, occbound::Error>(record)
    })?;
    DatasetManifest { records }.save(a.out.join("manifest.tsv"))?;
    eprintln!("predicted {} records into {}", manifest.len(), a.out.display());
    Ok(())
}

fn nms_params(o: &NmsOpts) -> Result<NmsParams> {
    let p = NmsParams {
        smooth_radius: o.radius,
        tolerance: o.tolerance,
        border: o.border,
    };
    p.validate()?;
    Ok(p)
}

fn nms(a: NmsArgs, show: bool) -> Result<()> {
    let params = nms_params(&a.opts)?;
    if show {
        println!("{a:#?}\n{params:#?}");
        return Ok(());
    }
    match (&a.input, &a.manifest) {
        (Some(input), None) => {
            let thin = nms_thin(&load_probability(input)?, &params)?;
            save_map(&thin, &a.out)?;
        }
        (None, Some(manifest)) => {
            let manifest = DatasetManifest::load(manifest)?;
            mkdir(&a.out)?;
            let mut seen = HashSet::new();
            let outs = manifest
                .records
                .iter()
                .map(|r| keep_name(&a.out, &r.boundary, &mut seen))
                .collect::<Result<Vec<_>>>()?;
            let records = Execution::default().try_map_range(manifest.len(), |i| {
                let src = &manifest.records[i];
                let thin = nms_thin(&load_probability(&src.boundary)?, &params)?;
                save_map(&thin, &outs[i]).map_err(CliError::Core)?;
                Ok::<_, CliError>(ManifestRecord {
                    boundary: outs[i].clone(),
                    ..src.clone()
                })
            })?;
            DatasetManifest { records }.save(a.out.join("manifest.tsv"))?;
        }
        _ => return Err(CliError::Usage("give exactly one of --in and --manifest".into())),
    }
    Ok(())
}

fn adjust_one(boundary: &Path, orient: &Path, radius: usize) -> Result<OrientationMap> {
    let thin = load_probability(boundary)?;
    let pred = OrientationMap::new(load_map(orient)?);
    Ok(adjust_orientations(&support(&thin), &pred, radius)?)
}

fn adjust(a: AdjustArgs, show: bool) -> Result<()> {
    if show {
        println!("{a:#?}");
        return Ok(());
    }
    match (&a.boundary, &a.orient, &a.manifest) {
        (Some(b), Some(o), None) => {
            let adjusted = adjust_one(b, o, a.radius)?;
            save_map(&adjusted, &a.out)?;
        }
        (None, None, Some(manifest)) => {
            let manifest = DatasetManifest::load(manifest)?;
            mkdir(&a.out)?;
            let mut seen = HashSet::new();
            let outs = manifest
                .records
                .iter()
                .map(|r| keep_name(&a.out, &r.orientation, &mut seen))
                .collect::<Result<Vec<_>>>()?;
            let records = Execution::default().try_map_range(manifest.len(), |i| {
                let src = &manifest.records[i];
                let adjusted = adjust_one(&src.boundary, &src.orientation, a.radius)?;
                save_map(&adjusted, &outs[i]).map_err(CliError::Core)?;
                Ok::<_, CliError>(ManifestRecord {
                    orientation: outs[i].clone(),
                    ..src.clone()
                })
            })?;
            DatasetManifest { records }.save(a.out.join("manifest.tsv"))?;
        }
        _ => {
            return Err(CliError::Usage(
                "give --boundary with --orient, or --manifest".into(),
            ))
        }
    }
    Ok(())
}

fn eval(a: EvalArgs, show: bool, svg: bool) -> Result<()> {
    let params = MatchParams {
        d_max_frac: a.dmax_frac,
        orient_tol: a.orient_tol,
        ..MatchParams::default()
    };
    params.validate()?;
    if show {
        println!("{a:#?}\n{params:#?}\nsvg = {svg}");
        return Ok(());
    }
    let preds_m = DatasetManifest::load(&a.pred_manifest)?;
    let gts_m = DatasetManifest::load(&a.gt_manifest)?;
    if preds_m.len() != gts_m.len() {
        return Err(CliError::Core(occbound::Error::Validation(format!(
            "{} predictions but {} ground-truth records",
            preds_m.len(),
            gts_m.len()
        ))));
    }
    let preds = preds_m
        .records
        .iter()
        .map(|r| {
            Ok((
                load_probability(&r.boundary)?,
                OrientationMap::new(load_map(&r.orientation)?),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let gts: Vec<_> = gts_m.load_all()?.into_iter().map(|(_, gt)| gt).collect();
    let ev = evaluate(&preds, &gts, &params, Execution::default())?;
    mkdir(&a.out_dir)?;
    let out = |name: &str| a.out_dir.join(name);
    write(&out("pr.csv"), pr_csv(&ev.sweep.dataset))?;
    write(&out("summary.csv"), summary_csv(&ev.summary))?;
    write(&out("opr.csv"), occlusion_csv(&ev.opr))?;
    write(&out("aor.csv"), occlusion_csv(&ev.aor))?;
    if svg {
        let pr = Series {
            label: "boundary",
            points: ev.sweep.dataset.iter().map(|p| (p.recall, p.precision)).collect(),
        };
        write(&out("pr.svg"), line_plot("Precision-recall", "recall", "precision", &[pr]))?;
        for (name, title, curve) in [
            ("opr.svg", "Occlusion precision-recall", &ev.opr),
            ("aor.svg", "Occlusion accuracy-recall", &ev.aor),
        ] {
            let s = Series {
                label: "orientation",
                points: curve.iter().map(|p| (p.recall, p.value)).collect(),
            };
            write(&out(name), line_plot(title, "boundary recall", "value", &[s]))?;
        }
    }
    let s = &ev.summary;
    println!(
        "ODS {:.4} (t={:.2})  OIS {:.4}  AP {:.4}",
        s.ods_f, s.ods_threshold, s.ois_f, s.ap
    );
    if let Some(min) = a.min_ods {
        if s.ods_f < min {
            return Err(CliError::CheckFailed(format!("ODS {} below {min}", s.ods_f)));
        }
    }
    Ok(())
}

const GRAD_TOL: f64 = 1e-6;

fn losscheck(a: LosscheckArgs, show: bool) -> Result<()> {
    let kinds = [
        ("cce", BoundaryLoss::Cce),
        ("focal", BoundaryLoss::Focal(FocalParams::default())),
        ("attention_beta4_gamma0.5", BoundaryLoss::default()),
        (
            "attention_beta2_gamma0.5",
            BoundaryLoss::Attention(AttentionParams::new(2.0, 0.5)?),
        ),
        (
            "attention_beta4_gamma0.2",
            BoundaryLoss::Attention(AttentionParams::new(4.0, 0.2)?),
        ),
    ];
    if show {
        println!("{a:#?}\ntolerance = {GRAD_TOL:e}\nclamp_eps = {DEFAULT_CLAMP_EPS:e}");
        for (name, k) in &kinds {
            println!("{name}: {k}");
        }
        return Ok(());
    }
    let mut failures = Vec::new();
    for (name, kind) in &kinds {
        let c = check_boundary_gradient(kind, a.alpha, a.grid, DEFAULT_CLAMP_EPS)?;
        let ok = c.max_rel_err < GRAD_TOL;
        println!(
            "{} {name}: max rel err {:.3e} at p={:.4} over {} points",
            if ok { "PASS" } else { "FAIL" },
            c.max_rel_err,
            c.worst_at,
            c.points
        );
        if !ok {
            failures.push(name.to_string());
        }
    }
    let c = check_smooth_l1_gradient(3.0, 601)?;
    let ok = c.max_rel_err < GRAD_TOL;
    println!(
        "{} smooth_l1(sigma=3): max rel err {:.3e} at x={:.4} over {} points",
        if ok { "PASS" } else { "FAIL" },
        c.max_rel_err,
        c.worst_at,
        c.points
    );
    if !ok {
        failures.push("smooth_l1".into());
    }
    if let Some(dir) = &a.out_dir {
        mkdir(dir)?;
        for (name, kind) in &kinds {
            let table = loss_curve_table(kind, a.alpha, a.grid.max(2), DEFAULT_CLAMP_EPS)?;
            write(&dir.join(format!("curve_{name}.csv")), curve_csv(&table))?;
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("gradient check: {}", failures.join(", "))))
    }
}

fn sweep(a: SweepArgs, show: bool) -> Result<()> {
    let base = train_config(&a.opts, BoundaryLoss::default())?;
    if a.betas.is_empty() || a.gammas.is_empty() {
        return Err(CliError::Usage("beta and gamma lists must be nonempty".into()));
    }
    if show {
        println!(
            "manifest = {}\nbetas = {:?}\ngammas = {:?}\nout = {}\n{base:#?}",
            a.manifest.display(),
            a.betas,
            a.gammas,
            a.out.display()
        );
        return Ok(());
    }
    let manifest = DatasetManifest::load(&a.manifest)?;
    let (train_m, hold_m) = holdout_split(&manifest)?;
    let (train, hold) = (train_m.load_all()?, hold_m.load_all()?);
    let rows = sweep_beta_gamma(&train, &hold, &base, &a.betas, &a.gammas, Execution::default())?;
    write(&a.out, sweep_csv(&rows))?;
    for r in &rows {
        println!(
            "beta {} gamma {}: ODS {:.4} OIS {:.4} AP {:.4}",
            r.beta, r.gamma, r.ods, r.ois, r.ap
        );
    }
    Ok(())
}
