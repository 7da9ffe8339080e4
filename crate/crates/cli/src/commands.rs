//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::Path;

use freqshot::analysis::{
    domain_gap, run_ablation_suite, standard_grid, write_ablation_files, AblationDelta, ExperimentConfig,
};
use freqshot::data::{generate_synthetic, load_manifest, DatasetSplit, SplitRole, SynthConfig};
use freqshot::episode::{
    evaluate, sample_episode, train_model, write_eval_csv, DomainTag, Episode, MetricsWriter, ModelClassifier,
};
use freqshot::frequency::{fft2, load_image, save_gray, save_image, split_bands_raw};
use freqshot::layers::{export_filter_map, write_filter_map};
use freqshot::lfr::{apply_lfr, LfrConfig, LfrRecord};
use freqshot::model::ModelState;
use freqshot::rng::{stream_rng, Stream};
use freqshot::{analysis, Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::args::{
    AblateArgs, AugmentArgs, CheckpointArgs, DecomposeArgs, EvalArgs, ExportFiltersArgs, GenDataArgs, MmdArgs,
    ProbeArgs, SplitArg, TrainArgs,
};
use crate::config::{
    check_input_size, config_error, create_dir, data_source, experiment, gamma_dist, read_json, replace_mode,
    write_json, DataSource, RunSnapshot,
};

fn role(split: SplitArg) -> SplitRole {
    match split {
        SplitArg::Source => SplitRole::SourceTrain,
        SplitArg::TargetTrain => SplitRole::TargetTrain,
        SplitArg::TargetTest => SplitRole::TargetTest,
    }
}

fn check_fraction(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(config_error(field, format!("{v} must lie in [0, 1]")))
    }
}

fn check_positive(field: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(config_error(field, "must be positive"))
    } else {
        Ok(())
    }
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    let overrides = [
        (a.image_size, &mut cfg.image_size),
        (a.source_classes, &mut cfg.source_classes),
        (a.source_images, &mut cfg.source_images),
        (a.target_train_classes, &mut cfg.target_train_classes),
        (a.target_train_images, &mut cfg.target_train_images),
        (a.target_test_classes, &mut cfg.target_test_classes),
        (a.target_test_images, &mut cfg.target_test_images),
    ];
    for (flag, field) in overrides {
        if let Some(v) = flag {
            *field = v;
        }
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.noise_sigma {
        cfg.noise_sigma = s;
    }
    cfg.validate()?;
    create_dir(&a.out)?;
    let manifest = generate_synthetic(&cfg, &a.out)?;
    log::info!("wrote {}", manifest.display());
    Ok(())
}

/// The split of `role`, or the only split when the manifest has just one.
fn pick_split(manifest: &Path, role: SplitRole) -> Result<DatasetSplit> {
    let mut splits = load_manifest(manifest)?;
    if splits.len() == 1 {
        return Ok(splits.into_values().next().expect("one split"));
    }
    let name = splits
        .iter()
        .find(|(_, s)| s.role == role)
        .map(|(n, _)| n.clone())
        .ok_or_else(|| Error::Manifest(format!("{} has no split with role {role}", manifest.display())))?;
    Ok(splits.remove(&name).expect("name was found"))
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

#[derive(Serialize)]
struct AugmentEntry {
    episode: usize,
    class_ids: Vec<String>,
    support: Vec<String>,
    query: Vec<String>,
    #[serde(flatten)]
    record: LfrRecord,
}

fn write_episode_images(dir: &Path, ep: &Episode) -> Result<(Vec<String>, Vec<String>)> {
    let write = |prefix: &str, batch: &freqshot::Tensor| -> Result<Vec<String>> {
        (0..batch.shape()[0])
            .map(|i| {
                let name = format!("{prefix}_{i:03}.png");
                save_image(&dir.join(&name), &batch.slice_outer(i)?)?;
                Ok(name)
            })
            .collect()
    };
    Ok((write("support", &ep.support)?, write("query", &ep.query)?))
}

/// Pseudo-source episodes. When both manifests name the same file, each
/// episode is fused with itself.
pub fn augment(a: AugmentArgs) -> Result<()> {
    let gamma = gamma_dist(&a.gamma)?.unwrap_or_default();
    let lfr = LfrConfig {
        gamma,
        mode: replace_mode(a.mode),
        ..LfrConfig::default()
    };
    lfr.validate()?;
    check_positive("episodes", a.episodes)?;
    check_positive("n_way", a.n_way)?;
    check_positive("k_shot", a.k_shot)?;
    check_positive("m_query", a.m_query)?;
    let self_paired = same_file(&a.src_manifest, &a.tar_manifest);
    let src_split = pick_split(&a.src_manifest, SplitRole::SourceTrain)?;
    let tar_split = if self_paired {
        None
    } else {
        Some(pick_split(&a.tar_manifest, SplitRole::TargetTrain)?)
    };
    create_dir(&a.out)?;
    let mut episodes_rng = stream_rng(a.seed, Stream::Episodes);
    let mut augment_rng = stream_rng(a.seed, Stream::Augment);
    let (n, k, m) = (a.n_way, a.k_shot, a.m_query);
    let mut entries = Vec::with_capacity(a.episodes);
    for e in 0..a.episodes {
        let src = sample_episode(&src_split, n, k, m, DomainTag::Source, &mut episodes_rng)?;
        let tar = match &tar_split {
            Some(t) => sample_episode(t, n, k, m, DomainTag::Target, &mut episodes_rng)?,
            None => src.clone(),
        };
        let (pseudo, record) = apply_lfr(&src, &tar, &lfr, &mut augment_rng)?;
        let dir = a.out.join(format!("episode_{e:03}"));
        create_dir(&dir)?;
        let (support, query) = write_episode_images(&dir, &pseudo)?;
        entries.push(AugmentEntry {
            episode: e,
            class_ids: pseudo.class_ids.clone(),
            support: support.iter().map(|s| format!("episode_{e:03}/{s}")).collect(),
            query: query.iter().map(|s| format!("episode_{e:03}/{s}")).collect(),
            record,
        });
    }
    write_json(&a.out.join("provenance.json"), &entries)?;
    let mut snap = RunSnapshot::new("augment");
    snap.args = json!({
        "src_manifest": a.src_manifest,
        "tar_manifest": a.tar_manifest,
        "lfr": lfr,
        "seed": a.seed,
        "episodes": a.episodes,
        "n_way": n,
        "k_shot": k,
        "m_query": m,
    });
    snap.write(&a.out)?;
    log::info!("wrote {} pseudo-source episodes to {}", a.episodes, a.out.display());
    Ok(())
}

pub fn decompose(a: DecomposeArgs) -> Result<()> {
    check_fraction("gamma", a.gamma)?;
    let x = load_image(&a.image)?;
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let radius = a.gamma * h.min(w) as f64;
    let (low, high) = split_bands_raw(&x, radius)?;
    let residue = low
        .data()
        .iter()
        .zip(high.data())
        .zip(x.data())
        .map(|((l, hi), v)| (l + hi - v).abs())
        .fold(0.0, f64::max);
    create_dir(&a.out)?;
    save_image(&a.out.join("low.png"), &low)?;
    save_image(&a.out.join("high.png"), &high)?;
    save_gray(&a.out.join("spectrum.png"), &fft2(&x)?.log_magnitude_map()?, h, w)?;
    write_json(
        &a.out.join("decompose.json"),
        &json!({
            "image": a.image,
            "gamma": a.gamma,
            "radius": radius,
            "height": h,
            "width": w,
            "max_recompose_error": residue,
        }),
    )?;
    Ok(())
}

pub fn train(a: TrainArgs, threads: usize) -> Result<()> {
    let (cfg, snap_data) = experiment(&a.exp, threads)?;
    let data = data_source(&a.data, snap_data)?;
    let bench = data.load()?;
    check_input_size(&cfg, &bench)?;
    let ckpt_dir = a.run_dir.join("checkpoints");
    let analysis_dir = a.run_dir.join("analysis");
    create_dir(&ckpt_dir)?;
    create_dir(&analysis_dir)?;
    RunSnapshot {
        experiment: Some(cfg.clone()),
        data: Some(data),
        args: json!({ "eval": a.eval }),
        ..RunSnapshot::new("train")
    }
    .write(&a.run_dir)?;

    let mut model = ModelState::new(cfg.model.clone(), &mut stream_rng(cfg.train.seed, Stream::Init))?;
    log::info!("model has {} parameters", model.store.num_params());
    let mut metrics = MetricsWriter::create(&a.run_dir.join("metrics.csv"))?;
    let per_epoch = cfg.train.episodes_per_epoch;
    let mut epoch_total = 0.0;
    train_model(&mut model, &bench, &cfg.train, |m| {
        metrics.write(m)?;
        epoch_total += m.total;
        if m.episode + 1 == per_epoch {
            log::info!("epoch {} mean loss {:.4}", m.epoch, epoch_total / per_epoch as f64);
            epoch_total = 0.0;
        }
        Ok(())
    })?;
    metrics.flush()?;
    model.save(&ckpt_dir.join("final.ckpt"))?;
    if a.eval {
        let report = evaluate(
            &bench.target_test,
            &model,
            cfg.train.n_way,
            cfg.train.k_shot,
            cfg.eval.m_query,
            cfg.eval.n_tasks,
            cfg.train.seed,
            cfg.eval.threads,
        )?;
        log::info!("target-test accuracy {:.4} ± {:.4}", report.mean, report.ci95);
        write_eval_csv(&analysis_dir.join("eval.csv"), &[("target-test", &report)])?;
        write_json(&analysis_dir.join("eval.json"), &report)?;
    }
    Ok(())
}

/// Loads the checkpoint and data, creates `out` and writes its snapshot.
fn open_checkpoint(c: &CheckpointArgs, command: &str, args: serde_json::Value) -> Result<(ModelState, DataSource, freqshot::data::Benchmark)> {
    let model = ModelState::load(&c.checkpoint)?;
    let data = data_source(&c.data, None)?;
    let bench = data.load()?;
    let exp = ExperimentConfig {
        model: model.config.clone(),
        ..ExperimentConfig::default()
    };
    check_input_size(&exp, &bench)?;
    create_dir(&c.out)?;
    let mut full = json!({ "checkpoint": c.checkpoint, "seed": c.seed });
    if let (Some(dst), serde_json::Value::Object(src)) = (full.as_object_mut(), args) {
        dst.extend(src);
    }
    RunSnapshot {
        data: Some(data.clone()),
        args: full,
        ..RunSnapshot::new(command)
    }
    .write(&c.out)?;
    Ok((model, data, bench))
}

pub fn eval(a: EvalArgs, threads: usize) -> Result<()> {
    check_positive("n_tasks", a.n_tasks)?;
    check_positive("k_shot", a.k_shot)?;
    check_positive("m_query", a.m_query)?;
    let (model, _, bench) = open_checkpoint(
        &a.common,
        "eval",
        json!({ "split": role(a.split), "n_tasks": a.n_tasks, "k_shot": a.k_shot, "m_query": a.m_query, "threads": threads }),
    )?;
    let split = bench.split(role(a.split));
    let report = evaluate(
        split,
        &model,
        model.config.n_way,
        a.k_shot,
        a.m_query,
        a.n_tasks,
        a.common.seed,
        threads,
    )?;
    log::info!("{} accuracy {:.4} ± {:.4}", split.name, report.mean, report.ci95);
    write_eval_csv(&a.common.out.join("eval.csv"), &[(&role(a.split).to_string(), &report)])?;
    write_json(&a.common.out.join("eval.json"), &report)
}

pub fn probe(a: ProbeArgs) -> Result<()> {
    check_fraction("gamma_probe", a.gamma_probe)?;
    check_positive("n_tasks", a.n_tasks)?;
    check_positive("k_shot", a.k_shot)?;
    check_positive("m_query", a.m_query)?;
    let (model, _, bench) = open_checkpoint(
        &a.common,
        "probe",
        json!({ "split": role(a.split), "gamma_probe": a.gamma_probe, "n_tasks": a.n_tasks, "k_shot": a.k_shot, "m_query": a.m_query }),
    )?;
    let split = bench.split(role(a.split));
    let avail = split.min_images_per_class();
    if avail <= a.k_shot {
        return Err(Error::InsufficientImages {
            class: split.name.clone(),
            available: avail,
            required: a.k_shot + 1,
        });
    }
    let m = a.m_query.min(avail - a.k_shot);
    let report = analysis::frequency_probe(
        &ModelClassifier(&model),
        split,
        a.gamma_probe,
        (model.config.n_way, a.k_shot, m),
        a.n_tasks,
        a.common.seed,
    )?;
    log::info!(
        "probe γ={}: original {:.4}, low {:.4} ({:.3}), high {:.4} ({:.3})",
        a.gamma_probe,
        report.original_acc,
        report.low_acc,
        report.low_ratio,
        report.high_acc,
        report.high_ratio
    );
    let mut w = csv::Writer::from_path(a.common.out.join("probe.csv"))?;
    w.write_record(["gamma_probe", "n_tasks", "original_acc", "low_acc", "high_acc", "low_ratio", "high_ratio"])?;
    w.write_record([
        report.gamma_probe.to_string(),
        report.n_tasks.to_string(),
        report.original_acc.to_string(),
        report.low_acc.to_string(),
        report.high_acc.to_string(),
        report.low_ratio.to_string(),
        report.high_ratio.to_string(),
    ])?;
    w.flush().map_err(|source| Error::Io {
        path: a.common.out.join("probe.csv"),
        source,
    })?;
    write_json(&a.common.out.join("probe.json"), &report)
}

pub fn mmd(a: MmdArgs) -> Result<()> {
    if a.count < 2 {
        return Err(config_error("count", "needs at least 2 images per split"));
    }
    let (model, _, bench) = open_checkpoint(
        &a.common,
        "mmd",
        json!({ "split_a": role(a.split_a), "split_b": role(a.split_b), "count": a.count }),
    )?;
    let mut rng = stream_rng(a.common.seed, Stream::Features);
    let report = domain_gap(&model, bench.split(role(a.split_a)), bench.split(role(a.split_b)), a.count, &mut rng)?;
    log::info!("MMD {:.6} (bandwidth {:.4})", report.value, report.bandwidth);
    write_json(&a.common.out.join("mmd.json"), &report)
}

pub fn ablate(a: AblateArgs, threads: usize) -> Result<()> {
    let (base, snap_data) = experiment(&a.exp, threads)?;
    let grid: Vec<AblationDelta> = if a.grid == "standard" {
        standard_grid()
    } else {
        read_json(Path::new(&a.grid))?
    };
    if grid.is_empty() {
        return Err(config_error("grid", "is empty"));
    }
    for d in &grid {
        d.apply(&base).validate()?;
    }
    if a.seeds.is_empty() {
        return Err(config_error("seeds", "is empty"));
    }
    let data = data_source(&a.data, snap_data)?;
    let bench = data.load()?;
    check_input_size(&base, &bench)?;
    create_dir(&a.out)?;
    RunSnapshot {
        experiment: Some(base.clone()),
        data: Some(data),
        args: json!({ "grid": grid, "seeds": a.seeds }),
        ..RunSnapshot::new("ablate")
    }
    .write(&a.out)?;
    let runs_path = a.out.join("runs.csv");
    let mut runs = csv::Writer::from_path(&runs_path)?;
    runs.write_record(["config", "seed", "mean_acc", "ci95", "final_loss"])?;
    let rows = run_ablation_suite(&bench, &base, &grid, &a.seeds, |delta, seed, run| {
        let last = run.history.last().map(|m| m.total.to_string()).unwrap_or_default();
        runs.write_record([
            delta.name.clone(),
            seed.to_string(),
            run.eval.mean.to_string(),
            run.eval.ci95.to_string(),
            last,
        ])?;
        runs.flush().map_err(|source| Error::Io {
            path: runs_path.clone(),
            source,
        })
    })?;
    write_ablation_files(&a.out.join("ablation.csv"), &a.out.join("ablation.json"), &rows)
}

pub fn export_filters(a: ExportFiltersArgs) -> Result<()> {
    let model = ModelState::load(&a.checkpoint)?;
    create_dir(&a.out)?;
    let mut exported = BTreeMap::new();
    for (name, w) in &model.store.params {
        let Some(prefix) = name.strip_suffix(".gff.weight") else {
            continue;
        };
        let (rows, cols) = (w.shape()[1], w.shape()[2]);
        let grid = export_filter_map(w)?;
        let stem = prefix.replace('.', "_");
        write_filter_map(
            &a.out.join(format!("{stem}_gff.csv")),
            &a.out.join(format!("{stem}_gff.png")),
            &grid,
            rows,
            cols,
        )?;
        exported.insert(name.clone(), json!({ "rows": rows, "cols": cols, "stem": format!("{stem}_gff") }));
    }
    if exported.is_empty() {
        log::warn!("checkpoint has no global frequency filters");
    }
    let mut snap = RunSnapshot::new("export-filters");
    snap.args = json!({ "checkpoint": a.checkpoint, "filters": exported });
    snap.write(&a.out)
}
