use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use geoact::config::RunConfig;
use geoact::eval::{
    export_geojson, run_ablation, write_ablation_csv, write_confusion, AblationPlan, Experiment, MetricsReport,
    Provenance,
};
use geoact::features::FeaturePipeline;
use geoact::grid::GridSystem;
use geoact::ingest::{
    build_datasets, load_cities, parse_checkins_path, read_dataset, split_dataset, write_dataset, write_summary,
    ActivityTaxonomy, Dataset, IngestError,
};
use geoact::models::{self, load_model, save_model, ModelFile, ModelSpec};
use geoact::synth::{cities_toml, default_cities, synth_world, write_fsq_tsv};
use geoact::tuning::{search, write_trial_log, CvFolds, SearchSpace};
use geoact::Error;

use crate::{
    AblateArgs, Cli, Command, EvaluateArgs, ExportMapArgs, FeaturesArgs, IngestArgs, ModelArgs, SynthArgs, TrainArgs,
    TuneArgs,
};

type Result<T> = std::result::Result<T, Error>;

pub fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(w) = &cli.workdir {
        cfg.paths.workdir = w.clone();
    }
    match cli.command {
        Command::Synth(a) => synth(cfg, a),
        Command::Ingest(a) => ingest(cfg, a),
        Command::Features(a) => features(cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::Tune(a) => tune(cfg, a),
        Command::Evaluate(a) => evaluate(cfg, a),
        Command::Ablate(a) => ablate(cfg, a),
        Command::ExportMap(a) => export_map(cfg, a),
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n").map_err(|e| Error::io(path, e))
}

/// Validate, create `dir` and echo the effective config into it.
fn finalize(cfg: &RunConfig, dir: &Path) -> Result<String> {
    cfg.validate()?;
    mkdir(dir)?;
    cfg.write_echo(dir)?;
    Ok(cfg.hash())
}

fn slug(city: &str) -> String {
    city.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

pub fn dataset_path(workdir: &Path, city: &str) -> PathBuf {
    workdir.join(format!("{}.dataset.jsonl", slug(city)))
}

fn load_dataset(cfg: &RunConfig, city: &str) -> Result<Dataset> {
    let path = dataset_path(&cfg.paths.workdir, city);
    if !path.exists() {
        return Err(Error::Config(format!(
            "no dataset for {city} at {}; run `geoact ingest` first",
            path.display()
        )));
    }
    let (_, d) = read_dataset(&path)?;
    Ok(d)
}

fn parse_set(kv: &str) -> Result<(String, Value)> {
    let (k, v) = kv
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Fold the model flags into the config so its hash covers them.
fn apply_model_args(cfg: &mut RunConfig, a: &ModelArgs) -> Result<()> {
    if let Some(path) = &a.from_best {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let best: Value = serde_json::from_str(&text)?;
        let spec: ModelSpec = serde_json::from_value(best["config"].clone())?;
        cfg.model.family = spec.family();
        let Value::Object(obj) = serde_json::to_value(&spec)? else {
            unreachable!("model spec serializes to an object")
        };
        cfg.model.overrides = obj.into_iter().filter(|(k, _)| k != "family" && k != "seed").collect();
        cfg.seeds.model = spec.seed;
    }
    if let Some(f) = a.model {
        if a.from_best.is_some() && f != cfg.model.family {
            return Err(Error::Config(format!("--model {f} conflicts with --from-best ({})", cfg.model.family)));
        }
        if f != cfg.model.family {
            cfg.model.overrides.clear();
        }
        cfg.model.family = f;
    }
    for kv in &a.set {
        let (k, v) = parse_set(kv)?;
        cfg.model.overrides.insert(k, v);
    }
    Ok(())
}

/// Family defaults with the configured overrides.
fn model_spec(cfg: &RunConfig) -> Result<ModelSpec> {
    let space = SearchSpace {
        family: cfg.model.family,
        params: Default::default(),
        fixed: cfg.model.overrides.clone(),
    };
    Ok(geoact::tuning::sample_config(&space, cfg.seeds.model)?)
}

fn synth(mut cfg: RunConfig, a: SynthArgs) -> Result<()> {
    if let Some(s) = a.seed {
        cfg.seeds.synth = s;
    }
    if let Some(n) = a.checkins {
        cfg.synth.checkins = n;
    }
    let mut cities = default_cities();
    if !a.cities.is_empty() {
        cities.retain(|c| a.cities.iter().any(|n| n.eq_ignore_ascii_case(&c.city.name)));
        if cities.is_empty() {
            return Err(Error::Config(format!("no synthetic city matches {:?}", a.cities)));
        }
    }
    let hash = finalize(&cfg, &a.out)?;
    let raw = synth_world(&cities, &cfg.synth, &ActivityTaxonomy::foursquare(), cfg.seeds.synth);
    write_fsq_tsv(a.out.join("checkins.tsv"), &raw)?;
    let path = a.out.join("cities.toml");
    std::fs::write(&path, cities_toml(&cities)).map_err(|e| Error::io(&path, e))?;
    println!("wrote {} check-ins for {} cities (run {hash})", raw.len(), cities.len());
    Ok(())
}

fn ingest(mut cfg: RunConfig, a: IngestArgs) -> Result<()> {
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(a.input.map(Some), cfg.paths.input);
    set!(a.cities.map(Some), cfg.paths.cities);
    set!(a.taxonomy.map(Some), cfg.paths.taxonomy);
    set!(a.out, cfg.paths.workdir);
    set!(a.resolution, cfg.ingest.anonymization_resolution);
    set!(a.test_fraction, cfg.test_fraction);
    set!(a.seed, cfg.seeds.split);

    let input = cfg.paths.input.clone().ok_or_else(|| Error::Config("no --input given".into()))?;
    let cities_path = cfg.paths.cities.clone().ok_or_else(|| Error::Config("no --cities given".into()))?;
    let taxonomy = match &cfg.paths.taxonomy {
        Some(p) => ActivityTaxonomy::load(p)?,
        None => ActivityTaxonomy::foursquare(),
    };
    let cities = load_cities(&cities_path)?;
    if !input.exists() {
        return Err(IngestError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{}: no such file", input.display()),
        ))
        .into());
    }
    let out = cfg.paths.workdir.clone();
    let hash = finalize(&cfg, &out)?;

    let parsed = parse_checkins_path(&input, cfg.ingest.malformed_tolerance)?;
    let mut built = build_datasets(&parsed.records, &cities, &taxonomy, &cfg.ingest)?;
    for d in built.datasets.iter_mut() {
        if !d.is_empty() {
            split_dataset(d, cfg.test_fraction, cfg.seeds.split)?;
        }
        write_dataset(dataset_path(&out, &d.city.name), d, &hash)?;
    }
    write_summary(out.join("summary.json"), &built.datasets, &hash)?;

    println!("{:<16} {:>10} {:>8} {:>8}", "city", "check-ins", "venues", "users");
    for d in &built.datasets {
        let s = d.summary();
        println!("{:<16} {:>10} {:>8} {:>8}", d.city.name, s.checkins, s.venues, s.users);
    }
    println!(
        "{} lines, {} malformed, {} outside every city, {} unmapped categories",
        parsed.total_lines, parsed.malformed, built.unassigned, built.dropped_unknown
    );
    Ok(())
}

fn features(cfg: RunConfig, a: FeaturesArgs) -> Result<()> {
    let d = load_dataset(&cfg, &a.city)?;
    let out = a.out.unwrap_or_else(|| cfg.paths.workdir.join(format!("features_{}", slug(&a.city))));
    let hash = finalize(&cfg, &out)?;
    let train = d.train();
    let pipe = FeaturePipeline::fit(&cfg.features, &train, d.city.center, cfg.ingest.earth, &GridSystem::default())?;
    pipe.transform(&train)?.write_csv(out.join("train.csv"), &hash)?;
    pipe.transform(&d.test())?.write_csv(out.join("test.csv"), &hash)?;
    println!("{} features per record written to {}", pipe.dimension(), out.display());
    Ok(())
}

fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    apply_model_args(&mut cfg, &a.model)?;
    if let Some(s) = a.seed {
        cfg.seeds.model = s;
    }
    let spec = model_spec(&cfg)?;
    let d = load_dataset(&cfg, &a.city)?;
    let path = a
        .out
        .unwrap_or_else(|| cfg.paths.workdir.join(format!("{}_{}.model", slug(&a.city), cfg.model.family)));
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    let hash = finalize(&cfg, &dir)?;
    let train = d.train();
    let pipe = FeaturePipeline::fit(&cfg.features, &train, d.city.center, cfg.ingest.earth, &GridSystem::default())?;
    let m = pipe.transform(&train)?;
    let model = models::fit(&spec, &m.x, &m.y)?.with_fingerprint(cfg.features.fingerprint());
    let train_loss = geoact::eval::log_loss(&model.predict_proba(&m.x)?, &m.y)?;
    save_model(
        &path,
        &ModelFile {
            run_config_hash: hash.clone(),
            city: d.city.name.clone(),
            features: cfg.features.clone(),
            split_fingerprint: d.split_fingerprint(),
            model,
        },
    )?;
    println!("{} trained on {} records, training log loss {train_loss:.4}; saved {}", spec.family(), m.rows(), path.display());
    Ok(())
}

fn tune(mut cfg: RunConfig, a: TuneArgs) -> Result<()> {
    apply_model_args(&mut cfg, &a.model)?;
    if a.space.is_some() {
        cfg.model.space = a.space.clone();
    }
    if let Some(t) = a.trials {
        cfg.budget.max_trials = Some(t);
    }
    if let Some(s) = a.max_secs {
        cfg.budget.max_wall_clock_secs = Some(s);
    }
    if let Some(k) = a.folds {
        cfg.budget.folds = k;
    }
    if let Some(s) = a.seed {
        cfg.seeds.search = s;
    }
    let mut space = match &cfg.model.space {
        Some(p) => SearchSpace::load(p)?,
        None => SearchSpace::published(cfg.model.family),
    };
    if space.family != cfg.model.family {
        return Err(Error::Config(format!(
            "search space is for {}, model is {}",
            space.family, cfg.model.family
        )));
    }
    for (k, v) in &cfg.model.overrides {
        space.params.remove(k);
        space.fixed.insert(k.clone(), v.clone());
    }
    let d = load_dataset(&cfg, &a.city)?;
    let out = a
        .out
        .unwrap_or_else(|| cfg.paths.workdir.join(format!("tune_{}_{}", slug(&a.city), cfg.model.family)));
    let hash = finalize(&cfg, &out)?;
    let folds = CvFolds::from_records(
        &d.train(),
        &cfg.features,
        d.city.center,
        cfg.ingest.earth,
        &GridSystem::default(),
        cfg.budget.folds,
        cfg.seeds.folds,
    )?;
    for w in &folds.warnings {
        log::warn!("{w}");
    }
    let outcome = search(&space, &folds, &cfg.budget.budget(), cfg.seeds.search)?;
    let header = json!({
        "run_config_hash": hash,
        "city": d.city.name,
        "family": cfg.model.family,
        "folds": cfg.budget.folds,
        "seed": cfg.seeds.search,
        "space": space,
    });
    write_trial_log(out.join("trials.jsonl"), &header, &outcome.trials)?;
    let best = json!({
        "run_config_hash": hash,
        "city": d.city.name,
        "trial": outcome.best.trial,
        "trials_run": outcome.trials.len(),
        "mean_log_loss": outcome.best.mean,
        "std_log_loss": outcome.best.std,
        "fold_losses": outcome.best.fold_losses,
        "config": outcome.best.config,
    });
    write_json(&out.join("best.json"), &best)?;
    println!(
        "best of {} trials: #{} with mean CV log loss {:.4}",
        outcome.trials.len(),
        outcome.best.trial,
        outcome.best.mean.unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Load a model and the dataset it was trained on, refit the extractor on
/// the training split and return the chosen split's matrix.
fn model_and_split(cfg: &RunConfig, model: &Path, split: &str) -> Result<(ModelFile, Dataset, geoact::features::FeatureMatrix, Vec<geoact::CheckIn>)> {
    if !model.exists() {
        return Err(Error::io(model, std::io::Error::new(std::io::ErrorKind::NotFound, "no such model file")));
    }
    let file = load_model(model)?;
    let d = load_dataset(cfg, &file.city)?;
    if d.split_fingerprint() != file.split_fingerprint {
        log::warn!("dataset split differs from the one the model was trained on");
    }
    file.model.check_fingerprint(&file.features.fingerprint())?;
    let pipe = FeaturePipeline::fit(&file.features, &d.train(), d.city.center, cfg.ingest.earth, &GridSystem::default())?;
    let records = if split == "train" { d.train() } else { d.test() };
    let m = pipe.transform(&records)?;
    Ok((file, d, m, records))
}

fn evaluate(cfg: RunConfig, a: EvaluateArgs) -> Result<()> {
    let out = a
        .out
        .unwrap_or_else(|| a.model.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).join(format!("eval_{}", a.split)));
    let (file, d, m, _) = model_and_split(&cfg, &a.model, &a.split)?;
    let hash = finalize(&cfg, &out)?;
    let probs = file.model.predict_proba(&m.x)?;
    let prov = Provenance {
        seed: file.model.spec.seed,
        run_config_hash: hash.clone(),
        feature_fingerprint: file.features.fingerprint(),
        split_fingerprint: d.split_fingerprint(),
    };
    let report = MetricsReport::compute(&probs, &m.y, prov)?;
    report.write_json(out.join("metrics.json"))?;
    write_confusion(&out, &probs, &m.y, &hash)?;
    println!(
        "{} {} split: macro-F1 {:.4}, accuracy {:.4}, log loss {:.4} over {} records",
        file.city, a.split, report.macro_f1, report.accuracy, report.log_loss, report.records
    );
    Ok(())
}

fn ablate(mut cfg: RunConfig, a: AblateArgs) -> Result<()> {
    apply_model_args(&mut cfg, &a.model)?;
    if let Some(s) = a.seed {
        cfg.seeds.model = s;
    }
    let spec = model_spec(&cfg)?;
    let d = load_dataset(&cfg, &a.city)?;
    let out = a
        .out
        .unwrap_or_else(|| cfg.paths.workdir.join(format!("ablate_{}_{}", slug(&a.city), a.axis)));
    let hash = finalize(&cfg, &out)?;
    let grids = GridSystem::default();
    let exp = Experiment {
        dataset: &d,
        earth: cfg.ingest.earth,
        grids: &grids,
        run_config_hash: hash.clone(),
    };
    let plan = AblationPlan::standard(a.axis, &cfg.features);
    let rows = run_ablation(&plan, &exp, &spec, cfg.seeds.model)?;
    write_ablation_csv(out.join("ablation.csv"), &rows, &hash)?;
    for r in &rows {
        match (&r.report, &r.error) {
            (Some(m), _) => println!("{:<14} d={:<4} macro-F1 {:.4}", r.variant, r.dimension, m.macro_f1),
            (None, e) => println!("{:<14} failed: {}", r.variant, e.as_deref().unwrap_or("unknown")),
        }
    }
    Ok(())
}

fn export_map(cfg: RunConfig, a: ExportMapArgs) -> Result<()> {
    let out = a
        .out
        .unwrap_or_else(|| a.model.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).join("map"));
    let (file, _, m, records) = model_and_split(&cfg, &a.model, &a.split)?;
    let hash = finalize(&cfg, &out)?;
    let preds = file.model.predict(&m.x)?;
    let export = export_geojson(&records, &preds, a.resolution, &GridSystem::default(), &hash)?;
    geoact::eval::validate_geojson(&export.inferred)?;
    geoact::eval::validate_geojson(&export.truth)?;
    export.write(&out)?;
    let acc = geoact::eval::accuracy(&preds, &m.y)?;
    println!(
        "{} cells, modal agreement {:.4}, record accuracy {acc:.4}",
        export.cells.len(),
        export.modal_agreement
    );
    Ok(())
}
