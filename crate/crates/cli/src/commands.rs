//! Subcommands: file I/O and run manifests around the pipeline stages.

use std::fs;
use std::path::{Path, PathBuf};

use ctxprop_core::dataset::{generate_synthetic, load_dataset, write_dataset, SceneRecord};
use ctxprop_core::{KdeModel, LdaModel, ObjectSize, RelationModel, StrategyKind};
use toml::{Table, Value};

use crate::config::{RunConfig, SplitPart, DEFAULT_OBJECT_SIZE};
use crate::error::CliError;
use crate::pipeline::{
    curves_csv, evaluate, fit_models, lda_params, sample_scenes, select_part, to_proposal_file,
    FittedModel,
};
use crate::proposals_file::ProposalFile;

pub const MODEL_MANIFEST: &str = "manifest.toml";

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn require_output(cfg: &RunConfig) -> Result<&Path, CliError> {
    if cfg.paths.output.as_os_str().is_empty() {
        return Err(CliError::config("no output path given (use --out)"));
    }
    Ok(&cfg.paths.output)
}

/// Manifest path written next to an output file: `curves.csv` -> `curves.manifest.toml`.
pub fn manifest_path(output: &Path) -> PathBuf {
    output.with_extension("manifest.toml")
}

fn size_value(s: ObjectSize) -> Value {
    Value::try_from(s).expect("object size serializes")
}

/// The manifest: command name, derived values, statistics and the full effective
/// configuration including every default.
fn manifest(command: &str, cfg: &RunConfig, resolved: Table, stats: Table) -> String {
    let mut t = Table::new();
    t.insert("command".into(), command.into());
    t.insert("resolved".into(), resolved.into());
    t.insert("stats".into(), stats.into());
    t.insert(
        "config".into(),
        Value::try_from(cfg).expect("config serializes"),
    );
    toml::to_string(&t).expect("manifest serializes")
}

fn count(n: usize) -> Value {
    Value::Integer(n as i64)
}

fn load_scenes(cfg: &RunConfig) -> Result<Vec<SceneRecord>, CliError> {
    Ok(load_dataset(&cfg.paths.data, &cfg.class)?)
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<String, CliError> {
    let out = require_output(cfg)?;
    let scenes = generate_synthetic(&cfg.synth)?;
    write_dataset(out, &scenes)?;
    let objects: usize = scenes.iter().map(|s| s.annotations.len()).sum();
    let mut stats = Table::new();
    stats.insert("scenes".into(), count(scenes.len()));
    stats.insert("objects".into(), count(objects));
    write_file(
        &out.join(MODEL_MANIFEST),
        &manifest("synth", cfg, Table::new(), stats),
    )?;
    Ok(format!(
        "wrote {} scenes ({objects} objects) to {}",
        scenes.len(),
        out.display()
    ))
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<String, CliError> {
    let scenes = load_scenes(cfg)?;
    let train = select_part(&scenes, cfg, SplitPart::Train);
    let fitted = fit_models(&train, cfg)?;
    let dir = &cfg.paths.models;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;

    let params = lda_params(cfg);
    let mut resolved = Table::new();
    resolved.insert("mean_size".into(), size_value(fitted.mean_size));
    resolved.insert(
        "vocabulary_cell".into(),
        cfg.vocabulary
            .cell
            .unwrap_or(fitted.mean_size.w / 2.0)
            .into(),
    );
    resolved.insert("theta_bins".into(), count(cfg.vocabulary.theta_bins));
    resolved.insert("topics".into(), count(params.num_topics));
    resolved.insert("alpha".into(), params.alpha.into());
    resolved.insert("beta".into(), params.beta.into());
    resolved.insert("iterations".into(), count(params.iterations));
    resolved.insert("rng_seed".into(), Value::Integer(cfg.rng_seed as i64));

    let mut stats = Table::new();
    stats.insert("scenes".into(), count(fitted.scenes));
    stats.insert("objects".into(), count(fitted.objects));
    let mut lines = Vec::new();
    for (strategy, model, st) in &fitted.models {
        let name = FittedModel::file_name(strategy);
        write_file(&dir.join(&name), &model.to_text())?;
        let mut m = Table::new();
        m.insert("file".into(), name.clone().into());
        m.insert("relations".into(), count(st.relations));
        if let FittedModel::Lda(_) = model {
            m.insert("documents".into(), count(st.documents));
            m.insert("tokens".into(), count(st.tokens));
            m.insert("vocabulary_size".into(), count(st.vocabulary_size));
        }
        stats.insert(strategy.label(), m.into());
        lines.push(name);
    }
    write_file(
        &dir.join(MODEL_MANIFEST),
        &manifest("fit", cfg, resolved, stats),
    )?;
    Ok(format!(
        "fitted {} models on {} scenes: {}",
        lines.len(),
        fitted.scenes,
        lines.join(", ")
    ))
}

/// Grid object size: explicit config, else the training mean from the model manifest,
/// else a typical car.
fn grid_object_size(cfg: &RunConfig) -> Result<ObjectSize, CliError> {
    if let Some(s) = cfg.grid.object_size {
        return Ok(s);
    }
    let path = cfg.paths.models.join(MODEL_MANIFEST);
    if !path.exists() {
        return Ok(DEFAULT_OBJECT_SIZE);
    }
    let table: Table = read_file(&path)?.parse().map_err(|e: toml::de::Error| {
        CliError::new("model", format!("{}: {}", path.display(), e.message()))
    })?;
    match table.get("resolved").and_then(|r| r.get("mean_size")) {
        Some(v) => v
            .clone()
            .try_into()
            .map_err(|_| CliError::new("model", format!("{}: bad mean_size", path.display()))),
        None => Ok(DEFAULT_OBJECT_SIZE),
    }
}

fn load_model(cfg: &RunConfig) -> Result<Option<FittedModel>, CliError> {
    let strategy = cfg.strategy.strategy();
    if strategy.kind == StrategyKind::SlidingWindow3D {
        return Ok(None);
    }
    let path = cfg.paths.models.join(FittedModel::file_name(&strategy));
    if !path.exists() {
        return Err(CliError::new(
            "model-missing",
            format!(
                "strategy {} needs model file {}",
                strategy.label(),
                path.display()
            ),
        ));
    }
    let text = read_file(&path)?;
    let model = match strategy.kind {
        StrategyKind::PairwiseKde => KdeModel::from_text(&text)
            .map(FittedModel::Kde)
            .map_err(CliError::from),
        _ => LdaModel::from_text(&text)
            .map(FittedModel::Lda)
            .map_err(CliError::from),
    };
    model.map(Some).map_err(|e| e.context(path.display()))
}

pub fn cmd_sample(cfg: &RunConfig) -> Result<String, CliError> {
    let out = require_output(cfg)?.to_path_buf();
    let model = load_model(cfg)?;
    let size = grid_object_size(cfg)?;
    let scenes = select_part(&load_scenes(cfg)?, cfg, cfg.split.part);
    let strategy = cfg.strategy.strategy();
    let relation_model = model
        .as_ref()
        .map_or(RelationModel::None, FittedModel::as_relation_model);
    let grid = cfg.grid.spec(size);
    let images = sample_scenes(&scenes, &strategy, relation_model, &grid, cfg)?;
    let file = to_proposal_file(&strategy.label(), &images);
    write_file(&out, &file.to_text())?;

    let fallback: Vec<Value> = images
        .iter()
        .filter(|i| i.fallback)
        .map(|i| i.image_id.clone().into())
        .collect();
    let total: usize = images.iter().map(|i| i.set.len()).sum();
    let mut resolved = Table::new();
    resolved.insert("strategy".into(), strategy.label().into());
    resolved.insert("grid_object_size".into(), size_value(size));
    let mut stats = Table::new();
    stats.insert("images".into(), count(images.len()));
    stats.insert("proposals".into(), count(total));
    stats.insert("seeds".into(), count(images.iter().map(|i| i.seeds).sum()));
    stats.insert("fallback_images".into(), Value::Array(fallback.clone()));
    write_file(
        &manifest_path(&out),
        &manifest("sample", cfg, resolved, stats),
    )?;
    if !fallback.is_empty() {
        eprintln!(
            "note: {} of {} images had no seeds and were served by the grid fallback",
            fallback.len(),
            images.len()
        );
    }
    Ok(format!(
        "wrote {total} proposals for {} images to {}",
        images.len(),
        out.display()
    ))
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<String, CliError> {
    let out = require_output(cfg)?.to_path_buf();
    if cfg.paths.proposals.is_empty() {
        return Err(CliError::config(
            "no proposal files given (use --proposals)",
        ));
    }
    let files = cfg
        .paths
        .proposals
        .iter()
        .map(|p| ProposalFile::parse(&read_file(p)?).map_err(|e| e.context(p.display())))
        .collect::<Result<Vec<_>, _>>()?;
    let scenes = select_part(&load_scenes(cfg)?, cfg, cfg.split.part);
    let curves = evaluate(&scenes, &files, cfg)?;
    write_file(&out, &curves_csv(&curves)?)?;

    let mut resolved = Table::new();
    resolved.insert("recall_averaging".into(), "micro".into());
    let mut stats = Table::new();
    stats.insert("images".into(), count(scenes.len()));
    stats.insert(
        "annotations".into(),
        count(scenes.iter().map(|s| s.count_class(&cfg.class)).sum()),
    );
    write_file(
        &manifest_path(&out),
        &manifest("eval", cfg, resolved, stats),
    )?;
    Ok(format!(
        "wrote {} curves to {}",
        curves.len(),
        out.display()
    ))
}
