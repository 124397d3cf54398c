use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use incsg::checks::{full_suite, SuiteOptions};
use incsg::datagen::{generate_dataset, read_scene_file, split_scenes, write_scene_file, EmbeddingTable, SceneSequence};
use incsg::model::{FeatureMode, Model, ModelConfig};
use incsg::scene::LabelSpace;
use incsg::tensor::{read_checkpoint, write_checkpoint, Tensor};
use incsg::train::{run_scene, teacher_forced_samples, train, EvalConfig, TrainState};
use incsg::{Error, Result};
use log::{info, warn};
use serde_json::json;

use crate::config::{DataSection, RunConfig};

const SPLITS: [&str; 3] = ["train", "val", "test"];

fn labels() -> LabelSpace {
    LabelSpace::rio27()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
}

fn split_path(cfg: &RunConfig, split: &str) -> PathBuf {
    cfg.data.dir.join(format!("{split}.jsonl"))
}

/// Writes to `path`, or to stdout when it is `None`.
fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            Box::new(BufWriter::new(File::create(p)?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn gen(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let dir = out.unwrap_or(&cfg.data.dir);
    create_dir(dir)?;
    let labels = labels();
    let scenes = generate_dataset(&cfg.data.generator, cfg.data.scenes, &labels)?;
    let ids: Vec<String> = scenes.iter().map(|s| s.scene_id.clone()).collect();
    let (train, val, test) = split_scenes(&ids, cfg.seed);
    for (name, split) in SPLITS.iter().zip([train, val, test]) {
        let part: Vec<SceneSequence> = scenes.iter().filter(|s| split.contains(&s.scene_id)).cloned().collect();
        write_scene_file(&dir.join(format!("{name}.jsonl")), &labels, &part)?;
        info!("{name}: {} scenes", part.len());
    }
    let echoed = RunConfig { data: DataSection { dir: std::path::absolute(dir)?, ..cfg.data.clone() }, ..cfg.clone() };
    echoed.write(&dir.join("config.ini"))
}

/// The label table the configured feature mode needs.
fn label_table(cfg: &RunConfig, labels: &LabelSpace) -> Result<Option<Tensor<f32>>> {
    if cfg.model.feature_mode != FeatureMode::Embedding {
        return Ok(None);
    }
    let table = match &cfg.data.embeddings {
        Some(path) => EmbeddingTable::load(path, labels)?,
        None => EmbeddingTable::pseudo(labels, cfg.model.embedding_dim, cfg.data.embedding_seed)?,
    };
    if table.dim() != cfg.model.embedding_dim {
        return Err(Error::Config(format!(
            "embedding table has dimension {}, [model] embedding_dim is {}",
            table.dim(),
            cfg.model.embedding_dim
        )));
    }
    Ok(Some(table.to_tensor(labels)?))
}

fn sidecar(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

/// Writes a model as a checkpoint plus its configuration next to it.
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    write_checkpoint(path, &model.to_tensors())?;
    fs::write(sidecar(path), serde_json::to_string_pretty(&model.config)?)?;
    Ok(())
}

/// Loads a checkpoint, taking the model configuration from its sidecar
/// file when present and from `fallback` otherwise.
pub fn load_model(path: &Path, fallback: &ModelConfig) -> Result<Model> {
    let config = match fs::read_to_string(sidecar(path)) {
        Ok(text) => serde_json::from_str(&text)?,
        Err(e) if e.kind() == io::ErrorKind::NotFound => fallback.clone(),
        Err(e) => return Err(e.into()),
    };
    let tensors = read_checkpoint(path).map_err(|e| match e {
        Error::Io(io) => Error::Data(format!("{}: {io}", path.display())),
        other => other,
    })?;
    Model::from_tensors(config, tensors)
}

pub fn train_cmd(cfg: &RunConfig, out: &Path, resume: bool) -> Result<()> {
    create_dir(out)?;
    cfg.write(&out.join("config.ini"))?;
    let labels = labels();
    let collisions = cfg.model.uses_collisions();
    let load = |split| read_scene_file(&split_path(cfg, split), &labels);
    let train_set = teacher_forced_samples(&load("train")?, &labels, collisions, cfg.train.falsify, cfg.seed)?;
    let val_set = teacher_forced_samples(&load("val")?, &labels, collisions, cfg.train.falsify, cfg.seed)?;
    if train_set.is_empty() {
        return Err(Error::Data("training split has no frames with local nodes".into()));
    }
    let falsified: usize = train_set.iter().map(|s| s.falsified).sum();
    let global_nodes: usize = train_set.iter().map(|s| s.global_nodes).sum();
    info!(
        "{} training frames, {} validation frames; {falsified} of {global_nodes} global labels falsified",
        train_set.len(),
        val_set.len()
    );
    let weights = cfg.train.loss_weights(&train_set, labels.num_objects(), labels.num_predicates());

    let state_dir = out.join("state");
    let state = if resume && state_dir.join("state.json").exists() {
        let state = TrainState::load(&state_dir, cfg.model.clone())?;
        info!("resuming after epoch {} ({} steps)", state.epoch, state.steps);
        state
    } else {
        if resume {
            warn!("no saved state in {}; starting fresh", state_dir.display());
        }
        let model = Model::new(cfg.model.clone(), label_table(cfg, &labels)?, cfg.seed)?;
        info!("{} parameters", model.num_parameters());
        TrainState::new(model, &cfg.train)
    };
    create_dir(&state_dir)?;
    let history_path = out.join("history.jsonl");
    let state = train(state, &train_set, &val_set, &weights, &cfg.train, &mut |s| {
        let h = s.history.last().expect("an epoch just finished");
        info!("epoch {} train {:.5} val {:.5} lr {:.2e}", h.epoch, h.train_loss, h.val_loss, h.lr);
        s.save(&state_dir)?;
        let mut file = BufWriter::new(File::create(&history_path)?);
        for r in &s.history {
            let mut line = serde_json::to_value(r)?;
            line["falsify"] = json!(cfg.train.falsify);
            line["falsified"] = json!(falsified);
            line["global_nodes"] = json!(global_nodes);
            serde_json::to_writer(&mut file, &line)?;
            file.write_all(b"\n")?;
        }
        file.flush()?;
        save_model(&s.best_model(), &out.join("model.ckpt"))
    })?;
    info!("best epoch {} (val {:.5})", state.stopper.best_epoch, state.stopper.best);
    Ok(())
}

fn scenes_for(cfg: &RunConfig, scenes: Option<&Path>, labels: &LabelSpace) -> Result<Vec<SceneSequence>> {
    let path = scenes.map(Path::to_path_buf).unwrap_or_else(|| split_path(cfg, &cfg.eval.split));
    read_scene_file(&path, labels)
}

fn eval_config(cfg: &RunConfig) -> EvalConfig {
    EvalConfig { prior: cfg.eval.prior, falsify: cfg.eval.falsify, seed: cfg.seed }
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, scenes: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let labels = labels();
    let model = load_model(checkpoint, &cfg.model)?;
    let scenes = scenes_for(cfg, scenes, &labels)?;
    let report = incsg::train::evaluate(&model, &scenes, &labels, &eval_config(cfg))?;
    let mut w = output(out)?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// One `scene` line per scene, then one `snapshot` line per frame.
pub fn predict(cfg: &RunConfig, checkpoint: &Path, scenes: &Path, out: Option<&Path>) -> Result<()> {
    let labels = labels();
    let model = load_model(checkpoint, &cfg.model)?;
    let scenes = read_scene_file(scenes, &labels)?;
    let mut w = output(out)?;
    for seq in &scenes {
        serde_json::to_writer(&mut w, &json!({"kind": "scene", "scene_id": seq.scene_id, "frames": seq.frames.len()}))?;
        w.write_all(b"\n")?;
        run_scene(&model, seq, &labels, &eval_config(cfg), &mut |r| {
            let mut line = serde_json::to_value(&r.snapshot)?;
            line["kind"] = json!("snapshot");
            line["scene_id"] = json!(r.scene_id);
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
            Ok(())
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig, corrupt: Option<String>, out: Option<&Path>) -> Result<()> {
    let opts = SuiteOptions {
        tolerance: cfg.gradcheck.tolerance,
        step: cfg.gradcheck.step,
        directions: cfg.gradcheck.directions,
        seed: cfg.seed,
        corrupt,
    };
    let suite = full_suite(&opts)?;
    let mut w = output(out)?;
    writeln!(w, "{:<32} {:>7} {:>11}  {:<6} worst at", "check", "coords", "worst err", "result")?;
    for r in &suite.reports {
        let result = if r.passed { "pass" } else { "FAIL" };
        writeln!(w, "{:<32} {:>7} {:>11.3e}  {result:<6} {}", r.name, r.checks, r.worst_error, r.worst_at)?;
    }
    let failed = suite.reports.iter().filter(|r| !r.passed).count();
    writeln!(w, "{} checks, {failed} failed, {:.1} s", suite.reports.len(), suite.seconds)?;
    w.flush()?;
    if failed > 0 {
        return Err(Error::Numeric(format!("{failed} gradient check(s) above tolerance {}", opts.tolerance)));
    }
    Ok(())
}
