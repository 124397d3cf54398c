//! Run configuration: an INI-style `key = value` file with sections, then
//! command-line overrides. Every key has a default; unknown keys are errors.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use incsg::datagen::SyntheticSceneSpec;
use incsg::model::{CollisionMode, FeatureMode, ModelConfig, Variant};
use incsg::train::{AlphaMode, EvalPrior, TrainConfig};
use incsg::{Error, Result};
use ini::Ini;

#[derive(Clone, Debug, PartialEq)]
pub struct DataSection {
    /// Dataset directory holding `train.jsonl`, `val.jsonl`, `test.jsonl`.
    pub dir: PathBuf,
    /// Number of scenes `gen` writes.
    pub scenes: usize,
    /// `name f1 f2 ...` embedding table; pseudo-embeddings when unset.
    pub embeddings: Option<PathBuf>,
    pub embedding_seed: u64,
    pub generator: SyntheticSceneSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSection {
    pub prior: EvalPrior,
    pub falsify: f64,
    /// `train`, `val` or `test`.
    pub split: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckSection {
    pub tolerance: f64,
    pub step: f64,
    pub directions: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// `(section, key)` pairs given explicitly; variant-dependent training
    /// defaults apply to the others.
    pub explicit: BTreeSet<(String, String)>,
    pub eval: EvalSection,
    pub gradcheck: GradcheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            seed: 0,
            data: DataSection {
                dir: PathBuf::from("data"),
                scenes: 50,
                embeddings: None,
                embedding_seed: 0,
                generator: SyntheticSceneSpec::default(),
            },
            train: TrainConfig::for_variant(model.variant),
            model,
            explicit: BTreeSet::new(),
            eval: EvalSection { prior: EvalPrior::Predicted, falsify: 0.0, split: "test".into() },
            gradcheck: GradcheckSection { tolerance: 1e-3, step: 1e-6, directions: 2 },
        }
    }
}

fn parse<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.trim().parse().map_err(|e| Error::Config(format!("[{section}] {key} = {value:?}: {e}")))
}

fn parse_list(section: &str, key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').filter(|s| !s.trim().is_empty()).map(|v| parse(section, key, v)).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Reads `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let ini = Ini::load_from_file(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::default();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("run");
            for (key, value) in props.iter() {
                cfg.set(section, key, value, base)?;
            }
        }
        Ok(cfg)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str, base: &Path) -> Result<()> {
        let (s, k, v) = (section, key, value);
        let g = &mut self.data.generator;
        let m = &mut self.model;
        let t = &mut self.train;
        match (s, k) {
            ("run", "seed") => self.seed = parse(s, k, v)?,
            ("data", "dir") => self.data.dir = base.join(v.trim()),
            ("data", "scenes") => self.data.scenes = parse(s, k, v)?,
            ("data", "embeddings") => {
                self.data.embeddings = Some(v.trim()).filter(|p| !p.is_empty()).map(|p| base.join(p))
            }
            ("data", "embedding_seed") => self.data.embedding_seed = parse(s, k, v)?,
            ("data", "num_objects") => g.num_objects = parse(s, k, v)?,
            ("data", "frames_per_scene") => g.frames_per_scene = parse(s, k, v)?,
            ("data", "points_per_instance") => g.points_per_instance = parse(s, k, v)?,
            ("data", "noise_std") => g.noise_std = parse(s, k, v)?,
            ("data", "size_jitter") => g.size_jitter = parse(s, k, v)?,
            ("data", "window_fraction") => g.window_fraction = parse(s, k, v)?,
            ("data", "room_length") => {
                g.room_length = if v.trim().is_empty() { None } else { Some(parse(s, k, v)?) }
            }
            ("model", "variant") => m.variant = parse(s, k, v)?,
            ("model", "feature_mode") => m.feature_mode = parse(s, k, v)?,
            ("model", "collision_layer") => m.collision = parse(s, k, v)?,
            ("model", "hidden_dim") => m.hidden_dim = parse(s, k, v)?,
            ("model", "encoder_dims") => m.encoder_dims = parse_list(s, k, v)?,
            ("model", "edge_mlp_dims") => m.edge_mlp_dims = parse_list(s, k, v)?,
            ("model", "node_head_dim") => m.node_head_dim = parse(s, k, v)?,
            ("model", "edge_head_dim") => m.edge_head_dim = parse(s, k, v)?,
            ("model", "heads") => m.heads = parse(s, k, v)?,
            ("model", "layers") => m.layers = parse(s, k, v)?,
            ("model", "dropout") => m.dropout = parse(s, k, v)?,
            ("model", "embedding_dim") => m.embedding_dim = parse(s, k, v)?,
            ("train", "max_epochs") => t.max_epochs = parse(s, k, v)?,
            ("train", "patience") => t.patience = parse(s, k, v)?,
            ("train", "lr") => t.lr = parse(s, k, v)?,
            ("train", "gamma") => t.gamma = parse(s, k, v)?,
            ("train", "step_size") => t.step_size = parse(s, k, v)?,
            ("train", "alpha") => t.alpha = parse(s, k, v)?,
            ("train", "alpha_mode") => t.alpha_mode = parse::<AlphaMode>(s, k, v)?,
            ("train", "falsify") => t.falsify = parse(s, k, v)?,
            ("train", "max_steps") => t.max_steps = if v.trim().is_empty() { None } else { Some(parse(s, k, v)?) },
            ("eval", "prior") => self.eval.prior = parse(s, k, v)?,
            ("eval", "falsify") => self.eval.falsify = parse(s, k, v)?,
            ("eval", "split") => self.eval.split = v.trim().to_string(),
            ("gradcheck", "tolerance") => self.gradcheck.tolerance = parse(s, k, v)?,
            ("gradcheck", "step") => self.gradcheck.step = parse(s, k, v)?,
            ("gradcheck", "directions") => self.gradcheck.directions = parse(s, k, v)?,
            _ => return Err(Error::Config(format!("unknown key [{section}] {key}"))),
        }
        self.explicit.insert((s.to_string(), k.to_string()));
        Ok(())
    }

    /// Fills derived values and checks ranges.
    pub fn finish(&mut self) -> Result<()> {
        let defaults = TrainConfig::for_variant(self.model.variant);
        let given = |key: &str| self.explicit.contains(&("train".to_string(), key.to_string()));
        if !given("lr") {
            self.train.lr = defaults.lr;
        }
        if !given("step_size") {
            self.train.step_size = defaults.step_size;
        }
        self.train.seed = self.seed;
        self.data.generator.seed = self.seed;
        self.model.validate()?;
        self.train.validate()?;
        self.data.generator.validate()?;
        if !(0.0..=1.0).contains(&self.eval.falsify) {
            return Err(Error::Config(format!("[eval] falsify {} outside [0, 1]", self.eval.falsify)));
        }
        if !["train", "val", "test"].contains(&self.eval.split.as_str()) {
            return Err(Error::Config(format!("[eval] split {:?} is not train, val or test", self.eval.split)));
        }
        if self.data.scenes == 0 {
            return Err(Error::Config("[data] scenes must be positive".into()));
        }
        Ok(())
    }

    /// The effective configuration in the format `load` reads.
    pub fn to_ini(&self) -> Ini {
        let mut ini = Ini::new();
        let g = &self.data.generator;
        let m = &self.model;
        let t = &self.train;
        ini.with_section(Some("run")).set("seed", self.seed.to_string());
        ini.with_section(Some("data"))
            .set("dir", self.data.dir.display().to_string())
            .set("scenes", self.data.scenes.to_string())
            .set("embeddings", self.data.embeddings.as_ref().map(|p| p.display().to_string()).unwrap_or_default())
            .set("embedding_seed", self.data.embedding_seed.to_string())
            .set("num_objects", g.num_objects.to_string())
            .set("frames_per_scene", g.frames_per_scene.to_string())
            .set("points_per_instance", g.points_per_instance.to_string())
            .set("noise_std", g.noise_std.to_string())
            .set("size_jitter", g.size_jitter.to_string())
            .set("window_fraction", g.window_fraction.to_string())
            .set("room_length", g.room_length.map(|r| r.to_string()).unwrap_or_default());
        ini.with_section(Some("model"))
            .set("variant", m.variant.to_string())
            .set("feature_mode", m.feature_mode.to_string())
            .set("collision_layer", m.collision.to_string())
            .set("hidden_dim", m.hidden_dim.to_string())
            .set("encoder_dims", join(&m.encoder_dims))
            .set("edge_mlp_dims", join(&m.edge_mlp_dims))
            .set("node_head_dim", m.node_head_dim.to_string())
            .set("edge_head_dim", m.edge_head_dim.to_string())
            .set("heads", m.heads.to_string())
            .set("layers", m.layers.to_string())
            .set("dropout", m.dropout.to_string())
            .set("embedding_dim", m.embedding_dim.to_string());
        ini.with_section(Some("train"))
            .set("max_epochs", t.max_epochs.to_string())
            .set("patience", t.patience.to_string())
            .set("lr", t.lr.to_string())
            .set("gamma", t.gamma.to_string())
            .set("step_size", t.step_size.to_string())
            .set("alpha", t.alpha.to_string())
            .set("alpha_mode", t.alpha_mode.to_string())
            .set("falsify", t.falsify.to_string())
            .set("max_steps", t.max_steps.map(|s| s.to_string()).unwrap_or_default());
        ini.with_section(Some("eval"))
            .set("prior", self.eval.prior.to_string())
            .set("falsify", self.eval.falsify.to_string())
            .set("split", self.eval.split.clone());
        ini.with_section(Some("gradcheck"))
            .set("tolerance", self.gradcheck.tolerance.to_string())
            .set("step", self.gradcheck.step.to_string())
            .set("directions", self.gradcheck.directions.to_string());
        ini
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_ini().write_to_file(path)?;
        Ok(())
    }
}

/// Command-line overrides shared by every command.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// Configuration file (`key = value` lines under `[section]` headers).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub feature_mode: Option<FeatureMode>,
    #[arg(long)]
    pub collision_layer: Option<CollisionMode>,
    /// Fraction of global labels corrupted in training samples.
    #[arg(long)]
    pub falsify: Option<f64>,
    /// Fraction of global labels corrupted while evaluating.
    #[arg(long)]
    pub falsify_eval: Option<f64>,
    /// Global-node labels during evaluation: predicted or ground_truth.
    #[arg(long)]
    pub eval_prior: Option<EvalPrior>,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory (or file, for `eval` and `predict`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(v) = self.variant {
            cfg.model.variant = v;
        }
        if let Some(f) = self.feature_mode {
            cfg.model.feature_mode = f;
        }
        if let Some(c) = self.collision_layer {
            cfg.model.collision = c;
        }
        if let Some(f) = self.falsify {
            cfg.train.falsify = f;
        }
        if let Some(f) = self.falsify_eval {
            cfg.eval.falsify = f;
        }
        if let Some(p) = self.eval_prior {
            cfg.eval.prior = p;
        }
        if let Some(d) = &self.data {
            cfg.data.dir = d.clone();
        }
        // Echoed configs must reload from any directory.
        cfg.data.dir = std::path::absolute(&cfg.data.dir)?;
        if let Some(e) = &cfg.data.embeddings {
            cfg.data.embeddings = Some(std::path::absolute(e)?);
        }
        cfg.finish()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_default_config_matches_builtin_defaults() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.ini");
        let mut loaded = RunConfig::load(&path).unwrap();
        loaded.finish().unwrap();
        let mut builtin = RunConfig::default();
        builtin.finish().unwrap();
        loaded.data.dir = builtin.data.dir.clone();
        let text = |c: &RunConfig| {
            let mut buf = Vec::new();
            c.to_ini().write_to(&mut buf).unwrap();
            String::from_utf8(buf).unwrap()
        };
        assert_eq!(text(&loaded), text(&builtin));
    }
}
