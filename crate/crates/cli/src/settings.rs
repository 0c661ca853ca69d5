//! Resolution of defaults, config files and command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use paste_core::config::parse_key_values;
use paste_core::corpus::DatasetName;
use paste_core::model::ModelConfig;
use paste_core::runs::run_seeds;
use paste_core::training::TrainConfig;
use paste_core::triplet::GenerationDirection;
use serde::Serialize;

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory holding one sub-directory per dataset.
    #[arg(long, env = "PASTE_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_dataset)]
    pub dataset: Option<DatasetName>,
    /// External tagger command used for sentences without POS/DEP tags.
    #[arg(long)]
    pub tagger: Option<String>,
    /// Canonical JSONL file with frozen POS/DEP tags to reuse.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
}

/// Model options shared by training and checkpoint consistency checks.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    #[arg(long, value_parser = parse_direction)]
    pub direction: Option<GenerationDirection>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub d_w: Option<usize>,
    #[arg(long)]
    pub d_pos: Option<usize>,
    #[arg(long)]
    pub d_dep: Option<usize>,
    #[arg(long)]
    pub d_h: Option<usize>,
    #[arg(long)]
    pub d_p: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// `key=value` configuration file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// First seed; later runs use seed+1, seed+2, ...
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pre-trained word vectors in GloVe text format.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
}

fn parse_dataset(s: &str) -> std::result::Result<DatasetName, String> {
    s.parse()
}

fn parse_direction(s: &str) -> std::result::Result<GenerationDirection, String> {
    s.parse()
}

/// Everything a run needs, echoed verbatim into its artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub dataset: DatasetName,
    pub data_dir: PathBuf,
    /// `max_steps` is filled in from the training split when unset.
    pub model: ModelConfig,
    pub max_steps_from_data: bool,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub embeddings: Option<PathBuf>,
    pub tagger: Option<String>,
    pub annotations: Option<PathBuf>,
}

const KNOWN_KEYS: &[&str] = &[
    "dataset",
    "data_dir",
    "direction",
    "dropout",
    "max_steps",
    "d_w",
    "d_pos",
    "d_dep",
    "d_h",
    "d_p",
    "epochs",
    "batch_size",
    "lr",
    "learning_rate",
    "weight_decay",
    "runs",
    "seed",
    "embeddings",
    "tagger",
    "annotations",
];

struct FileValues(BTreeMap<String, String>);

impl FileValues {
    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.0
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("config key '{key}': cannot parse '{v}': {e}")))
            .transpose()
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let kv = parse_key_values(&text).with_context(|| format!("parsing {}", path.display()))?;
                if let Some(bad) = kv.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
                    bail!("unknown config key '{bad}' in {}", path.display());
                }
                FileValues(kv)
            }
            None => FileValues(BTreeMap::new()),
        };
        let dataset = self
            .data
            .dataset
            .or(file.get::<DatasetName>("dataset")?)
            .ok_or_else(|| anyhow!("no dataset given (--dataset or config key 'dataset')"))?;
        let data_dir = self
            .data
            .data_dir
            .clone()
            .or(file.get::<PathBuf>("data_dir")?)
            .ok_or_else(|| anyhow!("no data directory given (--data-dir, PASTE_DATA_DIR or config key 'data_dir')"))?;
        let d = ModelConfig::default();
        let m = &self.model;
        let max_steps = m.max_steps.or(file.get("max_steps")?);
        let model = ModelConfig {
            d_w: pick(m.d_w, file.get("d_w")?, d.d_w),
            d_pos: pick(m.d_pos, file.get("d_pos")?, d.d_pos),
            d_dep: pick(m.d_dep, file.get("d_dep")?, d.d_dep),
            d_h: pick(m.d_h, file.get("d_h")?, d.d_h),
            d_p: pick(m.d_p, file.get("d_p")?, d.d_p),
            dropout: pick(m.dropout, file.get("dropout")?, d.dropout),
            direction: pick(m.direction, file.get("direction")?, d.direction),
            max_steps: max_steps.unwrap_or(d.max_steps),
        };
        let t = TrainConfig::default();
        let file_lr = file.get("lr")?.or(file.get("learning_rate")?);
        let seed = self.seed.or(file.get("seed")?);
        let train = TrainConfig {
            learning_rate: pick(self.lr, file_lr, t.learning_rate),
            weight_decay: pick(self.weight_decay, file.get("weight_decay")?, t.weight_decay),
            epochs: pick(self.epochs, file.get("epochs")?, t.epochs),
            batch_size: pick(self.batch_size, file.get("batch_size")?, t.batch_size),
            seed: seed.unwrap_or(t.seed),
            runs: pick(self.runs, file.get("runs")?, t.runs),
            random_order: false,
        };
        model.validate()?;
        train.validate()?;
        let seeds = run_seeds(train.runs, seed);
        Ok(ResolvedConfig {
            dataset,
            data_dir,
            model,
            max_steps_from_data: max_steps.is_none(),
            train,
            seeds,
            embeddings: self.embeddings.clone().or(file.get("embeddings")?),
            tagger: self.data.tagger.clone().or(file.get("tagger")?),
            annotations: self.data.annotations.clone().or(file.get("annotations")?),
        })
    }
}

impl ModelArgs {
    /// Flags that contradict a checkpoint's configuration.
    pub fn conflicts(&self, config: &ModelConfig) -> Vec<String> {
        let mut out = Vec::new();
        let mut cmp = |name: &str, flag: Option<String>, have: String| {
            if let Some(f) = flag {
                if f != have {
                    out.push(format!("--{name} {f} but checkpoint has {have}"));
                }
            }
        };
        cmp("direction", self.direction.map(|d| d.short_name().into()), config.direction.short_name().into());
        cmp("dropout", self.dropout.map(|x| x.to_string()), config.dropout.to_string());
        cmp("d-w", self.d_w.map(|x| x.to_string()), config.d_w.to_string());
        cmp("d-pos", self.d_pos.map(|x| x.to_string()), config.d_pos.to_string());
        cmp("d-dep", self.d_dep.map(|x| x.to_string()), config.d_dep.to_string());
        cmp("d-h", self.d_h.map(|x| x.to_string()), config.d_h.to_string());
        cmp("d-p", self.d_p.map(|x| x.to_string()), config.d_p.to_string());
        out
    }
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}
