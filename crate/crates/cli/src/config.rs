//! Flat `key=value` run configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context};
use relpos_core::data::{self, Dataset, SyntheticSpec, Task};
use relpos_core::relpos::{ClassTokenPolicy, PositionalMode};
use relpos_core::trainer::TrainConfig;
use relpos_core::vit::ModelConfig;

pub const OUT_DIR_ENV: &str = "RELPOS_OUT_DIR";

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(Task),
    Idx { images: PathBuf, labels: PathBuf },
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSource,
    pub noise_sigma: f64,
    pub count: usize,
    pub eval_fraction: f64,
    /// Class count for file datasets; inferred from labels when absent.
    pub classes: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub gradcheck_step: f64,
    pub gradcheck_batch: usize,
    pub gradcheck_param_std: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataSource::Synthetic(Task::Quadrant),
            noise_sigma: 0.1,
            count: 256,
            eval_fraction: 0.25,
            classes: None,
            out_dir: None,
            gradcheck_step: 1e-5,
            gradcheck_batch: 2,
            gradcheck_param_std: 0.5,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> anyhow::Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("`{key}`: cannot parse `{value}`: {e}"))
}

impl RunConfig {
    /// Reads an optional config file, then applies `key=value` overrides in
    /// order. Relative data paths resolve against the file's directory.
    pub fn load(base: RunConfig, file: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut entries = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
            for (i, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or_default().trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| anyhow!("{}:{}: expected key=value", path.display(), i + 1))?;
                entries.push((k.trim().to_string(), v.trim().to_string(), dir.clone()));
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects key=value, got `{o}`"))?;
            entries.push((k.trim().to_string(), v.trim().to_string(), PathBuf::new()));
        }

        let mut cfg = base;
        let mut task = match cfg.data {
            DataSource::Synthetic(task) => task,
            _ => Task::Quadrant,
        };
        let mut format = None::<String>;
        let (mut images, mut labels, mut csv) = (None, None, None);
        for (key, value, dir) in entries {
            let path = || dir.join(&value);
            let (m, t) = (&mut cfg.model, &mut cfg.train);
            match key.as_str() {
                "image_side" => m.image_side = parse(&key, &value)?,
                "channels" => m.channels = parse(&key, &value)?,
                "patch_size" => m.patch_size = parse(&key, &value)?,
                "embed_dim" => m.embed_dim = parse(&key, &value)?,
                "heads" => m.heads = parse(&key, &value)?,
                "blocks" => m.blocks = parse(&key, &value)?,
                "mlp_ratio" => m.mlp_ratio = parse(&key, &value)?,
                "mode" => m.positional.mode = parse::<PositionalMode>(&key, &value)?,
                "class_token_policy" => m.positional.class_token_policy = parse::<ClassTokenPolicy>(&key, &value)?,
                "unit_distance" => m.positional.unit_distance = parse(&key, &value)?,
                "epochs" => t.epochs = parse(&key, &value)?,
                "batch_size" => t.batch_size = parse(&key, &value)?,
                "base_lr" => t.base_lr = parse(&key, &value)?,
                "weight_decay" => t.weight_decay = parse(&key, &value)?,
                "beta1" => t.beta1 = parse(&key, &value)?,
                "beta2" => t.beta2 = parse(&key, &value)?,
                "eps" => t.eps = parse(&key, &value)?,
                "warmup_epochs" => t.warmup_epochs = parse(&key, &value)?,
                "seed" => t.seed = parse(&key, &value)?,
                "record_wall_time" => t.record_wall_time = parse(&key, &value)?,
                "task" => task = parse(&key, &value)?,
                "noise_sigma" => cfg.noise_sigma = parse(&key, &value)?,
                "count" => cfg.count = parse(&key, &value)?,
                "eval_fraction" => cfg.eval_fraction = parse(&key, &value)?,
                "classes" => cfg.classes = Some(parse(&key, &value)?),
                "data_format" => format = Some(value.clone()),
                "data_images" => images = Some(path()),
                "data_labels" => labels = Some(path()),
                "data_csv" => csv = Some(path()),
                "out_dir" => cfg.out_dir = Some(path()),
                "gradcheck_step" => cfg.gradcheck_step = parse(&key, &value)?,
                "gradcheck_batch" => cfg.gradcheck_batch = parse(&key, &value)?,
                "gradcheck_param_std" => cfg.gradcheck_param_std = parse(&key, &value)?,
                _ => bail!("unknown config key `{key}`"),
            }
        }

        cfg.data = match format.as_deref() {
            None | Some("synthetic") => DataSource::Synthetic(task),
            Some("idx") => DataSource::Idx {
                images: images.ok_or_else(|| anyhow!("data_format=idx needs data_images"))?,
                labels: labels.ok_or_else(|| anyhow!("data_format=idx needs data_labels"))?,
            },
            Some("csv") => DataSource::Csv {
                path: csv.ok_or_else(|| anyhow!("data_format=csv needs data_csv"))?,
            },
            Some(other) => bail!("unknown data_format `{other}` (synthetic, idx or csv)"),
        };
        match &cfg.data {
            DataSource::Idx { images, labels } => {
                for p in [images, labels] {
                    if !p.is_file() {
                        bail!("data file {} does not exist", p.display());
                    }
                }
            }
            DataSource::Csv { path } if !path.is_file() => bail!("data file {} does not exist", path.display()),
            _ => {}
        }
        if let DataSource::Synthetic(task) = cfg.data {
            cfg.model.classes = cfg.synthetic(task, 0).classes()?;
        } else if let Some(classes) = cfg.classes {
            cfg.model.classes = classes;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        if !(0.0..1.0).contains(&cfg.eval_fraction) {
            bail!("eval_fraction must lie in [0, 1), got {}", cfg.eval_fraction);
        }
        Ok(cfg)
    }

    /// Rejects synthetic tasks the model geometry cannot host.
    pub fn check_task(&self) -> anyhow::Result<()> {
        if let DataSource::Synthetic(task) = self.data {
            data::generate(&SyntheticSpec {
                count: 0,
                ..self.synthetic(task, 0)
            })?;
        }
        Ok(())
    }

    fn synthetic(&self, task: Task, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            task,
            image_side: self.model.image_side,
            patch_size: self.model.patch_size,
            noise_sigma: self.noise_sigma,
            count: self.count,
            seed,
        }
    }

    /// Output directory: `out_dir`, else `$RELPOS_OUT_DIR`, else `.`.
    pub fn out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    /// Loads or generates the dataset for `seed` and splits it into
    /// (train, eval). File datasets also fix the model's class count.
    pub fn datasets(&self, seed: u64) -> relpos_core::Result<(ModelConfig, Dataset, Dataset)> {
        let mut model = self.model;
        let full = match &self.data {
            DataSource::Synthetic(task) => data::generate(&self.synthetic(*task, seed))?,
            DataSource::Idx { images, labels } => data::load_idx(images, labels, self.classes)?,
            DataSource::Csv { path } => data::load_csv(path, model.image_side, model.channels, self.classes)?,
        };
        model.classes = full.classes;
        let expected = [model.image_side, model.image_side, model.channels];
        if let Some(bad) = full.examples.iter().find(|e| e.pixels.shape() != expected) {
            return Err(relpos_core::Error::InvalidGeometry(format!(
                "dataset image shape {:?} does not match the configured {expected:?}",
                bad.pixels.shape()
            )));
        }
        let (train, eval) = full.split(self.eval_fraction, seed)?;
        Ok((model, train, eval))
    }
}
