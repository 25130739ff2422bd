//! `key = value` experiment files.
//!
//! Blank lines and `#` comments are ignored. List values are comma
//! separated. Per-action keys (`mask.alpha.<j>`, `loss.beta.<j>`) use
//! 1-based action numbers and override the list form.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use kaml_core::datagen::{AdaptConfig, GeneratorConfig, DEFAULT_DATA_SEED, Protocol, RawLogSchema, RawLogSynthConfig};
use kaml_core::losses::Eligibility;
use kaml_core::masking::{MaskStrategy, Window, DEFAULT_ALPHA};
use kaml_core::trainer::{TrainConfig, Variant};
use kaml_core::{Error, Result};

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub data_seed: u64,
    pub generator: GeneratorConfig,
    /// Dataset files; when absent the generator runs in memory.
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub train: TrainConfig,
    pub variants: Vec<Variant>,
    pub public: PublicConfig,
    pub out: PathBuf,
}

#[derive(Clone, Debug)]
pub struct PublicConfig {
    pub raw: Option<PathBuf>,
    pub delimiter: u8,
    pub protocol: Protocol,
    pub seed: u64,
    pub schema: RawLogSchema,
    pub adapt: AdaptConfig,
    pub synth: RawLogSynthConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let generator = GeneratorConfig::default();
        let n = generator.n_actions;
        Self {
            data_seed: DEFAULT_DATA_SEED,
            generator,
            train_path: None,
            test_path: None,
            train: TrainConfig::new(n),
            variants: Variant::ABLATION.to_vec(),
            public: PublicConfig {
                raw: None,
                delimiter: b',',
                protocol: Protocol::Kaml,
                seed: 0,
                schema: RawLogSchema::default(),
                adapt: AdaptConfig::default(),
                synth: RawLogSynthConfig::default(),
            },
            out: PathBuf::from("out"),
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("`{key}`: expected {what}, got `{value}`"))
}

fn one<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value.trim().parse().map_err(|_| bad(key, value, what))
}

fn list<T: FromStr>(key: &str, value: &str, what: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| v.trim().parse().map_err(|_| bad(key, value, what)))
        .collect()
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value, "true or false")),
    }
}

/// Parses `key = value` lines into a map, rejecting duplicates.
pub fn parse_lines(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
        let k = k.trim().to_string();
        if map.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: `{k}` set twice", no + 1)));
        }
    }
    Ok(map)
}

fn action_index(key: &str, suffix: &str, n: usize) -> Result<usize> {
    match suffix.parse::<usize>() {
        Ok(j) if (1..=n).contains(&j) => Ok(j - 1),
        _ => Err(Error::Config(format!("`{key}`: action must be 1..={n}"))),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, base)
    }

    /// Relative file paths are resolved against `base`.
    pub fn from_text(text: &str, base: &Path) -> Result<Self> {
        let map = parse_lines(text)?;
        let mut c = Self::default();
        let resolve = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let mut alpha: Option<Vec<f64>> = None;
        let mut alpha_at: Vec<(usize, f64)> = Vec::new();
        let mut beta_at: Vec<(usize, f64)> = Vec::new();
        let mut strategy = c.train.mask.name().to_string();
        let mut window = Window::all();

        // Sizes first, since per-action keys depend on them.
        if let Some(v) = map.get("data.n_actions") {
            c.generator.n_actions = one("data.n_actions", v, "an integer")?;
        }
        let n = c.generator.n_actions;

        for (key, v) in &map {
            let k = key.as_str();
            let g = &mut c.generator;
            match k {
                "data.n_actions" => {}
                "data.seed" => c.data_seed = one(k, v, "an integer")?,
                "data.train" => c.train_path = Some(resolve(v)),
                "data.test" => c.test_path = Some(resolve(v)),
                "data.n_train" => g.n_train = one(k, v, "an integer")?,
                "data.n_test" => g.n_test = one(k, v, "an integer")?,
                "data.days" => g.days = one(k, v, "an integer")?,
                "data.n_users" => g.n_users = one(k, v, "an integer")?,
                "data.n_segments" => g.n_segments = one(k, v, "an integer")?,
                "data.n_contexts" => g.n_contexts = one(k, v, "an integer")?,
                "data.base_rates" => g.base_rates = list(k, v, "numbers")?,
                "data.field_scale" => g.field_scale = list(k, v, "numbers")?,
                "data.latent_dim" => g.latent_dim = one(k, v, "an integer")?,
                "data.shared_weight" => g.shared_weight = one(k, v, "a number")?,
                "data.signal" => g.signal = one(k, v, "a number")?,
                "data.target_lift" => g.target_lift = one(k, v, "a number")?,
                "data.target_shift" => g.target_shift = one(k, v, "a number")?,
                "data.n_tasks" => g.market.n_tasks = one(k, v, "an integer")?,
                "data.target_mix" => g.market.target_mix = list(k, v, "numbers")?,
                "data.cross_submit" => g.market.cross_submit = list(k, v, "numbers")?,
                "data.propensity_min" => g.market.propensity_range.0 = one(k, v, "a number")?,
                "data.propensity_max" => g.market.propensity_range.1 = one(k, v, "a number")?,
                "data.traffic_jitter" => g.market.traffic_jitter = one(k, v, "a number")?,

                "mask.strategy" => strategy = v.clone(),
                "mask.alpha" => alpha = Some(list(k, v, "numbers (inf allowed)")?),
                "mask.window" => {
                    window = match v.as_str() {
                        "all" => Window::all(),
                        d => Window::last(one(k, d, "`all` or a number of days")?),
                    }
                }

                "model.embed_dim" => c.train.model.embed_dim = one(k, v, "an integer")?,
                "model.experts" => c.train.model.n_experts = one(k, v, "an integer")?,
                "model.expert_widths" => c.train.model.expert_widths = list(k, v, "integers")?,
                "model.sub_tower_widths" => c.train.model.sub_tower_widths = list(k, v, "integers")?,
                "model.merge_widths" => c.train.model.merge_widths = list(k, v, "integers")?,

                "loss.gamma" => c.train.loss.gamma = one(k, v, "a number")?,
                "loss.beta" => c.train.loss.beta = list(k, v, "numbers")?,
                "loss.pair_cap" => c.train.loss.pair_cap = one(k, v, "an integer")?,
                "loss.eligibility" => {
                    c.train.loss.eligibility = match v.as_str() {
                        "observed" => Eligibility::Observed,
                        "masked" => Eligibility::Masked,
                        _ => return Err(bad(k, v, "`observed` or `masked`")),
                    }
                }

                "train.lr" => c.train.lr = one(k, v, "a number")?,
                "train.batch_size" => c.train.batch_size = one(k, v, "an integer")?,
                "train.epochs" => c.train.epochs = one(k, v, "an integer")?,
                "train.seeds" => c.train.seeds = list(k, v, "integers")?,
                "train.variant" => c.train.variant = v.parse()?,
                "train.variants" => c.variants = v.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?,
                "train.eval_every_epoch" => c.train.eval_every_epoch = flag(k, v)?,

                "public.raw" => c.public.raw = Some(resolve(v)),
                "public.delimiter" => {
                    c.public.delimiter = match v.as_str() {
                        "tab" | "\\t" => b'\t',
                        s if s.len() == 1 => s.as_bytes()[0],
                        _ => return Err(bad(k, v, "a single character or `tab`")),
                    }
                }
                "public.protocol" => c.public.protocol = v.parse()?,
                "public.seed" => c.public.seed = one(k, v, "an integer")?,
                "public.negative_rate" => c.public.adapt.negative_rate = one(k, v, "a number")?,
                "public.train_fraction" => c.public.adapt.train_fraction = one(k, v, "a number")?,
                "public.extra_exposed" => c.public.adapt.extra_exposed = one(k, v, "an integer")?,
                "public.synth_rows" => c.public.synth.n_rows = one(k, v, "an integer")?,

                "out" => c.out = resolve(v),

                _ => {
                    if let Some(j) = k.strip_prefix("mask.alpha.") {
                        alpha_at.push((action_index(k, j, n)?, one(k, v, "a number")?));
                    } else if let Some(j) = k.strip_prefix("loss.beta.") {
                        beta_at.push((action_index(k, j, n)?, one(k, v, "a number")?));
                    } else {
                        return Err(Error::Config(format!("unknown key `{k}`")));
                    }
                }
            }
        }

        if !map.contains_key("loss.beta") {
            c.train.loss.beta = vec![1.0; n];
        }
        for (j, b) in beta_at {
            c.train.loss.beta[j] = b;
        }
        let mut alpha = alpha.unwrap_or_else(|| vec![DEFAULT_ALPHA; n]);
        if alpha.len() == 1 {
            alpha = vec![alpha[0]; n];
        }
        for (j, a) in alpha_at {
            if let Some(slot) = alpha.get_mut(j) {
                *slot = a;
            }
        }
        c.train.mask = match strategy.as_str() {
            "base" => MaskStrategy::Base,
            "adm" => MaskStrategy::Adm { alpha, window },
            other => return Err(bad("mask.strategy", other, "`base` or `adm`")),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.train.validate()?;
        let n = self.generator.n_actions;
        if self.train.loss.beta.len() != n {
            return Err(Error::Config(format!("loss.beta needs {n} values")));
        }
        if let MaskStrategy::Adm { alpha, .. } = &self.train.mask {
            kaml_core::masking::validate_alpha(alpha, n)?;
        }
        if self.train_path.is_some() != self.test_path.is_some() {
            return Err(Error::Config("data.train and data.test must be given together".into()));
        }
        for p in [&self.train_path, &self.test_path, &self.public.raw].into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Config(format!("file {} does not exist", p.display())));
            }
        }
        if self.variants.is_empty() {
            return Err(Error::Config("train.variants is empty".into()));
        }
        Ok(())
    }
}
