//! Adapts multi-feedback interaction logs into asymmetric multi-label data.
//!
//! Each item plays the role of an ad task: one feedback kind is drawn as its
//! target action and the protocol decides which other kinds stay observable.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{make_ground_truth, AdTaskProfile, Dataset, GroundTruthConfig, Sample, Target};
use crate::error::{Error, Result};

/// Raw delimited table, kept as strings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawLog {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawLog {
    fn column(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Format(format!("raw log has no column `{name}`")))
    }
}

pub fn read_raw_log<R: Read>(input: R, delimiter: u8) -> Result<RawLog> {
    let mut r = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .from_reader(input);
    let columns = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok(RawLog { columns, rows })
}

pub fn write_raw_log<W: Write>(out: W, raw: &RawLog, delimiter: u8) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
    w.write_record(&raw.columns)?;
    for row in &raw.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Column roles in a raw log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawLogSchema {
    pub item_column: String,
    pub time_column: String,
    /// Categorical columns kept as feature fields; anything else is dropped.
    pub feature_columns: Vec<String>,
    /// Binary feedback columns, one per action.
    pub feedback_columns: Vec<String>,
}

impl Default for RawLogSchema {
    fn default() -> Self {
        Self {
            item_column: "video_id".into(),
            time_column: "time_ms".into(),
            feature_columns: vec!["user_id".into(), "video_id".into(), "tab".into()],
            feedback_columns: vec![
                "is_like".into(),
                "is_follow".into(),
                "is_comment".into(),
                "is_forward".into(),
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    /// Every feedback observable.
    Oracle,
    /// Only the item's target feedback observable.
    Vanilla,
    /// Target plus a few randomly chosen other feedbacks observable.
    Kaml,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Oracle => "oracle",
            Protocol::Vanilla => "vanilla",
            Protocol::Kaml => "kaml",
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "oracle" => Ok(Protocol::Oracle),
            "vanilla" => Ok(Protocol::Vanilla),
            "kaml" => Ok(Protocol::Kaml),
            other => Err(Error::Config(format!("unknown protocol `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    /// Keep-probability of rows whose feedbacks are all zero.
    pub negative_rate: f64,
    /// Leading share of rows (by time) used for training.
    pub train_fraction: f64,
    /// Non-target feedbacks exposed per item under [`Protocol::Kaml`].
    pub extra_exposed: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            negative_rate: 0.3,
            train_fraction: 0.8,
            extra_exposed: 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdaptedData {
    pub train: Dataset,
    pub test: Dataset,
    /// One profile per item; propensity 1 marks an observable feedback.
    pub tasks: Vec<AdTaskProfile>,
}

fn parse_flag(v: &str, line: usize, col: &str) -> Result<u8> {
    match v.trim() {
        "0" | "0.0" | "false" => Ok(0),
        "1" | "1.0" | "true" => Ok(1),
        _ => Err(Error::Format(format!("row {line}: `{col}` is not binary: `{v}`"))),
    }
}

/// Targets and exposures are drawn per item in first-appearance order and do
/// not depend on the protocol, so one seed gives all protocols the same
/// targets.
pub fn kuairand_adapt(
    raw: &RawLog,
    schema: &RawLogSchema,
    protocol: Protocol,
    cfg: &AdaptConfig,
    seed: u64,
) -> Result<AdaptedData> {
    let n_actions = schema.feedback_columns.len();
    if n_actions < 2 {
        return Err(Error::Config("need at least two feedback columns".into()));
    }
    if cfg.extra_exposed >= n_actions {
        return Err(Error::Config("extra_exposed must leave at least one feedback hidden".into()));
    }
    if !(0.0..=1.0).contains(&cfg.negative_rate) || !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::Config("negative_rate in [0,1] and train_fraction in (0,1) required".into()));
    }
    let item_col = raw.column(&schema.item_column)?;
    let time_col = raw.column(&schema.time_column)?;
    let feedback_cols: Vec<usize> = schema
        .feedback_columns
        .iter()
        .map(|c| raw.column(c))
        .collect::<Result<_>>()?;
    let feature_cols: Vec<usize> = schema
        .feature_columns
        .iter()
        .map(|c| raw.column(c))
        .collect::<Result<_>>()?;

    let mut order: Vec<(i64, usize)> = Vec::with_capacity(raw.rows.len());
    for (i, row) in raw.rows.iter().enumerate() {
        if row.len() != raw.columns.len() {
            return Err(Error::Format(format!("row {i}: wrong column count")));
        }
        let t = row[time_col].trim().parse::<f64>().map_err(|_| {
            Error::Format(format!("row {i}: bad timestamp `{}`", row[time_col]))
        })?;
        order.push((t as i64, i));
    }
    order.sort_by_key(|&(t, _)| t);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items: HashMap<&str, u32> = HashMap::new();
    let mut item_targets: Vec<usize> = Vec::new();
    let mut item_exposed: Vec<Vec<bool>> = Vec::new();
    let mut vocabs: Vec<HashMap<&str, u32>> = vec![HashMap::new(); feature_cols.len()];
    let mut kept: Vec<(usize, u32, Vec<u8>)> = Vec::new();

    for &(_, i) in &order {
        let row = &raw.rows[i];
        let labels: Vec<u8> = feedback_cols
            .iter()
            .zip(&schema.feedback_columns)
            .map(|(&c, name)| parse_flag(&row[c], i, name))
            .collect::<Result<_>>()?;
        if labels.iter().all(|&y| y == 0) && rng.random::<f64>() >= cfg.negative_rate {
            continue;
        }
        let next_item = items.len() as u32;
        let item = *items.entry(row[item_col].as_str()).or_insert_with(|| {
            let target = rng.random_range(0..n_actions);
            let others: Vec<usize> = (0..n_actions).filter(|&j| j != target).collect();
            let picks = index::sample(&mut rng, others.len(), cfg.extra_exposed);
            let mut exposed = vec![false; n_actions];
            exposed[target] = true;
            for p in picks.iter() {
                exposed[others[p]] = true;
            }
            item_targets.push(target);
            item_exposed.push(exposed);
            next_item
        });
        kept.push((i, item, labels));
    }

    let mut samples = Vec::with_capacity(kept.len());
    let n_train = (kept.len() as f64 * cfg.train_fraction).floor() as usize;
    for (k, (i, item, labels)) in kept.into_iter().enumerate() {
        let row = &raw.rows[i];
        let fields = feature_cols
            .iter()
            .zip(vocabs.iter_mut())
            .map(|(&c, vocab)| {
                let next = vocab.len() as u32 + 1;
                *vocab.entry(row[c].as_str()).or_insert(next)
            })
            .collect();
        let target = item_targets[item as usize];
        let exposed = &item_exposed[item as usize];
        let observed = labels
            .iter()
            .enumerate()
            .map(|(j, &y)| {
                let visible = match protocol {
                    Protocol::Oracle => true,
                    Protocol::Vanilla => j == target,
                    Protocol::Kaml => exposed[j],
                };
                if visible {
                    y
                } else {
                    0
                }
            })
            .collect();
        samples.push(Sample {
            id: k as u64,
            ad_task: item,
            target: Target::Action(target),
            day: (k >= n_train) as u32,
            fields,
            observed,
            truth: Some(labels),
        });
    }

    let tasks = item_targets
        .iter()
        .zip(&item_exposed)
        .enumerate()
        .map(|(item, (&target, exposed))| AdTaskProfile {
            id: item as u32,
            target: Target::Action(target),
            propensity: (0..n_actions)
                .map(|j| {
                    let visible = match protocol {
                        Protocol::Oracle => true,
                        Protocol::Vanilla => j == target,
                        Protocol::Kaml => exposed[j],
                    };
                    visible as u8 as f64
                })
                .collect(),
            campaign: item as u32 + 1,
            traffic: 1.0,
        })
        .collect();

    let test = samples.split_off(n_train);
    let names = schema.feature_columns.clone();
    Ok(AdaptedData {
        train: Dataset::new(n_actions, names.clone(), samples)?,
        test: Dataset::new(n_actions, names, test)?,
        tasks,
    })
}

/// Parameters of a synthetic stand-in for a short-video interaction log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawLogSynthConfig {
    pub n_rows: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub n_tabs: usize,
    pub base_rates: Vec<f64>,
    pub latent_dim: usize,
    pub shared_weight: f64,
    pub signal: f64,
}

impl Default for RawLogSynthConfig {
    fn default() -> Self {
        Self {
            n_rows: 60_000,
            n_users: 1500,
            n_items: 400,
            n_tabs: 6,
            base_rates: vec![0.10, 0.04, 0.06, 0.03],
            latent_dim: 8,
            shared_weight: 0.6,
            signal: 2.5,
        }
    }
}

/// Time-ordered log with `user_id`, `video_id`, `tab`, `time_ms`, a dense
/// `play_time_ms` column and the feedback columns of [`RawLogSchema::default`].
pub fn synthesize_raw_log(cfg: &RawLogSynthConfig, seed: u64) -> Result<RawLog> {
    let schema = RawLogSchema::default();
    if cfg.base_rates.len() != schema.feedback_columns.len() {
        return Err(Error::Config(format!(
            "need {} feedback base rates",
            schema.feedback_columns.len()
        )));
    }
    let gt = make_ground_truth(
        &GroundTruthConfig {
            n_actions: cfg.base_rates.len(),
            base_rates: cfg.base_rates.clone(),
            field_vocab: vec![cfg.n_users, cfg.n_items, cfg.n_tabs],
            field_scale: vec![1.0, 0.8, 0.3],
            latent_dim: cfg.latent_dim,
            shared_weight: cfg.shared_weight,
            signal: cfg.signal,
            target_lift: 0.0,
            target_shift: 0.0,
        },
        seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut columns = vec![
        "user_id".to_string(),
        "video_id".into(),
        "tab".into(),
        "time_ms".into(),
        "play_time_ms".into(),
    ];
    columns.extend(schema.feedback_columns.iter().cloned());
    let mut rows = Vec::with_capacity(cfg.n_rows);
    let mut time: i64 = 1_650_000_000_000;
    for _ in 0..cfg.n_rows {
        let fields = gt.random_fields(&mut rng);
        time += rng.random_range(1..5_000);
        let mut row = vec![
            fields[0].to_string(),
            fields[1].to_string(),
            fields[2].to_string(),
            time.to_string(),
            rng.random_range(0..60_000).to_string(),
        ];
        for p in gt.probabilities(&fields, Target::Other) {
            row.push(((rng.random::<f64>() < p) as u8).to_string());
        }
        rows.push(row);
    }
    Ok(RawLog { columns, rows })
}
