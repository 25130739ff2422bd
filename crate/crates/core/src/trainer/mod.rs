//! Mini-batch training with Adam, per-seed runs and the variant ablation.

mod ablation;
mod adam;

pub use ablation::{run_ablation, AblationRow, AblationTable, Summary};
pub use adam::{adam_step, AdamConfig, AdamState};

use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::losses::{joint_loss, LossConfig, Targets};
use crate::masking::{MaskMatrix, MaskStrategy};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{Architecture, FeatureBatch, Model, ModelConfig};

/// A model family plus the training-time components it enables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    SingleTask,
    SharedBottom,
    Mmoe,
    MmoeAdm,
    MmoeAdmHke,
    MmoeRlu,
    Kaml,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::SingleTask,
        Variant::SharedBottom,
        Variant::Mmoe,
        Variant::MmoeAdm,
        Variant::MmoeAdmHke,
        Variant::MmoeRlu,
        Variant::Kaml,
    ];

    /// The MMoE ablation ladder.
    pub const ABLATION: [Variant; 5] = [
        Variant::Mmoe,
        Variant::MmoeAdm,
        Variant::MmoeAdmHke,
        Variant::MmoeRlu,
        Variant::Kaml,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SingleTask => "singletask",
            Variant::SharedBottom => "sharedbottom",
            Variant::Mmoe => "mmoe",
            Variant::MmoeAdm => "mmoe+adm",
            Variant::MmoeAdmHke => "mmoe+adm+hke",
            Variant::MmoeRlu => "mmoe+rlu",
            Variant::Kaml => "kaml",
        }
    }

    pub fn architecture(self) -> Architecture {
        match self {
            Variant::SingleTask => Architecture::SingleTask,
            Variant::SharedBottom => Architecture::SharedBottom,
            _ => Architecture::Mmoe,
        }
    }

    pub fn uses_adm(self) -> bool {
        matches!(self, Variant::MmoeAdm | Variant::MmoeAdmHke | Variant::Kaml)
    }

    pub fn uses_hke(self) -> bool {
        matches!(self, Variant::MmoeAdmHke | Variant::Kaml)
    }

    pub fn uses_ranking(self) -> bool {
        matches!(self, Variant::MmoeRlu | Variant::Kaml)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Model sizes shared by every variant; task count, vocabularies and the
/// architecture come from the data and the variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub embed_dim: usize,
    pub n_experts: usize,
    pub expert_widths: Vec<usize>,
    pub sub_tower_widths: Vec<usize>,
    pub merge_widths: Vec<usize>,
}

impl Default for ModelShape {
    fn default() -> Self {
        let c = ModelConfig::new(1, vec![1]);
        Self {
            embed_dim: c.embed_dim,
            n_experts: c.n_experts,
            expert_widths: c.expert_widths,
            sub_tower_widths: c.sub_tower_widths,
            merge_widths: c.merge_widths,
        }
    }
}

impl ModelShape {
    pub fn config(&self, n_tasks: usize, field_vocab: Vec<usize>, architecture: Architecture, hke: bool) -> ModelConfig {
        ModelConfig {
            n_tasks,
            n_experts: self.n_experts,
            field_vocab,
            embed_dim: self.embed_dim,
            expert_widths: self.expert_widths.clone(),
            sub_tower_widths: self.sub_tower_widths.clone(),
            merge_widths: self.merge_widths.clone(),
            architecture,
            hke,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub variant: Variant,
    pub mask: MaskStrategy,
    pub loss: LossConfig,
    pub model: ModelShape,
    pub adam: AdamConfig,
    /// Evaluate on the test split after every epoch (otherwise only after
    /// the last one).
    pub eval_every_epoch: bool,
}

impl TrainConfig {
    /// Defaults for `n_tasks` tasks: ADM with the default threshold over the whole
    /// period, joint loss with `gamma = 0.7`.
    pub fn new(n_tasks: usize) -> Self {
        Self {
            lr: 0.001,
            batch_size: 512,
            epochs: 3,
            seeds: (0..5).collect(),
            variant: Variant::Kaml,
            mask: MaskStrategy::default_adm(n_tasks),
            loss: LossConfig::new(n_tasks),
            model: ModelShape::default(),
            adam: AdamConfig::default(),
            eval_every_epoch: true,
        }
    }

    /// Copy of this config set up for `variant`: ADM variants keep the
    /// configured ADM parameters (the default threshold if the mask is base), the rest
    /// use the base mask; variants without ranking use BCE only.
    pub fn for_variant(&self, variant: Variant) -> Self {
        let n = self.loss.beta.len();
        let mask = if variant.uses_adm() {
            match &self.mask {
                MaskStrategy::Base => MaskStrategy::default_adm(n),
                adm => adm.clone(),
            }
        } else {
            MaskStrategy::Base
        };
        let mut loss = self.loss.clone();
        if !variant.uses_ranking() {
            loss.gamma = 1.0;
        } else if loss.gamma == 1.0 {
            loss.gamma = LossConfig::new(n).gamma;
        }
        Self {
            variant,
            mask,
            loss,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.loss.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch means of the loss components.
    pub loss: f64,
    pub bce: f64,
    pub ranking: f64,
    pub test: Option<MetricsReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunHistory {
    pub variant: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Wall-clock seconds; not part of [`RunHistory::same_results`].
    pub seconds: f64,
}

impl RunHistory {
    pub fn same_results(&self, other: &RunHistory) -> bool {
        self.variant == other.variant && self.seed == other.seed && self.epochs == other.epochs
    }

    pub fn final_report(&self) -> Option<&MetricsReport> {
        self.epochs.iter().rev().find_map(|e| e.test.as_ref())
    }

    /// Tab-separated per-epoch series.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.final_report().map_or(0, |r| r.per_action.len());
        write!(out, "epoch\tloss\tbce\tranking\tauc_all\tlogloss_all")?;
        for j in 1..=n {
            write!(out, "\tauc_{j}")?;
        }
        writeln!(out)?;
        let cell = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        for e in &self.epochs {
            write!(out, "{}\t{:.6}\t{:.6}\t{:.6}", e.epoch, e.loss, e.bce, e.ranking)?;
            match &e.test {
                Some(t) => {
                    write!(out, "\t{}\t{}", cell(t.overall.auc), cell(t.overall.logloss))?;
                    for g in &t.per_action {
                        write!(out, "\t{}", cell(g.auc))?;
                    }
                }
                None => {
                    write!(out, "\tNA\tNA")?;
                    for _ in 0..n {
                        write!(out, "\tNA")?;
                    }
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

pub struct TrainedRun {
    pub model: Model,
    pub history: RunHistory,
}

/// Embedding vocabulary per field: the largest id seen in training.
pub fn field_vocab(train: &Dataset) -> Vec<usize> {
    train.field_max().into_iter().map(|m| m.max(1) as usize).collect()
}

/// Gathers the rows `idx` of a dataset into flat batch buffers.
struct BatchBuffers {
    ids: Vec<u32>,
    labels: Vec<u8>,
    mask: Vec<u8>,
    route: Vec<u8>,
}

impl BatchBuffers {
    fn fill(&mut self, ds: &Dataset, masks: &MaskMatrix, idx: &[usize]) {
        let n = masks.n_tasks;
        self.ids.clear();
        self.labels.clear();
        self.mask.clear();
        self.route.clear();
        for &i in idx {
            let s = &ds.samples[i];
            self.ids.extend_from_slice(&s.fields);
            self.labels.extend_from_slice(&s.observed);
            self.mask.extend_from_slice(masks.train_row(i));
            self.route.extend_from_slice(&masks.route[i * n..(i + 1) * n]);
        }
    }
}

/// Trains one model with one seed. Samples whose training mask is empty
/// (e.g. targets outside the modeled actions under the base mask) are left
/// out of every batch.
pub fn train(train: &Dataset, test: Option<&Dataset>, cfg: &TrainConfig, seed: u64) -> Result<TrainedRun> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let n = train.n_actions;
    if cfg.loss.beta.len() != n {
        return Err(Error::Config(format!("{} ranking weights for {n} actions", cfg.loss.beta.len())));
    }
    let start = Instant::now();
    let masks = MaskMatrix::build(train, &cfg.mask)?;
    let mut order: Vec<usize> = (0..train.len()).filter(|&i| masks.train_row(i).contains(&1)).collect();
    if order.is_empty() {
        return Err(Error::Config("no training sample survives the mask".into()));
    }

    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let init_seed = master.next_u64();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(master.next_u64());
    let mut pair_rng = ChaCha8Rng::seed_from_u64(master.next_u64());

    let v = cfg.variant;
    let model_cfg = cfg.model.config(n, field_vocab(train), v.architecture(), v.uses_hke());
    let mut model = Model::new(model_cfg, init_seed)?;
    let mut adam = AdamState::new(model.params(), cfg.adam);
    let mut buf = BatchBuffers {
        ids: Vec::new(),
        labels: Vec::new(),
        mask: Vec::new(),
        route: Vec::new(),
    };
    let n_fields = train.n_fields();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss, mut bce, mut ranking, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            buf.fill(train, &masks, idx);
            let batch = FeatureBatch::new(&buf.ids, n_fields)?;
            let route = model.config().hke.then_some(buf.route.as_slice());
            let fp = model.forward(&batch, route)?;
            let targets = Targets {
                labels: &buf.labels,
                mask: &buf.mask,
            };
            let (report, dlogits) = joint_loss(&fp.logits, &targets, &cfg.loss, &mut pair_rng)?;
            model.params_mut().zero_grad();
            model.backward(&fp.cache, &dlogits)?;
            adam_step(model.params_mut(), &mut adam, cfg.lr)?;
            loss += report.total;
            bce += report.bce;
            ranking += report.ranking;
            batches += 1;
        }
        let b = batches as f64;
        let test_report = match test {
            Some(t) if cfg.eval_every_epoch || epoch == cfg.epochs => Some(evaluate(&model, t)?),
            _ => None,
        };
        log::info!(
            "{} seed {seed} epoch {epoch}: loss {:.5} auc {}",
            v.name(),
            loss / b,
            test_report
                .as_ref()
                .and_then(|r| r.overall.auc)
                .map_or_else(|| "-".to_string(), |a| format!("{a:.4}"))
        );
        epochs.push(EpochRecord {
            epoch,
            loss: loss / b,
            bce: bce / b,
            ranking: ranking / b,
            test: test_report,
        });
    }
    Ok(TrainedRun {
        model,
        history: RunHistory {
            variant: v.name().to_string(),
            seed,
            epochs,
            seconds: start.elapsed().as_secs_f64(),
        },
    })
}

#[cfg(test)]
mod tests;
