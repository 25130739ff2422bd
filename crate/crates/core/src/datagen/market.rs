use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    make_ground_truth, AdTaskProfile, Dataset, GroundTruthConfig, GroundTruthModel, Sample, Target,
    TypeTags,
};
use crate::error::{Error, Result};

/// How ad tasks, their targets and their submission habits are laid out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    /// Approximate number of ad tasks.
    pub n_tasks: usize,
    /// Traffic share of each target action, followed by the `Other` share.
    pub target_mix: Vec<f64>,
    /// Probability that a task not targeting action `j` submits `j` at all.
    pub cross_submit: Vec<f64>,
    /// Range of the propensity drawn for submitted non-target actions.
    pub propensity_range: (f64, f64),
    /// Log-normal spread of traffic between tasks sharing a target.
    pub traffic_jitter: f64,
}

impl MarketConfig {
    pub fn validate(&self, n_actions: usize) -> Result<()> {
        if self.target_mix.len() != n_actions + 1 {
            return Err(Error::Config(format!(
                "target_mix needs {} entries (one per action plus Other)",
                n_actions + 1
            )));
        }
        if self.target_mix.iter().any(|&m| !(m >= 0.0 && m.is_finite()))
            || self.target_mix[..n_actions].iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config("target_mix must be non-negative with some modeled traffic".into()));
        }
        if self.cross_submit.len() != n_actions
            || self.cross_submit.iter().any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::Config("cross_submit needs one probability per action".into()));
        }
        let (lo, hi) = self.propensity_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config("propensity_range must satisfy 0 <= lo <= hi <= 1".into()));
        }
        if self.n_tasks == 0 || !(self.traffic_jitter >= 0.0) {
            return Err(Error::Config("n_tasks must be positive and traffic_jitter >= 0".into()));
        }
        Ok(())
    }
}

/// Draws the ad tasks. Every target with non-zero traffic gets at least two
/// tasks; task ids are `0..` and campaign ids `1..`.
pub fn make_market(cfg: &MarketConfig, n_actions: usize, seed: u64) -> Result<Vec<AdTaskProfile>> {
    cfg.validate(n_actions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = cfg.propensity_range;
    let mut tasks = Vec::new();
    for (slot, &mix) in cfg.target_mix.iter().enumerate() {
        if mix <= 0.0 {
            continue;
        }
        let target = if slot < n_actions {
            Target::Action(slot)
        } else {
            Target::Other
        };
        let count = ((mix * cfg.n_tasks as f64).round() as usize).max(2);
        for _ in 0..count {
            let z: f64 = StandardNormal.sample(&mut rng);
            let traffic = mix / count as f64 * (cfg.traffic_jitter * z).exp();
            let propensity = (0..n_actions)
                .map(|j| {
                    let submits: f64 = rng.random();
                    let level = lo + (hi - lo) * rng.random::<f64>();
                    if target.is(j) {
                        1.0
                    } else if submits < cfg.cross_submit[j] {
                        level
                    } else {
                        0.0
                    }
                })
                .collect();
            let id = tasks.len() as u32;
            tasks.push(AdTaskProfile {
                id,
                target,
                propensity,
                campaign: id + 1,
                traffic,
            });
        }
    }
    Ok(tasks)
}

/// Day range and id offset of a batch of generated samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplingWindow {
    pub first_day: u32,
    pub n_days: u32,
    pub first_id: u64,
}

/// Field layout of generated samples: `[user, segment, campaign, context]`.
pub const FIELD_NAMES: [&str; 4] = ["user", "segment", "campaign", "context"];

/// Draws post-click samples with true labels (observed labels equal truth
/// until a submission policy is applied). Rows are ordered by day.
pub fn sample_logs(
    gt: &GroundTruthModel,
    tasks: &[AdTaskProfile],
    n: usize,
    window: SamplingWindow,
    seed: u64,
) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::Config("cannot sample an empty log".into()));
    }
    if tasks.is_empty() {
        return Err(Error::Config("no ad tasks to sample from".into()));
    }
    let vocab = &gt.config.field_vocab;
    if vocab.len() != FIELD_NAMES.len() {
        return Err(Error::Config(format!(
            "ground truth must describe the fields {FIELD_NAMES:?}"
        )));
    }
    let (n_users, n_segments, n_campaigns, n_contexts) = (vocab[0], vocab[1], vocab[2], vocab[3]);
    if tasks.iter().any(|t| t.campaign == 0 || t.campaign as usize > n_campaigns) {
        return Err(Error::Config("task campaign ids exceed the campaign vocabulary".into()));
    }
    let n_actions = gt.n_actions();
    if tasks.iter().any(|t| t.propensity.len() != n_actions) {
        return Err(Error::Config("task propensities must cover every action".into()));
    }
    let picker = WeightedIndex::new(tasks.iter().map(|t| t.traffic))
        .map_err(|e| Error::Config(format!("task traffic weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_days = window.n_days.max(1) as u64;

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let task = &tasks[picker.sample(&mut rng)];
        let user = rng.random_range(1..=n_users as u32);
        let segment = 1 + (user - 1) % n_segments as u32;
        let context = rng.random_range(1..=n_contexts as u32);
        let fields = vec![user, segment, task.campaign, context];
        let truth: Vec<u8> = gt
            .probabilities(&fields, task.target)
            .into_iter()
            .map(|p| (rng.random::<f64>() < p) as u8)
            .collect();
        out.push(Sample {
            id: window.first_id + i as u64,
            ad_task: task.id,
            target: task.target,
            day: window.first_day + (i as u64 * n_days / n as u64) as u32,
            fields,
            observed: truth.clone(),
            truth: Some(truth),
        });
    }
    Ok(out)
}

/// Replaces observed labels by what advertisers submit: the target action in
/// full, any other action `j` independently per sample with the task's
/// propensity. Returns the resulting Type A/B/C tags.
pub fn apply_submission_policy(
    samples: &mut [Sample],
    tasks: &[AdTaskProfile],
    seed: u64,
) -> Result<TypeTags> {
    let by_id: HashMap<u32, &AdTaskProfile> = tasks.iter().map(|t| (t.id, t)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut n_actions = 0;
    for s in samples.iter_mut() {
        let task = by_id
            .get(&s.ad_task)
            .ok_or_else(|| Error::Config(format!("sample {} refers to unknown ad task {}", s.id, s.ad_task)))?;
        let truth = s
            .truth
            .as_ref()
            .ok_or_else(|| Error::State(format!("sample {} has no true labels", s.id)))?;
        n_actions = truth.len();
        for (j, (obs, &y)) in s.observed.iter_mut().zip(truth).enumerate() {
            let u: f64 = rng.random();
            *obs = if s.target.is(j) || u < task.propensity[j] { y } else { 0 };
        }
    }
    TypeTags::of(samples, n_actions)
}

/// Seed of the default synthetic dataset used by the command line and the
/// ablation checks.
pub const DEFAULT_DATA_SEED: u64 = 7;

/// End-to-end synthetic dataset parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_actions: usize,
    pub base_rates: Vec<f64>,
    pub n_users: usize,
    pub n_segments: usize,
    pub n_contexts: usize,
    /// Latent scale of the user, segment, campaign and context fields.
    pub field_scale: Vec<f64>,
    pub latent_dim: usize,
    pub shared_weight: f64,
    pub signal: f64,
    pub target_lift: f64,
    pub target_shift: f64,
    pub market: MarketConfig,
    pub n_train: usize,
    pub n_test: usize,
    /// Training horizon; the test day follows it.
    pub days: u32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_actions: 5,
            base_rates: vec![0.15, 0.10, 0.08, 0.06, 0.05],
            n_users: 4000,
            n_segments: 40,
            n_contexts: 24,
            field_scale: vec![1.0, 1.0, 0.6, 0.3],
            latent_dim: 8,
            shared_weight: 0.7,
            signal: 2.0,
            target_lift: 0.8,
            target_shift: 1.0,
            market: MarketConfig {
                n_tasks: 200,
                target_mix: vec![0.6908, 0.0526, 0.0992, 0.1148, 0.0056, 0.0370],
                cross_submit: vec![0.95, 0.05, 0.2, 0.3, 0.6],
                propensity_range: (0.1, 0.7),
                traffic_jitter: 0.5,
            },
            n_train: 200_000,
            n_test: 20_000,
            days: 28,
        }
    }
}

impl GeneratorConfig {
    pub fn ground_truth_config(&self, n_campaigns: usize) -> GroundTruthConfig {
        GroundTruthConfig {
            n_actions: self.n_actions,
            base_rates: self.base_rates.clone(),
            field_vocab: vec![self.n_users, self.n_segments, n_campaigns, self.n_contexts],
            field_scale: self.field_scale.clone(),
            latent_dim: self.latent_dim,
            shared_weight: self.shared_weight,
            signal: self.signal,
            target_lift: self.target_lift,
            target_shift: self.target_shift,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("train and test sizes must be positive".into()));
        }
        if self.field_scale.len() != FIELD_NAMES.len() {
            return Err(Error::Config(format!("field_scale needs {} entries", FIELD_NAMES.len())));
        }
        if self.n_users == 0 || self.n_segments == 0 || self.n_contexts == 0 {
            return Err(Error::Config("feature vocabularies must be positive".into()));
        }
        self.market.validate(self.n_actions)
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedData {
    pub ground_truth: GroundTruthModel,
    pub tasks: Vec<AdTaskProfile>,
    pub train: Dataset,
    /// Only samples whose task targets a modeled action.
    pub test: Dataset,
    pub train_tags: TypeTags,
}

/// Builds market, ground truth, train log (days `0..days`) and test log
/// (day `days`), then applies submission to both.
pub fn generate(cfg: &GeneratorConfig, seed: u64) -> Result<GeneratedData> {
    cfg.validate()?;
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut next = || seeds.random::<u64>();

    let tasks = make_market(&cfg.market, cfg.n_actions, next())?;
    let gt = make_ground_truth(&cfg.ground_truth_config(tasks.len()), next())?;
    let names: Vec<String> = FIELD_NAMES.iter().map(|s| s.to_string()).collect();

    let mut train = sample_logs(
        &gt,
        &tasks,
        cfg.n_train,
        SamplingWindow {
            first_day: 0,
            n_days: cfg.days,
            first_id: 0,
        },
        next(),
    )?;
    let train_tags = apply_submission_policy(&mut train, &tasks, next())?;

    let servable: Vec<AdTaskProfile> = tasks
        .iter()
        .filter(|t| t.target != Target::Other)
        .cloned()
        .collect();
    let mut test = sample_logs(
        &gt,
        &servable,
        cfg.n_test,
        SamplingWindow {
            first_day: cfg.days,
            n_days: 1,
            first_id: cfg.n_train as u64,
        },
        next(),
    )?;
    apply_submission_policy(&mut test, &tasks, next())?;

    Ok(GeneratedData {
        ground_truth: gt,
        tasks,
        train: Dataset::new(cfg.n_actions, names.clone(), train)?,
        test: Dataset::new(cfg.n_actions, names, test)?,
        train_tags,
    })
}
