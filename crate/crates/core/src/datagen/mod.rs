//! Synthetic asymmetric multi-label advertising logs.
//!
//! A latent-factor [`GroundTruthModel`] produces the true conversion labels of
//! every post-click sample. Each ad task then submits its target action in
//! full and every other action only with a per-task propensity, which yields
//! the Type A/B/C structure the masking and ranking components work with.

mod coverage;
mod ground_truth;
mod io;
mod kuairand;
mod market;

pub use coverage::{coverage_stats, CoverageReport};
pub use ground_truth::{make_ground_truth, GroundTruthConfig, GroundTruthModel};
pub use io::{read_dataset, read_tasks, write_dataset, write_tasks};
pub use kuairand::{
    kuairand_adapt, read_raw_log, synthesize_raw_log, write_raw_log, AdaptConfig, AdaptedData,
    Protocol, RawLog, RawLogSchema, RawLogSynthConfig,
};
pub use market::{
    apply_submission_policy, generate, DEFAULT_DATA_SEED, make_market, sample_logs, GeneratedData, GeneratorConfig,
    MarketConfig, SamplingWindow,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Conversion action an ad task bids on. `Other` covers targets outside the
/// modeled action set; such samples never match a task head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    Action(usize),
    Other,
}

impl Target {
    pub fn action(self) -> Option<usize> {
        match self {
            Target::Action(j) => Some(j),
            Target::Other => None,
        }
    }

    pub fn is(self, j: usize) -> bool {
        self == Target::Action(j)
    }

    /// File encoding: 1-based action index, `0` for `Other`.
    pub fn encode(self) -> u32 {
        match self {
            Target::Action(j) => j as u32 + 1,
            Target::Other => 0,
        }
    }

    pub fn decode(code: u32, n_actions: usize) -> Result<Self> {
        match code {
            0 => Ok(Target::Other),
            c if (c as usize) <= n_actions => Ok(Target::Action(c as usize - 1)),
            c => Err(Error::Format(format!(
                "target action {c} outside 1..={n_actions}"
            ))),
        }
    }
}

/// One post-click record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub id: u64,
    pub ad_task: u32,
    pub target: Target,
    pub day: u32,
    /// One categorical id per feature field; valid ids start at 1.
    pub fields: Vec<u32>,
    pub observed: Vec<u8>,
    /// Hidden true labels, only known for synthetic data.
    pub truth: Option<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdTaskProfile {
    pub id: u32,
    pub target: Target,
    /// Probability that a conversion of each action is submitted; 1 for the
    /// target action.
    pub propensity: Vec<f64>,
    pub campaign: u32,
    /// Relative share of traffic; not persisted in task files.
    pub traffic: f64,
}

impl AdTaskProfile {
    pub fn validate(&self) -> Result<()> {
        if self.propensity.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config(format!(
                "ad task {}: propensities must lie in [0, 1]",
                self.id
            )));
        }
        if let Target::Action(o) = self.target {
            if self.propensity.get(o) != Some(&1.0) {
                return Err(Error::Config(format!(
                    "ad task {}: target action must have propensity 1",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SampleType {
    /// Submitted positive.
    A,
    /// True negative.
    B,
    /// Unsubmitted conversion.
    C,
}

impl SampleType {
    pub fn classify(observed: u8, truth: u8) -> Self {
        match (observed, truth) {
            (1, _) => SampleType::A,
            (_, 0) => SampleType::B,
            _ => SampleType::C,
        }
    }
}

/// Type tag of every (sample, action) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TypeTags {
    pub n_actions: usize,
    pub tags: Vec<SampleType>,
}

impl TypeTags {
    pub fn of(samples: &[Sample], n_actions: usize) -> Result<Self> {
        let mut tags = Vec::with_capacity(samples.len() * n_actions);
        for s in samples {
            let truth = s.truth.as_ref().ok_or_else(|| {
                Error::State(format!("sample {} has no true labels", s.id))
            })?;
            tags.extend((0..n_actions).map(|j| SampleType::classify(s.observed[j], truth[j])));
        }
        Ok(Self { n_actions, tags })
    }

    pub fn get(&self, sample: usize, action: usize) -> SampleType {
        self.tags[sample * self.n_actions + action]
    }

    pub fn count(&self, action: usize, kind: SampleType) -> usize {
        self.tags
            .iter()
            .skip(action)
            .step_by(self.n_actions)
            .filter(|&&t| t == kind)
            .count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub n_actions: usize,
    pub field_names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(n_actions: usize, field_names: Vec<String>, samples: Vec<Sample>) -> Result<Self> {
        let ds = Self {
            n_actions,
            field_names,
            samples,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_fields(&self) -> usize {
        self.field_names.len()
    }

    pub fn has_truth(&self) -> bool {
        self.samples.first().is_some_and(|s| s.truth.is_some())
    }

    /// Largest id seen per field.
    pub fn field_max(&self) -> Vec<u32> {
        let mut max = vec![0; self.n_fields()];
        for s in &self.samples {
            for (m, &v) in max.iter_mut().zip(&s.fields) {
                *m = (*m).max(v);
            }
        }
        max
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            if s.fields.len() != self.n_fields() || s.observed.len() != self.n_actions {
                return Err(Error::Format(format!(
                    "sample {}: expected {} fields and {} labels",
                    s.id,
                    self.n_fields(),
                    self.n_actions
                )));
            }
            if let Target::Action(o) = s.target {
                if o >= self.n_actions {
                    return Err(Error::Format(format!("sample {}: target {o} out of range", s.id)));
                }
            }
            if s.observed.iter().any(|&y| y > 1) {
                return Err(Error::Format(format!("sample {}: labels must be 0/1", s.id)));
            }
            if let Some(t) = &s.truth {
                if t.len() != self.n_actions || t.iter().any(|&y| y > 1) {
                    return Err(Error::Format(format!("sample {}: bad true labels", s.id)));
                }
            }
        }
        Ok(())
    }

    /// Copy without hidden labels.
    pub fn observed_only(&self) -> Self {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.truth = None;
        }
        out
    }
}
