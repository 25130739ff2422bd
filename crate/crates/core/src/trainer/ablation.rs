use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{train, RunHistory, TrainConfig, Variant};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{GroupMetrics, MetricsReport};

/// Mean and sample standard deviation across seeds; `None` if any seed
/// left the metric undefined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl Summary {
    pub fn of(values: &[Option<f64>]) -> Self {
        let Some(v) = values.iter().copied().collect::<Option<Vec<f64>>>() else {
            return Self { mean: None, std: None };
        };
        if v.is_empty() {
            return Self { mean: None, std: None };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            mean: Some(mean),
            std: Some(std),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub runs: Vec<RunHistory>,
    pub auc: Vec<Summary>,
    pub logloss: Vec<Summary>,
    pub overall_auc: Summary,
    pub overall_logloss: Summary,
}

impl AblationRow {
    pub fn from_runs(variant: &str, runs: Vec<RunHistory>) -> Result<Self> {
        let reports: Vec<&MetricsReport> = runs
            .iter()
            .map(|r| r.final_report().ok_or_else(|| Error::State(format!("{variant} run has no test report"))))
            .collect::<Result<_>>()?;
        let n = reports.first().map_or(0, |r| r.per_action.len());
        let column = |get: &dyn Fn(&MetricsReport) -> Option<f64>| Summary::of(&reports.iter().map(|r| get(r)).collect::<Vec<_>>());
        let per = |j: usize, f: fn(&GroupMetrics) -> Option<f64>| column(&|r: &MetricsReport| f(&r.per_action[j]));
        Ok(Self {
            variant: variant.to_string(),
            auc: (0..n).map(|j| per(j, |g| g.auc)).collect(),
            logloss: (0..n).map(|j| per(j, |g| g.logloss)).collect(),
            overall_auc: column(&|r| r.overall.auc),
            overall_logloss: column(&|r| r.overall.logloss),
            runs,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// One mean row and one std row per metric and variant, with a column
    /// per action plus `all`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.rows.first().map_or(0, |r| r.auc.len());
        let mut header = vec!["variant".to_string(), "metric".into()];
        header.extend((1..=n).map(|j| format!("action_{j}")));
        header.push("all".into());
        w.write_record(&header)?;
        let cell = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
        for r in &self.rows {
            for (metric, per, all) in [("auc", &r.auc, r.overall_auc), ("logloss", &r.logloss, r.overall_logloss)] {
                for (suffix, pick) in [("", (|s: &Summary| s.mean) as fn(&Summary) -> Option<f64>), ("_std", |s: &Summary| s.std)] {
                    let mut rec = vec![r.variant.clone(), format!("{metric}{suffix}")];
                    rec.extend(per.iter().map(|s| cell(pick(s))));
                    rec.push(cell(pick(&all)));
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Trains every variant with every seed of `base` and summarizes the final
/// test metrics.
pub fn run_ablation(train_set: &Dataset, test: &Dataset, variants: &[Variant], base: &TrainConfig) -> Result<AblationTable> {
    if variants.is_empty() {
        return Err(Error::Config("ablation needs at least one variant".into()));
    }
    base.validate()?;
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let cfg = base.for_variant(v);
        let runs = cfg
            .seeds
            .iter()
            .map(|&seed| train(train_set, Some(test), &cfg, seed).map(|r| r.history))
            .collect::<Result<Vec<_>>>()?;
        rows.push(AblationRow::from_runs(v.name(), runs)?);
    }
    Ok(AblationTable { rows })
}
