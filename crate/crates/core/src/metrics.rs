//! Target-conditional evaluation.
//!
//! Every test sample is scored once, by the head of its own target action,
//! and judged against that action's label only.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Target};
use crate::engine::LOG_FLOOR;
use crate::error::{Error, Result};
use crate::model::{FeatureBatch, Model};

const EVAL_BATCH: usize = 4096;

fn check_labels(n_scores: usize, labels: &[u8]) -> Result<()> {
    if n_scores != labels.len() {
        return Err(Error::Dimension(format!("{n_scores} scores for {} labels", labels.len())));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Domain("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Area under the ROC curve from average ranks (Mann-Whitney U).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_labels(scores.len(), labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!("AUC needs both classes ({pos} positives, {neg} negatives)")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start..end (1-based start+1..=end) share their mean
        let rank = (start + 1 + end) as f64 / 2.0;
        let tied_pos = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        pos_rank_sum += rank * tied_pos as f64;
        start = end;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean negative log-likelihood with probabilities clamped away from 0 and 1.
pub fn logloss(probs: &[f64], labels: &[u8]) -> Result<f64> {
    check_labels(probs.len(), labels)?;
    if probs.is_empty() {
        return Err(Error::UndefinedMetric("LogLoss of an empty set".into()));
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(LOG_FLOOR, 1.0 - LOG_FLOOR);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// Relative AUC improvement over a baseline, in percent.
pub fn relaimpr(auc_model: f64, auc_baseline: f64) -> Result<f64> {
    if !(auc_baseline > 0.5) {
        return Err(Error::Domain(format!("baseline AUC {auc_baseline} must exceed 0.5")));
    }
    Ok(100.0 * ((auc_model - 0.5) / (auc_baseline - 0.5) - 1.0))
}

/// Metrics over one group of samples; `None` where undefined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub auc: Option<f64>,
    pub logloss: Option<f64>,
    pub samples: usize,
    pub positives: usize,
}

impl GroupMetrics {
    pub fn compute(probs: &[f64], labels: &[u8]) -> Result<Self> {
        let undefined = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedMetric(_)) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(Self {
            auc: undefined(auc(probs, labels))?,
            logloss: undefined(logloss(probs, labels))?,
            samples: probs.len(),
            positives: labels.iter().filter(|&&y| y == 1).count(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Index `j` holds action `j + 1`.
    pub per_action: Vec<GroupMetrics>,
    /// Pooled over all samples, each with its target-action score.
    pub overall: GroupMetrics,
    /// Test samples whose target is outside the modeled actions.
    pub skipped: usize,
}

impl MetricsReport {
    /// Per-action and overall RelaImpr against `baseline`.
    pub fn relaimpr_vs(&self, baseline: &MetricsReport) -> Vec<Option<f64>> {
        let pair = |a: &GroupMetrics, b: &GroupMetrics| match (a.auc, b.auc) {
            (Some(x), Some(y)) => relaimpr(x, y).ok(),
            _ => None,
        };
        self.per_action
            .iter()
            .zip(&baseline.per_action)
            .map(|(a, b)| pair(a, b))
            .chain(std::iter::once(pair(&self.overall, &baseline.overall)))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Target-action probabilities and labels of every test sample with a
/// modeled target. Only `observed[target]` is read.
pub fn target_scores(model: &Model, test: &Dataset) -> Result<(Vec<usize>, Vec<f64>, Vec<u8>)> {
    if test.n_actions != model.n_tasks() {
        return Err(Error::Dimension(format!(
            "test set has {} actions, model {}",
            test.n_actions,
            model.n_tasks()
        )));
    }
    let rows: Vec<_> = test.samples.iter().filter_map(|s| s.target.action().map(|a| (s, a))).collect();
    let mut actions = Vec::with_capacity(rows.len());
    let mut probs = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    let n_fields = test.n_fields();
    let mut ids = Vec::with_capacity(EVAL_BATCH * n_fields);
    for chunk in rows.chunks(EVAL_BATCH) {
        ids.clear();
        for (s, _) in chunk {
            ids.extend_from_slice(&s.fields);
        }
        let acts: Vec<usize> = chunk.iter().map(|&(_, a)| a).collect();
        probs.extend(model.serve_batch(&FeatureBatch::new(&ids, n_fields)?, &acts)?);
        labels.extend(chunk.iter().map(|&(s, a)| s.observed[a]));
        actions.extend(acts);
    }
    Ok((actions, probs, labels))
}

pub fn evaluate(model: &Model, test: &Dataset) -> Result<MetricsReport> {
    let (actions, probs, labels) = target_scores(model, test)?;
    let per_action = (0..test.n_actions)
        .map(|j| {
            let (p, y): (Vec<f64>, Vec<u8>) = actions
                .iter()
                .zip(probs.iter().zip(&labels))
                .filter(|(&a, _)| a == j)
                .map(|(_, (&p, &y))| (p, y))
                .unzip();
            GroupMetrics::compute(&p, &y)
        })
        .collect::<Result<_>>()?;
    Ok(MetricsReport {
        per_action,
        overall: GroupMetrics::compute(&probs, &labels)?,
        skipped: test.samples.iter().filter(|s| s.target == Target::Other).count(),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"))
}

/// Comparison table with one AUC and one LogLoss row per model and one
/// column per action plus `all`.
pub fn write_comparison_csv<W: Write>(out: W, rows: &[(String, MetricsReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = rows.first().map_or(0, |(_, r)| r.per_action.len());
    let mut header = vec!["model".to_string(), "metric".into()];
    header.extend((1..=n).map(|j| format!("action_{j}")));
    header.push("all".into());
    w.write_record(&header)?;
    for (name, r) in rows {
        for (metric, get) in [
            ("auc", (|g: &GroupMetrics| g.auc) as fn(&GroupMetrics) -> Option<f64>),
            ("logloss", |g: &GroupMetrics| g.logloss),
        ] {
            let mut rec = vec![name.clone(), metric.to_string()];
            rec.extend(r.per_action.iter().map(|g| cell(get(g))));
            rec.push(cell(get(&r.overall)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
