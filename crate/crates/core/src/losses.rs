//! Training objectives over a `batch × n_tasks` logit matrix.
//!
//! All functions take logits (not probabilities) and return the gradient of
//! the value with respect to those logits alongside the value itself.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{sigmoid, Matrix, LOG_FLOOR};
use crate::error::{Error, Result};

/// Which samples may act as the positive side of a ranking pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eligibility {
    /// Any sample with an observed positive label for the task.
    #[default]
    Observed,
    /// Observed positives that are also inside the training mask.
    Masked,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the BCE term; the ranking term gets `1 − gamma`.
    pub gamma: f64,
    /// Per-task ranking weights.
    pub beta: Vec<f64>,
    /// Maximum ranking pairs per task and batch.
    pub pair_cap: usize,
    pub eligibility: Eligibility,
}

impl LossConfig {
    pub fn new(n_tasks: usize) -> Self {
        Self {
            gamma: 0.7,
            beta: vec![1.0; n_tasks],
            pair_cap: 10_000,
            eligibility: Eligibility::Observed,
        }
    }

    /// BCE only.
    pub fn bce_only(n_tasks: usize) -> Self {
        Self {
            gamma: 1.0,
            ..Self::new(n_tasks)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if let Some(b) = self.beta.iter().find(|b| !(**b >= 0.0) || !b.is_finite()) {
            return Err(Error::Config(format!("ranking weights must be finite and non-negative, got {b}")));
        }
        if self.pair_cap == 0 {
            return Err(Error::Config("pair_cap must be positive".into()));
        }
        Ok(())
    }
}

/// Labels and training mask of a batch, both flat `batch × n_tasks`.
#[derive(Clone, Copy, Debug)]
pub struct Targets<'a> {
    pub labels: &'a [u8],
    pub mask: &'a [u8],
}

fn check(logits: &Matrix, t: &Targets) -> Result<()> {
    if t.labels.len() != logits.len() || t.mask.len() != logits.len() {
        return Err(Error::Dimension(format!(
            "{} logits but {} labels and {} mask entries",
            logits.len(),
            t.labels.len(),
            t.mask.len()
        )));
    }
    Ok(())
}

/// Cross-entropy of one logit and its derivative; the derivative is zero
/// wherever the probability clamp is active.
#[inline]
pub fn bce_with_grad(s: f64, y: u8) -> (f64, f64) {
    let (p, q) = (sigmoid(s), sigmoid(-s));
    if y == 1 {
        if p < LOG_FLOOR {
            (-LOG_FLOOR.ln(), 0.0)
        } else {
            (-p.ln(), -q)
        }
    } else if q < LOG_FLOOR {
        (-LOG_FLOOR.ln(), 0.0)
    } else {
        (-q.ln(), p)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedBce {
    /// Summed cross-entropy of the masked-in entries per task.
    pub per_task_sum: Vec<f64>,
    pub per_task_count: Vec<usize>,
    /// Sum over all masked-in entries divided by their number (0 if none).
    pub mean: f64,
}

pub fn masked_bce(logits: &Matrix, t: &Targets) -> Result<MaskedBce> {
    check(logits, t)?;
    let n = logits.cols();
    let mut per_task_sum = vec![0.0; n];
    let mut per_task_count = vec![0; n];
    for (k, &s) in logits.data().iter().enumerate() {
        if t.mask[k] == 1 {
            per_task_sum[k % n] += bce_with_grad(s, t.labels[k]).0;
            per_task_count[k % n] += 1;
        }
    }
    let count: usize = per_task_count.iter().sum();
    let mean = if count == 0 { 0.0 } else { per_task_sum.iter().sum::<f64>() / count as f64 };
    Ok(MaskedBce {
        per_task_sum,
        per_task_count,
        mean,
    })
}

/// Per-task average cross-entropy summed over tasks, with its logit gradient.
pub fn dynamic_average_bce(logits: &Matrix, t: &Targets) -> Result<(f64, Matrix)> {
    let parts = masked_bce(logits, t)?;
    let n = logits.cols();
    let scale: Vec<f64> = parts.per_task_count.iter().map(|&c| 1.0 / c.max(1) as f64).collect();
    let value = parts.per_task_sum.iter().zip(&scale).map(|(s, w)| s * w).sum();
    let mut grad = Matrix::zeros(logits.rows(), n);
    for (k, (g, &s)) in grad.data_mut().iter_mut().zip(logits.data()).enumerate() {
        if t.mask[k] == 1 {
            *g = scale[k % n] * bce_with_grad(s, t.labels[k]).1;
        }
    }
    Ok((value, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingTerm {
    /// `Σ_k β_k Σ_pairs −ln σ(s_pos − s_neg)` divided by the total pair count.
    pub value: f64,
    /// Unnormalized weighted sum per task.
    pub per_task: Vec<f64>,
    pub pairs: Vec<usize>,
    pub grad: Matrix,
}

/// Pairwise ranking loss between positive and negative samples of each task
/// within the batch. Tasks with more than `cap` pairs are subsampled
/// uniformly without replacement.
pub fn ranking_loss<R: Rng + ?Sized>(
    logits: &Matrix,
    t: &Targets,
    beta: &[f64],
    eligibility: Eligibility,
    cap: usize,
    rng: &mut R,
) -> Result<RankingTerm> {
    check(logits, t)?;
    let (b, n) = logits.shape();
    if beta.len() != n {
        return Err(Error::Dimension(format!("{} ranking weights for {n} tasks", beta.len())));
    }
    let mut per_task = vec![0.0; n];
    let mut pairs = vec![0; n];
    // (task, positive row, negative row, d loss / d s_pos)
    let mut pair_grads: Vec<(usize, usize, usize, f64)> = Vec::new();
    for k in 0..n {
        let at = |i: usize| i * n + k;
        let pos: Vec<usize> = (0..b)
            .filter(|&i| t.labels[at(i)] == 1 && (eligibility == Eligibility::Observed || t.mask[at(i)] == 1))
            .collect();
        let neg: Vec<usize> = (0..b).filter(|&i| t.labels[at(i)] == 0).collect();
        let total = pos.len() * neg.len();
        if total == 0 {
            continue;
        }
        let mut visit = |p: usize| {
            let (i, j) = (pos[p / neg.len()], neg[p % neg.len()]);
            let d = logits.get(i, k) - logits.get(j, k);
            let sig = sigmoid(d);
            let (loss, g) = if sig < LOG_FLOOR { (-LOG_FLOOR.ln(), 0.0) } else { (-sig.ln(), -sigmoid(-d)) };
            per_task[k] += beta[k] * loss;
            pair_grads.push((k, i, j, beta[k] * g));
        };
        if total > cap {
            index::sample(rng, total, cap).into_iter().for_each(&mut visit);
            pairs[k] = cap;
        } else {
            (0..total).for_each(&mut visit);
            pairs[k] = total;
        }
    }
    let count: usize = pairs.iter().sum();
    let norm = if count == 0 { 0.0 } else { 1.0 / count as f64 };
    let mut grad = Matrix::zeros(b, n);
    for (k, i, j, g) in pair_grads {
        grad.data_mut()[i * n + k] += norm * g;
        grad.data_mut()[j * n + k] -= norm * g;
    }
    Ok(RankingTerm {
        value: per_task.iter().sum::<f64>() * norm,
        per_task,
        pairs,
        grad,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchLossReport {
    /// `gamma · bce + (1 − gamma) · ranking`.
    pub total: f64,
    pub bce: f64,
    pub ranking: f64,
    /// Averaged cross-entropy per task (its contribution to `bce`).
    pub per_task_bce: Vec<f64>,
    pub valid_samples: Vec<usize>,
    /// Unnormalized weighted ranking sum per task.
    pub per_task_ranking: Vec<f64>,
    pub valid_pairs: Vec<usize>,
}

/// Joint objective and its logit gradient. The ranking term is skipped when
/// `gamma = 1`.
pub fn joint_loss<R: Rng + ?Sized>(
    logits: &Matrix,
    t: &Targets,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<(BatchLossReport, Matrix)> {
    cfg.validate()?;
    let parts = masked_bce(logits, t)?;
    let (bce, mut grad) = dynamic_average_bce(logits, t)?;
    let n = logits.cols();
    let rank = if cfg.gamma < 1.0 {
        ranking_loss(logits, t, &cfg.beta, cfg.eligibility, cfg.pair_cap, rng)?
    } else {
        RankingTerm {
            value: 0.0,
            per_task: vec![0.0; n],
            pairs: vec![0; n],
            grad: Matrix::zeros(0, 0),
        }
    };
    for g in grad.data_mut() {
        *g *= cfg.gamma;
    }
    if cfg.gamma < 1.0 {
        for (g, r) in grad.data_mut().iter_mut().zip(rank.grad.data()) {
            *g += (1.0 - cfg.gamma) * r;
        }
    }
    let per_task_bce = parts
        .per_task_sum
        .iter()
        .zip(&parts.per_task_count)
        .map(|(s, &c)| s / c.max(1) as f64)
        .collect();
    Ok((
        BatchLossReport {
            total: cfg.gamma * bce + (1.0 - cfg.gamma) * rank.value,
            bce,
            ranking: rank.value,
            per_task_bce,
            valid_samples: parts.per_task_count,
            per_task_ranking: rank.per_task,
            valid_pairs: rank.pairs,
        },
        grad,
    ))
}
