use serde::{Deserialize, Serialize};

use super::{Dataset, Target};
use crate::masking::MaskMatrix;

/// Share of samples each task trains on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub per_task: Vec<f64>,
    /// Share of samples whose target lies outside the modeled actions.
    pub other_target: f64,
    /// Share of samples no task trains on.
    pub untrained: f64,
}

pub fn coverage_stats(ds: &Dataset, mask: &MaskMatrix) -> CoverageReport {
    let n = ds.len().max(1) as f64;
    let mut per_task = vec![0.0; mask.n_tasks];
    let mut untrained = 0.0;
    for i in 0..mask.n_samples {
        let row = mask.train_row(i);
        for (p, &m) in per_task.iter_mut().zip(row) {
            *p += m as f64;
        }
        if row.iter().all(|&m| m == 0) {
            untrained += 1.0;
        }
    }
    per_task.iter_mut().for_each(|p| *p /= n);
    let other = ds.samples.iter().filter(|s| s.target == Target::Other).count() as f64;
    CoverageReport {
        per_task,
        other_target: other / n,
        untrained: untrained / n,
    }
}
