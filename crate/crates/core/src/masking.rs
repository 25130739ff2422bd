//! Training-eligibility masks.
//!
//! The base mask trains task `j` only on samples whose target action is `j`.
//! The attribution-driven mask also admits a sample for task `j` when its ad
//! task submitted at least `α_j` conversions of `j` inside the counting
//! window. A sample is always admitted for its own target. The routing
//! indicator marks the original (target) entries for the dual-tower heads.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Sample};
use crate::error::{Error, Result};

/// Submitted conversions per (ad task, action) within a window.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConversionCounts {
    n_actions: usize,
    counts: BTreeMap<u32, Vec<u64>>,
}

impl ConversionCounts {
    pub fn get(&self, task: u32, action: usize) -> u64 {
        self.counts.get(&task).map_or(0, |c| c[action])
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn tasks(&self) -> impl Iterator<Item = (u32, &[u64])> {
        self.counts.iter().map(|(t, c)| (*t, c.as_slice()))
    }
}

/// Counting window in days, ending at the last day present in the data.
/// `None` covers the whole period.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub days: Option<u32>,
}

impl Window {
    pub fn all() -> Self {
        Self { days: None }
    }

    pub fn last(days: u32) -> Self {
        Self { days: Some(days) }
    }
}

/// Counts observed positives only; hidden labels are never read.
pub fn count_conversions(ds: &Dataset, window: Window) -> ConversionCounts {
    let first_day = match window.days {
        Some(d) => {
            let last = ds.samples.iter().map(|s| s.day).max().unwrap_or(0);
            (last + 1).saturating_sub(d)
        }
        None => 0,
    };
    let mut counts: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    for s in ds.samples.iter().filter(|s| s.day >= first_day) {
        let c = counts
            .entry(s.ad_task)
            .or_insert_with(|| vec![0; ds.n_actions]);
        for (c, &y) in c.iter_mut().zip(&s.observed) {
            *c += y as u64;
        }
    }
    ConversionCounts {
        n_actions: ds.n_actions,
        counts,
    }
}

#[inline]
pub fn base_mask(sample: &Sample, task: usize) -> u8 {
    sample.target.is(task) as u8
}

#[inline]
pub fn route_indicator(sample: &Sample, task: usize) -> u8 {
    sample.target.is(task) as u8
}

pub fn validate_alpha(alpha: &[f64], n_actions: usize) -> Result<()> {
    if alpha.len() != n_actions {
        return Err(Error::Config(format!(
            "need one ADM threshold per action ({} given, {n_actions} actions)",
            alpha.len()
        )));
    }
    if alpha.iter().any(|a| a.is_nan() || *a < 0.0) {
        return Err(Error::Config("ADM thresholds must be non-negative".into()));
    }
    Ok(())
}

/// ADM row of one sample: `[o = j] ∨ [c_j(task) ≥ α_j]`.
pub fn adm_mask(sample: &Sample, counts: &ConversionCounts, alpha: &[f64]) -> Result<Vec<u8>> {
    validate_alpha(alpha, counts.n_actions())?;
    Ok(adm_row(sample, counts, alpha))
}

fn adm_row(sample: &Sample, counts: &ConversionCounts, alpha: &[f64]) -> Vec<u8> {
    alpha
        .iter()
        .enumerate()
        .map(|(j, &a)| (sample.target.is(j) || counts.get(sample.ad_task, j) as f64 >= a) as u8)
        .collect()
}

/// Suggests `α_j` as the `q`-quantile of the non-zero per-task counts of `j`.
pub fn suggest_alpha(counts: &ConversionCounts, q: f64) -> Vec<f64> {
    (0..counts.n_actions())
        .map(|j| {
            let mut v: Vec<u64> = counts.tasks().map(|(_, c)| c[j]).filter(|&c| c > 0).collect();
            if v.is_empty() {
                return f64::INFINITY;
            }
            v.sort_unstable();
            let idx = ((v.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
            v[idx] as f64
        })
        .collect()
}

/// ADM threshold used when none is configured.
pub const DEFAULT_ALPHA: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MaskStrategy {
    Base,
    Adm { alpha: Vec<f64>, window: Window },
}

impl MaskStrategy {
    pub fn adm(alpha: Vec<f64>) -> Self {
        MaskStrategy::Adm {
            alpha,
            window: Window::all(),
        }
    }

    /// ADM with [`DEFAULT_ALPHA`] for every action over the whole period.
    pub fn default_adm(n_actions: usize) -> Self {
        Self::adm(vec![DEFAULT_ALPHA; n_actions])
    }

    pub fn name(&self) -> &'static str {
        match self {
            MaskStrategy::Base => "base",
            MaskStrategy::Adm { .. } => "adm",
        }
    }
}

/// Per-sample × per-task training mask and routing indicator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskMatrix {
    pub n_samples: usize,
    pub n_tasks: usize,
    pub train: Vec<u8>,
    pub route: Vec<u8>,
}

impl MaskMatrix {
    pub fn build(ds: &Dataset, strategy: &MaskStrategy) -> Result<Self> {
        let n = ds.n_actions;
        let mut train = Vec::with_capacity(ds.len() * n);
        let mut route = Vec::with_capacity(ds.len() * n);
        match strategy {
            MaskStrategy::Base => {
                for s in &ds.samples {
                    train.extend((0..n).map(|j| base_mask(s, j)));
                }
            }
            MaskStrategy::Adm { alpha, window } => {
                validate_alpha(alpha, n)?;
                let counts = count_conversions(ds, *window);
                for s in &ds.samples {
                    train.extend(adm_row(s, &counts, alpha));
                }
            }
        }
        for s in &ds.samples {
            route.extend((0..n).map(|j| route_indicator(s, j)));
        }
        Ok(Self {
            n_samples: ds.len(),
            n_tasks: n,
            train,
            route,
        })
    }

    #[inline]
    pub fn train_at(&self, i: usize, j: usize) -> u8 {
        self.train[i * self.n_tasks + j]
    }

    #[inline]
    pub fn route_at(&self, i: usize, j: usize) -> u8 {
        self.route[i * self.n_tasks + j]
    }

    pub fn train_row(&self, i: usize) -> &[u8] {
        &self.train[i * self.n_tasks..(i + 1) * self.n_tasks]
    }

    /// Tab-separated audit export: `sample_id`, `mask_1..N`, `route_1..N`.
    pub fn write_tsv<W: Write>(&self, ds: &Dataset, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
        let mut header = vec!["sample_id".to_string()];
        header.extend((1..=self.n_tasks).map(|j| format!("mask_{j}")));
        header.extend((1..=self.n_tasks).map(|j| format!("route_{j}")));
        w.write_record(&header)?;
        for (i, s) in ds.samples.iter().enumerate() {
            let mut row = vec![s.id.to_string()];
            row.extend((0..self.n_tasks).map(|j| self.train_at(i, j).to_string()));
            row.extend((0..self.n_tasks).map(|j| self.route_at(i, j).to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Target;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(id: u64, task: u32, target: Target, day: u32, observed: Vec<u8>) -> Sample {
        Sample {
            id,
            ad_task: task,
            target,
            day,
            fields: vec![1],
            observed,
            truth: None,
        }
    }

    fn dataset(samples: Vec<Sample>) -> Dataset {
        Dataset::new(2, vec!["f".into()], samples).unwrap()
    }

    const A: usize = 0;
    const B: usize = 1;

    /// Task x: target A, plenty of B submissions. Task y: target A, few B.
    /// Task z: target A, hardly any A conversions, plenty of B.
    fn figure_example() -> Dataset {
        let mut v = Vec::new();
        let mut id = 0;
        let mut push = |task: u32, obs: Vec<u8>, n: usize| {
            for _ in 0..n {
                v.push(sample(id, task, Target::Action(A), 0, obs.clone()));
                id += 1;
            }
        };
        push(0, vec![1, 1], 12);
        push(0, vec![0, 0], 5);
        push(1, vec![1, 0], 12);
        push(1, vec![0, 1], 2);
        push(2, vec![0, 1], 15);
        push(2, vec![1, 0], 1);
        dataset(v)
    }

    #[test]
    fn counting_cases() {
        let empty = dataset(vec![]);
        assert_eq!(count_conversions(&empty, Window::all()).get(0, 0), 0);
        let ds = dataset(vec![
            sample(0, 7, Target::Action(A), 0, vec![0, 1]),
            sample(1, 7, Target::Action(A), 1, vec![1, 1]),
            sample(2, 7, Target::Action(B), 2, vec![0, 1]),
            sample(3, 8, Target::Action(B), 2, vec![0, 1]),
        ]);
        let c = count_conversions(&ds, Window::all());
        assert_eq!(c.get(7, B), 3);
        assert_eq!(c.get(7, A), 1);
        assert_eq!(c.get(8, B), 1);
        let recent = count_conversions(&ds, Window::last(2));
        assert_eq!(recent.get(7, B), 2);
        assert_eq!(recent.get(7, A), 1);
    }

    #[test]
    fn counts_match_brute_force_tally() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<Sample> = (0..2000)
            .map(|i| {
                let task = rng.random_range(0..20);
                let obs = vec![rng.random_bool(0.3) as u8, rng.random_bool(0.1) as u8];
                sample(i, task, Target::Action(rng.random_range(0..2)), (i / 100) as u32, obs)
            })
            .collect();
        let ds = dataset(samples);
        let c = count_conversions(&ds, Window::all());
        for task in 0..20u32 {
            for j in 0..2 {
                let brute = ds
                    .samples
                    .iter()
                    .filter(|s| s.ad_task == task && s.observed[j] == 1)
                    .count() as u64;
                assert_eq!(c.get(task, j), brute);
            }
        }
    }

    #[test]
    fn base_mask_and_route() {
        let s = sample(0, 0, Target::Action(1), 0, vec![0, 0]);
        assert_eq!(base_mask(&s, 1), 1);
        assert_eq!(base_mask(&s, 0), 0);
        assert_eq!(route_indicator(&s, 1), 1);
        let other = sample(1, 0, Target::Other, 0, vec![1, 1]);
        assert_eq!(base_mask(&other, 0) + base_mask(&other, 1), 0);
    }

    #[test]
    fn figure_example_tasks() {
        let ds = figure_example();
        let counts = count_conversions(&ds, Window::all());
        let alpha = [10.0, 10.0];
        let row_of = |task: u32| {
            let s = ds.samples.iter().find(|s| s.ad_task == task).unwrap();
            adm_mask(s, &counts, &alpha).unwrap()
        };
        assert_eq!(row_of(0), vec![1, 1], "task x trains A and B");
        assert_eq!(row_of(1), vec![1, 0], "task y trains A only");
        assert_eq!(row_of(2), vec![1, 1], "task z trains A and B");
    }

    #[test]
    fn extended_entries_route_to_extended_tower() {
        let ds = figure_example();
        let m = MaskMatrix::build(&ds, &MaskStrategy::adm(vec![10.0, 10.0])).unwrap();
        assert_eq!(m.train_at(0, B), 1);
        assert_eq!(m.route_at(0, B), 0);
        assert_eq!(m.route_at(0, A), 1);
        for i in 0..m.n_samples {
            for j in 0..2 {
                assert!(m.route_at(i, j) <= m.train_at(i, j));
            }
        }
    }

    #[test]
    fn negative_alpha_rejected() {
        let ds = figure_example();
        let counts = count_conversions(&ds, Window::all());
        assert!(matches!(adm_mask(&ds.samples[0], &counts, &[-1.0, 0.0]), Err(Error::Config(_))));
        assert!(MaskMatrix::build(&ds, &MaskStrategy::adm(vec![f64::NAN, 0.0])).is_err());
    }

    #[test]
    fn alpha_suggestion_uses_nonzero_counts() {
        let ds = figure_example();
        let counts = count_conversions(&ds, Window::all());
        let a = suggest_alpha(&counts, 0.5);
        assert_eq!(a[B], 12.0);
        assert_eq!(a[A], 12.0);
    }

    proptest! {
        #[test]
        fn reduction_saturation_monotonicity(
            rows in prop::collection::vec((0u32..6, 0usize..3, 0u8..2, 0u8..2), 1..120),
            a1 in 0.0f64..8.0, a2 in 0.0f64..8.0,
        ) {
            let samples: Vec<Sample> = rows.iter().enumerate().map(|(i, &(t, o, y0, y1))| {
                let target = if o == 2 { Target::Other } else { Target::Action(o) };
                sample(i as u64, t, target, 0, vec![y0, y1])
            }).collect();
            let ds = dataset(samples);
            let base = MaskMatrix::build(&ds, &MaskStrategy::Base).unwrap();
            let inf = MaskMatrix::build(&ds, &MaskStrategy::adm(vec![f64::INFINITY; 2])).unwrap();
            prop_assert_eq!(&inf.train, &base.train);
            let zero = MaskMatrix::build(&ds, &MaskStrategy::adm(vec![0.0; 2])).unwrap();
            prop_assert!(zero.train.iter().all(|&m| m == 1));
            let (lo, hi) = (a1.min(a2), a1.max(a2));
            let loose = MaskMatrix::build(&ds, &MaskStrategy::adm(vec![lo, 3.0])).unwrap();
            let tight = MaskMatrix::build(&ds, &MaskStrategy::adm(vec![hi, 3.0])).unwrap();
            for (t, l) in tight.train.iter().zip(&loose.train) {
                prop_assert!(t <= l);
            }
            for (t, b) in tight.train.iter().zip(&base.train) {
                prop_assert!(t >= b);
            }
            prop_assert_eq!(&tight.route, &base.train);
        }
    }
}
