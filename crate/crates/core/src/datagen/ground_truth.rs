use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Target;
use crate::engine::{sigmoid, Matrix};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthConfig {
    pub n_actions: usize,
    /// Mean conversion probability of each action over uniformly drawn
    /// feature tuples.
    pub base_rates: Vec<f64>,
    pub field_vocab: Vec<usize>,
    /// Standard deviation each field contributes to the latent vector.
    pub field_scale: Vec<f64>,
    pub latent_dim: usize,
    /// Correlation between the scoring directions of any two actions.
    pub shared_weight: f64,
    /// Multiplier on all feature effects; 0 gives constant probabilities.
    pub signal: f64,
    /// Logit bonus for the action a sample's ad task targets.
    pub target_lift: f64,
    /// Length of an extra scoring direction added to an action's weights
    /// on samples whose ad task targets it.
    pub target_shift: f64,
}

impl GroundTruthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_actions == 0 || self.base_rates.len() != self.n_actions {
            return Err(Error::Config(format!(
                "need one base rate per action ({} actions, {} rates)",
                self.n_actions,
                self.base_rates.len()
            )));
        }
        if self.base_rates.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return Err(Error::Config("base rates must lie in (0, 1)".into()));
        }
        if self.field_vocab.is_empty()
            || self.field_vocab.contains(&0)
            || self.field_scale.len() != self.field_vocab.len()
        {
            return Err(Error::Config(
                "every feature field needs a positive vocabulary and a scale".into(),
            ));
        }
        if self.latent_dim == 0 || !(-1.0..=1.0).contains(&self.shared_weight) {
            return Err(Error::Config(
                "latent_dim must be positive and shared_weight in [-1, 1]".into(),
            ));
        }
        if !self.signal.is_finite() || !self.target_lift.is_finite() || !self.target_shift.is_finite() {
            return Err(Error::Config("signal, target_lift and target_shift must be finite".into()));
        }
        Ok(())
    }
}

/// Planted conversion process:
/// `logit_j = bias_j + signal · (w_j + [target = j] · shift · t_j) · Σ_f latent_f[id_f]
///           + lift · [target = j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthModel {
    pub config: GroundTruthConfig,
    /// Per field, `vocab × latent_dim`; row `id − 1` belongs to id `id`.
    pub latent: Vec<Matrix>,
    /// `n_actions × latent_dim` scoring directions.
    pub weights: Matrix,
    /// `n_actions × latent_dim` extra directions for target samples.
    pub target_weights: Matrix,
    /// Calibrated intercepts. May be set to ±∞ to pin an action's probability.
    pub bias: Vec<f64>,
    /// Per field, `vocab × n_actions` precomputed contributions to the logits.
    effects: Vec<Matrix>,
    target_effects: Vec<Matrix>,
}

/// Number of uniformly drawn feature tuples used to calibrate intercepts.
const CALIBRATION_DRAW: usize = 10_000;

pub fn make_ground_truth(config: &GroundTruthConfig, seed: u64) -> Result<GroundTruthModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = config.latent_dim;
    let per_coord = 1.0 / (dim as f64).sqrt();

    let latent: Vec<Matrix> = config
        .field_vocab
        .iter()
        .zip(&config.field_scale)
        .map(|(&vocab, &scale)| {
            let data = (0..vocab * dim)
                .map(|_| { let z: f64 = StandardNormal.sample(&mut rng); scale * per_coord * z })
                .collect::<Vec<f64>>();
            Matrix::from_vec(vocab, dim, data).expect("shape by construction")
        })
        .collect();

    let rho = config.shared_weight;
    let own = (1.0 - rho * rho).max(0.0).sqrt();
    let shared: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut weights = Matrix::zeros(config.n_actions, dim);
    for j in 0..config.n_actions {
        for (d, s) in shared.iter().enumerate() {
            let e: f64 = StandardNormal.sample(&mut rng);
            weights.set(j, d, rho * s + own * e);
        }
    }

    let mut target_weights = Matrix::zeros(config.n_actions, dim);
    for v in target_weights.data_mut() {
        let e: f64 = StandardNormal.sample(&mut rng);
        *v = config.target_shift * e;
    }

    let project = |w: &Matrix| -> Vec<Matrix> {
        latent
            .iter()
            .map(|lat| {
                let mut m = lat.matmul_nt(w).expect("latent_dim agrees");
                m.data_mut().iter_mut().for_each(|v| *v *= config.signal);
                m
            })
            .collect()
    };
    let effects = project(&weights);
    let target_effects = project(&target_weights);

    let mut model = GroundTruthModel {
        config: config.clone(),
        latent,
        weights,
        target_weights,
        bias: vec![0.0; config.n_actions],
        effects,
        target_effects,
    };
    model.calibrate(&mut rng);
    Ok(model)
}

impl GroundTruthModel {
    pub fn n_actions(&self) -> usize {
        self.config.n_actions
    }

    /// Uniformly random feature tuple.
    pub fn random_fields<R: Rng>(&self, rng: &mut R) -> Vec<u32> {
        self.config
            .field_vocab
            .iter()
            .map(|&v| rng.random_range(1..=v as u32))
            .collect()
    }

    fn feature_logits(&self, fields: &[u32], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (eff, &id) in self.effects.iter().zip(fields) {
            if id == 0 || id as usize > eff.rows() {
                continue;
            }
            for (o, e) in out.iter_mut().zip(eff.row(id as usize - 1)) {
                *o += e;
            }
        }
    }

    pub fn logits(&self, fields: &[u32], target: Target) -> Vec<f64> {
        let mut out = vec![0.0; self.n_actions()];
        self.feature_logits(fields, &mut out);
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
        if let Some(j) = target.action() {
            out[j] += self.config.target_lift;
            for (eff, &id) in self.target_effects.iter().zip(fields) {
                if id != 0 && id as usize <= eff.rows() {
                    out[j] += eff.get(id as usize - 1, j);
                }
            }
        }
        out
    }

    /// True conversion probability of every action.
    pub fn probabilities(&self, fields: &[u32], target: Target) -> Vec<f64> {
        self.logits(fields, target).into_iter().map(sigmoid).collect()
    }

    fn calibrate<R: Rng>(&mut self, rng: &mut R) {
        let n = self.n_actions();
        let mut draws = vec![0.0; CALIBRATION_DRAW * n];
        let mut buf = vec![0.0; n];
        for i in 0..CALIBRATION_DRAW {
            let fields = self.random_fields(rng);
            self.feature_logits(&fields, &mut buf);
            draws[i * n..(i + 1) * n].copy_from_slice(&buf);
        }
        for j in 0..n {
            let target = self.config.base_rates[j];
            let mean_at = |b: f64| {
                draws
                    .iter()
                    .skip(j)
                    .step_by(n)
                    .map(|s| sigmoid(b + s))
                    .sum::<f64>()
                    / CALIBRATION_DRAW as f64
            };
            let (mut lo, mut hi) = (-40.0, 40.0);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if mean_at(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            self.bias[j] = 0.5 * (lo + hi);
        }
    }
}
