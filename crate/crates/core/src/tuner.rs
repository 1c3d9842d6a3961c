//! Seeded random search over (dropout rate, learning rate) with batch
//! normalization enabled, ranked by validation R². Trial parameters are a
//! pure function of (seed, trial id), so a larger budget extends a smaller
//! one instead of reshuffling it.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::nn::{train, MlpConfig, MlpModel, TrainConfig};

#[derive(Debug, Clone, Copy)]
pub struct SearchSpace {
    /// Sampled uniformly.
    pub dropout: (f64, f64),
    /// Sampled log-uniformly.
    pub learning_rate: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace { dropout: (0.0, 0.5), learning_rate: (1e-4, 1e-2) }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let (d0, d1) = self.dropout;
        if !(0.0..1.0).contains(&d0) || !(d0..1.0).contains(&d1) {
            return Err(CoreError::Config(format!("bad dropout range [{d0}, {d1}]")));
        }
        let (l0, l1) = self.learning_rate;
        if !(l0 > 0.0 && l1 >= l0) {
            return Err(CoreError::Config(format!("bad learning rate range [{l0}, {l1}]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub val_r2: f64,
    pub stopped_epoch: usize,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct TuneOutcome {
    pub best: TrialRecord,
    pub trials: Vec<TrialRecord>,
    pub failures: Vec<(usize, String)>,
    pub model: MlpModel,
}

fn derived_seed(seed: u64, trial: usize, salt: u64) -> u64 {
    // splitmix64 over (seed, trial, salt) so each trial gets an
    // independent, reproducible stream
    let mut z = seed
        .wrapping_add((trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(salt.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hyperparameters of one trial; depends only on (space, seed, trial).
pub fn sample_trial(space: &SearchSpace, seed: u64, trial: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, trial, 1));
    let dropout = rng.gen_range(space.dropout.0..=space.dropout.1);
    let (l0, l1) = space.learning_rate;
    let lr = if l0 == l1 { l0 } else { (rng.gen_range(l0.ln()..=l1.ln())).exp() };
    (dropout, lr)
}

/// Random search: `budget` independent trainings on the given split, each
/// with batch normalization on and its own derived seeds; returns the
/// trial with the highest validation R² (ties to the lower id).
#[allow(clippy::too_many_arguments)]
pub fn tune(
    x_train: &[f64],
    y_train: &[f64],
    x_val: &[f64],
    y_val: &[f64],
    base: &MlpConfig,
    schedule: &TrainConfig,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
) -> Result<TuneOutcome> {
    space.validate()?;
    if budget == 0 {
        return Err(CoreError::Config("tuning budget must be at least 1".into()));
    }
    let mut trials = Vec::new();
    let mut failures = Vec::new();
    let mut best: Option<(TrialRecord, MlpModel)> = None;
    for trial in 0..budget {
        let (dropout_rate, learning_rate) = sample_trial(space, seed, trial);
        let mlp = MlpConfig {
            use_batchnorm: true,
            dropout_rate,
            max_norm: Some(4.0),
            init_seed: derived_seed(seed, trial, 2),
            ..base.clone()
        };
        let tc = TrainConfig {
            learning_rate,
            seed: derived_seed(seed, trial, 3),
            ..schedule.clone()
        };
        let t0 = Instant::now();
        match train(x_train, y_train, x_val, y_val, &mlp, &tc) {
            Ok((model, rep)) if rep.final_r2.is_finite() => {
                let rec = TrialRecord {
                    trial,
                    dropout_rate,
                    learning_rate,
                    val_r2: rep.final_r2,
                    stopped_epoch: rep.stopped_epoch,
                    seconds: t0.elapsed().as_secs_f64(),
                };
                trials.push(rec);
                if best.as_ref().map_or(true, |(b, _)| rec.val_r2 > b.val_r2) {
                    best = Some((rec, model));
                }
            }
            Ok(_) => failures.push((trial, "undefined validation score".into())),
            Err(e) => failures.push((trial, e.to_string())),
        }
    }
    match best {
        Some((best, model)) => Ok(TuneOutcome { best, trials, failures, model }),
        None => Err(CoreError::Numerical(format!(
            "all {budget} tuning trials failed: {failures:?}"
        ))),
    }
}

pub fn trials_to_csv(trials: &[TrialRecord]) -> String {
    let mut s = String::from("trial,dropout_rate,learning_rate,val_r2,stopped_epoch,seconds\n");
    for t in trials {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t.trial, t.dropout_rate, t.learning_rate, t.val_r2, t.stopped_epoch, t.seconds
        ));
    }
    s
}
