//! Seeded synthetic nights.
//!
//! A two-state Markov chain over 30-s epochs draws the hypnogram. Heart
//! rate follows a level that relaxes toward the current stage mean plus
//! AR(1) noise scaled by the stage deviation, then is rounded to whole
//! beats and clipped. Sensor dropouts arrive as short runs of defective
//! samples whose value reads 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::record::{SleepRecord, Stage, EPOCH_SECONDS, QUALITY_DEFECTIVE, QUALITY_GOOD};
use crate::error::{Error, Result};

/// Awake-to-asleep time ratio of the reference cohort.
pub const REFERENCE_WAKE_SLEEP_RATIO: f64 = 0.742;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    /// Probability of staying asleep from one epoch to the next.
    pub sleep_stay: f64,
    /// Probability of staying awake from one epoch to the next.
    pub wake_stay: f64,
    /// Probability the night starts awake.
    pub initial_wake: f64,
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub sleep_hr_mean: f64,
    pub sleep_hr_std: f64,
    pub wake_hr_mean: f64,
    pub wake_hr_std: f64,
    /// Per-second retention of the HR level when the stage changes.
    pub level_smoothing: f64,
    /// AR(1) coefficient of the per-second noise.
    pub noise_ar: f64,
    pub hr_min: f64,
    pub hr_max: f64,
    /// Long-run fraction of samples flagged defective.
    pub defect_fraction: f64,
    /// Mean length of a dropout run, in samples.
    pub defect_run: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self::from_dwell(20.0, REFERENCE_WAKE_SLEEP_RATIO)
    }
}

impl GenConfig {
    /// Chain with mean sleep bout `sleep_dwell` epochs whose stationary
    /// wake/sleep time ratio is `ratio`; the first epoch is drawn from the
    /// stationary distribution.
    pub fn from_dwell(sleep_dwell: f64, ratio: f64) -> Self {
        let wake_dwell = ratio * sleep_dwell;
        Self {
            sleep_stay: 1.0 - 1.0 / sleep_dwell,
            wake_stay: 1.0 - 1.0 / wake_dwell,
            initial_wake: ratio / (1.0 + ratio),
            min_epochs: 120,
            max_epochs: 240,
            sleep_hr_mean: 58.0,
            sleep_hr_std: 2.0,
            wake_hr_mean: 72.0,
            wake_hr_std: 6.0,
            level_smoothing: 0.95,
            noise_ar: 0.9,
            hr_min: 30.0,
            hr_max: 180.0,
            defect_fraction: 0.02,
            defect_run: 10.0,
        }
    }

    /// Stationary wake/sleep time ratio of the configured chain.
    pub fn stationary_ratio(&self) -> f64 {
        (1.0 - self.sleep_stay) / (1.0 - self.wake_stay)
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be a probability, got {p}")))
            }
        };
        prob("sleep_stay", self.sleep_stay)?;
        prob("wake_stay", self.wake_stay)?;
        prob("initial_wake", self.initial_wake)?;
        prob("level_smoothing", self.level_smoothing)?;
        if !(0.0..1.0).contains(&self.noise_ar) {
            return Err(Error::config(format!("noise_ar must lie in [0, 1), got {}", self.noise_ar)));
        }
        if !(0.0..1.0).contains(&self.defect_fraction) {
            return Err(Error::config(format!(
                "defect_fraction must lie in [0, 1), got {}",
                self.defect_fraction
            )));
        }
        if self.defect_fraction > 0.0 && !(self.defect_run >= 1.0) {
            return Err(Error::config(format!("defect_run must be at least 1, got {}", self.defect_run)));
        }
        if self.min_epochs == 0 || self.min_epochs > self.max_epochs {
            return Err(Error::config(format!(
                "epoch range {}..={} is empty or starts at 0",
                self.min_epochs, self.max_epochs
            )));
        }
        for (name, v) in [("sleep_hr_std", self.sleep_hr_std), ("wake_hr_std", self.wake_hr_std)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(self.hr_min < self.hr_max) || !self.sleep_hr_mean.is_finite() || !self.wake_hr_mean.is_finite() {
            return Err(Error::config("heart-rate means and clip range must be finite with hr_min < hr_max"));
        }
        Ok(())
    }
}

/// `n` records named `syn0000`, `syn0001`, ...; record `i` depends only
/// on `seed` and `i`.
pub fn synthesize_dataset(n: usize, seed: u64, cfg: &GenConfig) -> Result<Vec<SleepRecord>> {
    cfg.validate()?;
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            synthesize_record(format!("syn{i:04}"), &mut rng, cfg)
        })
        .collect())
}

pub fn synthesize_record(subject_id: String, rng: &mut ChaCha8Rng, cfg: &GenConfig) -> SleepRecord {
    let epochs = rng.random_range(cfg.min_epochs..=cfg.max_epochs);
    let mut labels = Vec::with_capacity(epochs);
    let mut stage = if rng.random::<f64>() < cfg.initial_wake { Stage::Wake } else { Stage::Sleep };
    for e in 0..epochs {
        if e > 0 {
            let stay = match stage {
                Stage::Sleep => cfg.sleep_stay,
                Stage::Wake => cfg.wake_stay,
            };
            if rng.random::<f64>() >= stay {
                stage = match stage {
                    Stage::Sleep => Stage::Wake,
                    Stage::Wake => Stage::Sleep,
                };
            }
        }
        labels.push(stage);
    }

    let params = |s: Stage| match s {
        Stage::Sleep => (cfg.sleep_hr_mean, cfg.sleep_hr_std),
        Stage::Wake => (cfg.wake_hr_mean, cfg.wake_hr_std),
    };
    let n = epochs * EPOCH_SECONDS;
    let mut hr = Vec::with_capacity(n);
    let mut quality = Vec::with_capacity(n);
    let mut level = params(labels[0]).0;
    let mut noise: f64 = StandardNormal.sample(rng);
    let innovation = (1.0 - cfg.noise_ar * cfg.noise_ar).sqrt();
    let enter_defect = if cfg.defect_fraction > 0.0 {
        cfg.defect_fraction / (cfg.defect_run * (1.0 - cfg.defect_fraction))
    } else {
        0.0
    };
    let mut defective = false;
    for t in 0..n {
        let (mean, std) = params(labels[t / EPOCH_SECONDS]);
        level = cfg.level_smoothing * level + (1.0 - cfg.level_smoothing) * mean;
        let z: f64 = StandardNormal.sample(rng);
        noise = cfg.noise_ar * noise + innovation * z;
        let value = (level + std * noise).round().clamp(cfg.hr_min, cfg.hr_max);

        let u: f64 = rng.random();
        defective = if defective { u >= 1.0 / cfg.defect_run } else { u < enter_defect };
        if defective {
            hr.push(0.0);
            quality.push(QUALITY_DEFECTIVE);
        } else {
            hr.push(value);
            quality.push(QUALITY_GOOD);
        }
    }
    // repair needs at least one good sample
    if quality.iter().all(|&q| q == QUALITY_DEFECTIVE) {
        quality[0] = QUALITY_GOOD;
        hr[0] = params(labels[0]).0.round();
    }
    SleepRecord {
        subject_id,
        hr,
        quality,
        labels,
    }
}

/// Wake and Sleep epoch totals over a set of records.
pub fn stage_totals(records: &[SleepRecord]) -> (usize, usize) {
    records.iter().flat_map(|r| &r.labels).fold((0, 0), |(w, s), l| match l {
        Stage::Wake => (w + 1, s),
        Stage::Sleep => (w, s + 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        let cfg = GenConfig::default();
        let a = synthesize_dataset(5, 11, &cfg).unwrap();
        assert_eq!(a, synthesize_dataset(5, 11, &cfg).unwrap());
        assert_ne!(a, synthesize_dataset(5, 12, &cfg).unwrap());
    }

    #[test]
    fn records_satisfy_invariants() {
        for r in synthesize_dataset(10, 1, &GenConfig::default()).unwrap() {
            r.validate().unwrap();
            for (h, q) in r.hr.iter().zip(&r.quality) {
                if *q == QUALITY_GOOD {
                    assert!((30.0..=180.0).contains(h) && h.fract() == 0.0);
                }
            }
        }
    }

    #[test]
    fn absorbing_initial_state_gives_constant_hypnogram() {
        let cfg = GenConfig {
            wake_stay: 1.0,
            initial_wake: 1.0,
            ..GenConfig::default()
        };
        for r in synthesize_dataset(4, 3, &cfg).unwrap() {
            assert!(r.labels.iter().all(|&l| l == Stage::Wake));
        }
    }

    #[test]
    fn default_chain_ratio() {
        assert!((GenConfig::default().stationary_ratio() - REFERENCE_WAKE_SLEEP_RATIO).abs() < 1e-12);
    }

    #[test]
    fn invalid_probability_rejected() {
        let cfg = GenConfig {
            sleep_stay: 1.5,
            ..GenConfig::default()
        };
        assert!(matches!(synthesize_dataset(1, 0, &cfg), Err(Error::Config(_))));
    }
}
