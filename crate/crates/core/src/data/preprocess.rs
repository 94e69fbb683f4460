//! Defective-sample repair and standardization.

use serde::{Deserialize, Serialize};

use super::record::{SleepRecord, Stage, QUALITY_GOOD};
use crate::error::{Error, Result};

/// Replaces every run of flagged samples by linear interpolation between
/// the good samples around it. Runs touching either end take the value of
/// the nearest good sample. Good samples are returned unchanged.
pub fn repair_hr(hr: &[f64], quality: &[u8]) -> Result<Vec<f64>> {
    if hr.len() != quality.len() {
        return Err(Error::dim(format!(
            "{} HR samples but {} quality flags",
            hr.len(),
            quality.len()
        )));
    }
    let good: Vec<usize> = (0..hr.len()).filter(|&i| quality[i] == QUALITY_GOOD).collect();
    let (Some(&first), Some(&last)) = (good.first(), good.last()) else {
        return Err(Error::Data("record has no good-quality heart-rate sample".into()));
    };
    let mut out = hr.to_vec();
    out[..first].fill(hr[first]);
    out[last + 1..].fill(hr[last]);
    for pair in good.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a < 2 {
            continue;
        }
        let span = (b - a) as f64;
        for i in a + 1..b {
            let t = (i - a) as f64 / span;
            out[i] = hr[a] + (hr[b] - hr[a]) * t;
        }
    }
    Ok(out)
}

/// Global heart-rate mean and standard deviation of the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: f64,
    pub std: f64,
}

impl StandardizationStats {
    /// Population mean and standard deviation over all samples of all
    /// (already repaired) signals.
    pub fn fit<'a>(signals: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let (mut n, mut sum) = (0usize, 0.0);
        let signals: Vec<&[f64]> = signals.into_iter().collect();
        for s in &signals {
            n += s.len();
            sum += s.iter().sum::<f64>();
        }
        if n == 0 {
            return Err(Error::Data("cannot fit standardization on an empty training split".into()));
        }
        let mean = sum / n as f64;
        let ss: f64 = signals.iter().flat_map(|s| s.iter()).map(|v| (v - mean) * (v - mean)).sum();
        let stats = Self {
            mean,
            std: (ss / n as f64).sqrt(),
        };
        stats.check()?;
        Ok(stats)
    }

    fn check(&self) -> Result<()> {
        if !(self.std > 0.0) || !self.std.is_finite() || !self.mean.is_finite() {
            return Err(Error::config(format!(
                "standardization needs a finite positive std, got mean {} std {}",
                self.mean, self.std
            )));
        }
        Ok(())
    }

    pub fn apply(&self, hr: &[f64]) -> Result<Vec<f64>> {
        self.check()?;
        Ok(hr.iter().map(|v| (v - self.mean) / self.std).collect())
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|v| v * self.std + self.mean).collect()
    }
}

/// Repaired and standardized record, ready for batching.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRecord {
    pub subject_id: String,
    pub signal: Vec<f64>,
    pub labels: Vec<Stage>,
}

impl PreparedRecord {
    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }
}

/// Repairs each record (after checking its invariants).
pub fn repair_all(records: &[SleepRecord]) -> Result<Vec<Vec<f64>>> {
    records
        .iter()
        .map(|r| {
            r.validate()?;
            repair_hr(&r.hr, &r.quality)
                .map_err(|e| Error::Data(format!("{}: {e}", r.subject_id)))
        })
        .collect()
}

/// Repairs and standardizes records with the given (training) statistics.
pub fn prepare(records: &[SleepRecord], stats: &StandardizationStats) -> Result<Vec<PreparedRecord>> {
    let repaired = repair_all(records)?;
    records
        .iter()
        .zip(repaired)
        .map(|(r, hr)| {
            Ok(PreparedRecord {
                subject_id: r.subject_id.clone(),
                signal: stats.apply(&hr)?,
                labels: r.labels.clone(),
            })
        })
        .collect()
}
