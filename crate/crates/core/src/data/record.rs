use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples per scoring epoch (30 s at 1 Hz).
pub const EPOCH_SECONDS: usize = 30;

/// Oximeter connection flag for a good sample.
pub const QUALITY_GOOD: u8 = 0;
/// Oximeter connection flag for a defective sample.
pub const QUALITY_DEFECTIVE: u8 = 2;

/// Scoring class of one 30-s epoch. Wake is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    Sleep = 0,
    Wake = 1,
}

impl Stage {
    pub fn code(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> char {
        match self {
            Stage::Sleep => 'S',
            Stage::Wake => 'W',
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        match s {
            "S" => Some(Stage::Sleep),
            "W" => Some(Stage::Wake),
            _ => None,
        }
    }
}

/// One subject's night: 1 Hz heart rate, per-sample quality flags and one
/// stage label per whole epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct SleepRecord {
    pub subject_id: String,
    /// Beats per minute.
    pub hr: Vec<f64>,
    pub quality: Vec<u8>,
    pub labels: Vec<Stage>,
}

impl SleepRecord {
    pub fn len(&self) -> usize {
        self.hr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hr.is_empty()
    }

    pub fn epochs(&self) -> usize {
        self.labels.len()
    }

    /// Drops the tail samples that do not fill a whole epoch.
    pub fn truncate_to_epochs(&mut self) {
        let keep = self.hr.len() / EPOCH_SECONDS * EPOCH_SECONDS;
        self.hr.truncate(keep);
        self.quality.truncate(keep);
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.subject_id;
        if self.hr.len() != self.quality.len() {
            return Err(Error::Data(format!(
                "{id}: {} HR samples but {} quality flags",
                self.hr.len(),
                self.quality.len()
            )));
        }
        if !self.hr.len().is_multiple_of(EPOCH_SECONDS) {
            return Err(Error::Data(format!(
                "{id}: length {} is not a whole number of epochs",
                self.hr.len()
            )));
        }
        if self.labels.len() != self.hr.len() / EPOCH_SECONDS {
            return Err(Error::Data(format!(
                "{id}: {} labels for {} epochs",
                self.labels.len(),
                self.hr.len() / EPOCH_SECONDS
            )));
        }
        if let Some(q) = self.quality.iter().find(|&&q| q != QUALITY_GOOD && q != QUALITY_DEFECTIVE) {
            return Err(Error::Data(format!("{id}: quality flag {q} is not 0 or 2")));
        }
        Ok(())
    }
}
