//! Confusion counts and agreement metrics with Wake as the positive class.

use serde::{Deserialize, Serialize};

use crate::data::Stage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fn_ += other.fn_;
        self.fp += other.fp;
        self.tn += other.tn;
    }

    pub fn record(&mut self, pred: Stage, truth: Stage) {
        match (pred, truth) {
            (Stage::Wake, Stage::Wake) => self.tp += 1,
            (Stage::Sleep, Stage::Wake) => self.fn_ += 1,
            (Stage::Wake, Stage::Sleep) => self.fp += 1,
            (Stage::Sleep, Stage::Sleep) => self.tn += 1,
        }
    }
}

/// Argmax over (Sleep, Wake) probabilities; a tie goes to Sleep.
pub fn argmax_stage(p_sleep: f64, p_wake: f64) -> Stage {
    if p_wake > p_sleep {
        Stage::Wake
    } else {
        Stage::Sleep
    }
}

/// Counts over the epochs where `mask` (if given) is set.
pub fn confusion(pred: &[Stage], truth: &[Stage], mask: Option<&[bool]>) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() || mask.is_some_and(|m| m.len() != pred.len()) {
        return Err(Error::dim(format!(
            "{} predictions, {} labels, {} mask entries",
            pred.len(),
            truth.len(),
            mask.map_or(pred.len(), <[bool]>::len)
        )));
    }
    let mut c = ConfusionCounts::default();
    for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        if mask.is_none_or(|m| m[i]) {
            c.record(p, t);
        }
    }
    Ok(c)
}

/// Per-patient metrics; `None` marks a 0/0 ratio.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: Option<f64>,
    pub se: Option<f64>,
    pub sp: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub kappa: Option<f64>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

pub fn metrics(c: &ConfusionCounts) -> Result<Metrics> {
    let n = c.total() as f64;
    if n == 0.0 {
        return Err(Error::contract("metrics of zero scored epochs"));
    }
    let (tp, fn_, fp, tn) = (c.tp as f64, c.fn_ as f64, c.fp as f64, c.tn as f64);
    let acc = (tp + tn) / n;
    let p_e = ((tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn)) / (n * n);
    Ok(Metrics {
        acc: Some(acc),
        se: ratio(tp, tp + fn_),
        sp: ratio(tn, tn + fp),
        ppv: ratio(tp, tp + fp),
        npv: ratio(tn, tn + fn_),
        kappa: ratio(acc - p_e, 1.0 - p_e),
    })
}

impl Metrics {
    fn fields(&self) -> [Option<f64>; 6] {
        [self.acc, self.se, self.sp, self.ppv, self.npv, self.kappa]
    }

    fn from_fields(f: [Option<f64>; 6]) -> Self {
        Self {
            acc: f[0],
            se: f[1],
            sp: f[2],
            ppv: f[3],
            npv: f[4],
            kappa: f[5],
        }
    }

    /// Mean of each metric over the rows where it is defined.
    pub fn average<'a>(rows: impl IntoIterator<Item = &'a Metrics>) -> Metrics {
        let mut sum = [0.0; 6];
        let mut count = [0usize; 6];
        for m in rows {
            for (k, v) in m.fields().into_iter().enumerate() {
                if let Some(v) = v {
                    sum[k] += v;
                    count[k] += 1;
                }
            }
        }
        let mut out = [None; 6];
        for k in 0..6 {
            if count[k] > 0 {
                out[k] = Some(sum[k] / count[k] as f64);
            }
        }
        Metrics::from_fields(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientMetrics {
    pub subject_id: String,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

/// Where a report came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub split: String,
    /// Training epoch of the evaluated checkpoint.
    pub epoch: usize,
    pub seed: u64,
}

/// Per-patient rows, their unweighted average, and pooled counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<ReportMeta>,
    pub patients: Vec<PatientMetrics>,
    pub average: Metrics,
    pub pooled_counts: ConfusionCounts,
    pub pooled: Metrics,
}

impl MetricsReport {
    pub fn from_counts(rows: Vec<(String, ConfusionCounts)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::contract("metrics report over zero patients"));
        }
        let mut pooled_counts = ConfusionCounts::default();
        let patients = rows
            .into_iter()
            .map(|(subject_id, counts)| {
                pooled_counts.add(&counts);
                Ok(PatientMetrics {
                    metrics: metrics(&counts).map_err(|e| Error::contract(format!("{subject_id}: {e}")))?,
                    subject_id,
                    counts,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            meta: None,
            average: Metrics::average(patients.iter().map(|p| &p.metrics)),
            pooled: metrics(&pooled_counts)?,
            pooled_counts,
            patients,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            context: "serializing metrics report".into(),
            source,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Json {
            context: "parsing metrics report".into(),
            source,
        })
    }
}
