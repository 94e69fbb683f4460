//! Per-patient metrics, hypnogram export and attention heat maps.

pub mod export;
pub mod metrics;
pub mod predict;

pub use export::{export_hypnogram, extract_attention, load_hypnogram, read_attention_csv, write_attention_csv, AttentionMap};
pub use metrics::{argmax_stage, confusion, metrics, ConfusionCounts, Metrics, MetricsReport, PatientMetrics, ReportMeta};
pub use predict::{evaluate_dataset, evaluate_prepared, mean_accuracy, predict_prepared, predicted_stages};
