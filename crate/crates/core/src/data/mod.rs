//! Record ingestion, repair, standardization, batching and synthetic data.

pub mod batch;
pub mod io;
pub mod manifest;
pub mod preprocess;
pub mod record;
pub mod synth;

pub use batch::{batch_order, grouping_padding, make_batches, plan_batches, Batch, DEFAULT_BATCH_SIZE};
pub use io::{load_labels, load_record, load_signal, save_labels, save_record, save_signal};
pub use manifest::{load_split, manifest_path, split_counts, write_dataset, Manifest, ManifestEntry, Split};
pub use preprocess::{prepare, repair_all, repair_hr, PreparedRecord, StandardizationStats};
pub use record::{SleepRecord, Stage, EPOCH_SECONDS, QUALITY_DEFECTIVE, QUALITY_GOOD};
pub use synth::{stage_totals, synthesize_dataset, synthesize_record, GenConfig, REFERENCE_WAKE_SLEEP_RATIO};
