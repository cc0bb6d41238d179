//! Model assembly, training, evaluation and cross-validation.

pub mod audit;
pub mod checkpoint;
pub mod config;
pub mod crossval;
pub mod metrics;
pub mod model;
pub mod train;

pub use audit::{run_audits, AuditConfig, AuditReport, BlockCheck, Fault};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use config::{AdamConfig, Modalities, ModelConfig};
pub use crossval::{cross_validate, CrossValReport, FoldReport};
pub use metrics::{evaluate, mean_report, ClassMetrics, EvalReport};
pub use model::{combined_loss, prepare_samples, BlockInfo, LossBreakdown, Model, Sample, SampleForward};
pub use train::{fit, Adam, EpochReport, ModelState};
