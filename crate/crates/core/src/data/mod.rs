//! Everything upstream of the model: feature files, synthetic data, frame
//! sampling and fold splitting.

pub mod msif;
pub mod split;
pub mod synthetic;

pub use msif::{read_dataset, write_dataset, Dataset, DatasetHeader, FeatureRecord};
pub use split::{fold_members, frame_indices, kfold_split, sample_frames};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};
