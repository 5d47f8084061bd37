//! Metadata ingestion, label tables, splitting, image loading and the
//! augmentation/normalization pipeline.

mod augment;
mod batch;
mod image_io;
mod labels;

pub use augment::{augment, AugmentConfig};
pub use batch::{batch_stream, normalize_batch, Batch, BatchIter, ChannelStats, Dataset, STD_GUARD};
pub use image_io::{decode_image, image_to_tensor, load_image, load_image_bytes, resize_bilinear, sample_reflect};
pub use labels::{
    build_label_table, cooccurrence_matrix, filter_diseased, one_hot_decode, one_hot_encode, parse_metadata,
    parse_metadata_from,    read_label_csv, split_train_valid, write_label_csv, LabelRow, LabelTable, MetadataRecord, Vocabulary,
    NO_FINDING,
};

use thiserror::Error;

/// The 14 findings in their fixed column order.
pub const CHEST_LABELS: [&str; 14] = [
    "Atelectasis",
    "Cardiomegaly",
    "Effusion",
    "Infiltration",
    "Mass",
    "Nodule",
    "Pneumonia",
    "Pneumothorax",
    "Consolidation",
    "Edema",
    "Emphysema",
    "Fibrosis",
    "Pleural Thickening",
    "Hernia",
];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("metadata is missing required column {0:?}")]
    MissingColumn(String),
    #[error("line {line}: {msg}")]
    Row { line: u64, msg: String },
    #[error("label {0:?} is not in the vocabulary")]
    UnknownLabel(String),
    #[error("empty label list")]
    EmptyLabels,
    #[error("{0}")]
    Parameter(String),
    #[error("image {path}: {msg}")]
    Image { path: String, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;
