//! Region/word feature datasets: records, on-disk format, synthetic data,
//! batching and word masking.

mod batch;
mod bbox;
mod format;
mod import;
mod records;
mod synth;

pub use batch::{mask_words, Batch, BatchIter};
pub use bbox::{iou, BoundingBox};
pub use format::{
    load_dataset, read_manifest, read_payload, write_dataset, write_payload, Payload, BOXES_FILE,
    EDGES_FILE, IMAGES_FILE, MANIFEST_FILE, PAYLOAD_MAGIC, SENTENCES_FILE,
};
pub use import::{best_region, export_dump, import_dump, import_to, resolve_relations};
pub use records::{
    Dataset, DatasetManifest, Dims, ImageRecord, SentenceEntry, SentenceRecord, MANIFEST_FORMAT,
    MANIFEST_VERSION,
};
pub use synth::{synth_generate, synth_write, SynthConfig, SynthData};

pub(crate) use batch::epoch_rng;
