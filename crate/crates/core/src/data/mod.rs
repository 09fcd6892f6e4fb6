//! PPM/PGM I/O, preprocessing, manifests and seeded batching.

mod dataset;
mod pnm;
mod transform;

pub use dataset::{
    batch_indices, batches, epoch_order, load_batch, load_sample, Batch, DataConfig, Dataset, Manifest,
    ManifestEntry, Sample, SampleSource, TRAIN_SIZE,
};
pub use pnm::{decode_pnm, encode_pnm, read_image, write_image, ImageBuffer};
pub use transform::{
    denormalize, mask_tensor, normalize, quantize, resize, saliency_to_image, Interpolation, IMAGENET_MEANS,
};
