//! Synthetic stem generation and contrastive batch construction.

mod batch;
mod library;
mod schedule;
mod synth;

#[cfg(test)]
mod tests;

pub use batch::{
    build_batch, make_hard_negative, make_pair, xcorr_peak, BatchConfig, HardNegative,
    InstrumentSlot, MixturePair, TrainBatch,
};
pub use library::{DatasetManifest, LibraryConfig, ManifestEntry, SourceLibrary};
pub use schedule::{fx_probability_schedule, FxProbabilities, FxScheduleConfig};
pub use synth::{spectral_centroid, synth_source, DEFAULT_CLASSES};
