//! Synthetic occasion world: regime schedule, signals and impressions.

mod dataset;
mod generate;
mod record;
mod schedule;
mod world;

pub use dataset::{
    file_sha256, generate_world, read_dataset, write_dataset, AucCeiling, Ceilings, DatasetPaths, GenerationSummary, Manifest,
    SplitCounts, SplitSummary, MANIFEST_VERSION,
};
pub use generate::{
    generate_interactions, generate_signals, InteractionStream, World, CONTEXT_CARDINALITY, PROFILE_CARDINALITY,
};
pub use record::{Behavior, SampleRecord};
pub use schedule::{PhaseIntensity, PromotionConfig, RegimeKind, RegimeSchedule, Segment};
pub use world::{ClickConfig, SignalConfig, WorldConfig};

#[cfg(test)]
mod tests;
