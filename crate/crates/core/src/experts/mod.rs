//! Feature hashing, embeddings and the attention-based expert networks.

mod embed;
mod expert;
mod schema;

pub use embed::{embed, EmbeddedBatch, EmbeddingTables, EMBEDDING_INIT};
pub use expert::{
    expert_forward, pooled_attention, seq_self_attention, ExpertConfig, ExpertOutput, ExpertParams, Projections,
};
pub use schema::{FeatureSchema, FeatureSpec, ID_BUCKETS, ID_WIDTH, SMALL_BUCKETS, SMALL_WIDTH};
