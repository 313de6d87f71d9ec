//! The two-pathway mixture-of-transformers policy model.

pub mod checkpoint;
pub mod config;
pub mod embed;
pub mod forward;
pub mod mask;
pub mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::ModelConfig;
pub use embed::{flow_time_embedding, flow_time_features, ObservationContext};
pub use forward::{AttentionKind, MotForward, NORM_EPS};
pub use mask::{build_block_mask, route_pathway, route_pathway_with, BlockMaskSpec, Pathway};
pub use params::{MotParams, ParamSet};
