//! Multimodal pipeline: encoding, conversation graphs, spectral diffusion
//! recovery of missing modalities, GCN fusion and prediction.

mod data;
mod encoder;
mod gcn;
pub mod graph;
mod gsdnet;
mod head;

pub use data::{EncodedModalities, MissingPattern, Modality, MultimodalSample};
pub use encoder::{encode, positional_encoding, ModalityEncoder};
pub use gcn::{gcn_forward, normalize_adjacency, Gcn, GcnOutput};
pub use graph::{build_graph, ConversationGraph};
pub use gsdnet::{
    random_training_pattern, Block, Gradients, GsdnetModel, ModelConfig, Recovery, StepLosses, StepOverrides,
    MODEL_FORMAT_VERSION,
};
pub use head::{bucket7, is_positive, squared_error, Prediction, PredictionHead, LABEL_RANGE, NUM_BUCKETS};
