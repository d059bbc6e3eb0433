//! Score networks: MLPs with exact reverse-mode gradients, a sinusoidal
//! time embedding, the weighted DSM objective and Adam.

mod adam;
mod dsm;
mod embed;
pub mod gradcheck;
mod mlp;
mod score;

pub use adam::{AdamConfig, AdamState};
pub use dsm::{dsm_loss, dsm_loss_batch, dsm_loss_value, DsmOutput};
pub use embed::TimeEmbedding;
pub use mlp::{Activation, Linear, Mlp};
pub use score::{Preconditioning, ScoreNet, ScoreNetConfig};
