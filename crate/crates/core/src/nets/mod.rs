//! Architecture blocks assembled from the autodiff core: the feed-forward
//! predictor, the LSTM set encoder, and single-layer multi-head attention.

mod attention;
mod lstm;
mod mlp;

pub use attention::{AttentionSet, AttentionSpec};
pub use lstm::{Lstm, LstmSpec};
pub use mlp::{Mlp, MlpSpec};
