pub mod corrrise;
pub mod embedder;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod maskgen;
pub mod saliency;
pub mod sanity;
pub mod seed;
pub mod toyset;
pub mod types;

pub use corrrise::{explain_pair, ExplainConfig, PairExplanation};
pub use embedder::{Embedder, EmbedderSpec, Registry};
pub use error::{Error, Result};
pub use maskgen::{apply_mask, generate_masks, MaskGenConfig, MaskSet, MaskType};
pub use types::{
    cosine_similarity, split_saliency, Embedding, Image, ImageDims, Mask, SaliencyMap, ScoreList,
};
