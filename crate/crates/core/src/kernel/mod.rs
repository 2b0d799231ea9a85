//! Double-precision reference of the prompt/image fusion block: view
//! concatenation, spatial-aware prompt encoding, self/cross attention with a
//! feed-forward stage, vision-to-language projection and language-model input
//! assembly, with analytic gradients verified by finite differences.

pub mod check;
pub mod fusion;
pub mod layers;
pub mod tensor;

pub use check::{gradcheck, kernel_check, GradCheck, KernelCheckOptions, KernelReport};
pub use fusion::{
    assemble_llm_input, concat_views, embed_tokens, fuse_backward, fuse_forward, fuse_loss, hybrid_fuse,
    project_vl, sae_encode, tokenize_stub, FusionGrads, FusionInputs, FusionParams, HybridParams, KernelConfig,
    LossPoint, SaeParams,
};
pub use layers::{cross_attention, feed_forward, self_attention, AttentionParams, FeedForward, Linear};
pub use tensor::Tensor2D;
