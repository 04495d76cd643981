//! Feature-space losses and the descent loop that synthesizes images from
//! them.
//!
//! A layer's activation `[N, H, W]` is viewed as an `N × M` matrix with
//! `M = H·W`. The content loss compares these matrices entry by entry; the
//! style loss compares their Gram matrices `F·Fᵀ`, which forget where in the
//! image a feature fired and keep only which features fire together.

mod loss;
mod synth;

pub use loss::{
    content_loss_layer, gram, gram_distance, mmd_second_order, style_loss_layer, total_loss,
    GramMatrix, LayerMatrix, LossBreakdown, LossConfig, LossEvaluation, LossTargets,
};
pub use synth::{synthesize, write_loss_csv, Init, OptimizerParams, StopReason, SynthesisState};
