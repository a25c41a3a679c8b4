//! Weighted `AND` prompts, interpolation sweeps and mask-blended inpainting.

mod inpaint;
mod prompt;

pub use inpaint::{inpaint, InpaintMask, MASK_THRESHOLD};
pub use prompt::{
    interpolation_sweep, parse_prompt, ComposedPrompt, EmbeddingRegistry, PromptTerm, MULTI_CONCEPT_CFG,
    MULTI_CONCEPT_TERMS,
};
