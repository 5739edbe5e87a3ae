//! Inference: `f(y, alpha1, alpha2; theta)`.

use contexp_tensor::{ops, Eager};

use crate::error::Result;
use crate::image::SrgbImage;
use crate::model::unet::{forward_graph, Model};
use crate::raw::{apply_brightness, PackedRaw, TuningKnobs};

/// Amplifies the packed raw by `alpha1`, runs the network with modulation
/// blended at `alpha2`, and clips the full-resolution result to `[0, 1]`.
pub fn enhance(model: &Model, packed: &PackedRaw, knobs: TuningKnobs) -> Result<SrgbImage> {
    let amplified = apply_brightness(packed, knobs.alpha1)?;
    let y = forward_graph(&mut Eager, model, amplified.tensor(), knobs.alpha2)?;
    SrgbImage::new(ops::clamp01(&y))
}
