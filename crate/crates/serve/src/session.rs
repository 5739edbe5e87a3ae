use std::sync::Arc;

use axum::http::StatusCode;
use contexp_core::image::SrgbImage;
use contexp_core::model::unet::check_input_size;
use contexp_core::model::{enhance, Model};
use contexp_core::raw::{KnobBounds, PackedRaw, TuningKnobs};

use crate::error::ApiError;

/// One loaded (checkpoint, image) pair. The raw is packed once on creation;
/// the downscaled preview input is cached per scale factor.
pub struct Session {
    pub id: u64,
    pub checkpoint: String,
    pub image: String,
    pub model: Arc<Model>,
    pub packed: PackedRaw,
    pub preview_scale: f32,
    pub last_knobs: Option<TuningKnobs>,
    preview_input: Option<(usize, PackedRaw)>,
}

impl Session {
    pub fn new(
        id: u64,
        checkpoint: String,
        image: String,
        model: Arc<Model>,
        packed: PackedRaw,
        preview_scale: f32,
    ) -> Self {
        Self { id, checkpoint, image, model, packed, preview_scale, last_knobs: None, preview_input: None }
    }

    fn preview_input(&mut self, scale: f32) -> Result<&PackedRaw, ApiError> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("scale = {scale} outside (0, 1]")));
        }
        let factor = (1.0 / scale).round().max(1.0) as usize;
        if self.preview_input.as_ref().map(|(f, _)| *f) != Some(factor) {
            let m = self.model.config.multiple();
            let (w, h) = self.packed.size();
            let too_small = || {
                ApiError::new(
                    StatusCode::BAD_REQUEST,
                    format!("scale = {scale} leaves less than {m} packed pixels of a {w}x{h} image"),
                )
            };
            let small = self.packed.downscale(factor).map_err(|_| too_small())?;
            let (sw, sh) = small.size();
            let (cw, ch) = (sw / m * m, sh / m * m);
            if cw == 0 || ch == 0 {
                return Err(too_small());
            }
            let cropped = small.center_crop(cw, ch).map_err(|e| ApiError::internal(e.to_string()))?;
            self.preview_input = Some((factor, cropped));
        }
        Ok(&self.preview_input.as_ref().expect("just filled").1)
    }

    pub fn render_preview(&mut self, knobs: TuningKnobs, scale: f32, bounds: KnobBounds) -> Result<Vec<u8>, ApiError> {
        let model = Arc::clone(&self.model);
        let input = self.preview_input(scale)?;
        let image = enhance(&model, input, knobs).map_err(|e| ApiError::from_core(e, bounds))?;
        self.last_knobs = Some(knobs);
        encode(&image)
    }

    pub fn render_export(&mut self, knobs: TuningKnobs, bounds: KnobBounds) -> Result<Vec<u8>, ApiError> {
        let image = enhance(&self.model, &self.packed, knobs).map_err(|e| ApiError::from_core(e, bounds))?;
        self.last_knobs = Some(knobs);
        encode(&image)
    }
}

/// Rejects an image whose packed size the network cannot process.
pub fn check_compatible(model: &Model, packed: &PackedRaw, bounds: KnobBounds) -> Result<(), ApiError> {
    let (w, h) = packed.size();
    check_input_size(&model.config, w, h).map_err(|e| ApiError::from_core(e, bounds))
}

fn encode(image: &SrgbImage) -> Result<Vec<u8>, ApiError> {
    image.to_png().map_err(|e| ApiError::internal(e.to_string()))
}
