//! Raster <-> tensor conversion. Network images live in [-1, 1], NCHW, f32.

use ocular_core::Raster;
use tch::{Device, Kind, Tensor};

use crate::error::{NetError, Result};

/// `[C, H, W]` u8 tensor holding the raster's bytes.
pub fn raster_to_u8(img: &Raster) -> Tensor {
    let (w, h, c) = (img.width() as i64, img.height() as i64, img.channels() as i64);
    Tensor::from_slice(img.data()).view([h, w, c]).permute([2, 0, 1]).contiguous()
}

/// Stacks rasters of one shape into an `[N, C, H, W]` u8 tensor.
pub fn stack_u8(imgs: &[&Raster]) -> Result<Tensor> {
    let first = imgs
        .first()
        .ok_or_else(|| NetError::EmptyDataset("no images to stack".into()))?;
    if let Some(bad) = imgs.iter().find(|r| !r.same_shape(first)) {
        return Err(NetError::Shape(format!(
            "{} vs {}",
            bad.shape_string(),
            first.shape_string()
        )));
    }
    Ok(Tensor::stack(&imgs.iter().map(|r| raster_to_u8(r)).collect::<Vec<_>>(), 0))
}

/// u8 `[.., C, H, W]` to f32 in [-1, 1].
pub fn u8_to_unit(t: &Tensor) -> Tensor {
    t.to_kind(Kind::Float) / 127.5 - 1.0
}

pub fn raster_to_tensor(img: &Raster) -> Tensor {
    u8_to_unit(&raster_to_u8(img)).unsqueeze(0).to_device(Device::Cpu)
}

/// `[1, C, H, W]` or `[C, H, W]` in [-1, 1] back to an 8-bit raster.
pub fn tensor_to_raster(t: &Tensor) -> Result<Raster> {
    let t = if t.dim() == 4 { t.squeeze_dim(0) } else { t.shallow_clone() };
    let size = t.size();
    if size.len() != 3 {
        return Err(NetError::Shape(format!("expected CHW tensor, got {size:?}")));
    }
    let (c, h, w) = (size[0] as usize, size[1] as usize, size[2] as usize);
    let bytes = ((t.to_kind(Kind::Float) + 1.0) * 127.5)
        .round()
        .clamp(0.0, 255.0)
        .to_kind(Kind::Uint8)
        .permute([1, 2, 0])
        .contiguous();
    let data = Vec::<u8>::try_from(bytes.view([-1]))?;
    Ok(Raster::from_vec(w, h, c, data)?)
}
