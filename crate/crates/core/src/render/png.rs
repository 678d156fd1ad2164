//! PNG encoding (8-bit RGBA, non-interlaced).

use super::RenderError;
use crate::volume::SliceImage;

pub fn encode_png(img: &SliceImage) -> Result<Vec<u8>, RenderError> {
    let rgba = img.to_rgba();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, rgba.width as u32, rgba.height as u32);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| RenderError::Png(e.to_string()))?;
        writer.write_image_data(&rgba.pixels).map_err(|e| RenderError::Png(e.to_string()))?;
    }
    Ok(out)
}

/// Decode an RGBA PNG back into `(width, height, pixels)`.
pub fn decode_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), RenderError> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| RenderError::Png(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| RenderError::Png("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| RenderError::Png(e.to_string()))?;
    if info.color_type != png::ColorType::Rgba || info.bit_depth != png::BitDepth::Eight {
        return Err(RenderError::Png(format!("expected 8-bit RGBA, found {:?}/{:?}", info.color_type, info.bit_depth)));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}
