//! PNG encoding of change maps: grayscale for scalar maps (16-bit by default
//! so threshold sweeps are not quantization-limited), 8-bit 0/255 for binary
//! masks, and paletted indexed PNG for routing labels.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::IoError;
use crate::maps::{BinaryImage, LabelImage, PixelLabel, ScalarImage};

/// Grayscale bit depth for scalar map encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapBitDepth {
    Eight,
    Sixteen,
}

/// Palette for label maps: unchanged black, structural red, surface blue.
const LABEL_PALETTE: [u8; 9] = [0, 0, 0, 220, 50, 40, 40, 90, 220];

fn start_png(
    path: &Path,
    width: usize,
    height: usize,
) -> Result<png::Encoder<'static, BufWriter<File>>, IoError> {
    let file = File::create(path)?;
    let encoder = png::Encoder::new(
        BufWriter::new(file),
        u32::try_from(width).map_err(|_| IoError::Format("image too wide".into()))?,
        u32::try_from(height).map_err(|_| IoError::Format("image too tall".into()))?,
    );
    Ok(encoder)
}

/// Write a scalar map in `[0, 1]` as grayscale PNG.
/// Quantization: `value = round(v * (2^bits - 1))`.
pub fn write_change_map(map: &ScalarImage, path: &Path, depth: MapBitDepth) -> Result<(), IoError> {
    let mut encoder = start_png(path, map.width, map.height)?;
    encoder.set_color(png::ColorType::Grayscale);
    match depth {
        MapBitDepth::Eight => {
            encoder.set_depth(png::BitDepth::Eight);
            let bytes: Vec<u8> = map
                .data
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            let mut writer = encoder.write_header()?;
            writer.write_image_data(&bytes)?;
            writer.finish()?;
        }
        MapBitDepth::Sixteen => {
            encoder.set_depth(png::BitDepth::Sixteen);
            let mut bytes = Vec::with_capacity(map.data.len() * 2);
            for &v in &map.data {
                let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
                bytes.extend_from_slice(&q.to_be_bytes());
            }
            let mut writer = encoder.write_header()?;
            writer.write_image_data(&bytes)?;
            writer.finish()?;
        }
    }
    Ok(())
}

/// Read a grayscale PNG written by [`write_change_map`] back to `[0, 1]`.
pub fn read_change_map(path: &Path) -> Result<ScalarImage, IoError> {
    let mut decoder = png::Decoder::new(std::io::BufReader::new(File::open(path)?));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(IoError::Format("expected grayscale PNG".into()));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(width * height);
    match info.bit_depth {
        png::BitDepth::Eight => {
            for &b in buf[..width * height].iter() {
                data.push(b as f64 / 255.0);
            }
        }
        png::BitDepth::Sixteen => {
            for chunk in buf[..width * height * 2].chunks_exact(2) {
                let q = u16::from_be_bytes([chunk[0], chunk[1]]);
                data.push(q as f64 / 65535.0);
            }
        }
        other => {
            return Err(IoError::Format(format!(
                "unsupported grayscale bit depth {other:?}"
            )))
        }
    }
    Ok(ScalarImage {
        width,
        height,
        data,
    })
}

/// Write a binary mask as 8-bit grayscale (0 or 255).
pub fn write_binary_map(map: &BinaryImage, path: &Path) -> Result<(), IoError> {
    let mut encoder = start_png(path, map.width, map.height)?;
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = map.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    let mut writer = encoder.write_header()?;
    writer.write_image_data(&bytes)?;
    writer.finish()?;
    Ok(())
}

/// Read a binary mask; any value above 127 counts as set.
pub fn read_binary_map(path: &Path) -> Result<BinaryImage, IoError> {
    let scalar = read_change_map(path)?;
    Ok(BinaryImage {
        width: scalar.width,
        height: scalar.height,
        data: scalar.data.iter().map(|&v| v > 0.5).collect(),
    })
}

/// Write routing labels as an indexed PNG with palette entries
/// 0 = unchanged, 1 = structural, 2 = surface.
pub fn write_label_map(labels: &LabelImage, path: &Path) -> Result<(), IoError> {
    let mut encoder = start_png(path, labels.width, labels.height)?;
    encoder.set_color(png::ColorType::Indexed);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_palette(LABEL_PALETTE.to_vec());
    let bytes: Vec<u8> = labels.data.iter().map(|l| l.index()).collect();
    let mut writer = encoder.write_header()?;
    writer.write_image_data(&bytes)?;
    writer.finish()?;
    Ok(())
}

/// Read an indexed label PNG written by [`write_label_map`].
pub fn read_label_map(path: &Path) -> Result<LabelImage, IoError> {
    let mut decoder = png::Decoder::new(std::io::BufReader::new(File::open(path)?));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    if info.color_type != png::ColorType::Indexed || info.bit_depth != png::BitDepth::Eight {
        return Err(IoError::Format("expected 8-bit indexed PNG".into()));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(width * height);
    for &b in buf[..width * height].iter() {
        data.push(PixelLabel::from_index(b).ok_or_else(|| {
            IoError::Format(format!("label index {b} out of range"))
        })?);
    }
    Ok(LabelImage {
        width,
        height,
        data,
    })
}
