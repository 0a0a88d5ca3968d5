use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};

use super::{ColorSpace, ImagePlane};
use crate::error::{Error, Result};

fn decode_err(path: &Path, e: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Read an 8-bit PNG or binary PPM/PGM. Grayscale files load as
/// [`ColorSpace::Y`]; alpha channels are dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImagePlane> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| decode_err(path, e))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (color, interleaved): (ColorSpace, Vec<u8>) = match decoded {
        DynamicImage::ImageLuma8(buf) => (ColorSpace::Y, buf.into_raw()),
        DynamicImage::ImageLumaA8(_) => (ColorSpace::Y, decoded.to_luma8().into_raw()),
        DynamicImage::ImageRgb8(buf) => (ColorSpace::Rgb, buf.into_raw()),
        DynamicImage::ImageRgba8(_) => (ColorSpace::Rgb, decoded.to_rgb8().into_raw()),
        other => {
            let color = other.color();
            let depth = u32::from(color.bits_per_pixel()) / u32::from(color.channel_count());
            return Err(Error::UnsupportedDepth {
                path: path.to_path_buf(),
                depth,
            });
        }
    };
    let ch = color.channels();
    let plane = h * w;
    let mut data = vec![0.0; plane * ch];
    for (i, px) in interleaved.chunks_exact(ch).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * plane + i] = f64::from(v) / 255.0;
        }
    }
    ImagePlane::from_planar(h, w, color, data)
}

/// Nearest 8-bit code of a clamped `[0, 1]` value.
pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write an image as 8-bit PNG (`.png`) or binary PNM (`.ppm`, `.pgm`,
/// `.pnm`; the subtype follows the channel count). Values are clamped.
pub fn save_image(img: &ImagePlane, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ch = img.channels();
    let plane = img.height() * img.width();
    let mut interleaved = vec![0u8; plane * ch];
    for c in 0..ch {
        for (i, &v) in img.plane(c).iter().enumerate() {
            interleaved[i * ch + c] = quantize(v);
        }
    }
    let (w, h) = (img.width() as u32, img.height() as u32);
    let color = match img.color() {
        ColorSpace::Rgb => ExtendedColorType::Rgb8,
        ColorSpace::Y => ExtendedColorType::L8,
    };
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let out = BufWriter::new(file);
    match ext.as_str() {
        "png" => PngEncoder::new(out)
            .write_image(&interleaved, w, h, color)
            .map_err(|e| decode_err(path, e)),
        "ppm" | "pgm" | "pnm" => {
            let subtype = match img.color() {
                ColorSpace::Rgb => PnmSubtype::Pixmap(SampleEncoding::Binary),
                ColorSpace::Y => PnmSubtype::Graymap(SampleEncoding::Binary),
            };
            PnmEncoder::new(out)
                .with_subtype(subtype)
                .write_image(&interleaved, w, h, color)
                .map_err(|e| decode_err(path, e))
        }
        other => Err(decode_err(
            path,
            format!("unsupported output extension {other:?} (use png, ppm or pgm)"),
        )),
    }
}
