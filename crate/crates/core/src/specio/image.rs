use std::fs;
use std::io::{BufWriter, Cursor};
use std::path::Path;

use super::SpecioError;

/// Row-major grayscale intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGray {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageGray {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self, SpecioError> {
        if height == 0 || width == 0 {
            return Err(SpecioError::Dimensions { height, width });
        }
        if data.len() != height * width {
            return Err(SpecioError::Data(format!(
                "expected {} intensities for {height}x{width}, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(SpecioError::Data(format!("intensity {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image from arbitrary finite values, clamping them into `[0, 1]`.
    pub fn from_clamped(height: usize, width: usize, data: Vec<f64>) -> Result<Self, SpecioError> {
        let data = data
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self, SpecioError> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// Loads a grayscale PNG (8 or 16 bit) or binary PGM (`P5`) raster.
///
/// Codes are divided by the maximum code value so the result lies in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageGray, SpecioError> {
    let path = path.as_ref();
    let raw = read_raster(path)?;
    let max = raw.max_code as f64;
    let data = raw.codes.iter().map(|&c| (c as f64 / max).min(1.0)).collect();
    ImageGray::new(raw.height, raw.width, data).map_err(|e| SpecioError::format(path, e.to_string()))
}

/// Integer codes of a decoded raster together with the full-scale code.
pub(super) struct RawRaster {
    pub height: usize,
    pub width: usize,
    pub codes: Vec<u16>,
    pub max_code: u16,
}

pub(super) fn read_raster(path: &Path) -> Result<RawRaster, SpecioError> {
    let bytes = fs::read(path).map_err(|e| SpecioError::io(path, e))?;
    let raw = if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(path, &bytes)?
    } else if bytes.starts_with(b"P5") {
        decode_pgm(path, &bytes)?
    } else {
        return Err(SpecioError::format(path, "unrecognised header (expected PNG or binary PGM)"));
    };
    if raw.height == 0 || raw.width == 0 {
        return Err(SpecioError::format(path, "empty raster"));
    }
    Ok(raw)
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<RawRaster, SpecioError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| SpecioError::format(path, format!("corrupt PNG header: {e}")))?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    match color {
        png::ColorType::Grayscale => {}
        png::ColorType::Indexed => return Err(SpecioError::format(path, "paletted PNG not supported")),
        other => {
            return Err(SpecioError::format(
                path,
                format!("color PNG not supported ({other:?})"),
            ))
        }
    }
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| SpecioError::format(path, format!("corrupt PNG data: {e}")))?;
    let (width, height) = (frame.width as usize, frame.height as usize);
    let (codes, max_code): (Vec<u16>, u16) = match depth {
        png::BitDepth::Eight => (
            rows(&buf, frame.line_size, width, 1).map(|b| b[0] as u16).collect(),
            255,
        ),
        png::BitDepth::Sixteen => (
            rows(&buf, frame.line_size, width, 2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]))
                .collect(),
            65535,
        ),
        other => {
            return Err(SpecioError::format(
                path,
                format!("unsupported bit depth {other:?} (expected 8 or 16)"),
            ))
        }
    };
    Ok(RawRaster {
        height,
        width,
        codes,
        max_code,
    })
}

fn rows<'a>(
    buf: &'a [u8],
    line_size: usize,
    width: usize,
    bytes_per_px: usize,
) -> impl Iterator<Item = &'a [u8]> + 'a {
    buf.chunks(line_size)
        .flat_map(move |line| line[..width * bytes_per_px].chunks_exact(bytes_per_px))
}

fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<RawRaster, SpecioError> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments between header tokens
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| SpecioError::format(path, "corrupt PGM header"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(SpecioError::format(path, "corrupt PGM header"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(SpecioError::format(path, format!("invalid PGM maxval {maxval}")));
    }
    let bpp = if maxval < 256 { 1 } else { 2 };
    let body = &bytes[pos..];
    let need = width * height * bpp;
    if body.len() < need {
        return Err(SpecioError::format(
            path,
            format!("truncated PGM data ({} of {need} bytes)", body.len()),
        ));
    }
    let codes = body[..need]
        .chunks_exact(bpp)
        .map(|b| if bpp == 1 { b[0] as u16 } else { u16::from_be_bytes([b[0], b[1]]) })
        .collect();
    Ok(RawRaster {
        height,
        width,
        codes,
        max_code: maxval as u16,
    })
}

/// Writes a 16-bit grayscale PNG, quantising intensities to `round(v * 65535)`.
pub fn save_image_png16(image: &ImageGray, path: impl AsRef<Path>) -> Result<(), SpecioError> {
    let path = path.as_ref();
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .flat_map(|v| ((v * 65535.0).round() as u16).to_be_bytes())
        .collect();
    write_png(path, image.width(), image.height(), png::BitDepth::Sixteen, &bytes)
}

pub(super) fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    depth: png::BitDepth,
    bytes: &[u8],
) -> Result<(), SpecioError> {
    let file = fs::File::create(path).map_err(|e| SpecioError::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(depth);
    let to_err = |e: png::EncodingError| SpecioError::format(path, format!("PNG encode failed: {e}"));
    let mut writer = encoder.write_header().map_err(to_err)?;
    writer.write_image_data(bytes).map_err(to_err)?;
    writer.finish().map_err(to_err)
}
