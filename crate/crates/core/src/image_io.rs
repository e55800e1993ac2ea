//! Grayscale image container and PGM/PNG codecs.
//!
//! 12- and 14-bit images live in 16-bit containers. PGM carries the depth in
//! its maxval; PNG carries it in an `sBIT` chunk.

use std::fs;
use std::io::{self, Cursor};
use std::path::Path;

use crate::error::{Error, Result};
use crate::histogram::PixelHistogram;

/// Depths accepted by the codecs.
pub const SUPPORTED_BITS: [u32; 4] = [8, 12, 14, 16];

/// Largest pixel count accepted when decoding.
pub const MAX_PIXELS: usize = 1 << 28;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    bits: u32,
    pixels: Vec<u16>,
}

impl GrayImage {
    /// Row-major pixels; every value must fit in `bits`.
    pub fn new(width: usize, height: usize, bits: u32, pixels: Vec<u16>) -> Result<Self> {
        if !(1..=16).contains(&bits) {
            return Err(Error::input(format!("unsupported bit depth {bits}")));
        }
        if width.checked_mul(height) != Some(pixels.len()) {
            return Err(Error::input(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width.saturating_mul(height),
                pixels.len()
            )));
        }
        let max = max_value(bits);
        if let Some(p) = pixels.iter().find(|&&p| p > max) {
            return Err(Error::input(format!(
                "pixel {p} exceeds {max} for {bits}-bit image"
            )));
        }
        Ok(GrayImage {
            width,
            height,
            bits,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn max_value(&self) -> u16 {
        max_value(self.bits)
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u16> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.pixels[y * self.width + x]
    }

    pub fn histogram(&self) -> Result<PixelHistogram> {
        PixelHistogram::from_pixels(&self.pixels, self.bits)
    }

    /// Binary mask image with values 0 and 255.
    pub fn from_mask(width: usize, height: usize, mask: &[bool]) -> Result<Self> {
        let pixels = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
        GrayImage::new(width, height, 8, pixels)
    }

    /// Nonzero pixels as `true`.
    pub fn to_mask(&self) -> Vec<bool> {
        self.pixels.iter().map(|&p| p != 0).collect()
    }
}

fn max_value(bits: u32) -> u16 {
    ((1u32 << bits) - 1) as u16
}

fn bits_for_maxval(maxval: u32) -> Result<u32> {
    SUPPORTED_BITS
        .iter()
        .copied()
        .find(|&b| (1u32 << b) - 1 == maxval)
        .ok_or_else(|| Error::format(format!("unsupported maxval {maxval}")))
}

fn check_dims(width: usize, height: usize) -> Result<usize> {
    if width == 0 || height == 0 {
        return Err(Error::format("image has zero size"));
    }
    match width.checked_mul(height) {
        Some(n) if n <= MAX_PIXELS => Ok(n),
        _ => Err(Error::format(format!(
            "{width}x{height} image is too large"
        ))),
    }
}

fn truncated() -> Error {
    Error::Io(io::Error::new(
        io::ErrorKind::UnexpectedEof,
        "truncated image data",
    ))
}

/// Decodes a binary (P5) PGM.
pub fn decode_pgm(data: &[u8]) -> Result<GrayImage> {
    if data.len() < 2 || &data[..2] != b"P5" {
        return Err(Error::format("not a binary PGM (P5) file"));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        *field = header_number(data, &mut pos)?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    match data.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => return Err(Error::format("malformed PGM header")),
        None => return Err(truncated()),
    }
    let [width, height, maxval] = fields;
    let bits = bits_for_maxval(maxval)?;
    let count = check_dims(width as usize, height as usize)?;
    let raster = &data[pos..];
    let pixels: Vec<u16> = if bits == 8 {
        if raster.len() < count {
            return Err(truncated());
        }
        raster[..count].iter().map(|&b| b as u16).collect()
    } else {
        if raster.len() / 2 < count {
            return Err(truncated());
        }
        raster[..2 * count]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    if let Some(p) = pixels.iter().find(|&&p| p as u32 > maxval) {
        return Err(Error::format(format!("pixel {p} exceeds maxval {maxval}")));
    }
    GrayImage::new(width as usize, height as usize, bits, pixels)
}

fn header_number(data: &[u8], pos: &mut usize) -> Result<u32> {
    loop {
        match data.get(*pos) {
            None => return Err(truncated()),
            Some(b'#') => {
                while let Some(&b) = data.get(*pos) {
                    *pos += 1;
                    if b == b'\n' || b == b'\r' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
        }
    }
    let start = *pos;
    while data.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format("malformed PGM header"));
    }
    std::str::from_utf8(&data[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format("PGM header number out of range"))
}

pub fn encode_pgm(img: &GrayImage) -> Result<Vec<u8>> {
    let maxval = container_maxval(img.bits)?;
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, maxval).into_bytes();
    if maxval == 255 {
        out.extend(img.pixels.iter().map(|&p| p as u8));
    } else {
        for p in &img.pixels {
            out.extend_from_slice(&p.to_be_bytes());
        }
    }
    Ok(out)
}

fn container_maxval(bits: u32) -> Result<u32> {
    if SUPPORTED_BITS.contains(&bits) {
        Ok((1u32 << bits) - 1)
    } else {
        Err(Error::input(format!(
            "{bits}-bit images cannot be stored; supported depths are 8, 12, 14 and 16"
        )))
    }
}

fn png_error(e: png::DecodingError) -> Error {
    match e {
        png::DecodingError::IoError(io) => Error::Io(io),
        other => Error::format(other.to_string()),
    }
}

/// Decodes an 8- or 16-bit grayscale PNG. A 16-bit file with an `sBIT`
/// value of 12 or 14 is read at that depth.
pub fn decode_png(data: &[u8]) -> Result<GrayImage> {
    let mut decoder = png::Decoder::new_with_limits(
        Cursor::new(data),
        png::Limits {
            bytes: 2 * MAX_PIXELS,
        },
    );
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(png_error)?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::format(format!(
            "only grayscale PNG is supported, got {:?}",
            info.color_type
        )));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    check_dims(width, height)?;
    let bits = match info.bit_depth {
        png::BitDepth::Eight => 8,
        png::BitDepth::Sixteen => match info.sbit.as_deref() {
            Some(&[b]) if b == 12 || b == 14 => b as u32,
            _ => 16,
        },
        other => {
            return Err(Error::format(format!(
                "unsupported PNG bit depth {other:?}"
            )))
        }
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format("PNG image is too large"))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(png_error)?;
    let buf = &buf[..frame.buffer_size()];
    let pixels: Vec<u16> = if bits == 8 {
        buf.iter().map(|&b| b as u16).collect()
    } else {
        buf.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    let max = max_value(bits);
    if let Some(p) = pixels.iter().find(|&&p| p > max) {
        return Err(Error::format(format!("pixel {p} exceeds {bits}-bit range")));
    }
    GrayImage::new(width, height, bits, pixels)
}

pub fn encode_png(img: &GrayImage) -> Result<Vec<u8>> {
    container_maxval(img.bits)?;
    let width = u32::try_from(img.width).map_err(|_| Error::input("image too wide for PNG"))?;
    let height = u32::try_from(img.height).map_err(|_| Error::input("image too tall for PNG"))?;
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Grayscale);
        let data: Vec<u8> = if img.bits == 8 {
            enc.set_depth(png::BitDepth::Eight);
            img.pixels.iter().map(|&p| p as u8).collect()
        } else {
            enc.set_depth(png::BitDepth::Sixteen);
            img.pixels.iter().flat_map(|p| p.to_be_bytes()).collect()
        };
        let mut writer = enc.write_header().map_err(encode_error)?;
        if img.bits == 12 || img.bits == 14 {
            writer
                .write_chunk(png::chunk::sBIT, &[img.bits as u8])
                .map_err(encode_error)?;
        }
        writer.write_image_data(&data).map_err(encode_error)?;
        writer.finish().map_err(encode_error)?;
    }
    Ok(out)
}

fn encode_error(e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(io) => Error::Io(io),
        other => Error::input(other.to_string()),
    }
}

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Decodes PGM or PNG, chosen by the file signature.
pub fn decode_image(data: &[u8]) -> Result<GrayImage> {
    if data.starts_with(PNG_MAGIC) {
        decode_png(data)
    } else if data.starts_with(b"P5") {
        decode_pgm(data)
    } else {
        Err(Error::format(
            "unrecognized image format (expected P5 PGM or PNG)",
        ))
    }
}

fn with_path(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn read_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    decode_image(&fs::read(path).map_err(with_path(path))?)
}

/// Writes PNG when the extension is `.png`, PGM otherwise.
pub fn write_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png {
        encode_png(img)?
    } else {
        encode_pgm(img)?
    };
    fs::write(path, bytes).map_err(with_path(path))
}

/// Writes a binary mask as an 8-bit image with values 0 and 255.
pub fn write_mask(
    width: usize,
    height: usize,
    mask: &[bool],
    path: impl AsRef<Path>,
) -> Result<()> {
    write_image(&GrayImage::from_mask(width, height, mask)?, path)
}
