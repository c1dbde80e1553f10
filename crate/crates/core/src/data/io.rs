//! Image, label and field files.
//!
//! Images are normalized to `[0, 1]` on ingestion by the file's declared bit
//! depth (not its sample range) and quantized to 16 bits on output.
//!
//! - PNG: 1/2/4/8/16-bit grayscale
//! - PGM: binary `P5`, any maxval up to 65535
//! - raw: little-endian `f32` samples with a text sidecar `<file>.hdr`
//!   holding `width`, `height` and optionally the declared `min` / `max`
//!
//! Fields use the `DFLD` layout: magic, `u16` version 1, `u32` width, `u32`
//! height (all little-endian), then `H·W` pairs of `f32` `(u_x, u_y)` in
//! row-major order.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::warp::{DisplacementField, Image, LabelMap};

const PNG_SIGNATURE: &[u8; 8] = b"\x89PNG\r\n\x1a\n";
pub const DFLD_MAGIC: &[u8; 4] = b"DFLD";
pub const DFLD_VERSION: u16 = 1;
pub const DFLD_HEADER_LEN: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Pgm,
    RawF32,
}

impl ImageFormat {
    /// Guess from the extension: `png`, `pgm`, or `raw` / `f32`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("png") => Ok(ImageFormat::Png),
            Some("pgm") => Ok(ImageFormat::Pgm),
            Some("raw") | Some("f32") => Ok(ImageFormat::RawF32),
            _ => Err(Error::format(
                path,
                0,
                "unknown image extension, expected png, pgm, raw or f32",
            )),
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read any supported image, detecting PNG and PGM by their magic bytes.
pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(PNG_SIGNATURE) {
        let (w, h, depth, samples) = decode_png_gray(path, &bytes)?;
        let scale = ((1u32 << depth) - 1) as f64;
        return Image::new(h, w, samples.into_iter().map(|v| v as f64 / scale).collect());
    }
    if bytes.starts_with(b"P5") {
        let (w, h, maxval, samples) = decode_pgm(path, &bytes)?;
        return Image::new(
            h,
            w,
            samples.into_iter().map(|v| v as f64 / maxval as f64).collect(),
        );
    }
    match ImageFormat::from_path(path) {
        Ok(ImageFormat::RawF32) => read_raw(path, &bytes),
        _ => Err(Error::format(path, 0, "not a PNG or binary PGM file")),
    }
}

/// Write by extension. Values are clamped to `[0, 1]` and quantized to 16
/// bits for PNG and PGM.
pub fn write_image(image: &Image, path: &Path) -> Result<()> {
    let quantized = || -> Vec<u16> {
        image
            .values()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect()
    };
    let (h, w) = image.dims();
    match ImageFormat::from_path(path)? {
        ImageFormat::Png => write_png_gray16(path, w, h, &quantized()),
        ImageFormat::Pgm => {
            let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
            for v in quantized() {
                out.extend_from_slice(&v.to_be_bytes());
            }
            write_bytes(path, &out)
        }
        ImageFormat::RawF32 => write_raw(image, path),
    }
}

/// Label maps are 16-bit grayscale PNGs holding the label values directly.
pub fn write_labels(labels: &LabelMap, path: &Path) -> Result<()> {
    let (h, w) = labels.dims();
    write_png_gray16(path, w, h, labels.labels())
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    let bytes = read_bytes(path)?;
    if !bytes.starts_with(PNG_SIGNATURE) {
        return Err(Error::format(path, 0, "label maps must be grayscale PNG"));
    }
    let (w, h, _, samples) = decode_png_gray(path, &bytes)?;
    LabelMap::new(h, w, samples)
}

/// 8-bit RGB PNG, `rgb.len() == 3·W·H`.
pub fn write_rgb_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != 3 * width * height {
        return Err(Error::shape(
            "write_rgb_png",
            format!("{} bytes for {width}×{height}", rgb.len()),
        ));
    }
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| png_error(path, e))?;
        writer.write_image_data(rgb).map_err(|e| png_error(path, e))?;
    }
    write_bytes(path, &buf)
}

fn png_error(path: &Path, e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other}", path.display())),
    }
}

fn write_png_gray16(path: &Path, width: usize, height: usize, values: &[u16]) -> Result<()> {
    let mut data = Vec::with_capacity(2 * values.len());
    for v in values {
        data.extend_from_slice(&v.to_be_bytes());
    }
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header().map_err(|e| png_error(path, e))?;
        writer.write_image_data(&data).map_err(|e| png_error(path, e))?;
    }
    write_bytes(path, &buf)
}

/// Decode a grayscale PNG into `(width, height, bit depth, samples)`.
/// Sub-byte depths are unpacked but keep their declared range.
fn decode_png_gray(path: &Path, bytes: &[u8]) -> Result<(usize, usize, u32, Vec<u16>)> {
    let mut cursor = Cursor::new(bytes);
    let fail = |cursor: &Cursor<&[u8]>, e: png::DecodingError| {
        Error::format(path, cursor.position(), format!("PNG decode failed: {e}"))
    };
    let mut reader = match png::Decoder::new(&mut cursor).read_info() {
        Ok(r) => r,
        Err(e) => return Err(fail(&cursor, e)),
    };
    let info = reader.info();
    let (w, h) = (info.width as usize, info.height as usize);
    if info.color_type != png::ColorType::Grayscale {
        // Offset 25: the colour-type byte of IHDR.
        return Err(Error::format(
            path,
            25,
            format!(
                "unsupported colour type {:?}, expected grayscale",
                info.color_type
            ),
        ));
    }
    let depth = info.bit_depth as u32;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, 16, "image too large"))?;
    let mut buf = vec![0; size];
    let frame = match reader.next_frame(&mut buf) {
        Ok(f) => f,
        Err(e) => {
            drop(reader);
            return Err(fail(&cursor, e));
        }
    };
    let line = frame.line_size;
    let mut samples = Vec::with_capacity(w * h);
    for row in buf[..frame.buffer_size()].chunks(line) {
        match depth {
            16 => samples.extend(
                row.chunks_exact(2)
                    .take(w)
                    .map(|c| u16::from_be_bytes([c[0], c[1]])),
            ),
            8 => samples.extend(row.iter().take(w).map(|&b| b as u16)),
            d => {
                let per_byte = 8 / d as usize;
                let mask = (1u16 << d) - 1;
                samples.extend((0..w).map(|x| {
                    let byte = row[x / per_byte] as u16;
                    let shift = 8 - d as usize * (x % per_byte + 1);
                    (byte >> shift) & mask
                }));
            }
        }
    }
    Ok((w, h, depth, samples))
}

/// Decode binary PGM into `(width, height, maxval, samples)`.
fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<(usize, usize, u32, Vec<u16>)> {
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        // Whitespace and `#` comments separate header tokens.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *field = text
            .parse()
            .map_err(|_| Error::format(path, start as u64, "expected a decimal header field"))?;
    }
    let [w, h, maxval] = fields;
    if !(1..=65535).contains(&maxval) {
        return Err(Error::format(
            path,
            pos as u64,
            format!("maxval {maxval} out of range"),
        ));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(path, pos as u64, "missing whitespace after header"));
    }
    pos += 1;
    let (w, h) = (w as usize, h as usize);
    let width = if maxval < 256 { 1 } else { 2 };
    let need = w * h * width;
    if bytes.len() - pos < need {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("truncated: {} sample bytes, expected {need}", bytes.len() - pos),
        ));
    }
    let body = &bytes[pos..pos + need];
    let samples: Vec<u16> = if width == 1 {
        body.iter().map(|&b| b as u16).collect()
    } else {
        body.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    if let Some(i) = samples.iter().position(|&v| v as u32 > maxval) {
        return Err(Error::format(
            path,
            (pos + i * width) as u64,
            "sample exceeds maxval",
        ));
    }
    Ok((w, h, maxval, samples))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

fn read_raw(path: &Path, bytes: &[u8]) -> Result<Image> {
    let hdr_path = sidecar_path(path);
    let text = std::fs::read_to_string(&hdr_path).map_err(|e| Error::io(&hdr_path, e))?;
    let (mut width, mut height, mut lo, mut hi) = (None, None, 0.0, 1.0);
    let mut offset = 0;
    for line in text.lines() {
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next()) {
            (None, _) => {}
            (Some(key), Some(value)) => {
                let bad = || Error::format(&hdr_path, offset as u64, format!("bad value for {key}"));
                match key {
                    "width" => width = Some(value.parse::<usize>().map_err(|_| bad())?),
                    "height" => height = Some(value.parse::<usize>().map_err(|_| bad())?),
                    "min" => lo = value.parse::<f64>().map_err(|_| bad())?,
                    "max" => hi = value.parse::<f64>().map_err(|_| bad())?,
                    _ => {}
                }
            }
            (Some(key), None) => {
                return Err(Error::format(
                    &hdr_path,
                    offset as u64,
                    format!("{key} has no value"),
                ))
            }
        }
        offset += line.len() + 1;
    }
    let (w, h) = match (width, height) {
        (Some(w), Some(h)) => (w, h),
        _ => return Err(Error::format(&hdr_path, 0, "header needs width and height")),
    };
    if !(hi > lo) {
        return Err(Error::format(&hdr_path, 0, "declared max must exceed min"));
    }
    if bytes.len() != 4 * w * h {
        return Err(Error::format(
            path,
            bytes.len().min(4 * w * h) as u64,
            format!("expected {} bytes for {w}×{h}, found {}", 4 * w * h, bytes.len()),
        ));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| (f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64 - lo) / (hi - lo))
        .collect();
    Image::new(h, w, values)
}

fn write_raw(image: &Image, path: &Path) -> Result<()> {
    let (h, w) = image.dims();
    let mut out = Vec::with_capacity(4 * w * h);
    for &v in image.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_bytes(path, &out)?;
    let hdr = format!("width {w}\nheight {h}\nmin 0\nmax 1\n");
    write_bytes(&sidecar_path(path), hdr.as_bytes())
}

/// Encode a field in `DFLD` layout.
pub fn encode_field(u: &DisplacementField) -> Vec<u8> {
    let (h, w) = u.dims();
    let mut out = Vec::with_capacity(DFLD_HEADER_LEN + 8 * h * w);
    out.extend_from_slice(DFLD_MAGIC);
    out.extend_from_slice(&DFLD_VERSION.to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    for (&ux, &uy) in u.ux().iter().zip(u.uy()) {
        out.extend_from_slice(&(ux as f32).to_le_bytes());
        out.extend_from_slice(&(uy as f32).to_le_bytes());
    }
    out
}

pub fn decode_field(path: &Path, bytes: &[u8]) -> Result<DisplacementField> {
    if bytes.len() < DFLD_HEADER_LEN {
        return Err(Error::format(path, bytes.len() as u64, "truncated header"));
    }
    if &bytes[..4] != DFLD_MAGIC {
        return Err(Error::format(path, 0, "bad magic, expected DFLD"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != DFLD_VERSION {
        return Err(Error::format(path, 4, format!("unsupported version {version}")));
    }
    let word = |at: usize| u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]);
    let (w, h) = (word(6) as usize, word(10) as usize);
    let need = DFLD_HEADER_LEN + 8 * w * h;
    if bytes.len() < need {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("truncated payload: {} bytes, expected {need}", bytes.len()),
        ));
    }
    if bytes.len() > need {
        return Err(Error::format(path, need as u64, "trailing bytes after payload"));
    }
    let mut planes = vec![0.0; 2 * w * h];
    let (ux, uy) = planes.split_at_mut(w * h);
    for i in 0..w * h {
        let at = DFLD_HEADER_LEN + 8 * i;
        ux[i] = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64;
        uy[i] = f32::from_le_bytes(bytes[at + 4..at + 8].try_into().unwrap()) as f64;
    }
    let field = DisplacementField::from_planes(h, w, planes)?;
    if !field.is_finite() {
        return Err(Error::format(
            path,
            DFLD_HEADER_LEN as u64,
            "non-finite displacement",
        ));
    }
    Ok(field)
}

pub fn write_field(u: &DisplacementField, path: &Path) -> Result<()> {
    write_bytes(path, &encode_field(u))
}

pub fn read_field(path: &Path) -> Result<DisplacementField> {
    decode_field(path, &read_bytes(path)?)
}
