//! Raster I/O and the preprocessing front end: portable graymap/pixmap
//! decoding and encoding, grayscale conversion, bilinear resizing and
//! normalization to `[0, 1]`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("malformed image: {0}")]
    MalformedImage(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("image must be single-channel, got {0} channels")]
    NotGrayscale(u8),
    #[error("invalid image geometry: {0}")]
    InvalidGeometry(String),
}

/// Decoded 8-bit raster, row-major, channel-interleaved.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: u8,
    pixels: Vec<u8>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .field("pixels", &format_args!("[{} bytes]", self.pixels.len()))
            .finish()
    }
}

impl Image {
    pub fn new(
        width: usize,
        height: usize,
        channels: u8,
        pixels: Vec<u8>,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidGeometry(format!("{width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::InvalidGeometry(format!("{channels} channels")));
        }
        let expected = width * height * channels as usize;
        if pixels.len() != expected {
            return Err(ImageError::InvalidGeometry(format!(
                "expected {expected} samples, got {}",
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(
        width: usize,
        height: usize,
        channels: u8,
        value: u8,
    ) -> Result<Self, ImageError> {
        Image::new(
            width,
            height,
            channels,
            vec![value; width * height * channels as usize],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }
}

/// Normalized single-channel image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayTensor {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl GrayTensor {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(ImageError::InvalidGeometry(format!(
                "{width}x{height} with {} values",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::InvalidGeometry(format!(
                "value {v} outside [0, 1]"
            )));
        }
        Ok(GrayTensor {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Netpbm sample encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnmEncoding {
    Plain,
    Binary,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn read_uint(&mut self, what: &str) -> Result<usize, ImageError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImageError::MalformedImage(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::MalformedImage(format!("{what} out of range")))
    }
}

/// Decodes a P2/P3/P5/P6 netpbm file with maxval 255.
pub fn decode_image(bytes: &[u8]) -> Result<Image, ImageError> {
    if bytes.len() < 2 {
        return Err(ImageError::MalformedImage("missing magic number".into()));
    }
    if bytes[0] != b'P' {
        return Err(ImageError::MalformedImage("bad magic number".into()));
    }
    let (channels, encoding) = match bytes[1] {
        b'2' => (1u8, PnmEncoding::Plain),
        b'3' => (3, PnmEncoding::Plain),
        b'5' => (1, PnmEncoding::Binary),
        b'6' => (3, PnmEncoding::Binary),
        b'1' | b'4' | b'7' => {
            return Err(ImageError::UnsupportedFormat(format!(
                "netpbm variant P{}",
                bytes[1] as char
            )))
        }
        _ => return Err(ImageError::MalformedImage("bad magic number".into())),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.read_uint("width")?;
    let height = cur.read_uint("height")?;
    let maxval = cur.read_uint("maxval")?;
    if width == 0 || height == 0 {
        return Err(ImageError::MalformedImage(format!(
            "zero dimension {width}x{height}"
        )));
    }
    if maxval != 255 {
        return Err(ImageError::UnsupportedFormat(format!(
            "maxval {maxval} (only 255 is supported)"
        )));
    }
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels as usize))
        .ok_or_else(|| ImageError::MalformedImage("dimensions overflow".into()))?;

    let pixels = match encoding {
        PnmEncoding::Binary => {
            // exactly one whitespace byte separates the header from the raster
            if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
                return Err(ImageError::MalformedImage("truncated header".into()));
            }
            let start = cur.pos + 1;
            let end = start
                .checked_add(count)
                .ok_or_else(|| ImageError::MalformedImage("dimensions overflow".into()))?;
            if end > bytes.len() {
                return Err(ImageError::MalformedImage(format!(
                    "truncated payload: expected {count} bytes, found {}",
                    bytes.len().saturating_sub(start)
                )));
            }
            bytes[start..end].to_vec()
        }
        PnmEncoding::Plain => {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let v = cur.read_uint("sample").map_err(|_| {
                    ImageError::MalformedImage(format!(
                        "truncated payload after {} samples",
                        out.len()
                    ))
                })?;
                if v > 255 {
                    return Err(ImageError::MalformedImage(format!(
                        "sample {v} exceeds maxval"
                    )));
                }
                out.push(v as u8);
            }
            out
        }
    };
    Image::new(width, height, channels, pixels)
}

/// Encodes as P5/P6 (binary) or P2/P3 (plain), maxval 255.
pub fn encode_image(img: &Image, encoding: PnmEncoding) -> Vec<u8> {
    let magic = match (img.channels, encoding) {
        (1, PnmEncoding::Plain) => "P2",
        (1, PnmEncoding::Binary) => "P5",
        (_, PnmEncoding::Plain) => "P3",
        (_, PnmEncoding::Binary) => "P6",
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    match encoding {
        PnmEncoding::Binary => out.extend_from_slice(&img.pixels),
        PnmEncoding::Plain => {
            let row_len = img.width * img.channels as usize;
            for row in img.pixels.chunks(row_len) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
        }
    }
    out
}

/// BT.601 luma; single-channel input is returned unchanged.
pub fn to_grayscale(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    let pixels = img
        .pixels
        .chunks_exact(3)
        .map(|p| {
            let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    Image {
        width: img.width,
        height: img.height,
        channels: 1,
        pixels,
    }
}

#[derive(Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

// Half-pixel-centre source coordinate for each output index, edge-clamped.
fn taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

/// Bilinear resize with half-pixel centres. Output is rounded and clamped.
pub fn resize_bilinear(img: &Image, out_w: usize, out_h: usize) -> Result<Image, ImageError> {
    if out_w == 0 || out_h == 0 {
        return Err(ImageError::InvalidGeometry(format!(
            "target {out_w}x{out_h}"
        )));
    }
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    let ch = img.channels as usize;
    let xs = taps(img.width, out_w);
    let ys = taps(img.height, out_h);
    let at = |x: usize, y: usize, c: usize| img.pixels[(y * img.width + x) * ch + c] as f64;
    let mut pixels = Vec::with_capacity(out_w * out_h * ch);
    for ty in &ys {
        for tx in &xs {
            for c in 0..ch {
                let top = at(tx.lo, ty.lo, c) * (1.0 - tx.frac) + at(tx.hi, ty.lo, c) * tx.frac;
                let bottom = at(tx.lo, ty.hi, c) * (1.0 - tx.frac) + at(tx.hi, ty.hi, c) * tx.frac;
                let v = top * (1.0 - ty.frac) + bottom * ty.frac;
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(Image {
        width: out_w,
        height: out_h,
        channels: img.channels,
        pixels,
    })
}

pub fn normalize(img: &Image) -> Result<GrayTensor, ImageError> {
    if img.channels != 1 {
        return Err(ImageError::NotGrayscale(img.channels));
    }
    let values = img.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Ok(GrayTensor {
        width: img.width,
        height: img.height,
        values,
    })
}

/// Grayscale, resize to `size`×`size`, normalize.
pub fn preprocess(img: &Image, size: usize) -> Result<GrayTensor, ImageError> {
    let gray = to_grayscale(img);
    let resized = resize_bilinear(&gray, size, size)?;
    normalize(&resized)
}
