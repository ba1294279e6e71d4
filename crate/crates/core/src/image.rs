//! RGB raster type, single-channel planes and binary PPM (P6) I/O.
//!
//! Pixels are stored interleaved (`r, g, b, r, g, b, ...`) in row-major
//! order, matching the on-disk PPM layout.

use crate::error::{Error, Result};

/// Luma weights shared by the contrast filter, the metrics and the encoders.
pub const LUMA_WEIGHTS: [f64; 3] = [0.27, 0.67, 0.06];

/// An `height x width x 3` raster with every sample finite and in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image, rejecting wrong lengths and out-of-range samples.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| Error::InvalidImage("dimensions overflow".into()))?;
        if data.len() != expected {
            return Err(Error::InvalidImage(format!(
                "data length {} != {}x{}x3",
                data.len(),
                height,
                width
            )));
        }
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvalidImage(format!("sample {i} = {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image by clamping every sample into `[0, 1]`. NaN maps to 0.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width * 3, "raster length");
        for v in &mut data {
            *v = clamp_unit(*v);
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn check_same_dims(&self, other: &Image) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Splits into three channel planes.
    pub fn channels(&self) -> [Plane; 3] {
        let mut planes = [
            Plane::zeros(self.height, self.width),
            Plane::zeros(self.height, self.width),
            Plane::zeros(self.height, self.width),
        ];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                planes[c].data[i] = px[c];
            }
        }
        planes
    }

    /// Mirrors the image left to right.
    pub fn flip_horizontal(&self) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                data.extend_from_slice(&self.pixel(y, x));
            }
        }
        Image {
            height: self.height,
            width: self.width,
            data,
        }
    }
}

#[inline]
pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v > 0.0 {
        v.min(1.0)
    } else {
        0.0
    }
}

/// Single-channel raster with unrestricted values.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), height * width, "plane length");
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane::from_vec(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        debug_assert_eq!((self.height, self.width), (other.height, other.width));
        Plane::from_vec(
            self.height,
            self.width,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    /// Halves each axis. An odd axis keeps its even-indexed samples; an even
    /// axis averages adjacent pairs. Either way the result commutes with
    /// mirroring the plane.
    pub fn decimate(&self) -> Plane {
        let rows = halve_axis(self.height);
        let cols = halve_axis(self.width);
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for &(y0, y1) in &rows {
            for &(x0, x1) in &cols {
                let v = if y0 == y1 {
                    if x0 == x1 {
                        self.at(y0, x0)
                    } else {
                        0.5 * (self.at(y0, x0) + self.at(y0, x1))
                    }
                } else if x0 == x1 {
                    0.5 * (self.at(y0, x0) + self.at(y1, x0))
                } else {
                    0.5 * (0.5 * (self.at(y0, x0) + self.at(y1, x0)) + 0.5 * (self.at(y0, x1) + self.at(y1, x1)))
                };
                data.push(v);
            }
        }
        Plane::from_vec(rows.len(), cols.len(), data)
    }
}

/// Source index pairs for one halved axis.
fn halve_axis(n: usize) -> Vec<(usize, usize)> {
    if n % 2 == 1 {
        (0..n).step_by(2).map(|i| (i, i)).collect()
    } else {
        (0..n).step_by(2).map(|i| (i, i + 1)).collect()
    }
}

/// Per-pixel `0.27 r + 0.67 g + 0.06 b`.
pub fn luminance(img: &Image) -> Plane {
    let [kr, kg, kb] = LUMA_WEIGHTS;
    let data = img
        .data
        .chunks_exact(3)
        .map(|px| kr * px[0] + kg * px[1] + kb * px[2])
        .collect();
    Plane::from_vec(img.height, img.width, data)
}

// ---------------------------------------------------------------------------
// PPM

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_whitespace_and_comments(&mut self) -> Result<()> {
        let start = self.pos;
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(Error::format(self.pos, "unexpected end of header")),
            }
        }
        if self.pos == start {
            return Err(Error::format(self.pos, "expected whitespace"));
        }
        Ok(())
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let start = self.pos;
        let mut value: usize = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add(usize::from(b - b'0')))
                .ok_or_else(|| Error::format(start, format!("{what} overflows")))?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::format(start, format!("expected decimal {what}")));
        }
        Ok(value)
    }
}

/// Parses a binary `P6` pixmap with maxval 255.
pub fn load_ppm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 {
        return Err(Error::format(0, "missing magic"));
    }
    if &bytes[..2] != b"P6" {
        return Err(Error::format(0, "magic is not P6"));
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    cur.skip_whitespace_and_comments()?;
    let width = cur.number("width")?;
    cur.skip_whitespace_and_comments()?;
    let height = cur.number("height")?;
    cur.skip_whitespace_and_comments()?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::format(maxval_at, format!("maxval {maxval} unsupported, expected 255")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        Some(_) => return Err(Error::format(cur.pos, "expected single whitespace after maxval")),
        None => return Err(Error::format(cur.pos, "unexpected end of header")),
    }
    if width == 0 || height == 0 {
        return Err(Error::format(maxval_at, "zero image dimension"));
    }
    let payload_len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::format(2, "dimensions overflow"))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < payload_len {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload: {} of {payload_len} bytes", payload.len()),
        ));
    }
    let data = payload[..payload_len]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Ok(Image {
        height,
        width,
        data,
    })
}

/// Quantizes a sample with round-half-up.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn save_ppm(img: &Image) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + img.data.len());
    out.extend_from_slice(header.as_bytes());
    out.extend(img.data.iter().map(|&v| quantize(v)));
    out
}
