//! Linear-light float images plus PNG (8-bit sRGB) and PFM (f32 linear) codecs.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major interleaved image, `channels` values per pixel, linear light.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        crate::error::check_dim("image data", width * height * channels, data.len())?;
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm over all samples.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    /// `self += other`, shapes must agree.
    pub fn add_assign(&mut self, other: &Image) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::invalid("image shapes differ"));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_png_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io_path(path, e))
    }

    /// Encode as 8-bit sRGB PNG. One channel becomes grayscale (masks are written
    /// without the sRGB curve, as coverage values), three channels become RGB.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let (w, h) = (self.width as u32, self.height as u32);
        let mut out = Vec::new();
        let encoder = image::codecs::png::PngEncoder::new(&mut out);
        use image::ImageEncoder;
        match self.channels {
            1 => {
                let px: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
                encoder
                    .write_image(&px, w, h, image::ExtendedColorType::L8)
                    .map_err(|e| Error::format(format!("png encode: {e}")))?;
            }
            3 => {
                let px: Vec<u8> = self.data.iter().map(|&v| quantize(linear_to_srgb(v))).collect();
                encoder
                    .write_image(&px, w, h, image::ExtendedColorType::Rgb8)
                    .map_err(|e| Error::format(format!("png encode: {e}")))?;
            }
            c => return Err(Error::invalid(format!("png export needs 1 or 3 channels, got {c}"))),
        }
        Ok(out)
    }

    /// Decode a PNG into a linear 3-channel image (alpha is dropped).
    pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&b| srgb_to_linear(b as f64 / 255.0)).collect();
        Image::from_data(w as usize, h as usize, 3, data)
    }

    /// Read a one-channel coverage mask: PNG luma as raw values in `[0, 1]`
    /// (no sRGB curve, matching [`Image::to_png_bytes`]), PFM first channel.
    pub fn read_mask(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let is_pfm = path.extension().map(|e| e.eq_ignore_ascii_case("pfm")).unwrap_or(false);
        if is_pfm {
            let img = Image::read_pfm(path)?;
            let data = img.data.iter().step_by(img.channels).copied().collect();
            return Image::from_data(img.width, img.height, 1, data);
        }
        let img = image::open(path)
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?
            .to_luma8();
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
        Image::from_data(w as usize, h as usize, 1, data)
    }

    /// Encode as PFM: little-endian f32, rows stored bottom-to-top.
    pub fn to_pfm_bytes(&self) -> Result<Vec<u8>> {
        let tag = match self.channels {
            1 => "Pf",
            3 => "PF",
            c => return Err(Error::invalid(format!("pfm needs 1 or 3 channels, got {c}"))),
        };
        let mut out = Vec::with_capacity(32 + self.data.len() * 4);
        write!(out, "{tag}\n{} {}\n-1.0\n", self.width, self.height)?;
        let row = self.width * self.channels;
        for y in (0..self.height).rev() {
            for v in &self.data[y * row..(y + 1) * row] {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_pfm_bytes(bytes: &[u8]) -> Result<Image> {
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        // Magic, width, height and scale are whitespace-separated tokens; the
        // scale token is followed by exactly one whitespace byte.
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::format("pfm: truncated header"));
            }
            fields
                .push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::format("pfm: header is not ascii"))?);
        }
        pos += 1;
        let channels = match fields[0] {
            "PF" => 3,
            "Pf" => 1,
            m => return Err(Error::format(format!("pfm: bad magic {m:?}"))),
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::format(format!("pfm: bad dimension {s:?}")))
        };
        let width = parse(fields[1])?;
        let height = parse(fields[2])?;
        let scale: f64 = fields[3].parse().map_err(|_| Error::format("pfm: bad scale"))?;
        let little = scale < 0.0;
        let n = width * height * channels;
        let body = bytes.get(pos..).unwrap_or(&[]);
        if body.len() != n * 4 {
            return Err(Error::format(format!(
                "pfm: expected {} payload bytes, found {}",
                n * 4,
                body.len()
            )));
        }
        let mut data = vec![0.0; n];
        let row = width * channels;
        for (k, chunk) in body.chunks_exact(4).enumerate() {
            let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
            let (file_row, col) = (k / row, k % row);
            let y = height - 1 - file_row;
            data[y * row + col] = v as f64;
        }
        Image::from_data(width, height, channels, data)
    }

    pub fn write_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_pfm_bytes()?).map_err(|e| Error::io_path(path, e))
    }

    pub fn read_pfm(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io_path(path, e))?;
        Image::from_pfm_bytes(&bytes)
    }

    /// Load by extension: `.pfm` as linear floats, anything else through the PNG path.
    pub fn read_any(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let is_pfm = path.extension().map(|e| e.eq_ignore_ascii_case("pfm")).unwrap_or(false);
        if is_pfm {
            Image::read_pfm(path)
        } else {
            Image::read_png(path)
        }
    }
}

/// sRGB opto-electronic transfer (IEC 61966-2-1), input clamped to [0, 1].
pub fn linear_to_srgb(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_to_linear(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.040_45 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
