//! RGB float images and PNG I/O.

use std::io::Cursor;
use std::path::Path;

use ibgs_autodiff::Tensor;
use image::{ImageFormat, ImageReader, Limits};

use crate::error::{Error, Result};

/// Row-major `height x width x 3` image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Image(format!(
                "{}x{} image needs {} values, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Image { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Image { width, height, data }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixel(y * self.width + x)
    }

    pub fn pixel(&self, i: usize) -> [f64; 3] {
        [self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// `[pixels, 3]` tensor view.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.pixels(), 3], self.data.clone()).expect("image buffer size")
    }

    pub fn from_tensor(width: usize, height: usize, t: &Tensor) -> Result<Self> {
        Image::new(width, height, t.data().to_vec())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn channel_means(&self) -> [f64; 3] {
        let mut m = [0.0; 3];
        for px in self.data.chunks(3) {
            for c in 0..3 {
                m[c] += px[c];
            }
        }
        let n = self.pixels().max(1) as f64;
        m.map(|v| v / n)
    }
}

fn limits() -> Limits {
    let mut l = Limits::default();
    l.max_image_width = Some(1 << 14);
    l.max_image_height = Some(1 << 14);
    l.max_alloc = Some(1 << 28);
    l
}

/// Decodes an 8- or 16-bit PNG into `[0, 1]` floats.
pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut reader = ImageReader::with_format(Cursor::new(bytes), ImageFormat::Png);
    reader.limits(limits());
    let img = reader.decode().map_err(|e| Error::Image(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let sixteen = img.color().bytes_per_pixel() / img.color().channel_count() > 1;
    let data = if sixteen {
        img.to_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()
    } else {
        img.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect()
    };
    Image::new(w, h, data)
}

/// Encodes with round-to-nearest quantisation; values are clamped to `[0, 1]`.
pub fn encode_png(img: &Image, depth: BitDepth) -> Result<Vec<u8>> {
    let (w, h) = (img.width as u32, img.height as u32);
    let mut out = Cursor::new(Vec::new());
    let res = match depth {
        BitDepth::Eight => {
            let raw = img.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
            image::RgbImage::from_raw(w, h, raw)
                .ok_or_else(|| Error::Image("buffer size".into()))?
                .write_to(&mut out, ImageFormat::Png)
        }
        BitDepth::Sixteen => {
            let raw = img.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
            image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::from_raw(w, h, raw)
                .ok_or_else(|| Error::Image("buffer size".into()))?
                .write_to(&mut out, ImageFormat::Png)
        }
    };
    res.map_err(|e| Error::Image(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn read_png(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes).map_err(|e| Error::Image(format!("{}: {}", path.display(), e)))
}

pub fn write_png(path: &Path, img: &Image, depth: BitDepth) -> Result<()> {
    let bytes = encode_png(img, depth)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_err(a: &Image, b: &Image) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn constant_half_round_trips_within_half_step() {
        let img = Image::filled(5, 4, [0.5; 3]);
        let back = decode_png(&encode_png(&img, BitDepth::Eight).unwrap()).unwrap();
        assert!(max_err(&img, &back) <= 1.0 / 510.0 + 1e-15);
    }

    #[test]
    fn extremes_are_exact() {
        let img = Image::from_fn(4, 3, |x, y| if (x + y) % 2 == 0 { [0.0; 3] } else { [1.0; 3] });
        for depth in [BitDepth::Eight, BitDepth::Sixteen] {
            let back = decode_png(&encode_png(&img, depth).unwrap()).unwrap();
            assert_eq!(back, img);
        }
    }

    #[test]
    fn sixteen_bit_random_round_trip() {
        let mut s = 12345u64;
        let img = Image::from_fn(9, 7, |_, _| {
            [0; 3].map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
        });
        let back = decode_png(&encode_png(&img, BitDepth::Sixteen).unwrap()).unwrap();
        assert!(max_err(&img, &back) <= 1.0 / 131070.0 + 1e-15);
    }

    #[test]
    fn rejects_non_png() {
        assert!(decode_png(b"P3\n1 1\n255\n0 0 0\n").is_err());
        assert!(decode_png(&[]).is_err());
    }
}
