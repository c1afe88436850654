//! Binary Netpbm images (P5 gray, P6 RGB, maxval 255) and preprocessing.

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;

/// 8-bit samples, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub samples: Vec<u8>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Image(msg.into())
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    /// Skips whitespace and `#` comments, then reads one decimal field.
    fn field(&mut self, what: &str) -> Result<usize> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n' && b != b'\r') {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(format!("missing or malformed {what} at byte {start}")))
    }
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<u8>) -> Result<Self> {
        if !matches!(channels, 1 | 3) {
            return Err(bad(format!("{channels} channels; only 1 or 3 are supported")));
        }
        if width == 0 || height == 0 || samples.len() != width * height * channels {
            return Err(bad(format!(
                "{} samples for a {width}x{height}x{channels} image",
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let channels = match bytes.get(..2) {
            Some(b"P5") => 1,
            Some(b"P6") => 3,
            _ => return Err(bad("not a binary PGM (P5) or PPM (P6) file")),
        };
        let mut h = Header { bytes, pos: 2 };
        let width = h.field("width")?;
        let height = h.field("height")?;
        let maxval = h.field("maxval")?;
        if maxval != 255 {
            return Err(bad(format!("maxval {maxval} is not supported; expected 255")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(bad("header is not terminated by whitespace"));
        }
        let data = &bytes[h.pos + 1..];
        let need = width * height * channels;
        if data.len() < need {
            return Err(bad(format!(
                "raster holds {} bytes, expected {need}",
                data.len()
            )));
        }
        Self::new(width, height, channels, data[..need].to_vec())
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.samples);
        out
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    /// `[1, channels, height, width]` with samples scaled to [0, 1].
    pub fn to_tensor(&self) -> Tensor {
        let (w, h, c) = (self.width, self.height, self.channels);
        Tensor::from_fn(&[1, c, h, w], |i| {
            let (ch, p) = (i / (w * h), i % (w * h));
            self.samples[p * c + ch] as f32 / 255.0
        })
    }
}

/// Scales to [0, 1], resizes bilinearly to `side × side`, and replicates a
/// gray channel when `channels` is 3.
pub fn preprocess(img: &ImageBuffer, side: usize, channels: usize) -> Result<Tensor> {
    let t = ops::bilinear_resize(&img.to_tensor(), side, side)?;
    match (img.channels, channels) {
        (a, b) if a == b => Ok(t),
        (1, 3) => ops::concat(&[&t, &t, &t], 1),
        (a, b) => Err(bad(format!("cannot feed a {a}-channel image to a {b}-channel branch"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Lcg;

    #[test]
    fn single_gray_pixel() {
        let img = ImageBuffer::decode(b"P5 1 1 255\n\x07").unwrap();
        assert_eq!(img.samples, [7]);
        assert_eq!(img.channels, 1);
    }

    #[test]
    fn rgb_pixels_in_order() {
        let img = ImageBuffer::decode(b"P6\n# two pixels\n2   1\n#x\n255\n\xff\x00\x00\x00\x00\xff").unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.samples, [255, 0, 0, 0, 0, 255]);
    }

    #[test]
    fn rejections() {
        for (bytes, what) in [
            (&b"P3 1 1 255\n1"[..], "magic"),
            (b"P5 1 1 65535\n\x00\x01", "maxval"),
            (b"P5 2 2 255\n\x00", "raster"),
            (b"P5 2 255\n", "malformed"),
        ] {
            let e = ImageBuffer::decode(bytes).unwrap_err().to_string();
            assert!(e.contains(what) || (what == "magic" && e.contains("P5")), "{e}");
        }
    }

    #[test]
    fn encode_decode_round_trip() {
        let mut rng = Lcg::new(3);
        for channels in [1, 3] {
            let (w, h) = (1 + rng.below(9), 1 + rng.below(9));
            let samples = (0..w * h * channels).map(|_| rng.below(256) as u8).collect();
            let img = ImageBuffer::new(w, h, channels, samples).unwrap();
            assert_eq!(ImageBuffer::decode(&img.encode()).unwrap(), img);
        }
    }

    #[test]
    fn preprocess_at_size_is_scaling() {
        let img = ImageBuffer::new(2, 2, 1, vec![0, 51, 255, 7]).unwrap();
        let t = preprocess(&img, 2, 3).unwrap();
        assert_eq!(t.shape(), [1, 3, 2, 2]);
        let expect = [0.0, 51.0 / 255.0, 1.0, 7.0 / 255.0];
        for plane in t.data().chunks(4) {
            assert_eq!(plane, expect);
        }
        let white = ImageBuffer::new(5, 3, 3, vec![255; 45]).unwrap();
        assert!(preprocess(&white, 4, 3).unwrap().data().iter().all(|&v| v == 1.0));
    }
}
