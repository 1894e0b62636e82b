//! RGB frames with string tags, stored as PNG.
//!
//! Tags travel in a single UTF-8 `iTXt` chunk as a JSON object. The synthetic
//! corpus and the mock backends use them to carry scene facts that a real
//! model would read from pixels.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use base64::Engine as _;

const TAG_KEYWORD: &str = "automt";

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("png decode: {0}")]
    Decode(String),
    #[error("png encode: {0}")]
    Encode(String),
    #[error("base64: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error("unsupported png layout: {0}")]
    Unsupported(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB8.
    pub pixels: Vec<u8>,
    pub tags: BTreeMap<String, String>,
}

impl Image {
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Image {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&rgb);
        }
        Image { width, height, pixels, tags: BTreeMap::new() }
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    /// Fills the rectangle, clipped to the image.
    pub fn fill_rect(&mut self, x0: u32, y0: u32, w: u32, h: u32, rgb: [u8; 3]) {
        for y in y0..(y0 + h).min(self.height) {
            for x in x0..(x0 + w).min(self.width) {
                self.set(x, y, rgb);
            }
        }
    }

    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags.get(key).map(String::as_str)
    }

    pub fn with_tag(mut self, key: &str, value: impl Into<String>) -> Image {
        self.tags.insert(key.to_string(), value.into());
        self
    }

    /// True when both images have the same size and pixels; tags are ignored.
    pub fn same_pixels(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.pixels == other.pixels
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            if !self.tags.is_empty() {
                let json = serde_json::to_string(&self.tags).expect("string map serializes");
                enc.add_itxt_chunk(TAG_KEYWORD.to_string(), json).map_err(|e| ImageError::Encode(e.to_string()))?;
            }
            let mut writer = enc.write_header().map_err(|e| ImageError::Encode(e.to_string()))?;
            writer.write_image_data(&self.pixels).map_err(|e| ImageError::Encode(e.to_string()))?;
            writer.finish().map_err(|e| ImageError::Encode(e.to_string()))?;
        }
        Ok(out)
    }

    /// Decodes any 8-bit (or 16-bit, stripped) PNG into RGB8.
    pub fn decode_png(bytes: &[u8]) -> Result<Image, ImageError> {
        let mut decoder = png::Decoder::new(Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::normalize_to_color8());
        let mut reader = decoder.read_info().map_err(|e| ImageError::Decode(e.to_string()))?;
        let mut tags = BTreeMap::new();
        for chunk in &reader.info().utf8_text {
            if chunk.keyword == TAG_KEYWORD {
                let text = chunk.get_text().map_err(|e| ImageError::Decode(e.to_string()))?;
                tags = serde_json::from_str(&text).map_err(|e| ImageError::Decode(format!("tag chunk: {e}")))?;
            }
        }
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| ImageError::Unsupported("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(|e| ImageError::Decode(e.to_string()))?;
        buf.truncate(info.buffer_size());
        let channels = match info.color_type {
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            other => return Err(ImageError::Unsupported(format!("{other:?}"))),
        };
        let mut pixels = Vec::with_capacity(info.width as usize * info.height as usize * 3);
        for row in buf.chunks(info.line_size) {
            for px in row.chunks(channels).take(info.width as usize) {
                match channels {
                    1 | 2 => pixels.extend_from_slice(&[px[0]; 3]),
                    _ => pixels.extend_from_slice(&px[..3]),
                }
            }
        }
        Ok(Image { width: info.width, height: info.height, pixels, tags })
    }

    pub fn to_base64(&self) -> Result<String, ImageError> {
        Ok(base64::engine::general_purpose::STANDARD.encode(self.encode_png()?))
    }

    pub fn from_base64(text: &str) -> Result<Image, ImageError> {
        Image::decode_png(&base64::engine::general_purpose::STANDARD.decode(text.trim())?)
    }

    pub fn load(path: &Path) -> Result<Image, ImageError> {
        Image::decode_png(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        crate::fsutil::write_atomic(path, &self.encode_png()?)?;
        Ok(())
    }
}
