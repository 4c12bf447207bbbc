//! Raster containers, mask algebra and crop extraction.
//!
//! Coordinates are pixel-based with the origin at the top-left corner, `x`
//! growing to the right and `y` growing downward. All buffers are row-major.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-pixel class-index raster for one acquisition date.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticMask {
    width: u32,
    height: u32,
    num_classes: usize,
    labels: Vec<u8>,
}

impl SemanticMask {
    pub fn new(width: u32, height: u32, num_classes: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width as usize * height as usize {
            return Err(Error::Shape(format!(
                "mask of {width}x{height} needs {} labels, got {}",
                width as usize * height as usize,
                labels.len()
            )));
        }
        if num_classes == 0 || num_classes > 256 {
            return Err(Error::Schema(format!(
                "class count must be in 1..=256, got {num_classes}"
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::Schema(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            width,
            height,
            num_classes,
            labels,
        })
    }

    /// A mask filled with a single class.
    pub fn filled(width: u32, height: u32, num_classes: usize, class: u8) -> Result<Self> {
        Self::new(
            width,
            height,
            num_classes,
            vec![class; width as usize * height as usize],
        )
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.labels[(y * self.width + x) as usize]
    }

    /// Sets one pixel. Panics when `class` is outside the class range.
    pub fn set(&mut self, x: u32, y: u32, class: u8) {
        assert!((class as usize) < self.num_classes, "class out of range");
        let w = self.width;
        self.labels[(y * w + x) as usize] = class;
    }

    /// Binary support `{mask == class}`.
    pub fn support(&self, class: u8) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|&l| l == class).collect(),
        }
    }
}

/// Binary raster. Also used as the difference mask between two dates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

/// Pixels whose labels differ between the two dates.
pub type DiffMask = BinaryMask;

impl BinaryMask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::Shape(format!(
                "binary mask of {width}x{height} needs {} bits, got {}",
                width as usize * height as usize,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width;
        self.bits[(y * w + x) as usize] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Pointwise OR of two equally sized masks.
    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape("binary masks differ in size".into()));
        }
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a || b)
                .collect(),
        })
    }
}

/// Marks every pixel where `before` and `after` carry different labels.
pub fn diff_mask(before: &SemanticMask, after: &SemanticMask) -> Result<DiffMask> {
    if before.width != after.width || before.height != after.height {
        return Err(Error::Shape(format!(
            "before is {}x{}, after is {}x{}",
            before.width, before.height, after.width, after.height
        )));
    }
    if before.num_classes != after.num_classes {
        return Err(Error::Schema(format!(
            "class counts differ: {} vs {}",
            before.num_classes, after.num_classes
        )));
    }
    Ok(BinaryMask {
        width: before.width,
        height: before.height,
        bits: before
            .labels
            .iter()
            .zip(&after.labels)
            .map(|(a, b)| a != b)
            .collect(),
    })
}

/// 8-bit interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    samples: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, samples: Vec<u8>) -> Result<Self> {
        if samples.len() != width as usize * height as usize * 3 {
            return Err(Error::Shape(format!(
                "image of {width}x{height} needs {} samples, got {}",
                width as usize * height as usize * 3,
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut samples = Vec::with_capacity(n * 3);
        for _ in 0..n {
            samples.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            samples,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.samples[i], self.samples[i + 1], self.samples[i + 2]]
    }

    pub fn put_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.samples[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.samples.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Stable bytes used for content hashing: dimensions followed by samples.
    pub fn content_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.samples.len());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.samples);
        out
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let buf = image::RgbImage::from_raw(self.width, self.height, self.samples.clone())
            .ok_or_else(|| Error::Shape("sample buffer does not match dimensions".into()))?;
        let mut out = Cursor::new(Vec::new());
        DynamicImage::ImageRgb8(buf)
            .write_to(&mut out, ImageFormat::Png)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(out.into_inner())
    }
}

/// Axis-aligned pixel window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelRect {
    pub fn new(x0: u32, y0: u32, w: u32, h: u32) -> Self {
        Self { x0, y0, w, h }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x0 as f64 + self.w as f64 / 2.0,
            self.y0 as f64 + self.h as f64 / 2.0,
        )
    }

    /// Grows the rect by `margin` on every side and clamps it to `width x height`.
    pub fn expand_clamped(&self, margin: u32, width: u32, height: u32) -> PixelRect {
        let x0 = self.x0.saturating_sub(margin).min(width);
        let y0 = self.y0.saturating_sub(margin).min(height);
        let x1 = (self.x0 as u64 + self.w as u64 + margin as u64).min(width as u64) as u32;
        let y1 = (self.y0 as u64 + self.h as u64 + margin as u64).min(height as u64) as u32;
        PixelRect {
            x0,
            y0,
            w: x1.saturating_sub(x0),
            h: y1.saturating_sub(y0),
        }
    }
}

/// Copies the window `rect` grown by `margin` (clamped to the image) out of `image`.
pub fn crop(image: &RgbImage, rect: PixelRect, margin: u32) -> Result<RgbImage> {
    if rect.w == 0 || rect.h == 0 {
        return Err(Error::EmptyRegion(format!("zero-area rect {rect:?}")));
    }
    let win = rect.expand_clamped(margin, image.width, image.height);
    if win.w == 0 || win.h == 0 {
        return Err(Error::EmptyRegion(format!(
            "rect {rect:?} lies outside a {}x{} image",
            image.width, image.height
        )));
    }
    let row = image.width as usize * 3;
    let mut samples = Vec::with_capacity(win.area() as usize * 3);
    for y in win.y0..win.y0 + win.h {
        let start = y as usize * row + win.x0 as usize * 3;
        samples.extend_from_slice(&image.samples[start..start + win.w as usize * 3]);
    }
    Ok(RgbImage {
        width: win.w,
        height: win.h,
        samples,
    })
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bytes(&bytes)
}

fn decode_bytes(bytes: &[u8]) -> Result<DynamicImage> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::Format(e.to_string()))
}

/// Decodes a single-channel 8-bit PNG whose pixel values are class indices.
pub fn decode_mask_png(bytes: &[u8], num_classes: usize) -> Result<SemanticMask> {
    match decode_bytes(bytes)? {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            SemanticMask::new(w, h, num_classes, buf.into_raw())
        }
        other => Err(Error::Format(format!(
            "mask must be 8-bit single-channel, got {:?}",
            other.color()
        ))),
    }
}

pub fn load_mask_png(path: impl AsRef<Path>, num_classes: usize) -> Result<SemanticMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask_png(&bytes, num_classes)
}

pub fn save_mask_png(mask: &SemanticMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf = image::GrayImage::from_raw(mask.width, mask.height, mask.labels.clone())
        .ok_or_else(|| Error::Shape("label buffer does not match dimensions".into()))?;
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Loads an 8-bit RGB PNG. An alpha channel, if present, is dropped.
pub fn load_image_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    match decode(path.as_ref())? {
        DynamicImage::ImageRgb8(buf) => {
            let (w, h) = buf.dimensions();
            RgbImage::new(w, h, buf.into_raw())
        }
        DynamicImage::ImageRgba8(buf) => {
            let (w, h) = buf.dimensions();
            let rgb = DynamicImage::ImageRgba8(buf).into_rgb8();
            RgbImage::new(w, h, rgb.into_raw())
        }
        other => Err(Error::Format(format!(
            "image must be 8-bit RGB, got {:?}",
            other.color()
        ))),
    }
}

pub fn save_image_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = img.to_png_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Ordered class names; the position is the class index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    names: Vec<String>,
}

impl ClassMap {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() || names.len() > 256 {
            return Err(Error::Schema(format!(
                "class map needs 1..=256 classes, got {}",
                names.len()
            )));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Schema(format!("duplicate class name {n:?}")));
            }
        }
        Ok(Self { names })
    }

    /// Parses `index<TAB>name` lines with indices contiguous from 0.
    pub fn parse(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (idx, name) = line.split_once('\t').ok_or_else(|| {
                Error::Schema(format!("class map line {}: expected index<TAB>name", lineno + 1))
            })?;
            let idx: usize = idx.trim().parse().map_err(|_| {
                Error::Schema(format!("class map line {}: bad index {idx:?}", lineno + 1))
            })?;
            if idx != names.len() {
                return Err(Error::Schema(format!(
                    "class map line {}: index {idx} is not contiguous (expected {})",
                    lineno + 1,
                    names.len()
                )));
            }
            names.push(name.trim().to_string());
        }
        Self::new(names)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| format!("{i}\t{n}\n"))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, class: usize) -> Option<&str> {
        self.names.get(class).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}
