//! Horizontal circular shifts and flips of equirectangular panoramas.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage};
use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, ImageTextPair};
use crate::error::{Error, Result};

pub const VARIANT_ORIG: &str = "orig";
pub const VARIANT_FLIP: &str = "flip";
pub const VARIANT_INDEX_FILE: &str = "variants.json";

pub fn shift_variant(delta: u32) -> String {
    format!("shift:{delta}")
}

/// Row-major, channel-interleaved 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self> {
        let expected = width as usize * height as usize * channels as usize;
        if channels == 0 || pixels.len() != expected {
            return Err(Error::validation(format!(
                "pixel buffer of length {} does not match {width}x{height}x{channels}",
                pixels.len()
            )));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let c = self.channels as usize;
        let start = (y as usize * self.width as usize + x as usize) * c;
        &self.pixels[start..start + c]
    }

    fn row_bytes(&self) -> usize {
        self.width as usize * self.channels as usize
    }

    /// Decodes an image file. 16-bit and float formats are reduced to 8 bits.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            context: format!("decoding {}", path.display()),
            source,
        })?;
        let (w, h) = (img.width(), img.height());
        let (channels, pixels) = match img {
            DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
            DynamicImage::ImageLumaA8(b) => (2, b.into_raw()),
            DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
            DynamicImage::ImageRgba8(b) => (4, b.into_raw()),
            other if other.color().has_alpha() => (4, other.into_rgba8().into_raw()),
            other => (3, other.into_rgb8().into_raw()),
        };
        ImageBuffer::new(w, h, channels, pixels)
    }

    /// Writes a PNG (lossless).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let color = match self.channels {
            1 => ColorType::L8,
            2 => ColorType::La8,
            3 => ColorType::Rgb8,
            4 => ColorType::Rgba8,
            n => return Err(Error::validation(format!("cannot encode {n}-channel image as PNG"))),
        };
        image::save_buffer_with_format(
            path,
            &self.pixels,
            self.width,
            self.height,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|source| Error::Image {
            context: format!("writing {}", path.display()),
            source,
        })
    }
}

/// Output column `x` reads input column `(x + delta) mod W`, so content moves
/// left by `delta`.
pub fn circular_shift(image: &ImageBuffer, delta: u32) -> ImageBuffer {
    let w = image.width as usize;
    let c = image.channels as usize;
    let shift = (delta as usize % w) * c;
    let row = image.row_bytes();
    let mut pixels = Vec::with_capacity(image.pixels.len());
    for src in image.pixels.chunks_exact(row) {
        pixels.extend_from_slice(&src[shift..]);
        pixels.extend_from_slice(&src[..shift]);
    }
    ImageBuffer { pixels, ..*image }
}

/// Output column `x` reads input column `W - 1 - x`.
pub fn hflip(image: &ImageBuffer) -> ImageBuffer {
    let c = image.channels as usize;
    let row = image.row_bytes();
    let mut pixels = Vec::with_capacity(image.pixels.len());
    for src in image.pixels.chunks_exact(row) {
        for px in src.chunks_exact(c).rev() {
            pixels.extend_from_slice(px);
        }
    }
    ImageBuffer { pixels, ..*image }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftSchedule {
    pub width: u32,
    pub divisions: u32,
    pub magnitudes: Vec<u32>,
}

impl ShiftSchedule {
    /// Display label `jW/N` for the `j`-th magnitude (1-based).
    pub fn label(&self, j: usize) -> String {
        format!("{j}W/{}", self.divisions)
    }
}

/// Magnitudes `j * W / N` for `j` in `1..N`. `N` must divide `W`.
pub fn shift_schedule(width: u32, divisions: u32) -> Result<ShiftSchedule> {
    if divisions < 2 {
        return Err(Error::validation(format!("divisions must be at least 2, got {divisions}")));
    }
    if !width.is_multiple_of(divisions) {
        return Err(Error::validation(format!(
            "divisions {divisions} does not divide width {width}"
        )));
    }
    let step = width / divisions;
    Ok(ShiftSchedule {
        width,
        divisions,
        magnitudes: (1..divisions).map(|j| j * step).collect(),
    })
}

/// Maps `(pair_id, variant)` to an image path relative to the index's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantIndex {
    pub pairs: IndexMap<String, IndexMap<String, String>>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl VariantIndex {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading variant index {}", path.display()), e))?;
        let mut index: VariantIndex = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        index.base_dir = path.parent().unwrap_or_else(|| Path::new("")).to_path_buf();
        Ok(index)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            context: "serializing variant index".into(),
            source,
        })?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, pair_id: &str, variant: &str) -> Option<PathBuf> {
        self.pairs
            .get(pair_id)
            .and_then(|v| v.get(variant))
            .map(|rel| self.base_dir.join(rel))
    }

    /// Number of generated (non-original) variant files.
    pub fn generated_count(&self) -> usize {
        self.pairs
            .values()
            .map(|v| v.keys().filter(|k| *k != VARIANT_ORIG).count())
            .sum()
    }
}

fn file_stem_for(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if safe == id && !id.starts_with('.') {
        safe
    } else {
        format!("{}-{}", safe.trim_start_matches('.'), &crate::sha256_hex(id)[..8])
    }
}

fn relative_to(path: &Path, base: &Path) -> String {
    let rel = pathdiff::diff_paths(path, base).unwrap_or_else(|| path.to_path_buf());
    rel.to_string_lossy().replace('\\', "/")
}

fn materialize_pair(
    pair: &ImageTextPair,
    dataset: &Dataset,
    schedule: &ShiftSchedule,
    out_dir: &Path,
) -> Result<IndexMap<String, String>> {
    let pair_err = |message: String| Error::Pair {
        pair_id: pair.id.clone(),
        message,
    };
    let image = ImageBuffer::load(&pair.image_path).map_err(|e| pair_err(e.to_string()))?;
    if image.width() != dataset.width || image.height() != dataset.height {
        return Err(pair_err(format!(
            "image is {}x{}, manifest declares {}x{}",
            image.width(),
            image.height(),
            dataset.width,
            dataset.height
        )));
    }
    let stem = file_stem_for(&pair.id);
    let pair_dir = out_dir.join(&stem);
    fs::create_dir_all(&pair_dir)
        .map_err(|e| pair_err(format!("creating {}: {e}", pair_dir.display())))?;

    let orig = fs::canonicalize(&pair.image_path)
        .map_err(|e| pair_err(format!("resolving {}: {e}", pair.image_path.display())))?;
    let mut entries = IndexMap::new();
    entries.insert(VARIANT_ORIG.to_string(), relative_to(&orig, out_dir));

    let mut emit = |variant: String, file: String, img: ImageBuffer| -> Result<()> {
        let path = pair_dir.join(&file);
        img.save_png(&path).map_err(|e| pair_err(e.to_string()))?;
        entries.insert(variant, format!("{stem}/{file}"));
        Ok(())
    };
    emit(VARIANT_FLIP.to_string(), "flip.png".into(), hflip(&image))?;
    for &delta in &schedule.magnitudes {
        emit(shift_variant(delta), format!("shift_{delta}.png"), circular_shift(&image, delta))?;
    }
    Ok(entries)
}

/// Writes flipped and shifted copies of every pair under `out_dir` and an
/// index file `variants.json` next to them. Pairs are processed in parallel;
/// the first failing pair in dataset order aborts the run.
pub fn materialize_variants(
    dataset: &Dataset,
    schedule: &ShiftSchedule,
    out_dir: &Path,
) -> Result<VariantIndex> {
    if schedule.width != dataset.width {
        return Err(Error::validation(format!(
            "schedule width {} does not match dataset width {}",
            schedule.width, dataset.width
        )));
    }
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let out_dir = fs::canonicalize(out_dir)
        .map_err(|e| Error::io(format!("resolving {}", out_dir.display()), e))?;

    let results: Vec<Result<IndexMap<String, String>>> = dataset
        .pairs
        .par_iter()
        .map(|pair| materialize_pair(pair, dataset, schedule, &out_dir))
        .collect();

    let mut pairs = IndexMap::with_capacity(results.len());
    for (pair, entries) in dataset.pairs.iter().zip(results) {
        pairs.insert(pair.id.clone(), entries?);
    }
    let index = VariantIndex {
        pairs,
        base_dir: out_dir.clone(),
    };
    index.write(&out_dir.join(VARIANT_INDEX_FILE))?;
    log::info!(
        "materialized {} variant files for {} pairs in {}",
        index.generated_count(),
        dataset.len(),
        out_dir.display()
    );
    Ok(index)
}
