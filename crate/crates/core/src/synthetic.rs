//! Seeded synthetic panoramas and embedding models for exercising the full
//! pipeline without model weights.
//!
//! The models are built so their probe outcomes are known in advance:
//! [`ImageModel::ShiftInvariant`] depends only on circular-shift-invariant
//! statistics (but not flip-invariant ones), [`ImageModel::LeftmostColumn`]
//! sees only column 0, and [`TextModel::Nudged`] moves original-prompt
//! embeddings toward the image embedding.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::corpus::{substitute_cue, Dataset, ImageTextPair};
use crate::error::{Error, Result};
use crate::scoring::{
    generic_text_variant, normalize, store_write, EmbeddingRecord, Kind, TEXT_VARIANT_ORIG,
};
use crate::transforms::{ImageBuffer, VariantIndex, VARIANT_ORIG};

pub const EMBEDDING_DIM: usize = 8;
pub const FORMAT_CUE: &str = "<360panorama>, ";

const ROOMS: [&str; 6] = ["bedroom", "kitchen", "living room", "office", "bathroom", "hallway"];

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub name: String,
    pub pairs: usize,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            name: "synthetic".into(),
            pairs: 50,
            width: 128,
            height: 16,
            seed: 7,
        }
    }
}

/// Azimuthal wave with per-pair amplitude and per-channel phase, plus noise.
pub fn panorama(width: u32, height: u32, rng: &mut impl Rng) -> ImageBuffer {
    let amplitude = rng.gen_range(60.0..100.0);
    let phases: [f64; 3] = [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)];
    let mut pixels = Vec::with_capacity((width * height * 3) as usize);
    for _ in 0..height {
        for x in 0..width {
            let angle = TAU * (x as f64 + 0.5) / width as f64;
            for phase in phases {
                let noise: f64 = rng.gen_range(-12.0..12.0);
                let v = 128.0 + amplitude * (angle + phase).cos() + noise;
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageBuffer::new(width, height, 3, pixels).expect("consistent buffer")
}

/// Writes PNG panoramas and `manifest.json` into `dir`; returns the manifest path.
pub fn write_dataset(dir: &Path, spec: &DatasetSpec) -> Result<PathBuf> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(format!("creating {}", images.display()), e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut entries = Vec::with_capacity(spec.pairs);
    for i in 0..spec.pairs {
        let id = format!("pano_{i:04}");
        let file = format!("images/{id}.png");
        panorama(spec.width, spec.height, &mut rng).save_png(&dir.join(&file))?;
        let room = ROOMS[i % ROOMS.len()];
        entries.push(json!({
            "id": id,
            "image": file,
            "prompt": format!("{FORMAT_CUE}a {room} with furniture, scene {i}"),
        }));
    }
    let manifest = json!({
        "name": spec.name,
        "width": spec.width,
        "height": spec.height,
        "format_cue": FORMAT_CUE,
        "pairs": entries,
    });
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageModel {
    /// Per-channel mean and the circular statistic `sum p(x) p(x+1)^2`,
    /// computed in integers so circular shifts leave it bit-identical.
    ShiftInvariant,
    /// Per-channel mean of column 0 only.
    LeftmostColumn,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TextModel {
    /// Every prompt of a pair embeds from its content descriptor alone, so
    /// original and generic prompts coincide.
    ContentOnly,
    /// Original prompts are moved toward the image embedding by this weight.
    Nudged(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticModel {
    pub image: ImageModel,
    pub text: TextModel,
}

fn channel_values(img: &ImageBuffer, ch: usize) -> impl Iterator<Item = (u32, u32, u64)> + '_ {
    let c = img.channels() as usize;
    let ch = ch.min(c - 1);
    (0..img.height()).flat_map(move |y| {
        (0..img.width()).map(move |x| (x, y, img.pixel(x, y)[ch] as u64))
    })
}

impl SyntheticModel {
    pub fn embed_image(&self, img: &ImageBuffer) -> Vec<f64> {
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[0] = 1.0;
        let w = img.width();
        let area = (img.width() * img.height()) as f64;
        for ch in 0..3 {
            match self.image {
                ImageModel::ShiftInvariant => {
                    let mut sum = 0u64;
                    let mut asym = 0u64;
                    for (x, y, p) in channel_values(img, ch) {
                        let next = img.pixel((x + 1) % w, y)[ch.min(img.channels() as usize - 1)] as u64;
                        sum += p;
                        asym += p * next * next;
                    }
                    let mean = sum as f64 / area / 255.0;
                    let a = asym as f64 / area / 255f64.powi(3);
                    v[1 + ch] = 2.0 * (a - 0.25);
                    v[4 + ch] = mean - 0.5;
                }
                ImageModel::LeftmostColumn => {
                    let col: u64 = channel_values(img, ch).filter(|(x, _, _)| *x == 0).map(|(_, _, p)| p).sum();
                    v[1 + ch] = 1.5 * (col as f64 / img.height() as f64 / 255.0 - 0.5);
                }
            }
        }
        normalize(&v).expect("non-zero by construction")
    }

    fn content_embedding(content: &str) -> Vec<f64> {
        let seed = u64::from_str_radix(&crate::sha256_hex(content)[..16], 16).expect("hex");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[0] = 1.0;
        for (i, x) in v.iter_mut().enumerate().skip(1) {
            *x = if i <= 3 { 0.3 } else { 0.0 } + 0.3 * rng.gen_range(-1.0..1.0);
        }
        normalize(&v).expect("non-zero by construction")
    }

    /// Text embedding for `text`, a prompt of `pair`. `image` is the pair's
    /// original image embedding.
    pub fn embed_text(&self, pair: &ImageTextPair, is_original: bool, image: &[f64]) -> Vec<f64> {
        let base = Self::content_embedding(&pair.content);
        match self.text {
            TextModel::Nudged(weight) if is_original => {
                let nudged: Vec<f64> = base.iter().zip(image).map(|(t, i)| t + weight * i).collect();
                normalize(&nudged).expect("non-zero by construction")
            }
            _ => base,
        }
    }
}

/// Embeds every indexed image variant plus original and generic prompts.
pub fn export_records(
    dataset: &Dataset,
    index: &VariantIndex,
    model: &SyntheticModel,
    generic_cues: &[String],
) -> Result<Vec<EmbeddingRecord>> {
    let mut records = Vec::new();
    for pair in &dataset.pairs {
        let variants = index.pairs.get(&pair.id).ok_or_else(|| Error::Pair {
            pair_id: pair.id.clone(),
            message: "missing from variant index".into(),
        })?;
        let mut orig = None;
        for variant in variants.keys() {
            let path = index.resolve(&pair.id, variant).expect("listed variant");
            let vector = model.embed_image(&ImageBuffer::load(&path)?);
            if variant == VARIANT_ORIG {
                orig = Some(vector.clone());
            }
            records.push(EmbeddingRecord {
                pair_id: pair.id.clone(),
                kind: Kind::Image,
                variant: variant.clone(),
                vector,
            });
        }
        let orig = orig.ok_or_else(|| Error::Pair {
            pair_id: pair.id.clone(),
            message: "variant index has no original image".into(),
        })?;
        records.push(EmbeddingRecord {
            pair_id: pair.id.clone(),
            kind: Kind::Text,
            variant: TEXT_VARIANT_ORIG.into(),
            vector: model.embed_text(pair, true, &orig),
        });
        for cue in generic_cues {
            let generic = substitute_cue(pair, cue);
            let is_original = generic.text == pair.prompt;
            records.push(EmbeddingRecord {
                pair_id: pair.id.clone(),
                kind: Kind::Text,
                variant: generic_text_variant(cue),
                vector: model.embed_text(pair, is_original, &orig),
            });
        }
    }
    Ok(records)
}

pub fn export_store(
    dataset: &Dataset,
    index: &VariantIndex,
    model: &SyntheticModel,
    generic_cues: &[String],
    path: &Path,
) -> Result<()> {
    store_write(&export_records(dataset, index, model, generic_cues)?, path)
}

/// Records whose CLIP scores are prescribed exactly: every text embedding is
/// `e0` and the image embedding for `(pair, variant)` sits at the angle whose
/// cosine is `score / 100`.
pub fn scripted_records(
    pair_ids: &[String],
    image_variants: &[String],
    score: impl Fn(usize, &str) -> f64,
) -> Vec<EmbeddingRecord> {
    let mut text = vec![0.0; EMBEDDING_DIM];
    text[0] = 1.0;
    let mut records = Vec::new();
    for (i, id) in pair_ids.iter().enumerate() {
        for variant in image_variants {
            let cos = (score(i, variant) / 100.0).clamp(-1.0, 1.0);
            let mut v = vec![0.0; EMBEDDING_DIM];
            v[0] = cos;
            v[1] = (1.0 - cos * cos).sqrt();
            records.push(EmbeddingRecord {
                pair_id: id.clone(),
                kind: Kind::Image,
                variant: variant.clone(),
                vector: v,
            });
        }
        records.push(EmbeddingRecord {
            pair_id: id.clone(),
            kind: Kind::Text,
            variant: TEXT_VARIANT_ORIG.into(),
            vector: text.clone(),
        });
    }
    records
}

/// A dataset whose image paths are placeholders, for score-scripted stores.
pub fn placeholder_dataset(pairs: usize, width: u32, height: u32) -> Dataset {
    let pairs = (0..pairs)
        .map(|i| {
            ImageTextPair::decompose(
                format!("pano_{i:04}"),
                format!("images/pano_{i:04}.png"),
                format!("{FORMAT_CUE}a room, scene {i}"),
                FORMAT_CUE,
            )
        })
        .collect();
    Dataset::new("scripted", width, height, FORMAT_CUE, pairs).expect("valid placeholder dataset")
}
