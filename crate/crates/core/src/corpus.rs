//! Image-text manifests and prompt decomposition.
//!
//! A prompt `T` is split into a format cue `V*` (a prefix such as
//! `"<360panorama>, "`) and the remaining content descriptor. Generic prompts
//! are built by swapping only the cue.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Directional cues shipped as defaults for [`filter_directional`].
pub const DEFAULT_DIRECTIONAL_CUES: &str = include_str!("../data/directional_cues.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageTextPair {
    pub id: String,
    pub image_path: PathBuf,
    pub prompt: String,
    pub format_cue: String,
    pub content: String,
}

impl ImageTextPair {
    /// Splits `prompt` against `cue`. A prompt that does not start with the
    /// cue keeps an empty format cue and the whole prompt as content.
    pub fn decompose(
        id: impl Into<String>,
        image_path: impl Into<PathBuf>,
        prompt: impl Into<String>,
        cue: &str,
    ) -> Self {
        let prompt = prompt.into();
        let (format_cue, content) = match prompt.strip_prefix(cue) {
            Some(rest) if !cue.is_empty() => (cue.to_string(), rest.to_string()),
            _ => (String::new(), prompt.clone()),
        };
        ImageTextPair {
            id: id.into(),
            image_path: image_path.into(),
            prompt,
            format_cue,
            content,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub format_cue: String,
    pub pairs: Vec<ImageTextPair>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        width: u32,
        height: u32,
        format_cue: impl Into<String>,
        pairs: Vec<ImageTextPair>,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::validation("dataset must contain at least one pair"));
        }
        if width == 0 || height == 0 {
            return Err(Error::validation(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        let mut seen = HashSet::with_capacity(pairs.len());
        for pair in &pairs {
            if !seen.insert(pair.id.as_str()) {
                return Err(Error::validation(format!("duplicate pair id `{}`", pair.id)));
            }
        }
        Ok(Dataset {
            name: name.into(),
            width,
            height,
            format_cue: format_cue.into(),
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageTextPair> {
        self.pairs.iter().find(|p| p.id == id)
    }

    /// Re-splits every prompt against a different format cue.
    pub fn redecompose(&self, cue: &str) -> Dataset {
        let pairs = self
            .pairs
            .iter()
            .map(|p| ImageTextPair::decompose(&p.id, &p.image_path, &p.prompt, cue))
            .collect();
        Dataset {
            format_cue: cue.to_string(),
            pairs,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenericPrompt {
    pub pair_id: String,
    pub generic_cue: String,
    pub text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    name: String,
    width: u32,
    height: u32,
    format_cue: String,
    pairs: Vec<ManifestEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    id: String,
    image: PathBuf,
    prompt: String,
    #[serde(default)]
    format_cue: Option<String>,
}

/// Reads a JSON manifest. Image paths resolve against the manifest's directory.
pub fn parse_manifest(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest_str(&text, path, base)
}

pub(crate) fn parse_manifest_str(text: &str, path: &Path, base: &Path) -> Result<Dataset> {
    let doc: ManifestDoc = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let pairs = doc
        .pairs
        .into_iter()
        .map(|entry| {
            let cue = entry.format_cue.as_deref().unwrap_or(&doc.format_cue);
            ImageTextPair::decompose(entry.id, base.join(&entry.image), entry.prompt, cue)
        })
        .collect();
    Dataset::new(doc.name, doc.width, doc.height, doc.format_cue, pairs)
}

/// Builds `T^u` by replacing the pair's format cue with `generic_cue`.
pub fn substitute_cue(pair: &ImageTextPair, generic_cue: &str) -> GenericPrompt {
    GenericPrompt {
        pair_id: pair.id.clone(),
        generic_cue: generic_cue.to_string(),
        text: format!("{generic_cue}{}", pair.content),
    }
}

/// Drops pairs whose prompt contains any of `cues` (case-insensitive).
/// Empty cues are ignored.
pub fn filter_directional<S: AsRef<str>>(dataset: &Dataset, cues: &[S]) -> Dataset {
    let needles: Vec<String> = cues
        .iter()
        .map(|c| c.as_ref().to_lowercase())
        .filter(|c| !c.is_empty())
        .collect();
    let pairs = dataset
        .pairs
        .iter()
        .filter(|p| {
            let prompt = p.prompt.to_lowercase();
            !needles.iter().any(|n| prompt.contains(n.as_str()))
        })
        .cloned()
        .collect();
    Dataset {
        pairs,
        ..dataset.clone()
    }
}

/// Parses a cue list file: one cue per line, `#` comments and blank lines skipped.
pub fn parse_cue_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim_end)
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|l| l.trim_start().to_string())
        .collect()
}

pub fn default_directional_cues() -> Vec<String> {
    parse_cue_list(DEFAULT_DIRECTIONAL_CUES)
}
