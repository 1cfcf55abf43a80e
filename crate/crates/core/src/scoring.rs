//! Embeddings, CLIP scores and embedding providers.
//!
//! The store is a JSON-lines text file: a header line
//! `{"dim": D, "count": K, "normalized": true}` followed by `K` record lines
//! `{"pair_id": .., "kind": "image"|"text", "variant": .., "vector": [..]}`.
//! Vector components are written with 17 significant digits so that every
//! `f64` survives a write/read cycle bit-for-bit.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::VariantIndex;

/// Allowed deviation of a stored vector's norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-4;

pub const TEXT_VARIANT_ORIG: &str = "prompt:orig";

/// Variant label for the text embedding of a generic prompt built with `generic_cue`.
pub fn generic_text_variant(generic_cue: &str) -> String {
    format!("prompt:generic:{}", &crate::sha256_hex(generic_cue)[..16])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Image,
    Text,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Image => "image",
            Kind::Text => "text",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EmbeddingKey {
    pub pair_id: String,
    pub kind: Kind,
    pub variant: String,
}

impl EmbeddingKey {
    pub fn new(pair_id: impl Into<String>, kind: Kind, variant: impl Into<String>) -> Self {
        EmbeddingKey {
            pair_id: pair_id.into(),
            kind,
            variant: variant.into(),
        }
    }

    pub fn image(pair_id: impl Into<String>, variant: impl Into<String>) -> Self {
        Self::new(pair_id, Kind::Image, variant)
    }

    pub fn text(pair_id: impl Into<String>, variant: impl Into<String>) -> Self {
        Self::new(pair_id, Kind::Text, variant)
    }
}

impl fmt::Display for EmbeddingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.pair_id, self.kind, self.variant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub pair_id: String,
    pub kind: Kind,
    pub variant: String,
    pub vector: Vec<f64>,
}

impl EmbeddingRecord {
    pub fn key(&self) -> EmbeddingKey {
        EmbeddingKey::new(&self.pair_id, self.kind, &self.variant)
    }
}

/// A CLIP score, `max(100 * cos, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Score(pub f64);

impl Score {
    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn normalize(vector: &[f64]) -> Result<Vec<f64>> {
    let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::validation(format!("cannot normalize vector with norm {norm}")));
    }
    Ok(vector.iter().map(|v| v / norm).collect())
}

pub fn clip_score(image_emb: &[f64], text_emb: &[f64]) -> Result<Score> {
    if image_emb.len() != text_emb.len() {
        return Err(Error::validation(format!(
            "embedding dimensions differ: image {} vs text {}",
            image_emb.len(),
            text_emb.len()
        )));
    }
    let dot: f64 = image_emb.iter().zip(text_emb).map(|(a, b)| a * b).sum();
    Ok(Score((100.0 * dot).max(0.0)))
}

fn check_unit(key: &EmbeddingKey, vector: &[f64]) -> Result<()> {
    let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::validation(format!(
            "embedding {key} has norm {norm}, expected 1 within {NORM_TOLERANCE}"
        )));
    }
    Ok(())
}

/// In-memory embedding store with a single dimension for all records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    records: IndexMap<EmbeddingKey, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct StoreHeader {
    dim: usize,
    count: usize,
    normalized: bool,
}

impl EmbeddingStore {
    pub fn from_records(records: impl IntoIterator<Item = EmbeddingRecord>) -> Result<Self> {
        let mut store = EmbeddingStore::default();
        for (i, rec) in records.into_iter().enumerate() {
            store.insert(i, rec)?;
        }
        Ok(store)
    }

    fn insert(&mut self, index: usize, rec: EmbeddingRecord) -> Result<()> {
        let key = rec.key();
        if self.records.is_empty() && self.dim == 0 {
            self.dim = rec.vector.len();
        }
        if rec.vector.len() != self.dim {
            return Err(Error::validation(format!(
                "record {index} {key} has dimension {}, store dimension is {}",
                rec.vector.len(),
                self.dim
            )));
        }
        check_unit(&key, &rec.vector)?;
        if self.records.contains_key(&key) {
            return Err(Error::validation(format!("record {index}: duplicate key {key}")));
        }
        self.records.insert(key, rec.vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, key: &EmbeddingKey) -> Option<&[f64]> {
        self.records.get(key).map(Vec::as_slice)
    }

    pub fn records(&self) -> impl Iterator<Item = EmbeddingRecord> + '_ {
        self.records.iter().map(|(k, v)| EmbeddingRecord {
            pair_id: k.pair_id.clone(),
            kind: k.kind,
            variant: k.variant.clone(),
            vector: v.clone(),
        })
    }
}

fn format_vector(out: &mut String, vector: &[f64]) {
    out.push('[');
    for (i, v) in vector.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!("{v:.16e}"));
    }
    out.push(']');
}

/// Writes records in the given order. All records must share one dimension
/// and be unit-norm.
pub fn store_write(records: &[EmbeddingRecord], path: &Path) -> Result<()> {
    let store = EmbeddingStore::from_records(records.iter().cloned())?;
    let file = fs::File::create(path)
        .map_err(|e| Error::io(format!("creating store {}", path.display()), e))?;
    let mut out = BufWriter::new(file);
    let header = StoreHeader {
        dim: store.dim,
        count: store.len(),
        normalized: true,
    };
    let mut buf = serde_json::to_string(&header).expect("header serializes");
    buf.push('\n');
    for rec in records {
        buf.push_str("{\"pair_id\":");
        buf.push_str(&serde_json::to_string(&rec.pair_id).expect("string serializes"));
        buf.push_str(",\"kind\":\"");
        buf.push_str(&rec.kind.to_string());
        buf.push_str("\",\"variant\":");
        buf.push_str(&serde_json::to_string(&rec.variant).expect("string serializes"));
        buf.push_str(",\"vector\":");
        format_vector(&mut buf, &rec.vector);
        buf.push_str("}\n");
        if buf.len() > 1 << 16 {
            out.write_all(buf.as_bytes())
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
            buf.clear();
        }
    }
    out.write_all(buf.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn store_read(path: &Path) -> Result<EmbeddingStore> {
    let file = fs::File::open(path)
        .map_err(|e| Error::io(format!("opening store {}", path.display()), e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header".into()))?
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let header: StoreHeader =
        serde_json::from_str(&header_line).map_err(|e| parse_err(1, format!("bad header: {e}")))?;
    if !header.normalized {
        return Err(parse_err(1, "store header must declare normalized: true".into()));
    }
    if header.dim == 0 && header.count > 0 {
        return Err(parse_err(1, "non-empty store declares dimension 0".into()));
    }

    let mut store = EmbeddingStore {
        dim: header.dim,
        records: IndexMap::with_capacity(header.count),
    };
    let mut index = 0;
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(&line)
            .map_err(|e| parse_err(n + 2, format!("record {index}: {e}")))?;
        if index >= header.count {
            return Err(parse_err(
                n + 2,
                format!("more records than the header count {}", header.count),
            ));
        }
        store.insert(index, rec)?;
        index += 1;
    }
    if index != header.count {
        return Err(parse_err(
            index + 1,
            format!("truncated store: header declares {} records, found {index}", header.count),
        ));
    }
    Ok(store)
}

/// A single embedding lookup. `text` carries the prompt for text keys so that
/// providers which compute embeddings can do so.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingRequest {
    pub key: EmbeddingKey,
    pub text: Option<String>,
}

impl EmbeddingRequest {
    pub fn image(pair_id: &str, variant: &str) -> Self {
        EmbeddingRequest {
            key: EmbeddingKey::image(pair_id, variant),
            text: None,
        }
    }

    pub fn text(pair_id: &str, variant: &str, text: &str) -> Self {
        EmbeddingRequest {
            key: EmbeddingKey::text(pair_id, variant),
            text: Some(text.to_string()),
        }
    }
}

pub trait EmbeddingProvider: Sync {
    /// Returns the unit-norm embedding for the request.
    fn fetch(&self, request: &EmbeddingRequest) -> Result<Vec<f64>>;

    /// Results come back in request order; the first failure in that order wins.
    fn fetch_many(&self, requests: &[EmbeddingRequest]) -> Result<Vec<Vec<f64>>> {
        requests.iter().map(|r| self.fetch(r)).collect()
    }

    fn describe(&self) -> String;
}

/// Pure lookup over a store loaded in memory.
#[derive(Debug, Clone)]
pub struct FileProvider {
    store: EmbeddingStore,
    label: String,
}

impl FileProvider {
    pub fn new(store: EmbeddingStore, label: impl Into<String>) -> Self {
        FileProvider {
            store,
            label: label.into(),
        }
    }

    pub fn open(path: &Path) -> Result<Self> {
        Ok(Self::new(store_read(path)?, path.display().to_string()))
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }
}

impl EmbeddingProvider for FileProvider {
    fn fetch(&self, request: &EmbeddingRequest) -> Result<Vec<f64>> {
        self.store
            .get(&request.key)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| Error::NotFound(request.key.clone()))
    }

    fn describe(&self) -> String {
        format!("file:{}", self.label)
    }
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    kind: Kind,
    data: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
}

/// Client for an HTTP service exposing `POST /embed`.
///
/// Image requests send the variant file (resolved through the variant index)
/// as base64; text requests send the raw prompt.
pub struct ServiceProvider {
    endpoint: String,
    variants: Option<VariantIndex>,
    client: reqwest::blocking::Client,
    max_attempts: usize,
    max_in_flight: usize,
    retry_delay: Duration,
}

impl ServiceProvider {
    pub fn new(base_url: &str, variants: Option<VariantIndex>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::validation(format!("building HTTP client: {e}")))?;
        Ok(ServiceProvider {
            endpoint: format!("{}/embed", base_url.trim_end_matches('/')),
            variants,
            client,
            max_attempts: 3,
            max_in_flight: 4,
            retry_delay: Duration::from_millis(200),
        })
    }

    pub fn with_retries(mut self, max_attempts: usize, retry_delay: Duration) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.retry_delay = retry_delay;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    fn payload(&self, request: &EmbeddingRequest) -> Result<String> {
        let key = &request.key;
        match key.kind {
            Kind::Text => request
                .text
                .clone()
                .ok_or_else(|| Error::validation(format!("text request {key} carries no text"))),
            Kind::Image => {
                let path = self
                    .variants
                    .as_ref()
                    .and_then(|v| v.resolve(&key.pair_id, &key.variant))
                    .ok_or_else(|| Error::NotFound(key.clone()))?;
                let bytes = fs::read(&path)
                    .map_err(|e| Error::io(format!("reading {} for {key}", path.display()), e))?;
                Ok(base64::engine::general_purpose::STANDARD.encode(bytes))
            }
        }
    }

    fn post_once(&self, body: &EmbedBody<'_>) -> std::result::Result<Vec<f64>, (bool, String)> {
        let resp = self
            .client
            .post(&self.endpoint)
            .json(body)
            .send()
            .map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err((status.is_server_error(), format!("HTTP {status}")));
        }
        resp.json::<EmbedResponse>()
            .map(|r| r.vector)
            .map_err(|e| (false, format!("bad response body: {e}")))
    }
}

impl EmbeddingProvider for ServiceProvider {
    fn fetch(&self, request: &EmbeddingRequest) -> Result<Vec<f64>> {
        let data = self.payload(request)?;
        let body = EmbedBody {
            kind: request.key.kind,
            data: &data,
        };
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.post_once(&body) {
                Ok(vector) => {
                    return normalize(&vector).map_err(|e| Error::Service {
                        key: request.key.clone(),
                        attempts: attempt,
                        message: e.to_string(),
                    })
                }
                Err((retriable, message)) => {
                    if !retriable || attempt >= self.max_attempts {
                        return Err(Error::Service {
                            key: request.key.clone(),
                            attempts: attempt,
                            message,
                        });
                    }
                    log::warn!("embedding {} attempt {attempt} failed: {message}", request.key);
                    std::thread::sleep(self.retry_delay * attempt as u32);
                }
            }
        }
    }

    fn fetch_many(&self, requests: &[EmbeddingRequest]) -> Result<Vec<Vec<f64>>> {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<Vec<f64>>>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();
        let workers = self.max_in_flight.min(requests.len()).max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= requests.len() {
                        break;
                    }
                    let result = self.fetch(&requests[i]);
                    let failed = result.is_err();
                    *slots[i].lock().expect("slot lock") = Some(result);
                    if failed {
                        // stop handing out new work
                        next.store(requests.len(), Ordering::Relaxed);
                    }
                });
            }
        });
        let mut out = Vec::with_capacity(requests.len());
        for (slot, request) in slots.into_iter().zip(requests) {
            match slot.into_inner().expect("slot lock") {
                Some(result) => out.push(result?),
                None => {
                    return Err(Error::Service {
                        key: request.key.clone(),
                        attempts: 0,
                        message: "not attempted after an earlier failure".into(),
                    })
                }
            }
        }
        Ok(out)
    }

    fn describe(&self) -> String {
        format!("service:{}", self.endpoint)
    }
}
