//! Embedding providers and the cosine nearest-neighbour index shared by the
//! selection and value memories.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("cannot embed empty text")]
    EmptyInput,
    #[error("provider returned an invalid vector: {0}")]
    InvalidVector(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, vector has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("vector for `{0}` contains non-finite values")]
    NonFinite(String),
    #[error("index dimension must be positive")]
    ZeroDimension,
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("index io: {0}")]
    Io(String),
}

/// A finite, fixed-length embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Returns `None` if any component is NaN or infinite.
    pub fn new(values: Vec<f32>) -> Option<Self> {
        values.iter().all(|v| v.is_finite()).then_some(Self(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn scaled(&self, factor: f32) -> Option<Self> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }
}

/// Produces embeddings for text. Identical input must give identical output
/// within one provider instance.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

pub const HASHING_DIM: usize = 256;

/// Offline embedder: case-folded, whitespace-collapsed character trigrams
/// hashed into a 256-bucket count vector and L2-normalized.
///
/// The text is padded with one space on each side before trigram extraction,
/// so strings shorter than three characters (e.g. `LA`) still produce
/// trigrams and word boundaries carry signal.
#[derive(Debug, Clone, Default)]
pub struct HashingEmbedder;

impl HashingEmbedder {
    pub fn new() -> Self {
        HashingEmbedder
    }

    pub fn normalize_text(text: &str) -> String {
        text.split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase()
    }

    pub fn trigrams(text: &str) -> Vec<String> {
        let padded: Vec<char> = format!(" {} ", Self::normalize_text(text)).chars().collect();
        padded.windows(3).map(|w| w.iter().collect()).collect()
    }

    fn bucket(trigram: &str) -> usize {
        // FNV-1a, stable across platforms and releases.
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in trigram.as_bytes() {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        (hash % HASHING_DIM as u64) as usize
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn name(&self) -> &str {
        "hashing-trigram-256"
    }

    fn dimension(&self) -> usize {
        HASHING_DIM
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        let mut counts = vec![0f64; HASHING_DIM];
        for tri in Self::trigrams(text) {
            counts[Self::bucket(&tri)] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        let values = counts.iter().map(|c| (c / norm) as f32).collect();
        Ok(EmbeddingVector(values))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    #[serde(default)]
    vectors: Option<Vec<Vec<f32>>>,
    /// Token-level output, mean-pooled per text.
    #[serde(default)]
    token_vectors: Option<Vec<Vec<Vec<f32>>>>,
}

/// Remote embedder speaking `POST {base}/embed` with `{"texts": [...]}`.
///
/// The server may answer with sentence vectors (`{"vectors": [[...]]}`) or
/// token vectors (`{"token_vectors": [[[...]]]}`); token vectors are
/// mean-pooled.
pub struct HttpEmbeddingProvider {
    name: String,
    url: String,
    dimension: usize,
    agent: ureq::Agent,
}

impl HttpEmbeddingProvider {
    pub fn new(base_url: &str, dimension: usize, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            name: format!("http:{base_url}"),
            url: format!("{}/embed", base_url.trim_end_matches('/')),
            dimension,
            agent: config.into(),
        }
    }

    fn validate(&self, values: Vec<f32>) -> Result<EmbeddingVector, EmbedError> {
        if values.len() != self.dimension {
            return Err(EmbedError::InvalidVector(format!(
                "expected dimension {}, got {}",
                self.dimension,
                values.len()
            )));
        }
        let v = EmbeddingVector::new(values)
            .ok_or_else(|| EmbedError::InvalidVector("non-finite component".into()))?;
        if v.norm() == 0.0 {
            return Err(EmbedError::InvalidVector("zero vector".into()));
        }
        Ok(v)
    }
}

pub fn mean_pool(tokens: &[Vec<f32>]) -> Option<Vec<f32>> {
    let first = tokens.first()?;
    let mut sum = vec![0f64; first.len()];
    for tok in tokens {
        if tok.len() != sum.len() {
            return None;
        }
        for (s, v) in sum.iter_mut().zip(tok) {
            *s += *v as f64;
        }
    }
    let n = tokens.len() as f64;
    Some(sum.into_iter().map(|s| (s / n) as f32).collect())
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut out = self.embed_batch(&[text])?;
        out.pop()
            .ok_or_else(|| EmbedError::InvalidVector("empty response".into()))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyInput);
        }
        let unavailable = |e: String| EmbedError::ProviderUnavailable(e);
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(EmbedRequest { texts })
            .map_err(|e| unavailable(e.to_string()))?;
        if resp.status() != 200 {
            return Err(unavailable(format!("HTTP {}", resp.status())));
        }
        let body: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| unavailable(format!("bad response body: {e}")))?;
        let raw: Vec<Vec<f32>> = match (body.vectors, body.token_vectors) {
            (Some(v), _) => v,
            (None, Some(tokens)) => tokens
                .iter()
                .map(|t| {
                    mean_pool(t).ok_or_else(|| {
                        EmbedError::InvalidVector("ragged or empty token vectors".into())
                    })
                })
                .collect::<Result<_, _>>()?,
            (None, None) => return Err(unavailable("response has no vectors".into())),
        };
        if raw.len() != texts.len() {
            return Err(EmbedError::InvalidVector(format!(
                "asked for {} vectors, got {}",
                texts.len(),
                raw.len()
            )));
        }
        raw.into_iter().map(|v| self.validate(v)).collect()
    }
}

/// One search hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredId {
    pub id: String,
    pub score: f64,
}

/// Exhaustive cosine index. Records keep insertion order, which is also the
/// order they are persisted in; ranking never depends on it.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    norms: Vec<f64>,
    positions: HashMap<String, usize>,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Result<Self, IndexError> {
        if dim == 0 {
            return Err(IndexError::ZeroDimension);
        }
        Ok(Self {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            norms: Vec::new(),
            positions: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.positions.get(id).map(|&i| &self.vectors[i])
    }

    pub fn records(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.ids.iter().map(String::as_str).zip(&self.vectors)
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: EmbeddingVector) -> Result<(), IndexError> {
        let id = id.into();
        if vector.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                actual: vector.dim(),
            });
        }
        if self.positions.contains_key(&id) {
            return Err(IndexError::DuplicateId(id));
        }
        self.positions.insert(id.clone(), self.ids.len());
        self.norms.push(vector.norm());
        self.ids.push(id);
        self.vectors.push(vector);
        Ok(())
    }

    /// Top-`k` records by cosine similarity, ties broken by id ascending.
    /// Zero-norm vectors score 0 against everything.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<ScoredId>, IndexError> {
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        if k == 0 || self.is_empty() {
            return Ok(Vec::new());
        }
        let q = query.as_slice();
        let q_norm = query.norm();
        let mut scored: Vec<(f64, usize)> = self
            .vectors
            .iter()
            .zip(&self.norms)
            .enumerate()
            .map(|(i, (v, &n))| {
                let score = if n == 0.0 || q_norm == 0.0 {
                    0.0
                } else {
                    dot(q, v.as_slice()) / (q_norm * n)
                };
                (score, i)
            })
            .collect();
        let ids = &self.ids;
        let order = |a: &(f64, usize), b: &(f64, usize)| {
            b.0.total_cmp(&a.0).then_with(|| ids[a.1].cmp(&ids[b.1]))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(scored
            .into_iter()
            .map(|(score, i)| ScoredId {
                id: self.ids[i].clone(),
                score,
            })
            .collect())
    }

    /// Serializes to the line-oriented `relmem-vindex` format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = IndexHeader {
            format: INDEX_FORMAT.to_string(),
            version: INDEX_VERSION,
            dim: self.dim,
            metric: "cosine".to_string(),
            count: self.len(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        for (id, vector) in self.records() {
            let bytes: Vec<u8> = vector
                .as_slice()
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect();
            let line = IndexRecord {
                id: id.to_string(),
                vec: BASE64.encode(bytes),
            };
            out.extend(serde_json::to_vec(&line).expect("record serializes"));
            out.push(b'\n');
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let corrupt = |msg: String| IndexError::CorruptIndex(msg);
        let mut lines = BufReader::new(bytes).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| corrupt("missing header".into()))?
            .map_err(|e| corrupt(e.to_string()))?;
        let header: IndexHeader =
            serde_json::from_str(&header_line).map_err(|e| corrupt(format!("header: {e}")))?;
        if header.format != INDEX_FORMAT {
            return Err(corrupt(format!("bad magic `{}`", header.format)));
        }
        if header.version != INDEX_VERSION {
            return Err(corrupt(format!("unsupported version {}", header.version)));
        }
        if header.metric != "cosine" {
            return Err(corrupt(format!("unsupported metric `{}`", header.metric)));
        }
        let mut index = VectorIndex::new(header.dim).map_err(|_| corrupt("zero dimension".into()))?;
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| corrupt(e.to_string()))?;
            let record: IndexRecord = serde_json::from_str(&line)
                .map_err(|e| corrupt(format!("record {n}: {e}")))?;
            let raw = BASE64
                .decode(record.vec.as_bytes())
                .map_err(|e| corrupt(format!("record {n}: {e}")))?;
            if raw.len() != header.dim * 4 {
                return Err(corrupt(format!(
                    "record {n}: expected {} floats, found {} bytes",
                    header.dim,
                    raw.len()
                )));
            }
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let vector = EmbeddingVector::new(values)
                .ok_or_else(|| corrupt(format!("record {n}: non-finite value")))?;
            index
                .insert(record.id, vector)
                .map_err(|e| corrupt(format!("record {n}: {e}")))?;
        }
        if index.len() != header.count {
            return Err(corrupt(format!(
                "header declares {} records, found {}",
                header.count,
                index.len()
            )));
        }
        Ok(index)
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

const INDEX_FORMAT: &str = "relmem-vindex";
const INDEX_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    format: String,
    version: u32,
    dim: usize,
    metric: String,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct IndexRecord {
    id: String,
    vec: String,
}

pub fn save_index(index: &VectorIndex, location: impl AsRef<Path>) -> Result<(), IndexError> {
    crate::persist::write_atomic(location.as_ref(), &index.to_bytes())
        .map_err(|e| IndexError::Io(e.to_string()))
}

pub fn load_index(location: impl AsRef<Path>) -> Result<VectorIndex, IndexError> {
    let bytes = fs::read(location.as_ref()).map_err(|e| IndexError::Io(e.to_string()))?;
    VectorIndex::from_bytes(&bytes)
}
