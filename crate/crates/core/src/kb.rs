//! Knowledge bases and embedding retrieval.
//!
//! Two kinds of entries live in line-delimited JSON files: shape types
//! (object names with a description, handed to the describer in full) and
//! operation functions (API signatures, retrieved top-k by cosine
//! similarity for the coder and assembler).

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate entry id {0:?}")]
    DuplicateId(String),
    #[error("embedding failed for entry {id:?}: {source}")]
    Provider { id: String, source: EmbedError },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("malformed index file: {0}")]
    Index(String),
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding request failed: {0}")]
    Transport(String),
    #[error("embedding service returned an invalid payload: {0}")]
    Payload(String),
    #[error("expected a {expected}-dimensional vector, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("embedding vector has zero norm")]
    ZeroVector,
    #[error("environment variable {0} is not set")]
    MissingKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KbKind {
    ShapeType,
    OperationFunction,
}

impl fmt::Display for KbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KbKind::ShapeType => "shape_type",
            KbKind::OperationFunction => "operation_function",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbEntry {
    pub id: String,
    pub kind: KbKind,
    pub name: String,
    pub body: String,
}

impl KbEntry {
    /// Text that gets embedded for this entry.
    pub fn embedding_text(&self) -> String {
        format!("{}\n{}", self.name, self.body)
    }
}

pub fn parse_kb(text: &str) -> Result<Vec<KbEntry>, KbError> {
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: KbEntry = serde_json::from_str(line).map_err(|e| KbError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if entry.name.trim().is_empty() {
            return Err(KbError::Parse {
                line: i + 1,
                message: "entry name is empty".into(),
            });
        }
        if !seen.insert(entry.id.clone()) {
            return Err(KbError::DuplicateId(entry.id));
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn load_kb(path: impl AsRef<Path>) -> Result<Vec<KbEntry>, KbError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| KbError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_kb(&text)
}

/// Entries of one kind, ordered by id.
pub fn all_entries(entries: &[KbEntry], kind: KbKind) -> Vec<KbEntry> {
    let mut out: Vec<_> = entries.iter().filter(|e| e.kind == kind).cloned().collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError>;
}

pub fn unit_normalize(mut v: Vec<f64>) -> Result<Vec<f64>, EmbedError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm <= 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// Feature-hashing embedder: every lowercase alphanumeric token is hashed
/// (with the seed) to a bucket, a sign and a weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MockEmbedder {
    pub dimension: usize,
    pub seed: u64,
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self {
            dimension: 256,
            seed: 0,
        }
    }
}

impl MockEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self { dimension, seed }
    }

    fn accumulate(&self, v: &mut [f64], token: &str) {
        let digest = Sha256::new()
            .chain_update(self.seed.to_le_bytes())
            .chain_update(token.as_bytes())
            .finalize();
        let bucket = u64::from_le_bytes(digest[..8].try_into().unwrap()) % self.dimension as u64;
        let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
        let weight = 1.0 + digest[9] as f64 / 255.0;
        v[bucket as usize] += sign * weight;
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let mut v = vec![0.0; self.dimension];
        let lower = text.to_lowercase();
        let mut any = false;
        for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            self.accumulate(&mut v, token);
            any = true;
        }
        if !any {
            self.accumulate(&mut v, "\u{0}");
        }
        match unit_normalize(v) {
            Ok(v) => Ok(v),
            Err(_) => {
                // tokens cancelled out exactly
                let mut v = vec![0.0; self.dimension];
                self.accumulate(&mut v, &lower);
                unit_normalize(v)
            }
        }
    }
}

/// Remote embedding service. Sends `{"model", "input"}` and accepts either
/// `{"embedding": [...]}` or `{"data": [{"embedding": [...]}]}` back.
#[derive(Debug)]
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    dimension: usize,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: &str,
        model: &str,
        dimension: usize,
        api_key_env: Option<&str>,
        timeout: Duration,
    ) -> Result<Self, EmbedError> {
        let api_key = match api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| EmbedError::MissingKey(var.to_string()))?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            dimension,
            api_key,
            client,
        })
    }
}

#[derive(Deserialize)]
struct EmbeddingPayload {
    embedding: Option<Vec<f64>>,
    data: Option<Vec<EmbeddingDatum>>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl EmbeddingProvider for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let mut req = self
            .client
            .post(&self.endpoint)
            .json(&serde_json::json!({ "model": self.model, "input": text }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(EmbedError::Transport(format!("HTTP {status}")));
        }
        let payload: EmbeddingPayload = resp.json().map_err(|e| EmbedError::Payload(e.to_string()))?;
        let v = payload
            .embedding
            .or_else(|| payload.data.and_then(|d| d.into_iter().next()).map(|d| d.embedding))
            .ok_or_else(|| EmbedError::Payload("no embedding field".into()))?;
        if v.len() != self.dimension {
            return Err(EmbedError::Dimension {
                expected: self.dimension,
                actual: v.len(),
            });
        }
        unit_normalize(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedEntry {
    pub id: String,
    pub name: String,
    pub body: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredEntry {
    pub id: String,
    pub name: String,
    pub body: String,
    pub score: f64,
}

/// Write-once exact-scan cosine index over unit vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorIndex {
    dimension: usize,
    kind: KbKind,
    entries: Vec<IndexedEntry>,
}

impl VectorIndex {
    pub fn from_entries(
        dimension: usize,
        kind: KbKind,
        entries: Vec<IndexedEntry>,
    ) -> Result<Self, EmbedError> {
        let entries = entries
            .into_iter()
            .map(|mut e| {
                if e.vector.len() != dimension {
                    return Err(EmbedError::Dimension {
                        expected: dimension,
                        actual: e.vector.len(),
                    });
                }
                e.vector = unit_normalize(e.vector)?;
                Ok(e)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            dimension,
            kind,
            entries,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn kind(&self) -> KbKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexedEntry] {
        &self.entries
    }

    /// Top `k` by dot product with `query`, ties broken by ascending id.
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<ScoredEntry>, EmbedError> {
        if query.len() != self.dimension {
            return Err(EmbedError::Dimension {
                expected: self.dimension,
                actual: query.len(),
            });
        }
        let q = unit_normalize(query.to_vec())?;
        let mut scored: Vec<ScoredEntry> = self
            .entries
            .iter()
            .map(|e| ScoredEntry {
                id: e.id.clone(),
                name: e.name.clone(),
                body: e.body.clone(),
                score: e.vector.iter().zip(&q).map(|(a, b)| a * b).sum(),
            })
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
        scored.truncate(k);
        Ok(scored)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), KbError> {
        let path = path.as_ref();
        let json = serde_json::to_string(self).map_err(|e| KbError::Index(e.to_string()))?;
        std::fs::write(path, json).map_err(|source| KbError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KbError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| KbError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let raw: VectorIndex = serde_json::from_str(&text).map_err(|e| KbError::Index(e.to_string()))?;
        Self::from_entries(raw.dimension, raw.kind, raw.entries).map_err(KbError::Embed)
    }
}

/// Embeds every entry of `kind` (name and body) into a new index.
pub fn build_index(
    entries: &[KbEntry],
    provider: &dyn EmbeddingProvider,
    kind: KbKind,
) -> Result<VectorIndex, KbError> {
    let indexed = all_entries(entries, kind)
        .into_iter()
        .map(|e| {
            let vector = provider
                .embed(&e.embedding_text())
                .map_err(|source| KbError::Provider {
                    id: e.id.clone(),
                    source,
                })?;
            Ok(IndexedEntry {
                id: e.id,
                name: e.name,
                body: e.body,
                vector,
            })
        })
        .collect::<Result<Vec<_>, KbError>>()?;
    Ok(VectorIndex::from_entries(provider.dimension(), kind, indexed)?)
}

pub fn retrieve_top_k(
    index: &VectorIndex,
    query: &str,
    k: usize,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<ScoredEntry>, KbError> {
    if index.is_empty() || k == 0 {
        return Ok(Vec::new());
    }
    let q = provider.embed(query)?;
    Ok(index.search(&q, k)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(id: &str, kind: KbKind, name: &str, body: &str) -> KbEntry {
        KbEntry {
            id: id.into(),
            kind,
            name: name.into(),
            body: body.into(),
        }
    }

    fn line(id: &str) -> String {
        format!(r#"{{"id":"{id}","kind":"operation_function","name":"n{id}","body":"b"}}"#)
    }

    #[test]
    fn load_cases() {
        assert!(parse_kb("").unwrap().is_empty());
        let two = parse_kb(&format!("{}\n{}\n", line("a"), line("b"))).unwrap();
        assert_eq!(two.len(), 2);
        match parse_kb(&format!("{}\n{}", line("a"), line("a"))) {
            Err(KbError::DuplicateId(id)) => assert_eq!(id, "a"),
            other => panic!("unexpected {other:?}"),
        }
        match parse_kb(&format!("{}\n{{oops", line("a"))) {
            Err(KbError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let nameless = r#"{"id":"x","kind":"shape_type","name":" ","body":""}"#;
        assert!(matches!(parse_kb(nameless), Err(KbError::Parse { line: 1, .. })));
    }

    #[test]
    fn index_and_self_retrieval() {
        let provider = MockEmbedder::default();
        let entries: Vec<_> = (0..10)
            .map(|i| {
                entry(
                    &format!("f{i:02}"),
                    KbKind::OperationFunction,
                    &format!("add_thing_{i}"),
                    &format!("adds thing number {i} with colour {}", i * 7),
                )
            })
            .chain([entry("s1", KbKind::ShapeType, "TextBox", "text")])
            .collect();
        let index = build_index(&entries, &provider, KbKind::OperationFunction).unwrap();
        assert_eq!(index.len(), 10);
        for e in index.entries() {
            let norm: f64 = e.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
        assert_eq!(index, build_index(&entries, &provider, KbKind::OperationFunction).unwrap());

        let target = &entries[4];
        let hits = retrieve_top_k(&index, &target.embedding_text(), 3, &provider).unwrap();
        assert_eq!(hits[0].id, target.id);
        assert!((hits[0].score - 1.0).abs() < 1e-9);
        assert_eq!(hits.len(), 3);

        let none = build_index(&entries, &provider, KbKind::ShapeType).unwrap();
        assert_eq!(none.len(), 1);
        let empty = build_index(&[], &provider, KbKind::ShapeType).unwrap();
        assert!(retrieve_top_k(&empty, "anything", 5, &provider).unwrap().is_empty());
    }

    #[test]
    fn orthogonal_vectors_score_zero() {
        let index = VectorIndex::from_entries(
            2,
            KbKind::OperationFunction,
            vec![
                IndexedEntry {
                    id: "x".into(),
                    name: "x".into(),
                    body: String::new(),
                    vector: vec![1.0, 0.0],
                },
                IndexedEntry {
                    id: "y".into(),
                    name: "y".into(),
                    body: String::new(),
                    vector: vec![0.0, 3.0],
                },
            ],
        )
        .unwrap();
        let hits = index.search(&[1.0, 0.0], 2).unwrap();
        assert_eq!(hits[0].score, 1.0);
        assert_eq!((hits[1].id.as_str(), hits[1].score), ("y", 0.0));
    }

    #[test]
    fn all_entries_sorted_by_id() {
        let entries = vec![
            entry("b", KbKind::ShapeType, "B", ""),
            entry("a", KbKind::ShapeType, "A", ""),
            entry("c", KbKind::OperationFunction, "C", ""),
        ];
        let ids: Vec<_> = all_entries(&entries, KbKind::ShapeType).into_iter().map(|e| e.id).collect();
        assert_eq!(ids, vec!["a", "b"]);
        assert!(all_entries(&[], KbKind::ShapeType).is_empty());
    }

    #[test]
    fn mock_embedder_handles_empty_text() {
        let p = MockEmbedder::new(16, 3);
        let v = p.embed("").unwrap();
        assert_eq!(v.len(), 16);
        assert_eq!(v, p.embed("  ").unwrap());
    }

    proptest! {
        #[test]
        fn full_retrieval_is_sorted_permutation(
            vectors in prop::collection::vec(prop::collection::vec(-1f64..1.0, 4), 1..30),
            query in prop::collection::vec(-1f64..1.0, 4),
        ) {
            prop_assume!(query.iter().any(|x| x.abs() > 1e-3));
            let entries: Vec<_> = vectors
                .iter()
                .enumerate()
                .filter(|(_, v)| v.iter().any(|x| x.abs() > 1e-3))
                .map(|(i, v)| IndexedEntry { id: format!("e{i:03}"), name: String::new(), body: String::new(), vector: v.clone() })
                .collect();
            let index = VectorIndex::from_entries(4, KbKind::OperationFunction, entries).unwrap();
            let hits = index.search(&query, index.len()).unwrap();
            prop_assert_eq!(hits.len(), index.len());
            for w in hits.windows(2) {
                prop_assert!(w[0].score >= w[1].score);
            }
            for h in &hits {
                prop_assert!(h.score >= -1.0 - 1e-12 && h.score <= 1.0 + 1e-12);
            }
        }
    }
}
