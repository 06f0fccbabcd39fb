//! Annotated poem corpus: JSON-lines loading and nearest-record retrieval.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbedError, Embedder, EmbeddingVector};

/// One corpus entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoemRecord {
    pub id: String,
    pub poem: String,
    pub translation: String,
    #[serde(default)]
    pub annotations: Vec<String>,
    #[serde(default)]
    pub appreciation: String,
    /// Hand-labelled key elements, when the record is part of a benchmark.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_elements: Option<Vec<String>>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("duplicate id {id:?} on lines {first_line} and {second_line}")]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("best match similarity {similarity:.4} is below the floor {floor:.4}")]
    BelowFloor { similarity: f64, floor: f64 },
    #[error("embedding cache is inconsistent: {0}")]
    Cache(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Cached record embeddings for one provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCache {
    pub provider: String,
    pub vectors: BTreeMap<String, EmbeddingVector>,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    records: Vec<PoemRecord>,
    cache: Option<EmbeddingCache>,
}

/// Best match for a query.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub index: usize,
    pub record: PoemRecord,
    pub similarity: f64,
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Corpus::from_reader(file)
}

impl Corpus {
    /// Builds a corpus from records already in memory, enforcing the same
    /// invariants as the line loader (line numbers are 1-based positions).
    pub fn new(records: Vec<PoemRecord>) -> Result<Self, CorpusError> {
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, rec) in records.iter().enumerate() {
            check_record(rec, i + 1)?;
            if let Some(&first_line) = seen.get(&rec.id) {
                return Err(CorpusError::DuplicateId {
                    id: rec.id.clone(),
                    first_line,
                    second_line: i + 1,
                });
            }
            seen.insert(rec.id.clone(), i + 1);
        }
        Ok(Self {
            records,
            cache: None,
        })
    }

    /// Parses the line format. Blank lines are skipped but still counted
    /// for error positions.
    pub fn from_reader(reader: impl Read) -> Result<Self, CorpusError> {
        let mut records = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| CorpusError::MalformedLine {
                line: line_no,
                reason: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PoemRecord =
                serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                    line: line_no,
                    reason: e.to_string(),
                })?;
            check_record(&rec, line_no)?;
            if let Some(&first_line) = seen.get(&rec.id) {
                return Err(CorpusError::DuplicateId {
                    id: rec.id,
                    first_line,
                    second_line: line_no,
                });
            }
            seen.insert(rec.id.clone(), line_no);
            records.push(rec);
        }
        Ok(Self {
            records,
            cache: None,
        })
    }

    /// One JSON object per line, in corpus order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.records {
            // PoemRecord contains only strings; serialization cannot fail.
            out.push_str(&serde_json::to_string(rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn records(&self) -> &[PoemRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&PoemRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn cache(&self) -> Option<&EmbeddingCache> {
        self.cache.as_ref()
    }

    /// Embeds every poem with `provider` and keeps the vectors.
    pub fn build_cache(&mut self, provider: &dyn Embedder) -> Result<&EmbeddingCache, CorpusError> {
        let mut vectors = BTreeMap::new();
        let mut dims = None;
        for rec in &self.records {
            let v = provider.embed(&rec.poem)?;
            match dims {
                None => dims = Some(v.dims()),
                Some(d) if d != v.dims() => {
                    return Err(CorpusError::Cache(format!(
                        "record {} has {} dims, expected {d}",
                        rec.id,
                        v.dims()
                    )))
                }
                Some(_) => {}
            }
            vectors.insert(rec.id.clone(), v);
        }
        self.cache = Some(EmbeddingCache {
            provider: provider.id().to_string(),
            vectors,
        });
        Ok(self.cache.as_ref().expect("cache just set"))
    }

    /// Installs a cache produced earlier (for instance by `ingest`).
    pub fn set_cache(&mut self, cache: EmbeddingCache) -> Result<(), CorpusError> {
        let mut dims = None;
        for rec in &self.records {
            let v = cache
                .vectors
                .get(&rec.id)
                .ok_or_else(|| CorpusError::Cache(format!("no vector for record {}", rec.id)))?;
            if *dims.get_or_insert(v.dims()) != v.dims() {
                return Err(CorpusError::Cache("non-uniform dimensions".into()));
            }
        }
        self.cache = Some(cache);
        Ok(())
    }

    fn poem_vector(
        &self,
        index: usize,
        provider: &dyn Embedder,
    ) -> Result<EmbeddingVector, EmbedError> {
        let rec = &self.records[index];
        if let Some(cache) = &self.cache {
            if cache.provider == provider.id() {
                if let Some(v) = cache.vectors.get(&rec.id) {
                    return Ok(v.clone());
                }
            }
        }
        provider.embed(&rec.poem)
    }
}

fn check_record(rec: &PoemRecord, line: usize) -> Result<(), CorpusError> {
    let missing = |field: &str| CorpusError::MalformedLine {
        line,
        reason: format!("field `{field}` must be non-empty"),
    };
    if rec.id.is_empty() {
        return Err(missing("id"));
    }
    if rec.poem.is_empty() {
        return Err(missing("poem"));
    }
    if rec.translation.is_empty() {
        return Err(missing("translation"));
    }
    Ok(())
}

/// Returns the record whose poem is most similar to `query`. Exact ties go
/// to the lowest corpus index. With `floor` set, a best match below it is
/// rejected.
pub fn retrieve(
    query: &str,
    corpus: &Corpus,
    provider: &dyn Embedder,
    floor: Option<f64>,
) -> Result<RetrievalResult, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let q = provider.embed(query)?;
    let mut best: Option<(usize, f64)> = None;
    for i in 0..corpus.len() {
        let sim = q.cosine(&corpus.poem_vector(i, provider)?)?;
        if best.is_none_or(|(_, b)| sim > b) {
            best = Some((i, sim));
        }
    }
    let (index, similarity) = best.expect("corpus is non-empty");
    if let Some(floor) = floor {
        if similarity < floor {
            return Err(CorpusError::BelowFloor { similarity, floor });
        }
    }
    Ok(RetrievalResult {
        index,
        record: corpus.records[index].clone(),
        similarity,
    })
}
