//! Database selection memory.
//!
//! Every registered database is represented by the embedding of its
//! serialized schema. A question is embedded with the same provider and the
//! closest schemas become the candidate databases handed to the planner.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::index::sample;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{serialize_schema, Catalog};
use crate::embedding::{EmbedError, EmbeddingProvider, IndexError, VectorIndex};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("selection index is empty")]
    EmptyIndex,
    #[error("k must be positive")]
    ZeroK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionCandidate {
    pub db_id: String,
    pub score: f64,
}

/// Builds one record per database: id = db id, vector = embedding of the
/// serialized schema.
pub fn index_schemas(
    catalog: &Catalog,
    provider: &dyn EmbeddingProvider,
) -> Result<VectorIndex, SelectionError> {
    if catalog.is_empty() {
        return Err(SelectionError::EmptyCatalog);
    }
    let mut index = VectorIndex::new(provider.dimension())?;
    extend_index(&mut index, catalog, provider)?;
    Ok(index)
}

/// Embeds only the databases the index does not know yet. Returns how many
/// records were added; existing vectors are left untouched.
pub fn extend_index(
    index: &mut VectorIndex,
    catalog: &Catalog,
    provider: &dyn EmbeddingProvider,
) -> Result<usize, SelectionError> {
    let mut added = 0;
    for entry in catalog.entries() {
        if index.contains(&entry.id) {
            continue;
        }
        let schema = serialize_schema(entry);
        index.insert(entry.id.clone(), provider.embed(&schema.text)?)?;
        added += 1;
    }
    Ok(added)
}

/// Top-`k` databases for `question`, best first. Returns `min(k, |index|)`
/// candidates.
pub fn select_top_k(
    question: &str,
    index: &VectorIndex,
    provider: &dyn EmbeddingProvider,
    k: usize,
) -> Result<Vec<SelectionCandidate>, SelectionError> {
    if index.is_empty() {
        return Err(SelectionError::EmptyIndex);
    }
    if k == 0 {
        return Err(SelectionError::ZeroK);
    }
    let query = provider.embed(question)?;
    Ok(index
        .search(&query, k)?
        .into_iter()
        .map(|hit| SelectionCandidate {
            db_id: hit.id,
            score: hit.score,
        })
        .collect())
}

#[derive(Debug, Error, PartialEq)]
pub enum TrainingDataError {
    #[error("catalog has {available} databases; need at least {needed} for negative sampling")]
    InsufficientCatalog { available: usize, needed: usize },
    #[error("gold database `{0}` is not in the catalog")]
    UnknownGold(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordSource {
    Positive,
    Negative,
    Composite,
}

/// One labeled (question, schema) pair for training a relevance classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionTrainingRecord {
    pub question: String,
    pub schema_text: String,
    pub label: u8,
    pub source: RecordSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaTriple {
    pub question: String,
    #[serde(alias = "gold_db_id")]
    pub db_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingDataConfig {
    pub negatives_per_positive: usize,
    /// Questions concatenated into each composite question.
    pub composite_k: usize,
    /// Number of composite questions to generate; 0 disables them.
    pub composites: usize,
    pub seed: u64,
}

impl Default for TrainingDataConfig {
    fn default() -> Self {
        Self {
            negatives_per_positive: 1,
            composite_k: 2,
            composites: 0,
            seed: 0,
        }
    }
}

pub const COMPOSITE_SEPARATOR: &str = "; ";

/// Composes the relevance-classifier dataset.
///
/// For each triple: one positive record with the gold schema, then
/// `negatives_per_positive` negatives whose databases are drawn uniformly
/// without replacement from the non-gold databases. Composite questions join
/// `composite_k` distinct sampled questions with `"; "`; each composite gets
/// a positive record per distinct gold database and
/// `negatives_per_positive` negatives per positive (capped by what is left).
pub fn compose_training_data(
    triples: &[QaTriple],
    catalog: &Catalog,
    config: &TrainingDataConfig,
) -> Result<Vec<SelectionTrainingRecord>, TrainingDataError> {
    let n = config.negatives_per_positive;
    if n == 0 {
        return Err(TrainingDataError::InvalidParameter(
            "negatives_per_positive must be at least 1".into(),
        ));
    }
    if config.composites > 0 && config.composite_k < 2 {
        return Err(TrainingDataError::InvalidParameter(
            "composite_k must be at least 2".into(),
        ));
    }
    if config.composites > 0 && config.composite_k > triples.len() {
        return Err(TrainingDataError::InvalidParameter(format!(
            "composite_k {} exceeds the {} available questions",
            config.composite_k,
            triples.len()
        )));
    }
    if catalog.len() < n + 1 {
        return Err(TrainingDataError::InsufficientCatalog {
            available: catalog.len(),
            needed: n + 1,
        });
    }
    let schemas: Vec<(String, String)> = catalog
        .entries()
        .iter()
        .map(|e| (e.id.clone(), serialize_schema(e).text))
        .collect();
    let position = |id: &str| {
        schemas
            .iter()
            .position(|(db, _)| db == id)
            .ok_or_else(|| TrainingDataError::UnknownGold(id.to_string()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::new();
    for triple in triples {
        let gold = position(&triple.db_id)?;
        out.push(SelectionTrainingRecord {
            question: triple.question.clone(),
            schema_text: schemas[gold].1.clone(),
            label: 1,
            source: RecordSource::Positive,
        });
        let others: Vec<usize> = (0..schemas.len()).filter(|&i| i != gold).collect();
        for pick in sample(&mut rng, others.len(), n) {
            out.push(SelectionTrainingRecord {
                question: triple.question.clone(),
                schema_text: schemas[others[pick]].1.clone(),
                label: 0,
                source: RecordSource::Negative,
            });
        }
    }

    for _ in 0..config.composites {
        let members = sample(&mut rng, triples.len(), config.composite_k);
        let question = members
            .iter()
            .map(|i| triples[i].question.as_str())
            .collect::<Vec<_>>()
            .join(COMPOSITE_SEPARATOR);
        let golds: BTreeSet<usize> = members
            .iter()
            .map(|i| position(&triples[i].db_id))
            .collect::<Result<_, _>>()?;
        for &g in &golds {
            out.push(SelectionTrainingRecord {
                question: question.clone(),
                schema_text: schemas[g].1.clone(),
                label: 1,
                source: RecordSource::Composite,
            });
        }
        let others: Vec<usize> = (0..schemas.len()).filter(|i| !golds.contains(i)).collect();
        let wanted = (n * golds.len()).min(others.len());
        let picks: Vec<usize> = others.choose_multiple(&mut rng, wanted).copied().collect();
        for g in picks {
            out.push(SelectionTrainingRecord {
                question: question.clone(),
                schema_text: schemas[g].1.clone(),
                label: 0,
                source: RecordSource::Composite,
            });
        }
    }
    Ok(out)
}

/// Writes records as JSON Lines.
pub fn write_training_jsonl(
    records: &[SelectionTrainingRecord],
    mut out: impl Write,
) -> std::io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
