//! Local app knowledge base: exhaustive cosine retrieval over app
//! descriptions with below-threshold rejection, plus the contrastive
//! training-corpus generator for retriever fine-tuning.

use std::cmp::Ordering;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{embed, unit_dot, EmbedderBackend, EmbeddingError, EmbeddingVector};
use crate::scalar::Scalar;
use crate::text::tokenize;

/// Number of candidates handed back to the agent per query.
pub const DEFAULT_TOP_K: usize = 3;

/// Rejection threshold when none is configured.
pub const DEFAULT_LOCAL_THRESHOLD: f64 = 0.5;

/// Label written in place of a package id for "no local app" examples.
pub const NONE_SENTINEL: &str = "NONE";

#[derive(Debug, Error)]
pub enum LocalRagError {
    #[error("duplicate package id {0}")]
    DuplicatePackageId(String),
    #[error("app {0} has an empty description")]
    EmptyDescription(String),
    #[error("catalog entry has an empty package id")]
    EmptyPackageId,
    #[error("query is empty")]
    EmptyQuery,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("threshold {0} is outside (0, 1)")]
    InvalidThreshold(f64),
    #[error("package {0} is already registered with a different description")]
    ConflictingRecord(String),
    #[error("index was built with backend {index} but {given} was supplied")]
    BackendMismatch { index: String, given: String },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("index file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("index file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppSource {
    #[default]
    Preinstalled,
    StoreInstalled,
}

/// App metadata before embedding, as it appears in catalog and scenario files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppSeed {
    pub name: String,
    pub package_id: String,
    pub description: String,
    #[serde(default = "yes")]
    pub installed: bool,
    #[serde(default)]
    pub source: AppSource,
}

fn yes() -> bool {
    true
}

impl AppSeed {
    pub fn new(
        name: impl Into<String>,
        package_id: impl Into<String>,
        description: impl Into<String>,
    ) -> Self {
        Self {
            name: name.into(),
            package_id: package_id.into(),
            description: description.into(),
            installed: true,
            source: AppSource::Preinstalled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct AppRecord<S: Scalar> {
    #[serde(rename = "name")]
    pub app_name: String,
    pub package_id: String,
    pub description: String,
    pub embedding: EmbeddingVector<S>,
    pub installed: bool,
    pub source: AppSource,
}

impl<S: Scalar> AppRecord<S> {
    /// Embeds the seed's description.
    pub fn from_seed(seed: &AppSeed, backend: &dyn EmbedderBackend) -> Result<Self, LocalRagError> {
        if seed.package_id.trim().is_empty() {
            return Err(LocalRagError::EmptyPackageId);
        }
        if seed.description.trim().is_empty() {
            return Err(LocalRagError::EmptyDescription(seed.package_id.clone()));
        }
        let embedding = embed(backend, &seed.description).map_err(|e| match e {
            EmbeddingError::EmptyText => LocalRagError::EmptyDescription(seed.package_id.clone()),
            other => other.into(),
        })?;
        Ok(Self {
            app_name: seed.name.clone(),
            package_id: seed.package_id.clone(),
            description: seed.description.clone(),
            embedding,
            installed: seed.installed,
            source: seed.source,
        })
    }

    pub fn seed(&self) -> AppSeed {
        AppSeed {
            name: self.app_name.clone(),
            package_id: self.package_id.clone(),
            description: self.description.clone(),
            installed: self.installed,
            source: self.source,
        }
    }
}

/// One scored candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppMatch {
    pub package_id: String,
    pub app_name: String,
    pub description: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RetrievalOutcome {
    /// At most `k` matches, best first.
    Matches { matches: Vec<AppMatch> },
    /// Best score fell below the threshold, or the index is empty.
    NoLocalApp { best_score: Option<f64> },
}

impl RetrievalOutcome {
    pub fn matches(&self) -> &[AppMatch] {
        match self {
            RetrievalOutcome::Matches { matches } => matches,
            RetrievalOutcome::NoLocalApp { .. } => &[],
        }
    }

    pub fn is_rejection(&self) -> bool {
        matches!(self, RetrievalOutcome::NoLocalApp { .. })
    }
}

/// Whether [`AppIndex::register_app`] inserted a new record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Registration {
    Inserted,
    AlreadyPresent,
}

/// The local app library.
///
/// Records are kept sorted by package id, which is also the tie-break order
/// for equal scores. Retrieval takes `&self`; registration takes `&mut self`,
/// so sharing behind a lock gives the single-writer / many-reader contract.
#[derive(Debug, Clone, PartialEq)]
pub struct AppIndex<S: Scalar> {
    backend: String,
    dimension: usize,
    threshold: f64,
    records: Vec<AppRecord<S>>,
}

fn check_threshold(threshold: f64) -> Result<f64, LocalRagError> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(threshold)
    } else {
        Err(LocalRagError::InvalidThreshold(threshold))
    }
}

/// Score descending, then package id ascending.
fn rank_order<S: Scalar>(records: &[AppRecord<S>], a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| records[a.1].package_id.cmp(&records[b.1].package_id))
}

impl<S: Scalar> AppIndex<S> {
    pub fn empty(backend: &dyn EmbedderBackend, threshold: f64) -> Result<Self, LocalRagError> {
        Ok(Self {
            backend: backend.name().to_string(),
            dimension: backend.dimension(),
            threshold: check_threshold(threshold)?,
            records: Vec::new(),
        })
    }

    /// Embeds every catalog entry. Package ids must be unique.
    pub fn build(
        catalog: &[AppSeed],
        backend: &dyn EmbedderBackend,
        threshold: f64,
    ) -> Result<Self, LocalRagError> {
        let mut index = Self::empty(backend, threshold)?;
        let mut records = Vec::with_capacity(catalog.len());
        for seed in catalog {
            records.push(AppRecord::from_seed(seed, backend)?);
        }
        records.sort_by(|a, b| a.package_id.cmp(&b.package_id));
        if let Some(w) = records.windows(2).find(|w| w[0].package_id == w[1].package_id) {
            return Err(LocalRagError::DuplicatePackageId(w[0].package_id.clone()));
        }
        index.records = records;
        Ok(index)
    }

    pub fn backend_name(&self) -> &str {
        &self.backend
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[AppRecord<S>] {
        &self.records
    }

    pub fn get(&self, package_id: &str) -> Option<&AppRecord<S>> {
        self.position(package_id).ok().map(|i| &self.records[i])
    }

    fn position(&self, package_id: &str) -> Result<usize, usize> {
        self.records
            .binary_search_by(|r| r.package_id.as_str().cmp(package_id))
    }

    /// Same records under a different rejection threshold.
    pub fn with_threshold(&self, threshold: f64) -> Result<Self, LocalRagError> {
        let mut view = self.clone();
        view.threshold = check_threshold(threshold)?;
        Ok(view)
    }

    fn check_backend(&self, backend: &dyn EmbedderBackend) -> Result<(), LocalRagError> {
        if backend.name() != self.backend || backend.dimension() != self.dimension {
            return Err(LocalRagError::BackendMismatch {
                index: self.backend.clone(),
                given: backend.name().to_string(),
            });
        }
        Ok(())
    }

    /// Embeds `query` and returns the top `k` apps, or a rejection.
    pub fn retrieve_apps(
        &self,
        backend: &dyn EmbedderBackend,
        query: &str,
        k: usize,
    ) -> Result<RetrievalOutcome, LocalRagError> {
        if query.trim().is_empty() {
            return Err(LocalRagError::EmptyQuery);
        }
        if k == 0 {
            return Err(LocalRagError::InvalidK);
        }
        self.check_backend(backend)?;
        let q = embed(backend, query).map_err(|e| match e {
            EmbeddingError::EmptyText => LocalRagError::EmptyQuery,
            other => other.into(),
        })?;
        self.retrieve_embedding(&q, k)
    }

    /// Exhaustive scan against a precomputed query vector.
    pub fn retrieve_embedding(
        &self,
        query: &EmbeddingVector<S>,
        k: usize,
    ) -> Result<RetrievalOutcome, LocalRagError> {
        if k == 0 {
            return Err(LocalRagError::InvalidK);
        }
        if query.dimension() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dimension,
                actual: query.dimension(),
            }
            .into());
        }
        if self.records.is_empty() {
            return Ok(RetrievalOutcome::NoLocalApp { best_score: None });
        }
        let q = query.as_slice();
        let mut scored: Vec<(f64, usize)> = self
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (unit_dot(q, r.embedding.as_slice()), i))
            .collect();

        let order = |a: &(f64, usize), b: &(f64, usize)| rank_order(&self.records, a, b);
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);

        let best = scored[0].0;
        if best < self.threshold {
            return Ok(RetrievalOutcome::NoLocalApp {
                best_score: Some(best),
            });
        }
        let matches = scored
            .into_iter()
            .map(|(score, i)| {
                let r = &self.records[i];
                AppMatch {
                    package_id: r.package_id.clone(),
                    app_name: r.app_name.clone(),
                    description: r.description.clone(),
                    score,
                }
            })
            .collect();
        Ok(RetrievalOutcome::Matches { matches })
    }

    /// Adds a record. Re-registering an identical description is a no-op.
    pub fn register_app(&mut self, record: AppRecord<S>) -> Result<Registration, LocalRagError> {
        if record.package_id.trim().is_empty() {
            return Err(LocalRagError::EmptyPackageId);
        }
        if record.embedding.dimension() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dimension,
                actual: record.embedding.dimension(),
            }
            .into());
        }
        match self.position(&record.package_id) {
            Ok(i) => {
                if self.records[i].description == record.description {
                    Ok(Registration::AlreadyPresent)
                } else {
                    Err(LocalRagError::ConflictingRecord(record.package_id))
                }
            }
            Err(i) => {
                self.records.insert(i, record);
                Ok(Registration::Inserted)
            }
        }
    }

    /// Embeds and registers a seed.
    pub fn register_seed(
        &mut self,
        backend: &dyn EmbedderBackend,
        seed: &AppSeed,
    ) -> Result<Registration, LocalRagError> {
        self.check_backend(backend)?;
        self.register_app(AppRecord::from_seed(seed, backend)?)
    }

    pub fn to_json(&self) -> Result<String, LocalRagError> {
        let file = IndexFileRef {
            backend: &self.backend,
            dimension: self.dimension,
            threshold: self.threshold,
            apps: &self.records,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, LocalRagError> {
        let file: IndexFile<S> = serde_json::from_str(text)?;
        let mut records = file.apps;
        for r in &records {
            if r.embedding.dimension() != file.dimension {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: file.dimension,
                    actual: r.embedding.dimension(),
                }
                .into());
            }
        }
        records.sort_by(|a, b| a.package_id.cmp(&b.package_id));
        if let Some(w) = records.windows(2).find(|w| w[0].package_id == w[1].package_id) {
            return Err(LocalRagError::DuplicatePackageId(w[0].package_id.clone()));
        }
        Ok(Self {
            backend: file.backend,
            dimension: file.dimension,
            threshold: check_threshold(file.threshold)?,
            records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), LocalRagError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LocalRagError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize)]
#[serde(bound = "S: Scalar")]
struct IndexFileRef<'a, S: Scalar> {
    backend: &'a str,
    dimension: usize,
    threshold: f64,
    apps: &'a [AppRecord<S>],
}

#[derive(Deserialize)]
#[serde(bound = "S: Scalar")]
struct IndexFile<S: Scalar> {
    backend: String,
    dimension: usize,
    threshold: f64,
    apps: Vec<AppRecord<S>>,
}

/// Reads a catalog file: a JSON array of app seeds.
pub fn load_catalog(path: &Path) -> Result<Vec<AppSeed>, LocalRagError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

// ---------------------------------------------------------------------------
// Training corpus
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("catalog needs at least two apps to sample negatives")]
    CatalogTooSmall,
    #[error("queries_per_app must be at least 1")]
    InvalidQueryCount,
    #[error("none_fraction {0} is outside [0, 1)")]
    InvalidNoneFraction(f64),
    #[error("query source failed: {0}")]
    QuerySourceFailure(String),
    #[error("corpus file: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus file: {0}")]
    Format(#[from] serde_json::Error),
}

/// One contrastive example. `positive == None` marks a query no app serves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub query: String,
    #[serde(with = "none_sentinel")]
    pub positive: Option<String>,
    pub negatives: Vec<String>,
    pub is_none_case: bool,
}

mod none_sentinel {
    use super::NONE_SENTINEL;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<String>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(v.as_deref().unwrap_or(NONE_SENTINEL))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
        let s = String::deserialize(d)?;
        Ok((s != NONE_SENTINEL).then_some(s))
    }
}

/// Produces natural-language requests for corpus generation.
pub trait QuerySource {
    /// `count` requests that the given app can serve.
    fn queries_for_app(&mut self, app: &AppSeed, count: usize) -> Result<Vec<String>, String>;

    /// `count` requests that no app in the catalog serves.
    fn unsupported_queries(&mut self, count: usize) -> Result<Vec<String>, String>;
}

const KEYWORD_STOPWORDS: &[&str] = &[
    "and", "the", "with", "your", "from", "that", "this", "into", "for", "you", "app", "apps",
    "other", "more", "them", "their", "also", "while", "where", "when", "what", "than",
];

const QUERY_TEMPLATES: &[&str] = &[
    "open the app to {a} {b}",
    "i want to {a} {b}",
    "help me {a} on my phone",
    "{a} {b} please",
    "use my phone to {a} {b}",
];

const UNSUPPORTED_POOL: &[&str] = &[
    "book a flight to lisbon",
    "order a pizza for delivery",
    "translate this menu into french",
    "check my bank balance",
    "hail a taxi to the airport",
    "scan a document into a pdf",
    "track my running workout",
    "pay the electricity bill",
    "measure the room with augmented reality",
    "adopt a puppy from the shelter",
];

/// Template-based query source that fills fixed phrasings with description keywords.
#[derive(Debug, Clone)]
pub struct TemplateQuerySource {
    unsupported: Vec<String>,
}

impl Default for TemplateQuerySource {
    fn default() -> Self {
        Self {
            unsupported: UNSUPPORTED_POOL.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl TemplateQuerySource {
    pub fn with_unsupported(pool: Vec<String>) -> Self {
        Self { unsupported: pool }
    }

    fn keywords(description: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in tokenize(description) {
            if t.chars().count() >= 3 && !KEYWORD_STOPWORDS.contains(&t.as_str()) && !out.contains(&t) {
                out.push(t);
            }
        }
        out
    }
}

impl QuerySource for TemplateQuerySource {
    fn queries_for_app(&mut self, app: &AppSeed, count: usize) -> Result<Vec<String>, String> {
        let kws = Self::keywords(&app.description);
        if kws.is_empty() {
            return Err(format!("no keywords in description of {}", app.package_id));
        }
        Ok((0..count)
            .map(|i| {
                let a = &kws[i % kws.len()];
                let b = &kws[(i + 1) % kws.len()];
                QUERY_TEMPLATES[i % QUERY_TEMPLATES.len()]
                    .replace("{a}", a)
                    .replace("{b}", b)
            })
            .collect())
    }

    fn unsupported_queries(&mut self, count: usize) -> Result<Vec<String>, String> {
        if self.unsupported.is_empty() && count > 0 {
            return Err("unsupported-query pool is empty".into());
        }
        Ok((0..count)
            .map(|i| {
                let base = &self.unsupported[i % self.unsupported.len()];
                let round = i / self.unsupported.len();
                if round == 0 {
                    base.clone()
                } else {
                    format!("{base} ({})", round + 1)
                }
            })
            .collect())
    }
}

/// Corpus generation knobs.
#[derive(Debug, Clone, Copy)]
pub struct CorpusSpec {
    pub queries_per_app: usize,
    pub none_fraction: f64,
    pub negatives_per_example: usize,
}

impl CorpusSpec {
    pub fn new(queries_per_app: usize, none_fraction: f64) -> Self {
        Self {
            queries_per_app,
            none_fraction,
            negatives_per_example: 3,
        }
    }

    /// None-case count so that `none / (positives + none)` is as close as
    /// possible to `none_fraction`.
    pub fn none_count(&self, positives: usize) -> usize {
        let p = positives as f64;
        (p * self.none_fraction / (1.0 - self.none_fraction)).round() as usize
    }
}

/// Emits `queries_per_app` positives per app plus none-cases, each with
/// sampled negatives.
pub fn generate_training_corpus<R: Rng + ?Sized>(
    catalog: &[AppSeed],
    spec: CorpusSpec,
    source: &mut dyn QuerySource,
    rng: &mut R,
) -> Result<Vec<TrainingExample>, CorpusError> {
    if catalog.is_empty() {
        return Err(CorpusError::EmptyCatalog);
    }
    if catalog.len() < 2 {
        return Err(CorpusError::CatalogTooSmall);
    }
    if spec.queries_per_app == 0 {
        return Err(CorpusError::InvalidQueryCount);
    }
    if !(0.0..1.0).contains(&spec.none_fraction) {
        return Err(CorpusError::InvalidNoneFraction(spec.none_fraction));
    }
    let want_negatives = spec.negatives_per_example.max(1);
    let ids: Vec<&str> = catalog.iter().map(|a| a.package_id.as_str()).collect();
    let mut out = Vec::new();

    for app in catalog {
        let queries = source
            .queries_for_app(app, spec.queries_per_app)
            .map_err(CorpusError::QuerySourceFailure)?;
        if queries.len() != spec.queries_per_app {
            return Err(CorpusError::QuerySourceFailure(format!(
                "expected {} queries for {}, got {}",
                spec.queries_per_app,
                app.package_id,
                queries.len()
            )));
        }
        let others: Vec<&str> = ids
            .iter()
            .copied()
            .filter(|id| *id != app.package_id)
            .collect();
        for query in queries {
            let negatives = others
                .choose_multiple(rng, want_negatives.min(others.len()))
                .map(|s| s.to_string())
                .collect();
            out.push(TrainingExample {
                query,
                positive: Some(app.package_id.clone()),
                negatives,
                is_none_case: false,
            });
        }
    }

    let none = spec.none_count(out.len());
    let queries = source
        .unsupported_queries(none)
        .map_err(CorpusError::QuerySourceFailure)?;
    for query in queries.into_iter().take(none) {
        let negatives = ids
            .choose_multiple(rng, want_negatives.min(ids.len()))
            .map(|s| s.to_string())
            .collect();
        out.push(TrainingExample {
            query,
            positive: None,
            negatives,
            is_none_case: true,
        });
    }
    Ok(out)
}

/// Writes one JSON object per line.
pub fn write_corpus<W: Write>(mut w: W, examples: &[TrainingExample]) -> Result<(), CorpusError> {
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_corpus<R: BufRead>(r: R) -> Result<Vec<TrainingExample>, CorpusError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
