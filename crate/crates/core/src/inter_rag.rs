//! External knowledge retrieval: query formulation for unfamiliar entities,
//! pluggable web-search backends, and the bounded result digest handed to
//! the planner.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::http::HttpEndpoint;
use crate::text::{normalize_query, tokenize, truncate_at_word};

/// Hard cap on results kept per search.
pub const MAX_RESULTS: usize = 10;

/// Default summary length, in characters.
pub const DEFAULT_SUMMARY_LIMIT: usize = 400;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("search backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("search query text is empty")]
    EmptyQuery,
    #[error("fixture file: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub text: String,
    pub origin_instruction: String,
    pub unknown_entities: Vec<String>,
}

/// A hit as the backend returns it, before filtering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawHit {
    pub title: String,
    pub summary: String,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub rank: usize,
    pub title: String,
    pub summary: String,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeContext {
    pub query: SearchQuery,
    pub results: Vec<SearchResult>,
    pub digest: String,
}

/// A web-search provider. Must tolerate concurrent calls.
pub trait SearchBackend: Send + Sync {
    fn name(&self) -> &str;

    fn raw_search(&self, query: &SearchQuery) -> Result<Vec<RawHit>, SearchError>;
}

// Filler words dropped from the instruction when building the context fragment.
const FILLER: &[&str] = &[
    "i", "want", "to", "the", "a", "an", "me", "my", "please", "can", "you", "would", "like",
    "that", "this", "it", "of", "in", "on", "for", "and", "then", "is", "what", "which",
];

/// Builds the search text for an instruction.
///
/// With no entities the trimmed instruction is searched verbatim. Otherwise
/// the entities come first, followed by the instruction's remaining
/// non-filler words (its verbs and objects) to disambiguate them.
pub fn formulate_query(instruction: &str, unknown_entities: &[String]) -> Result<SearchQuery, SearchError> {
    let instruction_trimmed = instruction.trim();
    if instruction_trimmed.is_empty() {
        return Err(SearchError::EmptyQuery);
    }
    let entities: Vec<String> = unknown_entities
        .iter()
        .map(|e| e.trim().to_string())
        .filter(|e| !e.is_empty())
        .collect();
    let text = if entities.is_empty() {
        instruction_trimmed.to_string()
    } else {
        let entity_tokens: HashSet<String> = entities.iter().flat_map(|e| tokenize(e)).collect();
        let context: Vec<String> = tokenize(instruction_trimmed)
            .into_iter()
            .filter(|t| !entity_tokens.contains(t) && !FILLER.contains(&t.as_str()))
            .collect();
        let mut text = entities.join(" ");
        if !context.is_empty() {
            text.push(' ');
            text.push_str(&context.join(" "));
        }
        text
    };
    Ok(SearchQuery {
        text,
        origin_instruction: instruction.to_string(),
        unknown_entities: entities,
    })
}

/// Renders numbered `rank. title - summary` lines.
pub fn render_digest(results: &[SearchResult]) -> String {
    results
        .iter()
        .map(|r| {
            if r.summary.is_empty() {
                format!("{}. {}", r.rank, r.title)
            } else {
                format!("{}. {} - {}", r.rank, r.title, r.summary)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Runs `query` and keeps at most `min(k, 10)` results, deduplicated by url,
/// summaries truncated, ranks renumbered from 1.
pub fn search(
    backend: &dyn SearchBackend,
    query: &SearchQuery,
    k: usize,
    summary_limit: usize,
) -> Result<KnowledgeContext, SearchError> {
    if query.text.trim().is_empty() {
        return Err(SearchError::EmptyQuery);
    }
    let raw = backend.raw_search(query)?;
    let cap = k.min(MAX_RESULTS);
    let mut seen = HashSet::new();
    let results: Vec<SearchResult> = raw
        .into_iter()
        .filter(|hit| seen.insert(hit.url.clone()))
        .take(cap)
        .enumerate()
        .map(|(i, hit)| SearchResult {
            rank: i + 1,
            title: hit.title.trim().to_string(),
            summary: truncate_at_word(&hit.summary, summary_limit),
            url: hit.url,
        })
        .collect();
    let digest = render_digest(&results);
    Ok(KnowledgeContext {
        query: query.clone(),
        results,
        digest,
    })
}

/// Canned responses keyed by normalized query text.
///
/// When no key matches exactly, the key sharing the most tokens with the
/// query wins (ties go to the lexicographically smallest key); no overlap
/// yields zero hits.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FixtureSearchBackend {
    entries: BTreeMap<String, Vec<RawHit>>,
}

impl FixtureSearchBackend {
    pub fn new(entries: BTreeMap<String, Vec<RawHit>>) -> Self {
        let entries = entries
            .into_iter()
            .map(|(k, v)| (normalize_query(&k), v))
            .collect();
        Self { entries }
    }

    pub fn load(path: &Path) -> Result<Self, SearchError> {
        let text = std::fs::read_to_string(path).map_err(|e| SearchError::Fixture(e.to_string()))?;
        let entries: BTreeMap<String, Vec<RawHit>> =
            serde_json::from_str(&text).map_err(|e| SearchError::Fixture(e.to_string()))?;
        Ok(Self::new(entries))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

impl SearchBackend for FixtureSearchBackend {
    fn name(&self) -> &str {
        "fixture"
    }

    fn raw_search(&self, query: &SearchQuery) -> Result<Vec<RawHit>, SearchError> {
        let key = normalize_query(&query.text);
        if let Some(hits) = self.entries.get(&key) {
            return Ok(hits.clone());
        }
        let query_tokens: HashSet<String> = tokenize(&key).into_iter().collect();
        let mut best: Option<(usize, &String)> = None;
        for k in self.entries.keys() {
            let overlap = tokenize(k)
                .into_iter()
                .collect::<HashSet<_>>()
                .intersection(&query_tokens)
                .count();
            // Strictly greater keeps the smallest key on ties (BTreeMap order).
            if overlap > 0 && best.is_none_or(|(b, _)| overlap > b) {
                best = Some((overlap, k));
            }
        }
        Ok(best
            .map(|(_, k)| self.entries[k].clone())
            .unwrap_or_default())
    }
}

/// Generic JSON web-search API over HTTP GET (`q`, `num` parameters).
///
/// Accepts result arrays under `items`, `results`, or `organic`, with each
/// entry carrying `title`, one of `snippet`/`summary`/`description`, and one
/// of `link`/`url`.
#[derive(Debug, Clone)]
pub struct HttpSearchBackend {
    endpoint: HttpEndpoint,
}

impl HttpSearchBackend {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        Self { endpoint }
    }
}

pub(crate) fn parse_search_response(value: &Value) -> Result<Vec<RawHit>, SearchError> {
    let items = ["items", "results", "organic"]
        .iter()
        .find_map(|k| value.get(*k).and_then(Value::as_array))
        .ok_or_else(|| SearchError::BackendUnavailable("response has no result array".into()))?;
    let field = |item: &Value, keys: &[&str]| -> String {
        keys.iter()
            .find_map(|k| item.get(*k).and_then(Value::as_str))
            .unwrap_or_default()
            .to_string()
    };
    Ok(items
        .iter()
        .map(|item| RawHit {
            title: field(item, &["title"]),
            summary: field(item, &["snippet", "summary", "description"]),
            url: field(item, &["link", "url"]),
        })
        .filter(|h| !h.url.is_empty())
        .collect())
}

impl SearchBackend for HttpSearchBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn raw_search(&self, query: &SearchQuery) -> Result<Vec<RawHit>, SearchError> {
        let value = self
            .endpoint
            .get_json(&[("q", query.text.clone()), ("num", MAX_RESULTS.to_string())])
            .map_err(SearchError::BackendUnavailable)?;
        parse_search_response(&value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn hit(n: &str) -> RawHit {
        RawHit {
            title: format!("Title {n}"),
            summary: format!("Summary of {n}"),
            url: format!("https://example.com/{n}"),
        }
    }

    fn fixture(key: &str, hits: Vec<RawHit>) -> FixtureSearchBackend {
        FixtureSearchBackend::new(BTreeMap::from([(key.to_string(), hits)]))
    }

    #[test]
    fn formulation_keeps_entities_and_context() {
        let q = formulate_query("I want to watch Squid Game", &["Squid Game".into()]).unwrap();
        assert!(q.text.contains("Squid Game"));
        assert_eq!(q.text, "Squid Game watch");

        let q = formulate_query("set an alarm", &[]).unwrap();
        assert_eq!(q.text, "set an alarm");

        let q = formulate_query("play Ear", &["Ear".into()]).unwrap();
        assert_eq!(q.text, "Ear play");
        assert!(formulate_query("  ", &[]).is_err());
    }

    #[test]
    fn caps_and_dedupes() {
        let mut hits: Vec<RawHit> = (0..13).map(|i| hit(&i.to_string())).collect();
        hits.insert(3, hit("0"));
        hits.insert(7, hit("1"));
        assert_eq!(hits.len(), 15);
        let backend = fixture("q", hits);
        let q = formulate_query("q", &[]).unwrap();
        let ctx = search(&backend, &q, 10, DEFAULT_SUMMARY_LIMIT).unwrap();
        assert_eq!(ctx.results.len(), 10);
        let urls: HashSet<_> = ctx.results.iter().map(|r| &r.url).collect();
        assert_eq!(urls.len(), 10);
    }

    #[test]
    fn empty_hits_give_empty_context() {
        let backend = fixture("q", vec![]);
        let ctx = search(&backend, &formulate_query("q", &[]).unwrap(), 10, 400).unwrap();
        assert!(ctx.results.is_empty());
        assert_eq!(ctx.digest, "");
    }

    #[test]
    fn dedupe_then_renumber() {
        let backend = fixture("q", vec![hit("A"), hit("B"), hit("A"), hit("C")]);
        let ctx = search(&backend, &formulate_query("q", &[]).unwrap(), 3, 400).unwrap();
        let titles: Vec<_> = ctx.results.iter().map(|r| r.title.as_str()).collect();
        assert_eq!(titles, ["Title A", "Title B", "Title C"]);
        let ranks: Vec<_> = ctx.results.iter().map(|r| r.rank).collect();
        assert_eq!(ranks, [1, 2, 3]);
        assert_eq!(
            ctx.digest,
            "1. Title A - Summary of A\n2. Title B - Summary of B\n3. Title C - Summary of C"
        );
    }

    #[test]
    fn summaries_are_truncated() {
        let mut h = hit("long");
        h.summary = "word ".repeat(300);
        let backend = fixture("q", vec![h]);
        let ctx = search(&backend, &formulate_query("q", &[]).unwrap(), 10, 400).unwrap();
        assert!(ctx.results[0].summary.chars().count() <= 400);
    }

    #[test]
    fn fixture_falls_back_to_keyword_overlap() {
        let backend = FixtureSearchBackend::new(BTreeMap::from([
            ("squid game streaming".to_string(), vec![hit("S")]),
            ("winter olympics date".to_string(), vec![hit("W")]),
        ]));
        let q = formulate_query("Which app streams Squid Game?", &["Squid Game".into()]).unwrap();
        assert_eq!(backend.raw_search(&q).unwrap(), vec![hit("S")]);
        let q = formulate_query("Squid Game Streaming.", &[]).unwrap();
        assert_eq!(backend.raw_search(&q).unwrap(), vec![hit("S")]);
        let q = formulate_query("totally different", &[]).unwrap();
        assert!(backend.raw_search(&q).unwrap().is_empty());
    }

    #[test]
    fn parses_generic_search_json() {
        let v = json!({"items": [
            {"title": "T1", "snippet": "S1", "link": "https://a"},
            {"title": "T2", "description": "S2", "url": "https://b"},
            {"title": "no url"}
        ]});
        let hits = parse_search_response(&v).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[1].summary, "S2");
        assert!(parse_search_response(&json!({})).is_err());
    }

    #[test]
    fn unreachable_http_backend_is_unavailable() {
        let mut ep = HttpEndpoint::new("http://127.0.0.1:9/search");
        ep.timeout_ms = 500;
        let backend = HttpSearchBackend::new(ep);
        let q = formulate_query("x", &[]).unwrap();
        assert!(matches!(
            search(&backend, &q, 10, 400),
            Err(SearchError::BackendUnavailable(_))
        ));
    }
}
