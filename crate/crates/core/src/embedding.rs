//! Text embedding behind a pluggable backend, plus the cosine kernel shared
//! by app retrieval and the experience store.

use std::fmt;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::hash::Hasher;
use thiserror::Error;

use crate::http::HttpEndpoint;
use crate::scalar::{dot, Scalar};
use crate::text::tokenize;

/// Default embedding width, matching small sentence-retriever models.
pub const DEFAULT_DIMENSION: usize = 384;

/// Maximum deviation of a stored vector's L2 norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// Looser bound accepted when loading vectors written by another process.
const LOAD_NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("text is empty or has no embeddable tokens")]
    EmptyText,
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("stored embedding is not unit-norm (norm {norm})")]
    NotNormalized { norm: f64 },
    #[error("embedding backend failure: {0}")]
    BackendFailure(String),
}

/// A unit-norm dense vector.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<S>", into = "Vec<S>", bound = "S: Scalar")]
pub struct EmbeddingVector<S: Scalar> {
    values: Vec<S>,
}

impl<S: Scalar> EmbeddingVector<S> {
    /// L2-normalizes `raw`. A zero vector is rejected as [`EmbeddingError::EmptyText`].
    pub fn from_raw(raw: &[f64]) -> Result<Self, EmbeddingError> {
        if raw.is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbeddingError::EmptyText);
        }
        let values = raw.iter().map(|v| S::narrow(v / norm)).collect();
        Ok(Self { values })
    }

    /// Accepts values that are already unit-norm, without rescaling them.
    pub fn from_normalized(values: Vec<S>) -> Result<Self, EmbeddingError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        let norm = dot(&values, &values).sqrt();
        if (norm - 1.0).abs() > LOAD_NORM_TOLERANCE {
            return Err(EmbeddingError::NotNormalized { norm });
        }
        Ok(Self { values })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    /// Converts to another element type, renormalizing after the cast.
    pub fn cast<T: Scalar>(&self) -> EmbeddingVector<T> {
        let raw: Vec<f64> = self.values.iter().map(|v| v.widen()).collect();
        EmbeddingVector::from_raw(&raw).expect("unit vector stays non-zero under cast")
    }
}

impl<S: Scalar> TryFrom<Vec<S>> for EmbeddingVector<S> {
    type Error = EmbeddingError;

    fn try_from(values: Vec<S>) -> Result<Self, Self::Error> {
        Self::from_normalized(values)
    }
}

impl<S: Scalar> From<EmbeddingVector<S>> for Vec<S> {
    fn from(v: EmbeddingVector<S>) -> Self {
        v.values
    }
}

impl<S: Scalar> fmt::Debug for EmbeddingVector<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EmbeddingVector<{}>(dim={})", S::NAME, self.values.len())
    }
}

/// Cosine similarity of two unit vectors, i.e. their dot product, clamped to `[-1, 1]`.
pub fn cosine_similarity<S: Scalar>(
    a: &EmbeddingVector<S>,
    b: &EmbeddingVector<S>,
) -> Result<f64, EmbeddingError> {
    if a.dimension() != b.dimension() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dimension(),
            actual: b.dimension(),
        });
    }
    Ok(unit_dot(a.as_slice(), b.as_slice()))
}

/// Unchecked kernel used by the exhaustive scans. Callers guarantee equal lengths.
#[inline]
pub(crate) fn unit_dot<S: Scalar>(a: &[S], b: &[S]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0)
}

/// A text encoder. Implementations must be deterministic and safe to share
/// between threads.
pub trait EmbedderBackend: Send + Sync {
    fn name(&self) -> &str;

    fn dimension(&self) -> usize;

    /// Raw (not necessarily normalized) vector for non-empty text.
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbeddingError>;
}

/// Embeds `text` with `backend` and returns a unit vector.
pub fn embed<S: Scalar>(
    backend: &dyn EmbedderBackend,
    text: &str,
) -> Result<EmbeddingVector<S>, EmbeddingError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(EmbeddingError::EmptyText);
    }
    let raw = backend.embed_raw(text)?;
    if raw.len() != backend.dimension() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: backend.dimension(),
            actual: raw.len(),
        });
    }
    EmbeddingVector::from_raw(&raw)
}

/// Reference embedder: signed feature hashing of case-folded tokens.
///
/// Each token lands in bucket `h mod D` with sign taken from the top bit of
/// its 64-bit FNV-1a hash, so lexical overlap drives similarity.
#[derive(Debug, Clone)]
pub struct HashedTokenEmbedder {
    dimension: usize,
    name: String,
}

impl HashedTokenEmbedder {
    pub const NAME: &'static str = "hashed-token";

    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        let name = if dimension == DEFAULT_DIMENSION {
            Self::NAME.to_string()
        } else {
            format!("{}-{}", Self::NAME, dimension)
        };
        Self { dimension, name }
    }
}

impl Default for HashedTokenEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl EmbedderBackend for HashedTokenEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbeddingError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let mut out = vec![0.0; self.dimension];
        for token in &tokens {
            let mut hasher = FnvHasher::default();
            hasher.write(token.as_bytes());
            let h = hasher.finish();
            let bucket = (h % self.dimension as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            out[bucket] += sign;
        }
        Ok(out)
    }
}

/// Remote embedding endpoint. POSTs `{"input": text}` and accepts either a
/// bare float array or an object with an `embedding` array (optionally nested
/// under `data[0]`).
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    name: String,
    dimension: usize,
    endpoint: HttpEndpoint,
}

impl HttpEmbedder {
    pub fn new(name: impl Into<String>, dimension: usize, endpoint: HttpEndpoint) -> Self {
        Self {
            name: name.into(),
            dimension,
            endpoint,
        }
    }
}

pub(crate) fn parse_embedding_response(value: &Value) -> Result<Vec<f64>, EmbeddingError> {
    let array = value
        .as_array()
        .or_else(|| value.get("embedding").and_then(Value::as_array))
        .or_else(|| {
            value
                .pointer("/data/0/embedding")
                .and_then(Value::as_array)
        })
        .ok_or_else(|| EmbeddingError::BackendFailure("response has no embedding array".into()))?;
    array
        .iter()
        .map(|v| {
            v.as_f64()
                .ok_or_else(|| EmbeddingError::BackendFailure("non-numeric embedding entry".into()))
        })
        .collect()
}

impl EmbedderBackend for HttpEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbeddingError> {
        let body = json!({ "input": text });
        let value = self
            .endpoint
            .post_json(&body)
            .map_err(EmbeddingError::BackendFailure)?;
        parse_embedding_response(&value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> HashedTokenEmbedder {
        HashedTokenEmbedder::default()
    }

    fn basis(dim: usize, i: usize) -> EmbeddingVector<f64> {
        let mut raw = vec![0.0; dim];
        raw[i] = 1.0;
        EmbeddingVector::from_raw(&raw).unwrap()
    }

    #[test]
    fn embed_is_unit_norm_and_deterministic() {
        let e = reference();
        let a: EmbeddingVector<f32> = embed(&e, "weather app").unwrap();
        let b: EmbeddingVector<f32> = embed(&e, "weather app").unwrap();
        assert!((a.norm() - 1.0).abs() <= NORM_TOLERANCE);
        assert_eq!(a.dimension(), DEFAULT_DIMENSION);
        assert_eq!(a, b);
    }

    #[test]
    fn empty_and_tokenless_text_is_rejected() {
        let e = reference();
        assert_eq!(embed::<f32>(&e, "   ").unwrap_err(), EmbeddingError::EmptyText);
        assert_eq!(embed::<f32>(&e, "?!  --").unwrap_err(), EmbeddingError::EmptyText);
    }

    #[test]
    fn lexical_overlap_ranks_higher() {
        let e = reference();
        let q: EmbeddingVector<f32> = embed(&e, "music streaming").unwrap();
        let near = embed(&e, "music streaming player").unwrap();
        let far = embed(&e, "flight booking").unwrap();
        let s_near = cosine_similarity(&q, &near).unwrap();
        let s_far = cosine_similarity(&q, &far).unwrap();
        assert!(s_near > s_far, "{s_near} vs {s_far}");
        // Two shared tokens out of 2 and 3: 2 / sqrt(6), absent collisions.
        assert!((s_near - 2.0 / 6f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn self_similarity_and_orthogonality() {
        let e1 = basis(8, 0);
        let e2 = basis(8, 1);
        assert!((cosine_similarity(&e1, &e1).unwrap() - 1.0).abs() <= 1e-6);
        assert!(cosine_similarity(&e1, &e2).unwrap().abs() <= 1e-9);
    }

    #[test]
    fn diagonal_against_axis_is_cos_45() {
        let a: EmbeddingVector<f32> = EmbeddingVector::from_raw(&[1.0, 1.0, 0.0, 0.0]).unwrap();
        let b: EmbeddingVector<f32> = EmbeddingVector::from_raw(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let s = cosine_similarity(&a, &b).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6, "{s}");
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = basis(4, 0);
        let b = basis(5, 0);
        assert_eq!(
            cosine_similarity(&a, &b).unwrap_err(),
            EmbeddingError::DimensionMismatch { expected: 4, actual: 5 }
        );
    }

    #[test]
    fn zero_vector_is_empty_text_class() {
        assert_eq!(
            EmbeddingVector::<f64>::from_raw(&[0.0, 0.0]).unwrap_err(),
            EmbeddingError::EmptyText
        );
    }

    #[test]
    fn serde_roundtrip_is_bit_exact_and_validates_norm() {
        let e = reference();
        let v: EmbeddingVector<f32> = embed(&e, "stream music and podcasts").unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: EmbeddingVector<f32> = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
        assert!(serde_json::from_str::<EmbeddingVector<f32>>("[0.5, 0.5]").is_err());
    }

    #[test]
    fn parses_common_embedding_response_shapes() {
        assert_eq!(parse_embedding_response(&json!([1.0, 2.0])).unwrap(), [1.0, 2.0]);
        assert_eq!(
            parse_embedding_response(&json!({"embedding": [0.5]})).unwrap(),
            [0.5]
        );
        assert_eq!(
            parse_embedding_response(&json!({"data": [{"embedding": [3.0]}]})).unwrap(),
            [3.0]
        );
        assert!(parse_embedding_response(&json!({"nope": 1})).is_err());
    }

    #[test]
    fn unreachable_endpoint_is_backend_failure() {
        let mut ep = HttpEndpoint::new("http://127.0.0.1:9/embed");
        ep.timeout_ms = 500;
        let backend = HttpEmbedder::new("remote", 4, ep);
        assert!(matches!(
            embed::<f32>(&backend, "hello"),
            Err(EmbeddingError::BackendFailure(_))
        ));
    }

    fn raw_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 16).prop_filter("non-zero", |v| {
            v.iter().map(|x| x * x).sum::<f64>() > 1e-6
        })
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric_and_self_one(a in raw_vec(), b in raw_vec()) {
            let a: EmbeddingVector<f32> = EmbeddingVector::from_raw(&a).unwrap();
            let b: EmbeddingVector<f32> = EmbeddingVector::from_raw(&b).unwrap();
            prop_assert_eq!(cosine_similarity(&a, &b).unwrap(), cosine_similarity(&b, &a).unwrap());
            prop_assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() <= 1e-6);
            let s = cosine_similarity(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
        }

        #[test]
        fn f64_vectors_hold_norm(a in raw_vec()) {
            let v: EmbeddingVector<f64> = EmbeddingVector::from_raw(&a).unwrap();
            prop_assert!((v.norm() - 1.0).abs() <= 1e-12);
            let c: EmbeddingVector<f32> = v.cast();
            prop_assert!((c.norm() - 1.0).abs() <= NORM_TOLERANCE);
        }
    }
}
