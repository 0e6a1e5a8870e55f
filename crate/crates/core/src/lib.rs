//! Retrieval-augmented mobile agent.
//!
//! Three retrieval stores feed one planning loop: an index of installed apps
//! ([`local_rag`]), web search digests ([`inter_rag`]) and an experience store
//! of successful traces ([`mem_rag`]). The agent ([`agent`]) drives a
//! deterministic simulated phone ([`device_sim`]) and the [`harness`] scores
//! whole benchmark packs.
//!
//! Vector storage is generic over the scalar type; the aliases below fix it
//! to `f32` (or `f64` where noted) for everyday use.

pub mod agent;
pub mod device_sim;
pub mod embedding;
pub mod harness;
pub mod http;
pub mod inter_rag;
pub mod llm;
pub mod local_rag;
pub mod mem_rag;
pub mod scalar;
pub mod text;

pub use agent::{Agent, AgentConfig, AgentError, Outcome, PlannerDecision, TaskRequest, TaskRun};
pub use device_sim::{Action, Scenario, SimDevice};
pub use embedding::{EmbedderBackend, HashedTokenEmbedder};
pub use harness::{load_benchmark, run_benchmark, validate_pack, BenchmarkPack, MetricsReport};
pub use local_rag::{AppSeed, RetrievalOutcome};
pub use scalar::Scalar;

pub type Embedding = embedding::EmbeddingVector<f32>;
pub type Embedding64 = embedding::EmbeddingVector<f64>;
pub type AppIndex = local_rag::AppIndex<f32>;
pub type AppIndex64 = local_rag::AppIndex<f64>;
pub type AppRecord = local_rag::AppRecord<f32>;
pub type MemoryStore = mem_rag::MemoryStore<f32>;
pub type MemoryStore64 = mem_rag::MemoryStore<f64>;
pub type MemoryRecord = mem_rag::MemoryRecord<f32>;
