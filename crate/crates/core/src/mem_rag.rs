//! Experience store: successful (query, action trace) pairs, routed to exact
//! replay, similar-case guidance, or nothing.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device_sim::{ActionTrace, DeviceInterface, ScreenState};
use crate::embedding::{embed, unit_dot, EmbedderBackend, EmbeddingError, EmbeddingVector};
use crate::scalar::Scalar;
use crate::text::normalize_query;

/// Minimum cosine similarity for a stored case to count as similar.
pub const DEFAULT_MEMORY_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("cannot commit an empty trace")]
    EmptyTrace,
    #[error("trace does not end with a stop action")]
    TraceWithoutStop,
    #[error("threshold {0} is outside (0, 1)")]
    InvalidThreshold(f64),
    #[error("store was built with backend {store} but {given} was supplied")]
    BackendMismatch { store: String, given: String },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("memory file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("memory file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct MemoryRecord<S: Scalar> {
    #[serde(rename = "query")]
    pub query_text: String,
    pub normalized_query: String,
    pub embedding: EmbeddingVector<S>,
    pub trace: ActionTrace,
    /// Logical commit tick; larger is newer.
    pub created_at: u64,
    pub success_count: u32,
}

impl<S: Scalar> MemoryRecord<S> {
    /// Matched query plus its numbered steps, handed to the planner.
    pub fn guidance(&self) -> String {
        format!(
            "A similar task succeeded before: \"{}\"\nSteps that worked:\n{}",
            self.query_text,
            self.trace.render()
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MemoryMatch<'a, S: Scalar> {
    Exact(&'a MemoryRecord<S>),
    Similar(&'a MemoryRecord<S>, f64),
    None,
}

impl<S: Scalar> MemoryMatch<'_, S> {
    pub fn kind(&self) -> MemoryHit {
        match self {
            MemoryMatch::Exact(_) => MemoryHit::Exact,
            MemoryMatch::Similar(..) => MemoryHit::Similar,
            MemoryMatch::None => MemoryHit::None,
        }
    }
}

/// Which route a lookup took, without the borrowed record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryHit {
    Exact,
    Similar,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitOutcome {
    Inserted,
    /// Existing record's trace replaced and success count bumped.
    Updated { success_count: u32 },
}

/// One record per normalized query.
///
/// Lookups take `&self` and commits take `&mut self`, so a lookup never sees
/// a half-applied commit.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStore<S: Scalar> {
    backend: String,
    dimension: usize,
    threshold: f64,
    capacity: Option<usize>,
    records: BTreeMap<String, MemoryRecord<S>>,
    next_tick: u64,
}

fn check_threshold(t: f64) -> Result<f64, MemoryError> {
    if t > 0.0 && t < 1.0 {
        Ok(t)
    } else {
        Err(MemoryError::InvalidThreshold(t))
    }
}

impl<S: Scalar> MemoryStore<S> {
    pub fn new(backend: &dyn EmbedderBackend, threshold: f64) -> Result<Self, MemoryError> {
        Ok(Self {
            backend: backend.name().to_string(),
            dimension: backend.dimension(),
            threshold: check_threshold(threshold)?,
            capacity: None,
            records: BTreeMap::new(),
            next_tick: 0,
        })
    }

    /// Caps the number of records; the oldest are evicted first.
    pub fn with_capacity_limit(mut self, capacity: usize) -> Self {
        self.capacity = Some(capacity.max(1));
        self.evict();
        self
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn with_threshold(&self, threshold: f64) -> Result<Self, MemoryError> {
        let mut s = self.clone();
        s.threshold = check_threshold(threshold)?;
        Ok(s)
    }

    pub fn backend_name(&self) -> &str {
        &self.backend
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    /// Records ordered by normalized query.
    pub fn records(&self) -> impl Iterator<Item = &MemoryRecord<S>> {
        self.records.values()
    }

    pub fn get(&self, query: &str) -> Option<&MemoryRecord<S>> {
        self.records.get(&normalize_query(query))
    }

    fn check_backend(&self, backend: &dyn EmbedderBackend) -> Result<(), MemoryError> {
        if backend.name() != self.backend || backend.dimension() != self.dimension {
            return Err(MemoryError::BackendMismatch {
                store: self.backend.clone(),
                given: backend.name().to_string(),
            });
        }
        Ok(())
    }

    /// Exact if the normalized query is stored; otherwise the best-scoring
    /// record if it reaches the threshold (ties go to the smaller key).
    pub fn lookup(
        &self,
        backend: &dyn EmbedderBackend,
        query: &str,
    ) -> Result<MemoryMatch<'_, S>, MemoryError> {
        if query.trim().is_empty() {
            return Err(MemoryError::EmptyQuery);
        }
        self.check_backend(backend)?;
        if let Some(rec) = self.records.get(&normalize_query(query)) {
            return Ok(MemoryMatch::Exact(rec));
        }
        if self.records.is_empty() {
            return Ok(MemoryMatch::None);
        }
        let q: EmbeddingVector<S> = embed(backend, query).map_err(|e| match e {
            EmbeddingError::EmptyText => MemoryError::EmptyQuery,
            other => other.into(),
        })?;
        Ok(self.route_embedding(&q))
    }

    /// Similarity routing for a precomputed vector (no exact-key check).
    pub fn route_embedding(&self, q: &EmbeddingVector<S>) -> MemoryMatch<'_, S> {
        let mut best: Option<(f64, &MemoryRecord<S>)> = None;
        for rec in self.records.values() {
            let s = unit_dot(q.as_slice(), rec.embedding.as_slice());
            if best.is_none_or(|(b, _)| s > b) {
                best = Some((s, rec));
            }
        }
        match best {
            Some((s, rec)) if s >= self.threshold => MemoryMatch::Similar(rec, s),
            _ => MemoryMatch::None,
        }
    }

    /// Stores a successful run. Re-committing a query replaces its trace.
    pub fn commit(
        &mut self,
        backend: &dyn EmbedderBackend,
        query: &str,
        trace: ActionTrace,
    ) -> Result<CommitOutcome, MemoryError> {
        if query.trim().is_empty() {
            return Err(MemoryError::EmptyQuery);
        }
        if trace.is_empty() {
            return Err(MemoryError::EmptyTrace);
        }
        if !trace.ends_with_stop() {
            return Err(MemoryError::TraceWithoutStop);
        }
        self.check_backend(backend)?;
        let key = normalize_query(query);
        if let Some(rec) = self.records.get_mut(&key) {
            rec.trace = trace;
            rec.success_count += 1;
            return Ok(CommitOutcome::Updated {
                success_count: rec.success_count,
            });
        }
        let embedding = embed(backend, query).map_err(|e| match e {
            EmbeddingError::EmptyText => MemoryError::EmptyQuery,
            other => other.into(),
        })?;
        let created_at = self.next_tick;
        self.next_tick += 1;
        self.records.insert(
            key.clone(),
            MemoryRecord {
                query_text: query.to_string(),
                normalized_query: key,
                embedding,
                trace,
                created_at,
                success_count: 1,
            },
        );
        self.evict();
        Ok(CommitOutcome::Inserted)
    }

    fn evict(&mut self) {
        let Some(cap) = self.capacity else { return };
        while self.records.len() > cap {
            let oldest = self
                .records
                .values()
                .min_by_key(|r| r.created_at)
                .map(|r| r.normalized_query.clone())
                .expect("non-empty");
            self.records.remove(&oldest);
        }
    }

    pub fn to_json(&self) -> Result<String, MemoryError> {
        let file = StoreFileRef {
            backend: &self.backend,
            dimension: self.dimension,
            threshold: self.threshold,
            capacity: self.capacity,
            records: self.records.values().collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self, MemoryError> {
        let file: StoreFile<S> = serde_json::from_str(text)?;
        let mut records = BTreeMap::new();
        let mut next_tick = 0;
        for mut rec in file.records {
            if rec.embedding.dimension() != file.dimension {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: file.dimension,
                    actual: rec.embedding.dimension(),
                }
                .into());
            }
            if rec.trace.is_empty() {
                return Err(MemoryError::EmptyTrace);
            }
            if !rec.trace.ends_with_stop() {
                return Err(MemoryError::TraceWithoutStop);
            }
            rec.normalized_query = normalize_query(&rec.query_text);
            next_tick = next_tick.max(rec.created_at + 1);
            records.insert(rec.normalized_query.clone(), rec);
        }
        Ok(Self {
            backend: file.backend,
            dimension: file.dimension,
            threshold: check_threshold(file.threshold)?,
            capacity: file.capacity,
            records,
            next_tick,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), MemoryError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MemoryError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize)]
#[serde(bound = "S: Scalar")]
struct StoreFileRef<'a, S: Scalar> {
    backend: &'a str,
    dimension: usize,
    threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    capacity: Option<usize>,
    records: Vec<&'a MemoryRecord<S>>,
}

#[derive(Deserialize)]
#[serde(bound = "S: Scalar")]
struct StoreFile<S: Scalar> {
    backend: String,
    dimension: usize,
    threshold: f64,
    #[serde(default)]
    capacity: Option<usize>,
    records: Vec<MemoryRecord<S>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AbortReason {
    MissingTarget { element_id: String },
    ExecutionError { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReplayOutcome {
    Completed { actions_executed: usize },
    /// `step` is 1-based; steps before it were executed.
    AbortedAtStep { step: usize, reason: AbortReason },
}

/// Executes a stored trace verbatim, stopping at the first step whose target
/// element is not on screen or whose execution fails. Returns the steps that
/// did run.
pub fn replay(trace: &ActionTrace, device: &mut dyn DeviceInterface) -> (ReplayOutcome, ActionTrace) {
    replay_observed(trace, device, &mut |_| {})
}

/// [`replay`], calling `observer` with the screen after every executed step.
pub fn replay_observed(
    trace: &ActionTrace,
    device: &mut dyn DeviceInterface,
    observer: &mut dyn FnMut(&ScreenState),
) -> (ReplayOutcome, ActionTrace) {
    let mut executed = ActionTrace::new();
    for (i, recorded) in trace.steps.iter().enumerate() {
        let step_no = i + 1;
        if let Some(target) = recorded.action.target() {
            if device.observe().element(target).is_none() {
                return (
                    ReplayOutcome::AbortedAtStep {
                        step: step_no,
                        reason: AbortReason::MissingTarget {
                            element_id: target.to_string(),
                        },
                    },
                    executed,
                );
            }
        }
        match device.execute(&recorded.action) {
            Ok(step) => {
                executed.push(step);
                observer(&device.observe());
            }
            Err(e) => {
                return (
                    ReplayOutcome::AbortedAtStep {
                        step: step_no,
                        reason: AbortReason::ExecutionError {
                            message: e.to_string(),
                        },
                    },
                    executed,
                )
            }
        }
    }
    (
        ReplayOutcome::Completed {
            actions_executed: executed.len(),
        },
        executed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device_sim::tests::alarm_scenario;
    use crate::device_sim::{Action, ActionStep, Effect, SimDevice};
    use crate::embedding::HashedTokenEmbedder;
    use std::sync::Arc;

    fn trace_of(actions: &[Action]) -> ActionTrace {
        ActionTrace {
            steps: actions
                .iter()
                .map(|a| ActionStep {
                    action: a.clone(),
                    pre_screen: "home".into(),
                    post_screen: "home".into(),
                    effect: Effect::NoOp,
                })
                .collect(),
        }
    }

    fn stop_trace() -> ActionTrace {
        trace_of(&[Action::tap("x"), Action::Stop { success: true }])
    }

    fn store() -> (HashedTokenEmbedder, MemoryStore<f32>) {
        let e = HashedTokenEmbedder::default();
        let s = MemoryStore::new(&e, DEFAULT_MEMORY_THRESHOLD).unwrap();
        (e, s)
    }

    #[test]
    fn exact_match_uses_normalization() {
        let (e, mut s) = store();
        s.commit(&e, "Set an alarm for 8 am.", stop_trace()).unwrap();
        match s.lookup(&e, "set an alarm for 8 am.").unwrap() {
            MemoryMatch::Exact(r) => assert_eq!(r.trace, stop_trace()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn similar_and_none_around_threshold() {
        let (e, mut s) = store();
        // Distinct tokens hash to near-orthogonal buckets, so the cosine is
        // shared / sqrt(len_a * len_b): 6/7 and 5/sqrt(42).
        s.commit(&e, "alpha bravo charlie delta echo foxtrot golf", stop_trace()).unwrap();
        let similar = "alpha bravo charlie delta echo foxtrot hotel";
        match s.lookup(&e, similar).unwrap() {
            MemoryMatch::Similar(_, score) => assert!((score - 6.0 / 7.0).abs() < 1e-6, "{score}"),
            other => panic!("{other:?}"),
        }
        let dissimilar = "alpha bravo charlie delta echo kilo";
        let s2 = s.lookup(&e, dissimilar).unwrap();
        assert_eq!(s2.kind(), MemoryHit::None);
    }

    #[test]
    fn empty_query_rejected() {
        let (e, s) = store();
        assert!(matches!(s.lookup(&e, "  "), Err(MemoryError::EmptyQuery)));
    }

    #[test]
    fn commit_rules() {
        let (e, mut s) = store();
        assert!(matches!(s.commit(&e, "q", ActionTrace::new()), Err(MemoryError::EmptyTrace)));
        assert!(matches!(
            s.commit(&e, "q", trace_of(&[Action::Back])),
            Err(MemoryError::TraceWithoutStop)
        ));
        assert_eq!(s.commit(&e, "q one", stop_trace()).unwrap(), CommitOutcome::Inserted);
        assert_eq!(
            s.commit(&e, "Q one.", stop_trace()).unwrap(),
            CommitOutcome::Updated { success_count: 2 }
        );
        assert_eq!(s.len(), 1);
        assert_eq!(s.get("q one").unwrap().success_count, 2);
    }

    #[test]
    fn capacity_evicts_oldest() {
        let (e, s) = store();
        let mut s = s.with_capacity_limit(2);
        s.commit(&e, "first task", stop_trace()).unwrap();
        s.commit(&e, "second task", stop_trace()).unwrap();
        s.commit(&e, "third task", stop_trace()).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.get("first task").is_none());
        assert!(s.get("second task").is_some());
        assert!(s.get("third task").is_some());
    }

    #[test]
    fn recommit_keeps_creation_order_for_eviction() {
        let (e, s) = store();
        let mut s = s.with_capacity_limit(2);
        s.commit(&e, "first task", stop_trace()).unwrap();
        s.commit(&e, "second task", stop_trace()).unwrap();
        s.commit(&e, "first task", stop_trace()).unwrap();
        s.commit(&e, "third task", stop_trace()).unwrap();
        assert!(s.get("first task").is_none());
    }

    #[test]
    fn json_roundtrip() {
        let (e, mut s) = store();
        s.commit(&e, "Set an alarm for 8 am.", stop_trace()).unwrap();
        s.commit(&e, "write a note", stop_trace()).unwrap();
        let text = s.to_json().unwrap();
        let back = MemoryStore::<f32>::from_json(&text).unwrap();
        assert_eq!(s, back);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["backend", "dimension", "threshold", "records"] {
            assert!(v.get(key).is_some());
        }
        for key in ["query", "normalized_query", "embedding", "trace", "created_at", "success_count"] {
            assert!(v["records"][0].get(key).is_some(), "{key}");
        }
    }

    fn record_alarm_run(dev: &mut SimDevice) -> ActionTrace {
        let mut t = ActionTrace::new();
        for a in [
            Action::launch("com.test.clock"),
            Action::tap("tab_alarm"),
            Action::tap("add_alarm"),
            Action::type_text("time_field", "08:00"),
            Action::tap("save"),
            Action::Stop { success: true },
        ] {
            t.push(dev.execute(&a).unwrap());
        }
        t
    }

    #[test]
    fn replay_reproduces_final_state() {
        let scenario = Arc::new(alarm_scenario());
        let mut original = SimDevice::new(scenario.clone());
        let trace = record_alarm_run(&mut original);

        let mut fresh = SimDevice::new(scenario);
        let (outcome, executed) = replay(&trace, &mut fresh);
        assert_eq!(outcome, ReplayOutcome::Completed { actions_executed: trace.len() });
        assert_eq!(executed, trace);
        assert_eq!(fresh.snapshot(), original.snapshot());
    }

    #[test]
    fn replay_aborts_on_missing_target() {
        let scenario = Arc::new(alarm_scenario());
        let mut original = SimDevice::new(scenario.clone());
        let trace = record_alarm_run(&mut original);

        let mut altered = (*scenario).clone();
        let alarms = altered
            .app_graphs
            .get_mut("com.test.clock")
            .unwrap()
            .screens
            .get_mut("alarms")
            .unwrap();
        alarms.elements.retain(|e| e.element_id != "add_alarm");
        let mut dev = SimDevice::new(Arc::new(altered));
        let (outcome, executed) = replay(&trace, &mut dev);
        assert_eq!(
            outcome,
            ReplayOutcome::AbortedAtStep {
                step: 3,
                reason: AbortReason::MissingTarget { element_id: "add_alarm".into() }
            }
        );
        assert_eq!(executed.len(), 2);
    }

    #[test]
    fn replay_aborts_on_execution_error() {
        let scenario = Arc::new(alarm_scenario());
        let trace = trace_of(&[Action::launch("com.test.stream"), Action::Stop { success: true }]);
        let mut dev = SimDevice::new(scenario);
        let (outcome, _) = replay(&trace, &mut dev);
        assert!(matches!(
            outcome,
            ReplayOutcome::AbortedAtStep { step: 1, reason: AbortReason::ExecutionError { .. } }
        ));
    }

    #[test]
    fn guidance_lists_numbered_steps() {
        let (e, mut s) = store();
        s.commit(&e, "tap then stop", stop_trace()).unwrap();
        let g = s.get("tap then stop").unwrap().guidance();
        assert!(g.contains("1. tap x"));
        assert!(g.contains("2. stop (success)"));
    }
}
