//! Task orchestration. Memory is consulted first; otherwise a planner and a
//! reflector drive the device, pulling web knowledge and picking (or
//! installing) apps along the way.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device_sim::{Action, ActionKind, ActionStep, ActionTrace, DeviceInterface, Effect, ScreenState};
use crate::embedding::EmbedderBackend;
use crate::inter_rag::{formulate_query, search, SearchBackend, DEFAULT_SUMMARY_LIMIT, MAX_RESULTS};
use crate::local_rag::{
    AppIndex, AppMatch, LocalRagError, RetrievalOutcome, DEFAULT_LOCAL_THRESHOLD, DEFAULT_TOP_K,
};
use crate::mem_rag::{
    replay_observed, MemoryError, MemoryHit, MemoryMatch, MemoryStore, ReplayOutcome,
    DEFAULT_MEMORY_THRESHOLD,
};
use crate::scalar::Scalar;

pub const DEFAULT_MAX_STEPS: usize = 30;
pub const DEFAULT_MAX_PLANNER_CALLS: usize = 40;
pub const DEFAULT_HISTORY_WINDOW: usize = 8;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error("scenario does not match the index: {0}")]
    ScenarioMismatch(String),
    #[error("planner failed: {0}")]
    PlannerFailure(String),
    #[error(transparent)]
    LocalRag(#[from] LocalRagError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// When the reflector is consulted after an `Act` decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionMode {
    #[default]
    EveryAction,
    NoOpOnly,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    /// Rejection threshold used when building app indexes.
    pub local_threshold: f64,
    pub memory_threshold: f64,
    pub k_apps: usize,
    pub k_search: usize,
    pub summary_limit: usize,
    pub max_steps: usize,
    pub max_planner_calls: usize,
    /// Mobile steps charged for one store install.
    pub install_step_cost: usize,
    pub reflection: ReflectionMode,
    /// Most recent steps shown to the planner.
    pub history_window: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            local_threshold: DEFAULT_LOCAL_THRESHOLD,
            memory_threshold: DEFAULT_MEMORY_THRESHOLD,
            k_apps: DEFAULT_TOP_K,
            k_search: MAX_RESULTS,
            summary_limit: DEFAULT_SUMMARY_LIMIT,
            max_steps: DEFAULT_MAX_STEPS,
            max_planner_calls: DEFAULT_MAX_PLANNER_CALLS,
            install_step_cost: 1,
            reflection: ReflectionMode::EveryAction,
            history_window: DEFAULT_HISTORY_WINDOW,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::InvalidConfig(m));
        for (name, t) in [("local_threshold", self.local_threshold), ("memory_threshold", self.memory_threshold)] {
            if !(t > 0.0 && t < 1.0) {
                return bad(format!("{name} {t} is outside (0, 1)"));
            }
        }
        for (name, v) in [
            ("k_apps", self.k_apps),
            ("k_search", self.k_search),
            ("summary_limit", self.summary_limit),
            ("max_steps", self.max_steps),
            ("max_planner_calls", self.max_planner_calls),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        Ok(())
    }
}

/// What the planner wants next.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum PlannerDecision {
    /// Look these entities up on the web.
    NeedKnowledge { entities: Vec<String> },
    /// Find and open an app for this need, installing one if necessary.
    SelectApp { app_query: String },
    Act { action: Action },
    Finish { success: bool, reason: String },
}

/// Everything the planner sees on one call.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlannerContext {
    pub instruction: String,
    pub memory_guidance: Option<String>,
    /// Numbered web-search digest, when knowledge was requested.
    pub knowledge: Option<String>,
    /// Candidates from the latest app retrieval.
    pub app_candidates: Vec<AppMatch>,
    pub screen: ScreenState,
    /// Most recent steps, oldest first.
    pub history: Vec<ActionStep>,
    /// Reflection diagnoses and agent notices, oldest first.
    pub feedback: Vec<String>,
    pub steps_remaining: usize,
    pub planner_calls_remaining: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct PlannerError(pub String);

pub trait Planner {
    fn plan(&mut self, ctx: &PlannerContext) -> Result<PlannerDecision, PlannerError>;

    /// Index into `candidates` of the app to open. Defaults to the best match.
    fn choose_app(&mut self, _ctx: &PlannerContext, _candidates: &[AppMatch]) -> Result<usize, PlannerError> {
        Ok(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionVerdict {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnosis: Option<String>,
}

impl ReflectionVerdict {
    pub fn ok() -> Self {
        Self { ok: true, diagnosis: None }
    }

    pub fn failed(diagnosis: impl Into<String>) -> Self {
        Self {
            ok: false,
            diagnosis: Some(diagnosis.into()),
        }
    }
}

pub struct ReflectionInput<'a> {
    pub pre: &'a ScreenState,
    pub action: &'a Action,
    pub post: &'a ScreenState,
    pub intent: &'a str,
}

/// Judges whether an action achieved its intent.
pub trait Reflector {
    fn reflect(&mut self, input: &ReflectionInput<'_>) -> Result<ReflectionVerdict, PlannerError>;
}

/// Replays a fixed list of decisions, then gives up.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPlanner {
    script: Vec<PlannerDecision>,
    cursor: usize,
    preferred_apps: Vec<String>,
    selections: usize,
}

impl ScriptedPlanner {
    pub fn new(script: Vec<PlannerDecision>) -> Self {
        Self {
            script,
            ..Self::default()
        }
    }

    /// Packages to prefer, in order, when candidates are offered.
    pub fn with_preferred_apps(mut self, apps: Vec<String>) -> Self {
        self.preferred_apps = apps;
        self
    }
}

impl Planner for ScriptedPlanner {
    fn plan(&mut self, _ctx: &PlannerContext) -> Result<PlannerDecision, PlannerError> {
        let d = self.script.get(self.cursor).cloned().unwrap_or(PlannerDecision::Finish {
            success: false,
            reason: "script exhausted".into(),
        });
        self.cursor += 1;
        Ok(d)
    }

    fn choose_app(&mut self, _ctx: &PlannerContext, candidates: &[AppMatch]) -> Result<usize, PlannerError> {
        let pick = self
            .preferred_apps
            .get(self.selections)
            .and_then(|want| candidates.iter().position(|c| &c.package_id == want))
            .unwrap_or(0);
        self.selections += 1;
        Ok(pick)
    }
}

/// Accepts an action iff the observable screen changed.
#[derive(Debug, Clone, Copy, Default)]
pub struct EffectReflector;

impl Reflector for EffectReflector {
    fn reflect(&mut self, input: &ReflectionInput<'_>) -> Result<ReflectionVerdict, PlannerError> {
        if input.pre == input.post {
            Ok(ReflectionVerdict::failed(format!(
                "{} had no visible effect on {}",
                input.action,
                input.pre.location()
            )))
        } else {
            Ok(ReflectionVerdict::ok())
        }
    }
}

/// Post-hoc success test for a run, e.g. ground-truth sub-goals.
pub trait GoalCheck {
    fn satisfied(&self, observed: &RunObservations) -> bool;
}

/// Locations reached and flag values seen during a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunObservations {
    pub visited: BTreeSet<String>,
    pub flag_history: BTreeMap<String, BTreeSet<String>>,
}

impl RunObservations {
    pub fn record(&mut self, screen: &ScreenState) {
        self.visited.insert(screen.location());
        for (k, v) in &screen.state_flags {
            self.flag_history.entry(k.clone()).or_default().insert(v.clone());
        }
    }

    pub fn saw_flag(&self, flag: &str, value: &str) -> bool {
        self.flag_history.get(flag).is_some_and(|vs| vs.contains(value))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCounters {
    pub planner_calls: usize,
    /// Trace length, with installs charged at the configured cost.
    pub mobile_steps: usize,
    pub searches: usize,
    pub installs: usize,
    pub memory_hit: MemoryHit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppSelection {
    pub query: String,
    pub package_id: String,
    pub installed_from_store: bool,
    /// Mobile steps spent opening it.
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionRecord {
    /// Index into the trace.
    pub step: usize,
    pub verdict: ReflectionVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RunEvent {
    MemoryLookup {
        hit: MemoryHit,
        matched_query: Option<String>,
        score: Option<f64>,
    },
    Replay {
        outcome: ReplayOutcome,
    },
    Decision {
        call: usize,
        decision: PlannerDecision,
    },
    Search {
        query: String,
        results: usize,
    },
    Retrieval {
        query: String,
        store: bool,
        outcome: RetrievalOutcome,
    },
    Action {
        index: usize,
        step: ActionStep,
    },
    Reflection {
        step: usize,
        verdict: ReflectionVerdict,
    },
    Notice {
        message: String,
    },
    Commit {
        success_count: u32,
    },
    Finished {
        outcome: Outcome,
    },
}

/// Complete record of one task attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRun {
    pub task_id: String,
    pub instruction: String,
    pub outcome: Outcome,
    pub trace: ActionTrace,
    pub app_selections: Vec<AppSelection>,
    pub reflections: Vec<ReflectionRecord>,
    pub counters: RunCounters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay: Option<ReplayOutcome>,
    pub observed: RunObservations,
    pub final_screen: ScreenState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub events: Vec<RunEvent>,
}

impl TaskRun {
    pub fn succeeded(&self) -> bool {
        self.outcome == Outcome::Success
    }

    /// NDJSON: one line per event, then the run itself.
    pub fn write_log<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        let last = serde_json::json!({ "event": "task_run", "run": self });
        serde_json::to_writer(&mut w, &last)?;
        w.write_all(b"\n")
    }
}

/// One task to run.
pub struct TaskRequest<'a> {
    pub task_id: String,
    pub instruction: String,
    pub goal: Option<&'a dyn GoalCheck>,
}

impl<'a> TaskRequest<'a> {
    pub fn new(task_id: impl Into<String>, instruction: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            instruction: instruction.into(),
            goal: None,
        }
    }

    pub fn with_goal(mut self, goal: &'a dyn GoalCheck) -> Self {
        self.goal = Some(goal);
        self
    }
}

/// Shared, read-only agent resources.
pub struct Agent<'a> {
    embedder: &'a dyn EmbedderBackend,
    search: &'a dyn SearchBackend,
    config: AgentConfig,
}

impl<'a> Agent<'a> {
    pub fn new(
        embedder: &'a dyn EmbedderBackend,
        search: &'a dyn SearchBackend,
        config: AgentConfig,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        Ok(Self {
            embedder,
            search,
            config,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn embedder(&self) -> &'a dyn EmbedderBackend {
        self.embedder
    }

    /// Runs one task to completion or budget exhaustion.
    ///
    /// Setup problems (index/device mismatch, wrong embedder) are errors.
    /// Failures during the run, including planner failures, come back as a
    /// failed [`TaskRun`] with `error` set. Successful runs are committed to
    /// `memory` when one is given.
    #[allow(clippy::too_many_arguments)]
    pub fn run_task<S: Scalar>(
        &self,
        task: &TaskRequest<'_>,
        device: &mut dyn DeviceInterface,
        index: &mut AppIndex<S>,
        memory: Option<&mut MemoryStore<S>>,
        planner: &mut dyn Planner,
        reflector: &mut dyn Reflector,
    ) -> Result<TaskRun, AgentError> {
        if index.backend_name() != self.embedder.name() || index.dimension() != self.embedder.dimension() {
            return Err(LocalRagError::BackendMismatch {
                index: index.backend_name().to_string(),
                given: self.embedder.name().to_string(),
            }
            .into());
        }
        if let Some(m) = memory.as_deref() {
            if m.backend_name() != self.embedder.name() {
                return Err(MemoryError::BackendMismatch {
                    store: m.backend_name().to_string(),
                    given: self.embedder.name().to_string(),
                }
                .into());
            }
        }
        let installed: BTreeSet<String> = device.installed_packages().into_iter().collect();
        if let Some(r) = index.records().iter().find(|r| !installed.contains(&r.package_id)) {
            return Err(AgentError::ScenarioMismatch(format!(
                "{} is indexed but not installed",
                r.package_id
            )));
        }

        let first = device.observe();
        let mut observed = RunObservations::default();
        observed.record(&first);
        let mut s = Session {
            agent: self,
            instruction: &task.instruction,
            device,
            index,
            planner,
            reflector,
            trace: ActionTrace::new(),
            app_selections: Vec::new(),
            reflections: Vec::new(),
            counters: RunCounters {
                planner_calls: 0,
                mobile_steps: 0,
                searches: 0,
                installs: 0,
                memory_hit: MemoryHit::None,
            },
            replay: None,
            observed,
            events: Vec::new(),
            guidance: None,
            knowledge: None,
            candidates: Vec::new(),
            feedback: Vec::new(),
            stop_verdict: None,
        };

        let (mut outcome, error) = match s.drive(memory.as_deref()) {
            Ok(o) => (o, None),
            Err(e) => (Outcome::Failure, Some(e.to_string())),
        };
        if outcome == Outcome::Success && task.goal.is_some_and(|g| !g.satisfied(&s.observed)) {
            s.notice("stopped with success but the goal check failed".into());
            outcome = Outcome::Failure;
        }
        if let (Outcome::Success, Some(mem)) = (outcome, memory) {
            mem.commit(self.embedder, &task.instruction, s.trace.clone())?;
            let success_count = mem.get(&task.instruction).map_or(1, |r| r.success_count);
            s.events.push(RunEvent::Commit { success_count });
        }
        s.events.push(RunEvent::Finished { outcome });

        Ok(TaskRun {
            task_id: task.task_id.clone(),
            instruction: task.instruction.clone(),
            outcome,
            final_screen: s.device.observe(),
            trace: s.trace,
            app_selections: s.app_selections,
            reflections: s.reflections,
            counters: s.counters,
            replay: s.replay,
            observed: s.observed,
            error,
            events: s.events,
        })
    }
}

struct Session<'r, 'a, S: Scalar> {
    agent: &'r Agent<'a>,
    instruction: &'r str,
    device: &'r mut dyn DeviceInterface,
    index: &'r mut AppIndex<S>,
    planner: &'r mut dyn Planner,
    reflector: &'r mut dyn Reflector,
    trace: ActionTrace,
    app_selections: Vec<AppSelection>,
    reflections: Vec<ReflectionRecord>,
    counters: RunCounters,
    replay: Option<ReplayOutcome>,
    observed: RunObservations,
    events: Vec<RunEvent>,
    guidance: Option<String>,
    knowledge: Option<String>,
    candidates: Vec<AppMatch>,
    feedback: Vec<String>,
    stop_verdict: Option<bool>,
}

enum Flow {
    Continue,
    Done(Outcome),
}

impl<S: Scalar> Session<'_, '_, S> {
    fn config(&self) -> &AgentConfig {
        &self.agent.config
    }

    fn notice(&mut self, message: String) {
        self.feedback.push(message.clone());
        self.events.push(RunEvent::Notice { message });
    }

    fn step_cost(&self, action: &Action) -> usize {
        if action.kind() == ActionKind::Install {
            self.config().install_step_cost
        } else {
            1
        }
    }

    fn record_step(&mut self, step: ActionStep) {
        self.counters.mobile_steps += self.step_cost(&step.action);
        match &step.action {
            Action::Install { .. } if step.effect != Effect::NoOp => self.counters.installs += 1,
            Action::Stop { success } => self.stop_verdict = Some(*success),
            _ => {}
        }
        self.events.push(RunEvent::Action {
            index: self.trace.len(),
            step: step.clone(),
        });
        self.trace.push(step);
    }

    /// Executes and records one action. Device errors become notices.
    fn execute(&mut self, action: &Action) -> Option<ActionStep> {
        match self.device.execute(action) {
            Ok(step) => {
                self.record_step(step.clone());
                let screen = self.device.observe();
                self.observed.record(&screen);
                Some(step)
            }
            Err(e) => {
                self.notice(format!("{action} failed: {e}"));
                None
            }
        }
    }

    fn verdict(&self) -> Outcome {
        if self.stop_verdict == Some(true) {
            Outcome::Success
        } else {
            Outcome::Failure
        }
    }

    fn drive(&mut self, memory: Option<&MemoryStore<S>>) -> Result<Outcome, AgentError> {
        if let Some(mem) = memory {
            if let Flow::Done(o) = self.consult_memory(mem)? {
                return Ok(o);
            }
        }
        loop {
            if self.device.is_stopped() {
                return Ok(self.verdict());
            }
            let cfg = self.config();
            if self.counters.planner_calls >= cfg.max_planner_calls || self.counters.mobile_steps >= cfg.max_steps {
                self.notice("budget exhausted".into());
                return Ok(Outcome::BudgetExhausted);
            }
            let ctx = self.context();
            let decision = self
                .planner
                .plan(&ctx)
                .map_err(|e| AgentError::PlannerFailure(e.0))?;
            self.counters.planner_calls += 1;
            self.events.push(RunEvent::Decision {
                call: self.counters.planner_calls,
                decision: decision.clone(),
            });
            if let Flow::Done(o) = self.apply(decision, &ctx)? {
                return Ok(o);
            }
        }
    }

    fn consult_memory(&mut self, mem: &MemoryStore<S>) -> Result<Flow, AgentError> {
        let found = mem.lookup(self.agent.embedder, self.instruction)?;
        self.counters.memory_hit = found.kind();
        let (matched, score) = match &found {
            MemoryMatch::Exact(r) => (Some(r.query_text.clone()), None),
            MemoryMatch::Similar(r, s) => (Some(r.query_text.clone()), Some(*s)),
            MemoryMatch::None => (None, None),
        };
        self.events.push(RunEvent::MemoryLookup {
            hit: found.kind(),
            matched_query: matched,
            score,
        });
        match found {
            MemoryMatch::Exact(rec) => {
                let stored = rec.trace.clone();
                let guidance = rec.guidance();
                let observed = &mut self.observed;
                let (outcome, executed) =
                    replay_observed(&stored, &mut *self.device, &mut |screen| observed.record(screen));
                for step in executed.steps {
                    self.record_step(step);
                }
                self.events.push(RunEvent::Replay {
                    outcome: outcome.clone(),
                });
                let completed = matches!(outcome, ReplayOutcome::Completed { .. });
                self.replay = Some(outcome);
                if completed {
                    return Ok(Flow::Done(self.verdict()));
                }
                // Fall back to planning with the stored trace as a hint.
                self.guidance = Some(guidance);
                self.notice("replay of the stored trace aborted; continuing from the current screen".into());
            }
            MemoryMatch::Similar(rec, _) => self.guidance = Some(rec.guidance()),
            MemoryMatch::None => {}
        }
        Ok(Flow::Continue)
    }

    fn context(&self) -> PlannerContext {
        let cfg = self.config();
        let steps = &self.trace.steps;
        let from = steps.len().saturating_sub(cfg.history_window);
        PlannerContext {
            instruction: self.instruction.to_string(),
            memory_guidance: self.guidance.clone(),
            knowledge: self.knowledge.clone(),
            app_candidates: self.candidates.clone(),
            screen: self.device.observe(),
            history: steps[from..].to_vec(),
            feedback: self.feedback.clone(),
            steps_remaining: cfg.max_steps.saturating_sub(self.counters.mobile_steps),
            planner_calls_remaining: cfg.max_planner_calls.saturating_sub(self.counters.planner_calls),
        }
    }

    fn apply(&mut self, decision: PlannerDecision, ctx: &PlannerContext) -> Result<Flow, AgentError> {
        match decision {
            PlannerDecision::NeedKnowledge { entities } => {
                self.lookup_knowledge(&entities);
                Ok(Flow::Continue)
            }
            PlannerDecision::SelectApp { app_query } => self.select_and_open_app(&app_query, ctx),
            PlannerDecision::Act {
                action: Action::Stop { success },
            }
            | PlannerDecision::Finish { success, .. } => {
                if !self.device.is_stopped() {
                    self.execute(&Action::Stop { success });
                }
                Ok(Flow::Done(self.verdict()))
            }
            PlannerDecision::Act { action } => {
                let pre = self.device.observe();
                if let Some(step) = self.execute(&action) {
                    let wanted = match self.config().reflection {
                        ReflectionMode::EveryAction => true,
                        ReflectionMode::NoOpOnly => step.effect == Effect::NoOp,
                        ReflectionMode::Off => false,
                    };
                    if wanted {
                        self.reflect(&pre, &action)?;
                    }
                }
                Ok(Flow::Continue)
            }
        }
    }

    fn reflect(&mut self, pre: &ScreenState, action: &Action) -> Result<(), AgentError> {
        let post = self.device.observe();
        let input = ReflectionInput {
            pre,
            action,
            post: &post,
            intent: self.instruction,
        };
        let verdict = self
            .reflector
            .reflect(&input)
            .map_err(|e| AgentError::PlannerFailure(format!("reflector: {}", e.0)))?;
        let step = self.trace.len() - 1;
        if let Some(d) = verdict.diagnosis.as_ref().filter(|_| !verdict.ok) {
            self.feedback.push(format!("step {}: {d}", step + 1));
        }
        self.events.push(RunEvent::Reflection {
            step,
            verdict: verdict.clone(),
        });
        self.reflections.push(ReflectionRecord { step, verdict });
        Ok(())
    }

    fn lookup_knowledge(&mut self, entities: &[String]) {
        let cfg = self.config();
        let (k, limit) = (cfg.k_search, cfg.summary_limit);
        let result = formulate_query(self.instruction, entities)
            .and_then(|q| search(self.agent.search, &q, k, limit));
        match result {
            Ok(ctx) => {
                self.counters.searches += 1;
                self.events.push(RunEvent::Search {
                    query: ctx.query.text.clone(),
                    results: ctx.results.len(),
                });
                if ctx.results.is_empty() {
                    self.notice(format!("web search for {:?} returned nothing", ctx.query.text));
                }
                self.knowledge = Some(ctx.digest);
            }
            Err(e) => self.notice(format!("web search unavailable: {e}")),
        }
    }

    /// Retrieves a local app and launches it; on rejection, installs the
    /// best store match first.
    fn select_and_open_app(&mut self, query: &str, ctx: &PlannerContext) -> Result<Flow, AgentError> {
        let embedder = self.agent.embedder;
        let outcome = self.index.retrieve_apps(embedder, query, self.config().k_apps)?;
        self.events.push(RunEvent::Retrieval {
            query: query.to_string(),
            store: false,
            outcome: outcome.clone(),
        });
        let before = self.counters.mobile_steps;

        let (package, from_store) = match outcome {
            RetrievalOutcome::Matches { matches } => {
                self.candidates = matches;
                let mut ctx = ctx.clone();
                ctx.app_candidates = self.candidates.clone();
                let pick = self
                    .planner
                    .choose_app(&ctx, &self.candidates)
                    .map_err(|e| AgentError::PlannerFailure(e.0))?;
                let pick = pick.min(self.candidates.len() - 1);
                (self.candidates[pick].package_id.clone(), false)
            }
            RetrievalOutcome::NoLocalApp { best_score } => {
                let listing = self.device.store_listing();
                let store = AppIndex::<S>::build(&listing, embedder, self.index.threshold())?;
                let store_outcome = store.retrieve_apps(embedder, query, 1)?;
                self.events.push(RunEvent::Retrieval {
                    query: query.to_string(),
                    store: true,
                    outcome: store_outcome.clone(),
                });
                let Some(best) = store_outcome.matches().first() else {
                    self.candidates.clear();
                    self.notice(format!(
                        "no installed or downloadable app matches {query:?} (best local score {})",
                        best_score.map_or("n/a".into(), |s| format!("{s:.3}"))
                    ));
                    return Ok(Flow::Continue);
                };
                let package = best.package_id.clone();
                self.execute(&Action::Install {
                    package: package.clone(),
                })
                .ok_or_else(|| AgentError::ScenarioMismatch(format!("store refused {package}")))?;
                if let Some(seed) = listing.iter().find(|a| a.package_id == package) {
                    let mut seed = seed.clone();
                    seed.installed = true;
                    seed.source = crate::local_rag::AppSource::StoreInstalled;
                    self.index.register_seed(embedder, &seed)?;
                }
                self.candidates = store_outcome.matches().to_vec();
                (package, true)
            }
        };

        if self.execute(&Action::launch(package.clone())).is_none() {
            return Ok(Flow::Continue);
        }
        self.app_selections.push(AppSelection {
            query: query.to_string(),
            package_id: package,
            installed_from_store: from_store,
            steps: self.counters.mobile_steps - before,
        });
        Ok(Flow::Continue)
    }
}
