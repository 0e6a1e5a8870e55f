//! Benchmark packs, the five task metrics, and the suite runner.
//!
//! A pack is a directory:
//!
//! ```text
//! manifest.json        task order, suites, frozen stats, agent config
//! scenarios/<id>.json  simulated worlds
//! tasks/<id>.json      instruction, tier, scenario ref, ground truth, script
//! fixtures/<id>.json   optional search fixtures merged into scenario <id>
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    Agent, AgentConfig, AgentError, EffectReflector, GoalCheck, Outcome, Planner, PlannerDecision, Reflector,
    RunCounters, RunObservations, ScriptedPlanner, TaskRequest, TaskRun,
};
use crate::device_sim::{Action, ActionKind, ActionPattern, ActionTrace, Effect, Scenario, ScreenState, SimDevice, HOME_SCREEN};
use crate::embedding::EmbedderBackend;
use crate::inter_rag::{formulate_query, RawHit, SearchBackend};
use crate::local_rag::AppIndex;
use crate::mem_rag::{MemoryHit, MemoryStore};
use crate::scalar::Scalar;
use crate::text::tokenize;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("manifest: {0}")]
    ManifestError(String),
    #[error("task {task} refers to unknown scenario {scenario}")]
    DanglingScenarioRef { task: String, scenario: String },
    #[error("task {task}: {message}")]
    InvalidGroundTruth { task: String, message: String },
    #[error("run {index} is for task {run} but ground truth is for {truth}")]
    Misalignment { index: usize, run: String, truth: String },
    #[error("{0} runs for {1} tasks")]
    CountMismatch(usize, usize),
    #[error("unknown suite {0}")]
    UnknownSuite(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
}

fn file_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Atomic,
    MultiApp,
    OpenScenario,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    FlagEquals { flag: String, value: String },
    ScreenVisited { package: String, screen: String },
}

impl Predicate {
    pub fn holds(&self, observed: &RunObservations) -> bool {
        match self {
            Predicate::FlagEquals { flag, value } => observed.saw_flag(flag, value),
            Predicate::ScreenVisited { package, screen } => {
                observed.visited.contains(&format!("{package}/{screen}"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubGoal {
    pub name: String,
    pub predicate: Predicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub expected_apps: Vec<String>,
    pub expected_actions: Vec<ActionPattern>,
    pub sub_goals: Vec<SubGoal>,
}

impl GroundTruth {
    pub fn sub_goals_met(&self, observed: &RunObservations) -> usize {
        self.sub_goals.iter().filter(|g| g.predicate.holds(observed)).count()
    }
}

impl GoalCheck for GroundTruth {
    fn satisfied(&self, observed: &RunObservations) -> bool {
        self.sub_goals_met(observed) == self.sub_goals.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkTask {
    pub task_id: String,
    pub instruction: String,
    pub tier: Tier,
    pub scenario: String,
    pub ground_truth: GroundTruth,
    /// Decisions for the scripted planner.
    #[serde(default)]
    pub script: Vec<PlannerDecision>,
}

impl BenchmarkTask {
    pub fn needs_knowledge(&self) -> bool {
        self.tier == Tier::OpenScenario
            || self
                .script
                .iter()
                .any(|d| matches!(d, PlannerDecision::NeedKnowledge { .. }))
    }

    pub fn needs_install(&self, scenario: &Scenario) -> bool {
        self.ground_truth
            .expected_apps
            .iter()
            .any(|p| !scenario.installed_apps.iter().any(|a| &a.package_id == p))
    }
}

/// Pack-level counts, all derived from the tasks and scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchStats {
    pub tasks: usize,
    pub multi_app_tasks: usize,
    pub no_app_tasks: usize,
    /// Distinct packages across installed and store catalogs.
    pub apps: usize,
    pub avg_ops: f64,
    pub total_ops: usize,
}

impl BenchStats {
    pub fn compute(tasks: &[BenchmarkTask], scenarios: &BTreeMap<String, Arc<Scenario>>) -> Self {
        let total_ops: usize = tasks.iter().map(|t| t.ground_truth.expected_actions.len()).sum();
        let apps: BTreeSet<&str> = scenarios.values().flat_map(|s| s.all_packages()).collect();
        Self {
            tasks: tasks.len(),
            multi_app_tasks: tasks.iter().filter(|t| t.tier == Tier::MultiApp).count(),
            no_app_tasks: tasks.iter().filter(|t| t.tier == Tier::OpenScenario).count(),
            apps: apps.len(),
            avg_ops: if tasks.is_empty() {
                0.0
            } else {
                total_ops as f64 / tasks.len() as f64
            },
            total_ops,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub name: String,
    /// Times the whole task list is run back to back.
    #[serde(default = "one")]
    pub passes: usize,
    /// Subset of task ids; all tasks when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tasks: Option<Vec<String>>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Task ids in run order.
    pub tasks: Vec<String>,
    #[serde(default)]
    pub suites: Vec<SuiteSpec>,
    pub stats: BenchStats,
    #[serde(default)]
    pub agent: AgentConfig,
}

#[derive(Debug, Clone)]
pub struct BenchmarkPack {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub tasks: Vec<BenchmarkTask>,
    pub scenarios: BTreeMap<String, Arc<Scenario>>,
    /// Recomputed from the loaded tasks.
    pub stats: BenchStats,
}

impl BenchmarkPack {
    pub fn task(&self, id: &str) -> Option<&BenchmarkTask> {
        self.tasks.iter().find(|t| t.task_id == id)
    }

    /// The named suite; `main` (every task once) is implied.
    pub fn suite(&self, name: &str) -> Result<SuiteSpec, HarnessError> {
        if let Some(s) = self.manifest.suites.iter().find(|s| s.name == name) {
            return Ok(s.clone());
        }
        if name == "main" {
            return Ok(SuiteSpec {
                name: "main".into(),
                passes: 1,
                tasks: None,
            });
        }
        Err(HarnessError::UnknownSuite(name.to_string()))
    }

    /// Tasks of one pass of `suite`, in manifest order.
    pub fn suite_tasks(&self, suite: &SuiteSpec) -> Result<Vec<&BenchmarkTask>, HarnessError> {
        match &suite.tasks {
            None => Ok(self.tasks.iter().collect()),
            Some(ids) => ids
                .iter()
                .map(|id| {
                    self.task(id)
                        .ok_or_else(|| HarnessError::ManifestError(format!("suite {} lists unknown task {id}", suite.name)))
                })
                .collect(),
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| file_err(path, e))
}

/// Loads and validates a pack. Stats are recomputed, not trusted.
pub fn load_benchmark(path: &Path) -> Result<BenchmarkPack, HarnessError> {
    let manifest_path = path.join("manifest.json");
    if !manifest_path.is_file() {
        return Err(HarnessError::ManifestError(format!("{} not found", manifest_path.display())));
    }
    let manifest: Manifest = read_json(&manifest_path).map_err(|e| HarnessError::ManifestError(e.to_string()))?;
    manifest.agent.validate()?;

    let mut tasks = Vec::with_capacity(manifest.tasks.len());
    let mut seen = BTreeSet::new();
    for id in &manifest.tasks {
        if !seen.insert(id.as_str()) {
            return Err(HarnessError::ManifestError(format!("task {id} listed twice")));
        }
        let task: BenchmarkTask = read_json(&path.join("tasks").join(format!("{id}.json")))?;
        if &task.task_id != id {
            return Err(HarnessError::ManifestError(format!(
                "tasks/{id}.json declares task_id {}",
                task.task_id
            )));
        }
        tasks.push(task);
    }

    let mut scenarios = BTreeMap::new();
    for task in &tasks {
        if scenarios.contains_key(&task.scenario) {
            continue;
        }
        let file = path.join("scenarios").join(format!("{}.json", task.scenario));
        if !file.is_file() {
            return Err(HarnessError::DanglingScenarioRef {
                task: task.task_id.clone(),
                scenario: task.scenario.clone(),
            });
        }
        let mut scenario: Scenario = read_json(&file)?;
        let fixtures = path.join("fixtures").join(format!("{}.json", task.scenario));
        if fixtures.is_file() {
            let extra: BTreeMap<String, Vec<RawHit>> = read_json(&fixtures)?;
            scenario.search_fixtures.extend(extra);
        }
        scenario.validate().map_err(|e| file_err(&file, e))?;
        scenarios.insert(task.scenario.clone(), Arc::new(scenario));
    }

    for task in &tasks {
        check_ground_truth(task, &scenarios[&task.scenario])?;
    }
    for suite in &manifest.suites {
        if suite.passes == 0 {
            return Err(HarnessError::ManifestError(format!("suite {} has zero passes", suite.name)));
        }
    }

    let stats = BenchStats::compute(&tasks, &scenarios);
    let pack = BenchmarkPack {
        root: path.to_path_buf(),
        manifest,
        tasks,
        scenarios,
        stats,
    };
    for suite in &pack.manifest.suites {
        pack.suite_tasks(suite)?;
    }
    Ok(pack)
}

fn check_ground_truth(task: &BenchmarkTask, scenario: &Scenario) -> Result<(), HarnessError> {
    let bad = |m: String| {
        Err(HarnessError::InvalidGroundTruth {
            task: task.task_id.clone(),
            message: m,
        })
    };
    let gt = &task.ground_truth;
    if task.instruction.trim().is_empty() {
        return bad("empty instruction".into());
    }
    if gt.sub_goals.is_empty() {
        return bad("no sub-goals".into());
    }
    if gt.expected_actions.is_empty() {
        return bad("no expected actions".into());
    }
    let packages = scenario.all_packages();
    for app in &gt.expected_apps {
        if !packages.contains(app.as_str()) {
            return bad(format!("expected app {app} is in neither catalog"));
        }
    }
    for goal in &gt.sub_goals {
        if let Predicate::ScreenVisited { package, screen } = &goal.predicate {
            let known = scenario
                .app_graphs
                .get(package)
                .is_some_and(|g| g.screens.contains_key(screen));
            if !known {
                return bad(format!("sub-goal {} names unknown screen {package}/{screen}", goal.name));
            }
        }
    }
    Ok(())
}

/// Thresholds a shipped pack must meet beyond basic validity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackRules {
    pub min_tasks: usize,
    pub min_scenarios: usize,
    pub min_apps: usize,
    pub min_install_tasks: usize,
    pub min_knowledge_tasks: usize,
    pub require_repeat_suite: bool,
}

impl PackRules {
    /// Requirements for the in-repo desk pack.
    pub fn desk() -> Self {
        Self {
            min_tasks: 15,
            min_scenarios: 6,
            min_apps: 12,
            min_install_tasks: 3,
            min_knowledge_tasks: 3,
            require_repeat_suite: true,
        }
    }

    /// Validity checks only.
    pub fn minimal() -> Self {
        Self {
            min_tasks: 1,
            min_scenarios: 1,
            min_apps: 0,
            min_install_tasks: 0,
            min_knowledge_tasks: 0,
            require_repeat_suite: false,
        }
    }
}

fn mentions(instruction: &[String], name: &str) -> bool {
    let name = tokenize(name);
    !name.is_empty() && instruction.windows(name.len()).any(|w| w == name.as_slice())
}

/// Every problem found in the pack at `path`; empty means valid.
pub fn validate_pack(path: &Path, rules: &PackRules) -> Vec<String> {
    let pack = match load_benchmark(path) {
        Ok(p) => p,
        Err(e) => return vec![e.to_string()],
    };
    let mut v = Vec::new();
    let st = &pack.stats;
    if pack.manifest.stats != *st {
        v.push(format!(
            "manifest stats {:?} differ from recomputed {:?}",
            pack.manifest.stats, st
        ));
    }
    if (st.avg_ops * st.tasks as f64 - st.total_ops as f64).abs() > 1e-9 {
        v.push("avg_ops * tasks != total_ops".into());
    }
    let mut installs = 0;
    let mut knowledge = 0;
    for task in &pack.tasks {
        let scenario = &pack.scenarios[&task.scenario];
        let gt = &task.ground_truth;
        match task.tier {
            Tier::MultiApp if gt.expected_apps.len() < 2 => {
                v.push(format!("{}: multi_app task lists {} expected app(s)", task.task_id, gt.expected_apps.len()))
            }
            Tier::OpenScenario => {
                let words = tokenize(&task.instruction);
                for app in scenario.installed_apps.iter().chain(&scenario.store_catalog) {
                    if mentions(&words, &app.name) {
                        v.push(format!("{}: open_scenario instruction names app {}", task.task_id, app.name));
                    }
                }
            }
            _ => {}
        }
        if task.needs_install(scenario) {
            installs += 1;
        }
        if task.needs_knowledge() {
            knowledge += 1;
            if scenario.search_fixtures.is_empty() {
                v.push(format!("{}: needs web knowledge but scenario {} has no search fixtures", task.task_id, task.scenario));
            }
            let backend = scenario.fixture_backend();
            for d in &task.script {
                if let PlannerDecision::NeedKnowledge { entities } = d {
                    let hits = formulate_query(&task.instruction, entities)
                        .ok()
                        .and_then(|q| backend.raw_search(&q).ok())
                        .map_or(0, |h| h.len());
                    if hits == 0 {
                        v.push(format!("{}: no search fixture answers {:?}", task.task_id, entities));
                    }
                }
            }
        }
    }
    let need = |v: &mut Vec<String>, what: &str, have: usize, min: usize| {
        if have < min {
            v.push(format!("pack has {have} {what}, needs at least {min}"));
        }
    };
    need(&mut v, "tasks", st.tasks, rules.min_tasks);
    need(&mut v, "scenarios", pack.scenarios.len(), rules.min_scenarios);
    need(&mut v, "catalog apps", st.apps, rules.min_apps);
    need(&mut v, "install-requiring tasks", installs, rules.min_install_tasks);
    need(&mut v, "knowledge-requiring tasks", knowledge, rules.min_knowledge_tasks);
    for tier in [Tier::Atomic, Tier::MultiApp, Tier::OpenScenario] {
        if rules.min_tasks > 1 && !pack.tasks.iter().any(|t| t.tier == tier) {
            v.push(format!("no {tier:?} tasks"));
        }
    }
    if rules.require_repeat_suite {
        let ok = pack
            .manifest
            .suites
            .iter()
            .any(|s| s.passes >= 2 && s.tasks.is_none());
        if !ok {
            v.push("no repeat suite (all tasks, at least two passes)".into());
        }
    }
    v
}

/// Action Fidelity denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AfDenominator {
    #[default]
    Expected,
    Executed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricOptions {
    pub af_denominator: AfDenominator,
    /// Leave launches and installs out of Action Fidelity.
    pub af_skip_app_actions: bool,
}

/// Per-task tallies behind the suite percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: String,
    pub tier: Tier,
    pub outcome: Outcome,
    pub success: bool,
    pub selections_correct: usize,
    pub selections: usize,
    pub actions_matched: usize,
    pub actions_scored: usize,
    pub reflections_correct: usize,
    pub reflections: usize,
    pub sub_goals_met: usize,
    pub sub_goals: usize,
    pub mobile_steps: usize,
    pub planner_calls: usize,
    pub memory_hit: MemoryHit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tasks: usize,
    pub as_pct: f64,
    pub af_pct: f64,
    pub rp_pct: f64,
    pub tcr_pct: f64,
    pub tsr_pct: f64,
    pub avg_mobile_steps: f64,
    pub avg_planner_calls: f64,
    pub rows: Vec<TaskRow>,
}

/// Longest common subsequence of `actions` against `patterns`.
pub fn lcs_matches(actions: &[&Action], patterns: &[&ActionPattern]) -> usize {
    let mut prev = vec![0usize; patterns.len() + 1];
    let mut cur = vec![0usize; patterns.len() + 1];
    for a in actions {
        for (j, p) in patterns.iter().enumerate() {
            cur[j + 1] = if p.matches(a) {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[patterns.len()]
}

fn pct(num: usize, den: usize) -> f64 {
    // Nothing to score counts as perfect.
    if den == 0 {
        100.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn is_app_action(kind: ActionKind) -> bool {
    matches!(kind, ActionKind::LaunchApp | ActionKind::Install)
}

pub fn score_run(run: &TaskRun, task: &BenchmarkTask, opts: &MetricOptions) -> TaskRow {
    let gt = &task.ground_truth;
    let selections_correct = run
        .app_selections
        .iter()
        .enumerate()
        .filter(|(i, s)| gt.expected_apps.get(*i) == Some(&s.package_id))
        .count();

    let keep = |k: ActionKind| !(opts.af_skip_app_actions && is_app_action(k));
    let executed: Vec<&Action> = run.trace.actions().filter(|a| keep(a.kind())).collect();
    let expected: Vec<&ActionPattern> = gt.expected_actions.iter().filter(|p| keep(p.kind)).collect();
    let actions_matched = lcs_matches(&executed, &expected);
    let actions_scored = match opts.af_denominator {
        AfDenominator::Expected => expected.len(),
        AfDenominator::Executed => executed.len(),
    };

    let reflections_correct = run
        .reflections
        .iter()
        .filter(|r| {
            run.trace
                .steps
                .get(r.step)
                .is_some_and(|s| r.verdict.ok == (s.effect != Effect::NoOp))
        })
        .count();

    let sub_goals_met = gt.sub_goals_met(&run.observed);
    let success = run.outcome == Outcome::Success && sub_goals_met == gt.sub_goals.len();
    TaskRow {
        task_id: task.task_id.clone(),
        tier: task.tier,
        outcome: run.outcome,
        success,
        selections_correct,
        selections: run.app_selections.len(),
        actions_matched,
        actions_scored,
        reflections_correct,
        reflections: run.reflections.len(),
        sub_goals_met,
        sub_goals: gt.sub_goals.len(),
        mobile_steps: run.counters.mobile_steps,
        planner_calls: run.counters.planner_calls,
        memory_hit: run.counters.memory_hit,
        error: run.error.clone(),
    }
}

/// Suite metrics; runs and tasks are matched by position and must agree
/// on task ids.
pub fn compute_metrics(
    runs: &[TaskRun],
    tasks: &[&BenchmarkTask],
    opts: &MetricOptions,
) -> Result<MetricsReport, HarnessError> {
    if runs.len() != tasks.len() {
        return Err(HarnessError::CountMismatch(runs.len(), tasks.len()));
    }
    let mut rows = Vec::with_capacity(runs.len());
    for (i, (run, task)) in runs.iter().zip(tasks).enumerate() {
        if run.task_id != task.task_id {
            return Err(HarnessError::Misalignment {
                index: i,
                run: run.task_id.clone(),
                truth: task.task_id.clone(),
            });
        }
        rows.push(score_run(run, task, opts));
    }
    Ok(aggregate(rows))
}

fn aggregate(rows: Vec<TaskRow>) -> MetricsReport {
    let sum = |f: fn(&TaskRow) -> usize| rows.iter().map(f).sum::<usize>();
    let n = rows.len();
    let avg = |total: usize| if n == 0 { 0.0 } else { total as f64 / n as f64 };
    MetricsReport {
        tasks: n,
        as_pct: pct(sum(|r| r.selections_correct), sum(|r| r.selections)),
        af_pct: pct(sum(|r| r.actions_matched), sum(|r| r.actions_scored)),
        rp_pct: pct(sum(|r| r.reflections_correct), sum(|r| r.reflections)),
        tcr_pct: pct(sum(|r| r.sub_goals_met), sum(|r| r.sub_goals)),
        tsr_pct: pct(sum(|r| usize::from(r.success)), n),
        avg_mobile_steps: avg(sum(|r| r.mobile_steps)),
        avg_planner_calls: avg(sum(|r| r.planner_calls)),
        rows,
    }
}

/// Builds the per-task planner, reflector and search backend.
pub trait Components: Sync {
    fn planner(&self, task: &BenchmarkTask) -> Box<dyn Planner>;

    fn reflector(&self, task: &BenchmarkTask) -> Box<dyn Reflector>;

    /// Defaults to the scenario's fixtures.
    fn search(&self, scenario: &Scenario) -> Box<dyn SearchBackend> {
        Box::new(scenario.fixture_backend())
    }
}

/// Task scripts plus the effect-based reflector. Fully deterministic.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedComponents;

impl Components for ScriptedComponents {
    fn planner(&self, task: &BenchmarkTask) -> Box<dyn Planner> {
        Box::new(ScriptedPlanner::new(task.script.clone()).with_preferred_apps(task.ground_truth.expected_apps.clone()))
    }

    fn reflector(&self, _task: &BenchmarkTask) -> Box<dyn Reflector> {
        Box::new(EffectReflector)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub suite: String,
    /// Thread one memory store through the suite in order.
    pub memory: bool,
    /// Worker threads; ignored when memory is on.
    pub parallelism: usize,
    pub config: AgentConfig,
    pub metrics: MetricOptions,
}

impl BenchOptions {
    pub fn new(config: AgentConfig) -> Self {
        Self {
            suite: "main".into(),
            memory: false,
            parallelism: 1,
            config,
            metrics: MetricOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub pack: String,
    pub suite: String,
    pub memory: bool,
    pub overall: MetricsReport,
    /// One report per pass, in order.
    pub passes: Vec<MetricsReport>,
    pub harness_errors: usize,
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub report: SuiteReport,
    /// Every run, pass by pass.
    pub runs: Vec<TaskRun>,
}

impl TaskRun {
    /// Placeholder for a task the harness could not start.
    pub fn errored(task: &BenchmarkTask, error: String) -> Self {
        TaskRun {
            task_id: task.task_id.clone(),
            instruction: task.instruction.clone(),
            outcome: Outcome::Failure,
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
            observed: RunObservations::default(),
            final_screen: ScreenState {
                foreground_package: None,
                screen_id: HOME_SCREEN.into(),
                elements: Vec::new(),
                state_flags: BTreeMap::new(),
            },
            error: Some(error),
            events: Vec::new(),
        }
    }
}

struct Runner<'a, S: Scalar> {
    pack: &'a BenchmarkPack,
    embedder: &'a dyn EmbedderBackend,
    components: &'a dyn Components,
    config: &'a AgentConfig,
    indexes: BTreeMap<&'a str, AppIndex<S>>,
}

impl<S: Scalar> Runner<'_, S> {
    /// `Err` only for harness-level problems; the message becomes the row.
    fn run_one(&self, task: &BenchmarkTask, memory: &mut MemoryStore<S>) -> Result<TaskRun, String> {
        let scenario = self.pack.scenarios[&task.scenario].clone();
        let mut index = self.indexes[task.scenario.as_str()].clone();
        let search = self.components.search(&scenario);
        let agent = Agent::new(self.embedder, search.as_ref(), self.config.clone()).map_err(|e| e.to_string())?;
        let mut device = SimDevice::new(scenario);
        let mut planner = self.components.planner(task);
        let mut reflector = self.components.reflector(task);
        let request = TaskRequest::new(&task.task_id, &task.instruction).with_goal(&task.ground_truth);
        agent
            .run_task(
                &request,
                &mut device,
                &mut index,
                Some(memory),
                planner.as_mut(),
                reflector.as_mut(),
            )
            .map_err(|e| e.to_string())
    }

    fn fresh_memory(&self) -> Result<MemoryStore<S>, HarnessError> {
        MemoryStore::new(self.embedder, self.config.memory_threshold)
            .map_err(|e| HarnessError::Agent(AgentError::Memory(e)))
    }
}

/// Runs a suite. Per-task harness failures become failed rows; only
/// pack-level problems are errors.
pub fn run_benchmark<S: Scalar>(
    pack: &BenchmarkPack,
    embedder: &dyn EmbedderBackend,
    components: &dyn Components,
    opts: &BenchOptions,
) -> Result<BenchRun, HarnessError> {
    opts.config.validate()?;
    let suite = pack.suite(&opts.suite)?;
    let pass_tasks = pack.suite_tasks(&suite)?;

    let mut indexes = BTreeMap::new();
    for (id, scenario) in &pack.scenarios {
        let idx = AppIndex::<S>::build(&scenario.installed_apps, embedder, opts.config.local_threshold)
            .map_err(|e| HarnessError::Agent(e.into()))?;
        indexes.insert(id.as_str(), idx);
    }
    let runner = Runner {
        pack,
        embedder,
        components,
        config: &opts.config,
        indexes,
    };

    let mut runs = Vec::with_capacity(pass_tasks.len() * suite.passes);
    let mut harness_errors = 0;
    let mut settle = |task: &BenchmarkTask, r: Result<TaskRun, String>| match r {
        Ok(run) => run,
        Err(e) => {
            harness_errors += 1;
            TaskRun::errored(task, e)
        }
    };
    if opts.memory {
        let mut memory = runner.fresh_memory()?;
        for _ in 0..suite.passes {
            for task in &pass_tasks {
                let r = runner.run_one(task, &mut memory);
                runs.push(settle(task, r));
            }
        }
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.parallelism.max(1))
            .build()
            .map_err(|e| HarnessError::ManifestError(e.to_string()))?;
        for _ in 0..suite.passes {
            let results: Vec<Result<TaskRun, String>> = pool.install(|| {
                pass_tasks
                    .par_iter()
                    .map(|task| {
                        let mut memory = runner.fresh_memory().map_err(|e| e.to_string())?;
                        runner.run_one(task, &mut memory)
                    })
                    .collect()
            });
            for (task, r) in pass_tasks.iter().zip(results) {
                runs.push(settle(task, r));
            }
        }
    }

    let report = build_report(pack, &suite, opts, &runs, harness_errors)?;
    Ok(BenchRun { report, runs })
}

fn build_report(
    pack: &BenchmarkPack,
    suite: &SuiteSpec,
    opts: &BenchOptions,
    runs: &[TaskRun],
    harness_errors: usize,
) -> Result<SuiteReport, HarnessError> {
    let pass_tasks = pack.suite_tasks(suite)?;
    let all_tasks: Vec<&BenchmarkTask> = (0..suite.passes).flat_map(|_| pass_tasks.iter().copied()).collect();
    let overall = compute_metrics(runs, &all_tasks, &opts.metrics)?;
    let passes = runs
        .chunks(pass_tasks.len().max(1))
        .map(|chunk| compute_metrics(chunk, &pass_tasks, &opts.metrics))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SuiteReport {
        pack: pack.manifest.name.clone(),
        suite: suite.name.clone(),
        memory: opts.memory,
        overall,
        passes,
        harness_errors,
    })
}

/// Recomputes a suite report from an archived run set.
pub fn report_from_runs(
    pack: &BenchmarkPack,
    opts: &BenchOptions,
    runs: &[TaskRun],
) -> Result<SuiteReport, HarnessError> {
    let suite = pack.suite(&opts.suite)?;
    let errors = runs
        .iter()
        .filter(|r| r.error.is_some() && r.trace.is_empty() && r.counters.planner_calls == 0)
        .count();
    build_report(pack, &suite, opts, runs, errors)
}

/// Aligned plain-text table: one line per pass plus the overall line, then
/// the per-task rows.
pub fn render_table(report: &SuiteReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "pack {}  suite {}  memory {}",
        report.pack,
        report.suite,
        if report.memory { "on" } else { "off" }
    );
    let _ = writeln!(
        out,
        "{:<10} {:>5} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
        "run", "tasks", "AS", "AF", "RP", "TCR", "TSR", "steps", "calls"
    );
    let line = |out: &mut String, label: &str, m: &MetricsReport| {
        let _ = writeln!(
            out,
            "{:<10} {:>5} {:>7.1} {:>7.1} {:>7.1} {:>7.1} {:>7.1} {:>7.2} {:>7.2}",
            label,
            m.tasks,
            m.as_pct,
            m.af_pct,
            m.rp_pct,
            m.tcr_pct,
            m.tsr_pct,
            m.avg_mobile_steps,
            m.avg_planner_calls
        );
    };
    if report.passes.len() > 1 {
        for (i, p) in report.passes.iter().enumerate() {
            line(&mut out, &format!("pass {}", i + 1), p);
        }
    }
    line(&mut out, "overall", &report.overall);
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<28} {:<13} {:<8} {:>5} {:>7} {:>7} {:>7} {:>5} {:>5} {:<7}",
        "task", "tier", "result", "AS", "AF", "RP", "TCR", "steps", "calls", "memory"
    );
    for r in &report.overall.rows {
        let frac = |a: usize, b: usize| format!("{a}/{b}");
        let _ = writeln!(
            out,
            "{:<28} {:<13} {:<8} {:>5} {:>7} {:>7} {:>7} {:>5} {:>5} {:<7}",
            r.task_id,
            format!("{:?}", r.tier).to_lowercase(),
            if r.success { "ok" } else if r.error.is_some() { "error" } else { "fail" },
            frac(r.selections_correct, r.selections),
            frac(r.actions_matched, r.actions_scored),
            frac(r.reflections_correct, r.reflections),
            frac(r.sub_goals_met, r.sub_goals),
            r.mobile_steps,
            r.planner_calls,
            format!("{:?}", r.memory_hit).to_lowercase(),
        );
    }
    out
}

impl BenchRun {
    /// Writes `report.json`, `report.txt` and `runs/NNN-<task>.ndjson`.
    pub fn write_outputs(&self, dir: &Path) -> Result<(), HarnessError> {
        let runs_dir = dir.join("runs");
        std::fs::create_dir_all(&runs_dir).map_err(|e| file_err(&runs_dir, e))?;
        let json = serde_json::to_string_pretty(&self.report).map_err(|e| file_err(dir, e))? + "\n";
        let p = dir.join("report.json");
        std::fs::write(&p, json).map_err(|e| file_err(&p, e))?;
        let p = dir.join("report.txt");
        std::fs::write(&p, render_table(&self.report)).map_err(|e| file_err(&p, e))?;
        for (i, run) in self.runs.iter().enumerate() {
            let p = runs_dir.join(format!("{:03}-{}.ndjson", i + 1, run.task_id));
            let f = std::fs::File::create(&p).map_err(|e| file_err(&p, e))?;
            let mut w = std::io::BufWriter::new(f);
            run.write_log(&mut w)
                .and_then(|_| w.flush())
                .map_err(|e| file_err(&p, e))?;
        }
        Ok(())
    }
}

/// Reads the runs back from a `runs/` archive, in file-name order.
pub fn load_run_archive(dir: &Path) -> Result<Vec<TaskRun>, HarnessError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| file_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
        .collect();
    files.sort();
    let mut runs = Vec::with_capacity(files.len());
    for p in files {
        let f = std::fs::File::open(&p).map_err(|e| file_err(&p, e))?;
        let mut last = None;
        for line in std::io::BufReader::new(f).lines() {
            let line = line.map_err(|e| file_err(&p, e))?;
            if !line.trim().is_empty() {
                last = Some(line);
            }
        }
        let line = last.ok_or_else(|| file_err(&p, "empty log"))?;
        let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| file_err(&p, e))?;
        let run: TaskRun = serde_json::from_value(v["run"].clone()).map_err(|e| file_err(&p, e))?;
        runs.push(run);
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{AppSelection, ReflectionRecord, ReflectionVerdict};
    use crate::device_sim::ActionStep;

    fn pattern(a: &Action) -> ActionPattern {
        ActionPattern::exact(a)
    }

    #[test]
    fn lcs_tolerates_extra_steps() {
        let exp = [Action::launch("a"), Action::tap("x"), Action::tap("y"), Action::Stop { success: true }];
        let pats: Vec<ActionPattern> = exp.iter().map(pattern).collect();
        let pref: Vec<&ActionPattern> = pats.iter().collect();
        let run = [
            Action::launch("a"),
            Action::tap("oops"),
            Action::tap("x"),
            Action::Back,
            Action::tap("y"),
            Action::Stop { success: true },
        ];
        let rref: Vec<&Action> = run.iter().collect();
        assert_eq!(lcs_matches(&rref, &pref), 4);
        let swapped = [Action::tap("y"), Action::tap("x")];
        let sref: Vec<&Action> = swapped.iter().collect();
        assert_eq!(lcs_matches(&sref, &pref), 1);
    }

    #[test]
    fn wildcard_targets_match() {
        let mut p = ActionPattern::of_kind(ActionKind::Type);
        p.target = Some("*".into());
        let a = Action::type_text("field", "hello");
        assert_eq!(lcs_matches(&[&a], &[&p]), 1);
    }

    fn task(id: &str, apps: &[&str]) -> BenchmarkTask {
        BenchmarkTask {
            task_id: id.into(),
            instruction: "do it".into(),
            tier: Tier::Atomic,
            scenario: "s".into(),
            ground_truth: GroundTruth {
                expected_apps: apps.iter().map(|s| s.to_string()).collect(),
                expected_actions: vec![pattern(&Action::Stop { success: true })],
                sub_goals: vec![SubGoal {
                    name: "done".into(),
                    predicate: Predicate::FlagEquals {
                        flag: "done".into(),
                        value: "1".into(),
                    },
                }],
            },
            script: vec![],
        }
    }

    fn step(a: Action, effect: Effect) -> ActionStep {
        ActionStep {
            action: a,
            pre_screen: "home".into(),
            post_screen: "home".into(),
            effect,
        }
    }

    #[test]
    fn as_is_ordinal_and_errors_do_not_abort() {
        let t = task("t", &["a", "b"]);
        let mut run = TaskRun::errored(&t, "boom".into());
        run.error = None;
        for p in ["a", "c"] {
            run.app_selections.push(AppSelection {
                query: String::new(),
                package_id: p.into(),
                installed_from_store: false,
                steps: 1,
            });
        }
        let row = score_run(&run, &t, &MetricOptions::default());
        assert_eq!((row.selections_correct, row.selections), (1, 2));

        let errored = TaskRun::errored(&t, "scenario exploded".into());
        let m = compute_metrics(&[errored], &[&t], &MetricOptions::default()).unwrap();
        assert_eq!(m.tsr_pct, 0.0);
        assert_eq!(m.tcr_pct, 0.0);
    }

    #[test]
    fn reflection_oracle_uses_effects() {
        let t = task("t", &[]);
        let mut run = TaskRun::errored(&t, String::new());
        run.trace.push(step(Action::tap("x"), Effect::Transitioned));
        run.trace.push(step(Action::tap("y"), Effect::NoOp));
        run.trace.push(step(Action::tap("z"), Effect::NoOp));
        let v = |ok| ReflectionRecord {
            step: 0,
            verdict: if ok { ReflectionVerdict::ok() } else { ReflectionVerdict::failed("no") },
        };
        run.reflections = vec![
            ReflectionRecord { step: 0, ..v(true) },
            ReflectionRecord { step: 1, ..v(false) },
            ReflectionRecord { step: 2, ..v(true) },
        ];
        let row = score_run(&run, &t, &MetricOptions::default());
        assert_eq!((row.reflections_correct, row.reflections), (2, 3));
    }

    #[test]
    fn misaligned_runs_are_rejected() {
        let a = task("a", &[]);
        let b = task("b", &[]);
        let run = TaskRun::errored(&a, String::new());
        let err = compute_metrics(&[run], &[&b], &MetricOptions::default()).unwrap_err();
        assert!(matches!(err, HarnessError::Misalignment { .. }));
    }

    #[test]
    fn stats_arithmetic() {
        let mut tasks = Vec::new();
        for (i, n) in [3, 5, 4, 8].into_iter().enumerate() {
            let mut t = task(&format!("t{i}"), &[]);
            t.ground_truth.expected_actions = vec![ActionPattern::of_kind(ActionKind::Tap); n];
            tasks.push(t);
        }
        let s = BenchStats::compute(&tasks, &BTreeMap::new());
        assert_eq!(s.total_ops, 20);
        assert_eq!(s.avg_ops, 5.0);
    }

    #[test]
    fn vacuous_denominators_are_perfect() {
        let m = aggregate(vec![]);
        assert_eq!(m.as_pct, 100.0);
        assert_eq!(m.avg_mobile_steps, 0.0);
    }
}
