//! Deterministic simulated phone.
//!
//! Apps are screen-transition graphs, the app store is a catalog of
//! installable apps, and every screen exposes structured elements instead
//! of pixels. Actions target element ids; actions with no matching
//! transition are recorded as no-ops rather than failing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inter_rag::{FixtureSearchBackend, RawHit};
use crate::local_rag::{AppSeed, AppSource};

pub const SCREEN_WIDTH: u32 = 1080;
pub const SCREEN_HEIGHT: u32 = 2400;

/// Screen id of the launcher.
pub const HOME_SCREEN: &str = "home";

/// Placeholder in `set_flags` values replaced by the typed text.
pub const TYPED_TEXT: &str = "$text";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeviceError {
    #[error("app {0} is not installed")]
    AppNotInstalled(String),
    #[error("device is stopped")]
    DeviceStopped,
    #[error("package {0} is not in the store catalog")]
    NotInStore(String),
    #[error("package {0} is already installed")]
    AlreadyInstalled(String),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario {scenario}: {message}")]
    Invalid { scenario: String, message: String },
    #[error("scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario file: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Button,
    TextField,
    ListItem,
    Icon,
    Label,
}

/// Rectangle in the fixed 1080x2400 abstract pixel space. Metadata only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bounds {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Bounds {
    pub fn is_valid(&self) -> bool {
        self.width > 0
            && self.height > 0
            && self.x.saturating_add(self.width) <= SCREEN_WIDTH
            && self.y.saturating_add(self.height) <= SCREEN_HEIGHT
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UiElement {
    pub element_id: String,
    pub role: Role,
    pub text: String,
    pub bounds: Bounds,
}

/// Everything the agent can observe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenState {
    /// `None` while the launcher is in front.
    pub foreground_package: Option<String>,
    pub screen_id: String,
    pub elements: Vec<UiElement>,
    pub state_flags: BTreeMap<String, String>,
}

impl ScreenState {
    /// `package/screen`, or `home`.
    pub fn location(&self) -> String {
        location(self.foreground_package.as_deref(), &self.screen_id)
    }

    pub fn element(&self, id: &str) -> Option<&UiElement> {
        self.elements.iter().find(|e| e.element_id == id)
    }
}

fn location(package: Option<&str>, screen: &str) -> String {
    match package {
        Some(p) => format!("{p}/{screen}"),
        None => HOME_SCREEN.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Tap,
    Type,
    Swipe,
    Back,
    Stop,
    LaunchApp,
    Install,
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ActionKind::Tap => "tap",
            ActionKind::Type => "type",
            ActionKind::Swipe => "swipe",
            ActionKind::Back => "back",
            ActionKind::Stop => "stop",
            ActionKind::LaunchApp => "launch_app",
            ActionKind::Install => "install",
        };
        f.write_str(s)
    }
}

/// The atomic action set, plus launch-by-package and store install.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ActionRepr", into = "ActionRepr")]
pub enum Action {
    Tap { target: String },
    Type { target: String, text: String },
    Swipe { direction: Direction },
    Back,
    /// Ends the task with a success/failure verdict.
    Stop { success: bool },
    LaunchApp { package: String },
    Install { package: String },
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Tap { .. } => ActionKind::Tap,
            Action::Type { .. } => ActionKind::Type,
            Action::Swipe { .. } => ActionKind::Swipe,
            Action::Back => ActionKind::Back,
            Action::Stop { .. } => ActionKind::Stop,
            Action::LaunchApp { .. } => ActionKind::LaunchApp,
            Action::Install { .. } => ActionKind::Install,
        }
    }

    /// Element id for `Tap` and `Type`.
    pub fn target(&self) -> Option<&str> {
        match self {
            Action::Tap { target } | Action::Type { target, .. } => Some(target),
            _ => None,
        }
    }

    pub fn package(&self) -> Option<&str> {
        match self {
            Action::LaunchApp { package } | Action::Install { package } => Some(package),
            _ => None,
        }
    }

    pub fn tap(target: impl Into<String>) -> Self {
        Action::Tap { target: target.into() }
    }

    pub fn type_text(target: impl Into<String>, text: impl Into<String>) -> Self {
        Action::Type {
            target: target.into(),
            text: text.into(),
        }
    }

    pub fn launch(package: impl Into<String>) -> Self {
        Action::LaunchApp { package: package.into() }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Tap { target } => write!(f, "tap {target}"),
            Action::Type { target, text } => write!(f, "type {text:?} into {target}"),
            Action::Swipe { direction } => write!(f, "swipe {}", format!("{direction:?}").to_lowercase()),
            Action::Back => f.write_str("back"),
            Action::Stop { success } => write!(f, "stop ({})", if *success { "success" } else { "failure" }),
            Action::LaunchApp { package } => write!(f, "launch {package}"),
            Action::Install { package } => write!(f, "install {package}"),
        }
    }
}

/// Flat wire form: `{kind, target?, text?, direction?, package?, success?}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ActionRepr {
    kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    package: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    success: Option<bool>,
}

impl TryFrom<ActionRepr> for Action {
    type Error = String;

    fn try_from(r: ActionRepr) -> Result<Self, Self::Error> {
        let non_empty = |v: Option<String>, field: &str| -> Result<String, String> {
            match v {
                Some(s) if !s.trim().is_empty() => Ok(s),
                _ => Err(format!("{} action needs a non-empty {field}", r.kind)),
            }
        };
        Ok(match r.kind {
            ActionKind::Tap => Action::Tap {
                target: non_empty(r.target.clone(), "target")?,
            },
            ActionKind::Type => Action::Type {
                target: non_empty(r.target.clone(), "target")?,
                text: r.text.clone().unwrap_or_default(),
            },
            ActionKind::Swipe => Action::Swipe {
                direction: r.direction.ok_or("swipe action needs a direction")?,
            },
            ActionKind::Back => Action::Back,
            ActionKind::Stop => Action::Stop {
                success: r.success.unwrap_or(true),
            },
            ActionKind::LaunchApp => Action::LaunchApp {
                package: non_empty(r.package.clone(), "package")?,
            },
            ActionKind::Install => Action::Install {
                package: non_empty(r.package.clone(), "package")?,
            },
        })
    }
}

impl From<Action> for ActionRepr {
    fn from(a: Action) -> Self {
        let mut r = ActionRepr {
            kind: a.kind(),
            target: None,
            text: None,
            direction: None,
            package: None,
            success: None,
        };
        match a {
            Action::Tap { target } => r.target = Some(target),
            Action::Type { target, text } => {
                r.target = Some(target);
                r.text = Some(text);
            }
            Action::Swipe { direction } => r.direction = Some(direction),
            Action::Back => {}
            Action::Stop { success } => r.success = Some(success),
            Action::LaunchApp { package } | Action::Install { package } => r.package = Some(package),
        }
        r
    }
}

/// Matches actions by kind plus whichever fields are given. A missing field
/// or a `"*"` string matches anything.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionPattern {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub package: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<bool>,
}

fn field_matches(pattern: &Option<String>, value: Option<&str>) -> bool {
    match pattern.as_deref() {
        None | Some("*") => true,
        Some(p) => value == Some(p),
    }
}

impl ActionPattern {
    pub fn of_kind(kind: ActionKind) -> Self {
        Self {
            kind,
            target: None,
            text: None,
            direction: None,
            package: None,
            success: None,
        }
    }

    /// Pattern matching exactly `action`.
    pub fn exact(action: &Action) -> Self {
        let r = ActionRepr::from(action.clone());
        Self {
            kind: r.kind,
            target: r.target,
            text: r.text,
            direction: r.direction,
            package: r.package,
            success: r.success,
        }
    }

    pub fn matches(&self, action: &Action) -> bool {
        if self.kind != action.kind() {
            return false;
        }
        match action {
            Action::Tap { target } => field_matches(&self.target, Some(target)),
            Action::Type { target, text } => {
                field_matches(&self.target, Some(target)) && field_matches(&self.text, Some(text))
            }
            Action::Swipe { direction } => self.direction.is_none_or(|d| d == *direction),
            Action::Back => true,
            Action::Stop { success } => self.success.is_none_or(|s| s == *success),
            Action::LaunchApp { package } | Action::Install { package } => {
                field_matches(&self.package, Some(package))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Transitioned,
    NoOp,
    FlagUpdate,
}

/// One executed action with the locations before and after it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionStep {
    pub action: Action,
    pub pre_screen: String,
    pub post_screen: String,
    pub effect: Effect,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionTrace {
    pub steps: Vec<ActionStep>,
}

impl ActionTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, step: ActionStep) {
        self.steps.push(step);
    }

    pub fn ends_with_stop(&self) -> bool {
        matches!(self.steps.last().map(|s| &s.action), Some(Action::Stop { .. }))
    }

    pub fn actions(&self) -> impl Iterator<Item = &Action> {
        self.steps.iter().map(|s| &s.action)
    }

    /// Numbered step list used as planner guidance.
    pub fn render(&self) -> String {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}. {}", i + 1, s.action))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub on: ActionPattern,
    /// Next screen; stays on the current one when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub set_flags: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenDef {
    pub elements: Vec<UiElement>,
    #[serde(default)]
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppGraph {
    pub entry: String,
    pub screens: BTreeMap<String, ScreenDef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitialState {
    #[serde(default)]
    pub foreground: Option<String>,
    #[serde(default = "home_screen")]
    pub screen_id: String,
    #[serde(default)]
    pub flags: BTreeMap<String, String>,
}

fn home_screen() -> String {
    HOME_SCREEN.to_string()
}

impl Default for InitialState {
    fn default() -> Self {
        Self {
            foreground: None,
            screen_id: home_screen(),
            flags: BTreeMap::new(),
        }
    }
}

/// A self-contained simulated world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub scenario_id: String,
    pub installed_apps: Vec<AppSeed>,
    #[serde(default)]
    pub store_catalog: Vec<AppSeed>,
    pub app_graphs: BTreeMap<String, AppGraph>,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub search_fixtures: BTreeMap<String, Vec<RawHit>>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn fixture_backend(&self) -> FixtureSearchBackend {
        FixtureSearchBackend::new(self.search_fixtures.clone())
    }

    /// Every package in either catalog.
    pub fn all_packages(&self) -> BTreeSet<&str> {
        self.installed_apps
            .iter()
            .chain(&self.store_catalog)
            .map(|a| a.package_id.as_str())
            .collect()
    }

    /// Store entries not already installed.
    pub fn downloadable(&self) -> Vec<AppSeed> {
        let installed: BTreeSet<&str> =
            self.installed_apps.iter().map(|a| a.package_id.as_str()).collect();
        self.store_catalog
            .iter()
            .filter(|a| !installed.contains(a.package_id.as_str()))
            .cloned()
            .collect()
    }

    fn invalid(&self, message: impl Into<String>) -> ScenarioError {
        ScenarioError::Invalid {
            scenario: self.scenario_id.clone(),
            message: message.into(),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.scenario_id.trim().is_empty() {
            return Err(self.invalid("empty scenario_id"));
        }
        let mut installed = BTreeMap::new();
        for app in &self.installed_apps {
            if installed.insert(app.package_id.as_str(), app).is_some() {
                return Err(self.invalid(format!("duplicate installed app {}", app.package_id)));
            }
        }
        let mut store = BTreeSet::new();
        for app in &self.store_catalog {
            if !store.insert(app.package_id.as_str()) {
                return Err(self.invalid(format!("duplicate store app {}", app.package_id)));
            }
            if let Some(local) = installed.get(app.package_id.as_str()) {
                if local.name != app.name || local.description != app.description {
                    return Err(self.invalid(format!(
                        "{} differs between installed and store catalogs",
                        app.package_id
                    )));
                }
            }
        }
        for pkg in installed.keys().chain(store.iter()) {
            if !self.app_graphs.contains_key(*pkg) {
                return Err(self.invalid(format!("no screen graph for {pkg}")));
            }
        }
        for (pkg, graph) in &self.app_graphs {
            if !graph.screens.contains_key(&graph.entry) {
                return Err(self.invalid(format!("{pkg}: entry screen {} missing", graph.entry)));
            }
            for (sid, screen) in &graph.screens {
                let mut ids = BTreeSet::new();
                for el in &screen.elements {
                    if !ids.insert(el.element_id.as_str()) {
                        return Err(self.invalid(format!("{pkg}/{sid}: duplicate element {}", el.element_id)));
                    }
                    if !el.bounds.is_valid() {
                        return Err(self.invalid(format!("{pkg}/{sid}: bad bounds on {}", el.element_id)));
                    }
                }
                for t in &screen.transitions {
                    if let Some(to) = &t.to {
                        if !graph.screens.contains_key(to) {
                            return Err(self.invalid(format!("{pkg}/{sid}: transition to unknown screen {to}")));
                        }
                    }
                }
            }
        }
        match &self.initial.foreground {
            None => {
                if self.initial.screen_id != HOME_SCREEN {
                    return Err(self.invalid("initial screen must be home when no app is in front"));
                }
            }
            Some(pkg) => {
                if !installed.contains_key(pkg.as_str()) {
                    return Err(self.invalid(format!("initial foreground {pkg} not installed")));
                }
                if !self.app_graphs[pkg].screens.contains_key(&self.initial.screen_id) {
                    return Err(self.invalid(format!("initial screen {} not in {pkg}", self.initial.screen_id)));
                }
            }
        }
        Ok(())
    }
}

/// The surface replay and the agent drive. A real-device adapter would
/// implement the same trait.
pub trait DeviceInterface {
    fn observe(&self) -> ScreenState;

    fn execute(&mut self, action: &Action) -> Result<ActionStep, DeviceError>;

    fn install_from_store(&mut self, package: &str) -> Result<AppSeed, DeviceError>;

    /// Package ids currently installed.
    fn installed_packages(&self) -> Vec<String>;

    /// Store entries that are not installed yet.
    fn store_listing(&self) -> Vec<AppSeed>;

    fn is_stopped(&self) -> bool;

    fn action_count(&self) -> u64;
}

/// Full comparable device state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceSnapshot {
    pub screen: ScreenState,
    pub installed: Vec<String>,
    pub back_stack: Vec<String>,
    pub stopped: Option<bool>,
    pub action_count: u64,
}

#[derive(Debug, Clone)]
pub struct SimDevice {
    scenario: Arc<Scenario>,
    installed: Vec<AppSeed>,
    foreground: Option<String>,
    screen: String,
    back_stack: Vec<String>,
    flags: BTreeMap<String, String>,
    stopped: Option<bool>,
    action_count: u64,
    visited: BTreeSet<String>,
    flag_history: BTreeMap<String, BTreeSet<String>>,
}

const ICON_COLUMNS: u32 = 4;

impl SimDevice {
    /// Fresh device at the scenario's initial state. The scenario is
    /// assumed valid (see [`Scenario::validate`]).
    pub fn new(scenario: Arc<Scenario>) -> Self {
        let initial = scenario.initial.clone();
        let mut flag_history: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (k, v) in &initial.flags {
            flag_history.entry(k.clone()).or_default().insert(v.clone());
        }
        let installed = scenario
            .installed_apps
            .iter()
            .cloned()
            .map(|mut a| {
                a.installed = true;
                a
            })
            .collect();
        let mut dev = Self {
            scenario,
            installed,
            foreground: initial.foreground,
            screen: initial.screen_id,
            back_stack: Vec::new(),
            flags: initial.flags,
            stopped: None,
            action_count: 0,
            visited: BTreeSet::new(),
            flag_history,
        };
        dev.visited.insert(dev.location());
        dev
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn location(&self) -> String {
        location(self.foreground.as_deref(), &self.screen)
    }

    pub fn is_installed(&self, package: &str) -> bool {
        self.installed.iter().any(|a| a.package_id == package)
    }

    pub fn installed_apps(&self) -> &[AppSeed] {
        &self.installed
    }

    /// Every `package/screen` location reached so far, including the start.
    pub fn visited(&self) -> &BTreeSet<String> {
        &self.visited
    }

    /// Every value each flag has held.
    pub fn flag_history(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.flag_history
    }

    pub fn stop_verdict(&self) -> Option<bool> {
        self.stopped
    }

    pub fn snapshot(&self) -> DeviceSnapshot {
        DeviceSnapshot {
            screen: self.observe(),
            installed: self.installed.iter().map(|a| a.package_id.clone()).collect(),
            back_stack: self.back_stack.clone(),
            stopped: self.stopped,
            action_count: self.action_count,
        }
    }

    fn home_elements(&self) -> Vec<UiElement> {
        self.installed
            .iter()
            .enumerate()
            .map(|(i, app)| {
                let i = i as u32;
                let (col, row) = (i % ICON_COLUMNS, i / ICON_COLUMNS);
                UiElement {
                    element_id: format!("icon:{}", app.package_id),
                    role: Role::Icon,
                    text: app.name.clone(),
                    bounds: Bounds {
                        x: col * 270 + 45,
                        y: (200 + row * 300).min(SCREEN_HEIGHT - 180),
                        width: 180,
                        height: 180,
                    },
                }
            })
            .collect()
    }

    fn current_def(&self) -> Option<&ScreenDef> {
        let pkg = self.foreground.as_ref()?;
        self.scenario.app_graphs.get(pkg)?.screens.get(&self.screen)
    }

    fn set_flag(&mut self, key: String, value: String) {
        self.flag_history.entry(key.clone()).or_default().insert(value.clone());
        self.flags.insert(key, value);
    }

    fn launch(&mut self, package: &str) -> Result<(), DeviceError> {
        if !self.is_installed(package) {
            return Err(DeviceError::AppNotInstalled(package.to_string()));
        }
        let graph = &self.scenario.app_graphs[package];
        self.foreground = Some(package.to_string());
        self.screen = graph.entry.clone();
        self.back_stack.clear();
        Ok(())
    }

    fn apply_transition(&mut self, action: &Action) {
        let Some(def) = self.current_def() else { return };
        if let Some(target) = action.target() {
            if !def.elements.iter().any(|e| e.element_id == target) {
                return;
            }
        }
        let Some(t) = def.transitions.iter().find(|t| t.on.matches(action)).cloned() else {
            return;
        };
        let typed = match action {
            Action::Type { text, .. } => Some(text.as_str()),
            _ => None,
        };
        for (k, v) in t.set_flags {
            let v = match typed {
                Some(text) => v.replace(TYPED_TEXT, text),
                None => v,
            };
            self.set_flag(k, v);
        }
        if let Some(to) = t.to {
            if to != self.screen {
                if matches!(action, Action::Back) {
                    self.back_stack.pop();
                } else {
                    self.back_stack.push(self.screen.clone());
                }
                self.screen = to;
            }
        }
    }

    fn go_back(&mut self) {
        let has_rule = self
            .current_def()
            .is_some_and(|d| d.transitions.iter().any(|t| t.on.matches(&Action::Back)));
        if has_rule {
            self.apply_transition(&Action::Back);
        } else if let Some(prev) = self.back_stack.pop() {
            self.screen = prev;
        } else if self.foreground.is_some() {
            self.foreground = None;
            self.screen = HOME_SCREEN.to_string();
        }
    }
}

impl DeviceInterface for SimDevice {
    fn observe(&self) -> ScreenState {
        let elements = match &self.foreground {
            None => self.home_elements(),
            Some(_) => self.current_def().map(|d| d.elements.clone()).unwrap_or_default(),
        };
        ScreenState {
            foreground_package: self.foreground.clone(),
            screen_id: self.screen.clone(),
            elements,
            state_flags: self.flags.clone(),
        }
    }

    fn execute(&mut self, action: &Action) -> Result<ActionStep, DeviceError> {
        if self.stopped.is_some() {
            return Err(DeviceError::DeviceStopped);
        }
        let pre = self.location();
        let pre_flags = self.flags.clone();
        let pre_installed = self.installed.len();

        match action {
            Action::Tap { target } if self.foreground.is_none() => {
                if let Some(pkg) = target.strip_prefix("icon:") {
                    if self.is_installed(pkg) {
                        self.launch(pkg)?;
                    }
                }
            }
            Action::Tap { .. } | Action::Type { .. } | Action::Swipe { .. } => {
                self.apply_transition(action);
            }
            Action::Back => self.go_back(),
            Action::Stop { success } => self.stopped = Some(*success),
            Action::LaunchApp { package } => self.launch(package)?,
            Action::Install { package } => match self.install_from_store(package) {
                Ok(_) | Err(DeviceError::AlreadyInstalled(_)) => {}
                Err(e) => return Err(e),
            },
        }

        self.action_count += 1;
        let post = self.location();
        self.visited.insert(post.clone());
        let effect = if post != pre {
            Effect::Transitioned
        } else if self.flags != pre_flags || self.installed.len() != pre_installed {
            Effect::FlagUpdate
        } else {
            Effect::NoOp
        };
        Ok(ActionStep {
            action: action.clone(),
            pre_screen: pre,
            post_screen: post,
            effect,
        })
    }

    /// Installs without counting a step. Agents go through
    /// `execute(Action::Install { .. })`, which is counted.
    fn install_from_store(&mut self, package: &str) -> Result<AppSeed, DeviceError> {
        if self.is_installed(package) {
            return Err(DeviceError::AlreadyInstalled(package.to_string()));
        }
        let mut seed = self
            .scenario
            .store_catalog
            .iter()
            .find(|a| a.package_id == package)
            .cloned()
            .ok_or_else(|| DeviceError::NotInStore(package.to_string()))?;
        seed.installed = true;
        seed.source = AppSource::StoreInstalled;
        self.installed.push(seed.clone());
        Ok(seed)
    }

    fn installed_packages(&self) -> Vec<String> {
        self.installed.iter().map(|a| a.package_id.clone()).collect()
    }

    fn store_listing(&self) -> Vec<AppSeed> {
        self.scenario
            .store_catalog
            .iter()
            .filter(|a| !self.is_installed(&a.package_id))
            .cloned()
            .collect()
    }

    fn is_stopped(&self) -> bool {
        self.stopped.is_some()
    }

    fn action_count(&self) -> u64 {
        self.action_count
    }
}
