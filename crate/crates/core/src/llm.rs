//! Planner and reflector backed by a chat-completion model.
//!
//! The model is asked for a single JSON object per call. Unparseable replies
//! are retried; after the retry budget the call fails.

use std::fmt::Write as _;

use serde::Deserialize;
use serde_json::{json, Value};

use crate::agent::{
    Planner, PlannerContext, PlannerDecision, PlannerError, ReflectionInput, ReflectionVerdict, Reflector,
};
use crate::http::HttpEndpoint;
use crate::local_rag::AppMatch;

pub const DEFAULT_RETRIES: usize = 2;

/// Sends one system + user message pair, returns the reply text.
pub trait ChatTransport {
    fn complete(&self, system: &str, user: &str) -> Result<String, String>;
}

/// OpenAI-style `/chat/completions` endpoint.
#[derive(Debug, Clone)]
pub struct HttpChatTransport {
    endpoint: HttpEndpoint,
    model: String,
}

impl HttpChatTransport {
    pub fn new(endpoint: HttpEndpoint, model: impl Into<String>) -> Self {
        Self {
            endpoint,
            model: model.into(),
        }
    }
}

impl ChatTransport for HttpChatTransport {
    fn complete(&self, system: &str, user: &str) -> Result<String, String> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let resp = self.endpoint.post_json(&body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| "response has no choices[0].message.content".to_string())
    }
}

const PLANNER_SYSTEM: &str = "You operate an Android phone to complete the user's task. \
Reply with exactly one JSON object and nothing else. Allowed forms:
{\"decision\":\"need_knowledge\",\"entities\":[\"...\"]} when the task mentions something you do not know;
{\"decision\":\"select_app\",\"app_query\":\"...\"} to open an app described by its function;
{\"decision\":\"act\",\"action\":{\"kind\":\"tap\",\"target\":\"<element_id>\"}};
{\"decision\":\"act\",\"action\":{\"kind\":\"type\",\"target\":\"<element_id>\",\"text\":\"...\"}};
{\"decision\":\"act\",\"action\":{\"kind\":\"swipe\",\"direction\":\"up|down|left|right\"}};
{\"decision\":\"act\",\"action\":{\"kind\":\"back\"}};
{\"decision\":\"finish\",\"success\":true|false,\"reason\":\"...\"} when the task is done or impossible.";

const CHOOSER_SYSTEM: &str = "Pick the app best suited to the task. \
Reply with exactly one JSON object: {\"choice\": <1-based candidate number>}.";

const REFLECTOR_SYSTEM: &str = "You check whether a phone action achieved what was intended. \
Reply with exactly one JSON object: {\"ok\": true} or {\"ok\": false, \"diagnosis\": \"...\"}.";

/// Prompt sections in a fixed order: instruction, memory guidance, web
/// knowledge, app candidates, current screen, recent history, feedback.
pub fn render_planner_prompt(ctx: &PlannerContext) -> String {
    let mut p = String::new();
    let _ = writeln!(p, "Task: {}", ctx.instruction);
    if let Some(g) = &ctx.memory_guidance {
        let _ = writeln!(p, "\n{g}");
    }
    if let Some(k) = &ctx.knowledge {
        let _ = writeln!(p, "\nWeb results:\n{k}");
    }
    if !ctx.app_candidates.is_empty() {
        let _ = writeln!(p, "\nCandidate apps:\n{}", render_candidates(&ctx.app_candidates));
    }
    let _ = writeln!(p, "\nScreen {}:", ctx.screen.location());
    for e in &ctx.screen.elements {
        let _ = writeln!(p, "- {} ({:?}) {:?}", e.element_id, e.role, e.text);
    }
    if !ctx.history.is_empty() {
        let _ = writeln!(p, "\nRecent steps:");
        for s in &ctx.history {
            let _ = writeln!(p, "- {} -> {} ({:?})", s.action, s.post_screen, s.effect);
        }
    }
    if !ctx.feedback.is_empty() {
        let _ = writeln!(p, "\nNotes:");
        for f in &ctx.feedback {
            let _ = writeln!(p, "- {f}");
        }
    }
    let _ = write!(
        p,
        "\nBudget left: {} steps, {} decisions.",
        ctx.steps_remaining, ctx.planner_calls_remaining
    );
    p
}

fn render_candidates(c: &[AppMatch]) -> String {
    c.iter()
        .enumerate()
        .map(|(i, m)| format!("{}. {} ({}): {}", i + 1, m.app_name, m.package_id, m.description))
        .collect::<Vec<_>>()
        .join("\n")
}

/// First balanced `{...}` in `text`, tolerating prose or code fences around it.
pub fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn ask<T: for<'de> Deserialize<'de>>(
    transport: &dyn ChatTransport,
    retries: usize,
    system: &str,
    user: &str,
) -> Result<T, PlannerError> {
    let mut last = String::new();
    for _ in 0..=retries {
        match transport.complete(system, user) {
            Ok(reply) => match extract_json_object(&reply).map(serde_json::from_str::<T>) {
                Some(Ok(v)) => return Ok(v),
                Some(Err(e)) => last = format!("unparseable reply: {e}"),
                None => last = "reply contains no JSON object".into(),
            },
            Err(e) => last = e,
        }
    }
    Err(PlannerError(format!("gave up after {} attempts: {last}", retries + 1)))
}

pub struct ChatPlanner<T: ChatTransport> {
    transport: T,
    retries: usize,
}

impl<T: ChatTransport> ChatPlanner<T> {
    pub fn new(transport: T) -> Self {
        Self {
            transport,
            retries: DEFAULT_RETRIES,
        }
    }

    pub fn with_retries(mut self, retries: usize) -> Self {
        self.retries = retries;
        self
    }
}

#[derive(Deserialize)]
struct Choice {
    choice: usize,
}

impl<T: ChatTransport> Planner for ChatPlanner<T> {
    fn plan(&mut self, ctx: &PlannerContext) -> Result<PlannerDecision, PlannerError> {
        ask(&self.transport, self.retries, PLANNER_SYSTEM, &render_planner_prompt(ctx))
    }

    fn choose_app(&mut self, ctx: &PlannerContext, candidates: &[AppMatch]) -> Result<usize, PlannerError> {
        if candidates.len() <= 1 {
            return Ok(0);
        }
        let user = format!("Task: {}\n\nCandidates:\n{}", ctx.instruction, render_candidates(candidates));
        let c: Choice = ask(&self.transport, self.retries, CHOOSER_SYSTEM, &user)?;
        Ok(c.choice.clamp(1, candidates.len()) - 1)
    }
}

pub struct ChatReflector<T: ChatTransport> {
    transport: T,
    retries: usize,
}

impl<T: ChatTransport> ChatReflector<T> {
    pub fn new(transport: T) -> Self {
        Self {
            transport,
            retries: DEFAULT_RETRIES,
        }
    }
}

#[derive(Deserialize)]
struct Verdict {
    ok: bool,
    #[serde(default)]
    diagnosis: Option<String>,
}

impl<T: ChatTransport> Reflector for ChatReflector<T> {
    fn reflect(&mut self, input: &ReflectionInput<'_>) -> Result<ReflectionVerdict, PlannerError> {
        let describe = |s: &crate::device_sim::ScreenState| {
            let ids: Vec<&str> = s.elements.iter().map(|e| e.element_id.as_str()).collect();
            format!("{} elements [{}] flags {:?}", s.location(), ids.join(", "), s.state_flags)
        };
        let user = format!(
            "Task: {}\nBefore: {}\nAction: {}\nAfter: {}",
            input.intent,
            describe(input.pre),
            input.action,
            describe(input.post)
        );
        let v: Verdict = ask(&self.transport, self.retries, REFLECTOR_SYSTEM, &user)?;
        Ok(if v.ok {
            ReflectionVerdict::ok()
        } else {
            ReflectionVerdict::failed(v.diagnosis.unwrap_or_else(|| "action did not help".into()))
        })
    }
}
