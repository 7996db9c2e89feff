use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicI64, Ordering};

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::template::{self, squash_whitespace, value_to_text};
use super::{ErrorPolicy, Skill, Step, StepKind, SufficiencyRule};
use crate::analyzer::{tokenize, Analyzer};
use crate::service::tools::ToolRegistry;

/// Keywords harvested from each search iteration.
pub const KEYWORDS_PER_ITERATION: usize = 5;

pub trait Clock {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Starts at a fixed instant and advances one millisecond per reading.
#[derive(Debug)]
pub struct TickClock {
    next_ms: AtomicI64,
}

impl TickClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self {
            next_ms: AtomicI64::new(start.timestamp_millis()),
        }
    }
}

impl Default for TickClock {
    fn default() -> Self {
        Self::new(Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap())
    }
}

impl Clock for TickClock {
    fn now(&self) -> DateTime<Utc> {
        let ms = self.next_ms.fetch_add(1, Ordering::SeqCst);
        Utc.timestamp_millis_opt(ms).unwrap()
    }
}

/// Everything a text generator gets for one synthesize step.
#[derive(Debug, Clone, Copy)]
pub struct SynthesisRequest<'a> {
    pub skill: &'a str,
    pub step: &'a str,
    pub query: &'a str,
    pub prompt: &'a str,
    /// Outputs of the steps listed in `requires`.
    pub inputs: &'a BTreeMap<String, Value>,
    pub policies: &'a BTreeMap<String, String>,
}

/// Produces text for synthesize steps. Implementations may call a model.
pub trait StepExecutor {
    fn synthesize(&self, request: &SynthesisRequest<'_>) -> Result<String, String>;
}

/// Deterministic stand-in for a text generator: returns the rendered
/// prompt under a heading naming the step.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateExecutor;

impl StepExecutor for TemplateExecutor {
    fn synthesize(&self, request: &SynthesisRequest<'_>) -> Result<String, String> {
        Ok(format!("## {}\n{}", request.step, request.prompt.trim()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Halted { step: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: String,
    pub kind: StepKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u32>,
    pub inputs: Value,
    pub output: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub skill_name: String,
    pub query: String,
    pub status: RunStatus,
    pub step_records: Vec<StepRecord>,
    pub final_outputs: BTreeMap<String, Value>,
}

impl Transcript {
    /// Step names in record order, one entry per record.
    pub fn step_sequence(&self) -> Vec<&str> {
        self.step_records.iter().map(|r| r.step.as_str()).collect()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExecError {
    #[error("skill `{skill}` needs tools that are not registered: {}", missing.join(", "))]
    MissingTools { skill: String, missing: Vec<String> },
}

fn is_empty_output(value: &Value) -> bool {
    match value {
        Value::Null => true,
        Value::String(s) => s.trim().is_empty(),
        Value::Array(a) => a.is_empty(),
        Value::Object(o) => o.is_empty(),
        _ => false,
    }
}

fn result_items(output: &Value) -> Vec<&Value> {
    output
        .get("results")
        .and_then(Value::as_array)
        .map(|r| r.iter().collect())
        .unwrap_or_default()
}

/// The `k` most frequent snippet words that are not stopwords and whose
/// stems are not in `exclude`. Ties break alphabetically.
pub fn harvest_keywords(output: &Value, analyzer: &Analyzer, exclude: &BTreeSet<String>, k: usize) -> Vec<String> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for result in result_items(output) {
        let Some(snippets) = result.get("snippets").and_then(Value::as_array) else { continue };
        for text in snippets.iter().filter_map(|s| s.get("text").and_then(Value::as_str)) {
            for token in tokenize(text) {
                let word = token.text.to_lowercase();
                if word.chars().count() < 3
                    || word.chars().all(|c| c.is_ascii_digit())
                    || analyzer.config().is_stopword(&word)
                    || exclude.contains(&analyzer.stem(&word))
                {
                    continue;
                }
                *counts.entry(word).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    // Two surface forms of one stem count once.
    let mut seen = BTreeSet::new();
    ranked
        .into_iter()
        .filter(|(w, _)| seen.insert(analyzer.stem(w)))
        .take(k)
        .map(|(w, _)| w)
        .collect()
}

struct Run<'a> {
    skill: &'a Skill,
    query: &'a str,
    tools: &'a ToolRegistry,
    executor: &'a dyn StepExecutor,
    clock: &'a dyn Clock,
    analyzer: &'a Analyzer,
    outputs: BTreeMap<String, Value>,
    records: Vec<StepRecord>,
    finals: BTreeMap<String, Value>,
}

struct Vars<'v> {
    expansion: &'v str,
    keywords: &'v str,
    iteration: u32,
}

impl Run<'_> {
    fn stamp(&self) -> String {
        self.clock.now().to_rfc3339_opts(SecondsFormat::Millis, true)
    }

    fn lookup(&self, name: &str, vars: &Vars<'_>) -> Option<String> {
        match name {
            "query" => Some(self.query.to_string()),
            "expansion" => Some(vars.expansion.to_string()),
            "keywords" => Some(vars.keywords.to_string()),
            "iteration" => Some(vars.iteration.to_string()),
            "policies" => Some(
                self.skill
                    .policies
                    .iter()
                    .map(|(k, v)| format!("- {k}: {v}"))
                    .collect::<Vec<_>>()
                    .join("\n"),
            ),
            other => match other.strip_prefix("policy.") {
                Some(key) => self.skill.policies.get(key).cloned(),
                None => self.outputs.get(other).map(value_to_text),
            },
        }
    }

    fn render(&self, text: &str, vars: &Vars<'_>) -> String {
        template::render(text, &|name| self.lookup(name, vars))
    }

    /// Tool arguments: a JSON template is rendered leaf by leaf; plain text
    /// becomes the `query` argument.
    fn tool_args(&self, step: &Step, vars: &Vars<'_>) -> Value {
        if super::is_json_template(&step.input_template) {
            if let Ok(parsed) = serde_json::from_str::<Value>(&step.input_template) {
                return template::render_json(&parsed, &|name| self.lookup(name, vars));
            }
        }
        json!({"query": squash_whitespace(&self.render(&step.input_template, vars))})
    }

    fn call_tool(&self, step: &Step, args: &Value) -> Result<Value, String> {
        let tool = step.tool.as_deref().unwrap_or_default();
        self.tools.call(tool, args).map_err(|e| e.to_string())
    }

    fn push(&mut self, step: &Step, iteration: Option<u32>, inputs: Value, outcome: &Result<Value, String>, started_at: String) {
        let (output, error) = match outcome {
            Ok(v) => (v.clone(), None),
            Err(e) => (Value::Null, Some(e.clone())),
        };
        let finished_at = self.stamp();
        self.records.push(StepRecord {
            step: step.name.clone(),
            kind: step.kind,
            iteration,
            inputs,
            output,
            error,
            started_at,
            finished_at,
        });
    }

    fn finish_step(&mut self, step: &Step, output: Value) {
        if let Some(key) = &step.output {
            self.finals.insert(key.clone(), output.clone());
        }
        self.outputs.insert(step.name.clone(), output);
    }

    fn halt(&self, step: &Step, reason: String) -> RunStatus {
        RunStatus::Halted {
            step: step.name.clone(),
            reason,
        }
    }
}

/// Runs `skill` for `query`. Steps execute strictly in order; every tool
/// call, iteration, synthesis and gate check is recorded.
pub fn execute(
    skill: &Skill,
    query: &str,
    tools: &ToolRegistry,
    executor: &dyn StepExecutor,
    clock: &dyn Clock,
    analyzer: &Analyzer,
) -> Result<Transcript, ExecError> {
    let missing: Vec<String> = skill
        .required_tools()
        .into_iter()
        .filter(|t| !tools.contains(t))
        .map(String::from)
        .collect();
    if !missing.is_empty() {
        return Err(ExecError::MissingTools {
            skill: skill.name.clone(),
            missing,
        });
    }

    let mut run = Run {
        skill,
        query,
        tools,
        executor,
        clock,
        analyzer,
        outputs: BTreeMap::new(),
        records: Vec::new(),
        finals: BTreeMap::new(),
    };
    let mut status = RunStatus::Completed;
    let none = Vars {
        expansion: "",
        keywords: "",
        iteration: 0,
    };

    'steps: for step in &skill.steps {
        match step.kind {
            StepKind::ToolCall => {
                let started = run.stamp();
                let args = run.tool_args(step, &none);
                let outcome = run.call_tool(step, &args);
                run.push(step, None, args, &outcome, started);
                match outcome {
                    Ok(v) => run.finish_step(step, v),
                    Err(e) if skill.on_error == ErrorPolicy::Halt => {
                        status = run.halt(step, e);
                        break 'steps;
                    }
                    Err(_) => run.finish_step(step, Value::Null),
                }
            }
            StepKind::IterateUntil => {
                let condition = step.condition.as_ref().expect("validated");
                let mut exclude: BTreeSet<String> = run.analyzer.terms(query).into_iter().collect();
                let mut keywords: Vec<String> = Vec::new();
                let mut seen_docs: BTreeSet<String> = BTreeSet::new();
                let mut collected: Vec<Value> = Vec::new();
                for iteration in 0..condition.max_iterations {
                    let raw_expansion = step
                        .expansions
                        .get(iteration as usize)
                        .map(String::as_str)
                        .unwrap_or("");
                    let expansion = run.render(raw_expansion, &none);
                    exclude.extend(run.analyzer.terms(&expansion));
                    let keyword_text = keywords.join(" ");
                    let vars = Vars {
                        expansion: &expansion,
                        keywords: &keyword_text,
                        iteration,
                    };
                    let started = run.stamp();
                    let args = run.tool_args(step, &vars);
                    let outcome = run.call_tool(step, &args);
                    run.push(step, Some(iteration), args, &outcome, started);
                    let output = match outcome {
                        Ok(v) => v,
                        Err(e) if skill.on_error == ErrorPolicy::Halt => {
                            status = run.halt(step, e);
                            break 'steps;
                        }
                        Err(_) => continue,
                    };
                    let mut new_docs = 0;
                    for item in result_items(&output) {
                        let Some(doc) = item.get("doc_id").and_then(Value::as_str) else { continue };
                        if seen_docs.insert(doc.to_string()) {
                            new_docs += 1;
                            collected.push(item.clone());
                        }
                    }
                    keywords = harvest_keywords(&output, run.analyzer, &exclude, KEYWORDS_PER_ITERATION);
                    exclude.extend(keywords.iter().map(|k| run.analyzer.stem(k)));
                    let sufficient = match condition.rule {
                        SufficiencyRule::MinDocuments { min_documents } => seen_docs.len() >= min_documents,
                        SufficiencyRule::NoNewResults => new_docs == 0,
                    };
                    if sufficient {
                        break;
                    }
                }
                run.finish_step(step, Value::Array(collected));
            }
            StepKind::Synthesize => {
                let started = run.stamp();
                let prompt = run.render(&step.input_template, &none);
                let inputs: BTreeMap<String, Value> = step
                    .requires
                    .iter()
                    .map(|r| (r.clone(), run.outputs.get(r).cloned().unwrap_or(Value::Null)))
                    .collect();
                let outcome = run
                    .executor
                    .synthesize(&SynthesisRequest {
                        skill: &skill.name,
                        step: &step.name,
                        query,
                        prompt: &prompt,
                        inputs: &inputs,
                        policies: &skill.policies,
                    })
                    .map(Value::String);
                run.push(step, None, json!({"prompt": prompt, "requires": step.requires}), &outcome, started);
                match outcome {
                    Ok(v) => run.finish_step(step, v),
                    Err(e) if skill.on_error == ErrorPolicy::Halt => {
                        status = run.halt(step, e);
                        break 'steps;
                    }
                    Err(_) => run.finish_step(step, Value::Null),
                }
            }
            StepKind::Gate => {
                let started = run.stamp();
                let missing: Vec<&String> = step
                    .requires
                    .iter()
                    .filter(|r| run.outputs.get(*r).is_none_or(is_empty_output))
                    .collect();
                let passed = missing.is_empty();
                let output = json!({"passed": passed, "missing": missing});
                let reason = (!passed).then(|| {
                    format!(
                        "required output is empty: {}",
                        missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
                    )
                });
                run.push(step, None, json!({"requires": step.requires}), &Ok(output.clone()), started);
                if let Some(reason) = reason {
                    status = run.halt(step, reason);
                    break 'steps;
                }
                run.finish_step(step, output);
            }
        }
    }

    Ok(Transcript {
        skill_name: skill.name.clone(),
        query: query.to_string(),
        status,
        step_records: run.records,
        final_outputs: run.finals,
    })
}
