//! Declarative research workflows ("skills") over the tool registry.
//!
//! A skill file is TOML (or the equivalent JSON):
//!
//! ```toml
//! name = "lookup"
//! description = "Search, then summarize."
//! trigger_hints = ["look up", "find references"]
//! on_error = "halt"            # or "continue"
//!
//! [policies]
//! logging = "structured JSON lines"
//!
//! [[steps]]
//! name = "search"
//! kind = "iterate_until"       # tool_call | iterate_until | synthesize | gate
//! tool = "search_internal"
//! input_template = "{{query}} {{expansion}} {{keywords}}"
//! expansions = ["timing recovery"]
//! output = "references"
//! condition = { max_iterations = 3, rule = "min_documents", min_documents = 2 }
//!
//! [[steps]]
//! name = "summary"
//! kind = "synthesize"
//! requires = ["search"]
//! input_template = "Summarize for {{query}}:\n{{search}}"
//! ```
//!
//! Placeholders: `query`, `expansion`, `keywords`, `iteration`, `policies`,
//! `policy.<key>`, and the name of any earlier step.

mod exec;
pub mod template;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::Analyzer;

pub use exec::{
    execute, harvest_keywords, Clock, ExecError, RunStatus, StepExecutor, StepRecord, SynthesisRequest,
    SystemClock, TemplateExecutor, TickClock, Transcript, KEYWORDS_PER_ITERATION,
};

/// The shipped Algorithm-style research workflow.
pub const RESEARCH_CODE_SKILL: &str = include_str!("../../skills/research-code.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    ToolCall,
    IterateUntil,
    Synthesize,
    Gate,
}

impl StepKind {
    pub fn uses_tool(self) -> bool {
        matches!(self, StepKind::ToolCall | StepKind::IterateUntil)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SufficiencyRule {
    /// Enough distinct documents have been retrieved.
    MinDocuments { min_documents: usize },
    /// The last iteration found no document not seen before.
    NoNewResults,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub max_iterations: u32,
    #[serde(flatten)]
    pub rule: SufficiencyRule,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorPolicy {
    #[default]
    Halt,
    Continue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub name: String,
    pub kind: StepKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    #[serde(default)]
    pub input_template: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub requires: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expansions: Vec<String>,
    /// Key under which the step's result appears in the final outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Skill {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub trigger_hints: Vec<String>,
    #[serde(default)]
    pub on_error: ErrorPolicy,
    #[serde(default)]
    pub policies: BTreeMap<String, String>,
    pub steps: Vec<Step>,
}

impl Skill {
    /// Names of every tool the skill calls.
    pub fn required_tools(&self) -> BTreeSet<&str> {
        self.steps.iter().filter_map(|s| s.tool.as_deref()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub file: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{line}: {}", self.file.display(), self.message),
            None => write!(f, "{}: {}", self.file.display(), self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read skill directory {path}: {source}")]
    Unreadable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("skill `{name}` is defined in both {} and {}", first.display(), second.display())]
    Duplicate {
        name: String,
        first: PathBuf,
        second: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkillFormat {
    Toml,
    Json,
}

impl SkillFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "toml" => Some(Self::Toml),
            "json" => Some(Self::Json),
            _ => None,
        }
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the `name = "<step>"` entry inside the steps list.
fn step_line(text: &str, step: &str) -> Option<usize> {
    let quoted = format!("\"{step}\"");
    let steps_start = text.lines().position(|l| l.contains("steps"))?;
    text.lines()
        .enumerate()
        .skip(steps_start)
        .find(|(_, l)| l.contains("name") && l.contains(&quoted))
        .map(|(i, _)| i + 1)
}

/// Parses and validates one skill. Every problem found is reported.
pub fn parse_skill(text: &str, format: SkillFormat, file: &Path) -> Result<Skill, Vec<Diagnostic>> {
    let diag = |line: Option<usize>, message: String| Diagnostic {
        file: file.to_path_buf(),
        line,
        message,
    };
    let skill: Skill = match format {
        SkillFormat::Toml => toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(text, s.start));
            vec![diag(line, e.message().trim().to_string())]
        })?,
        SkillFormat::Json => serde_json::from_str(text).map_err(|e| {
            vec![diag(Some(e.line()), e.to_string())]
        })?,
    };
    let problems = validate(&skill);
    if problems.is_empty() {
        Ok(skill)
    } else {
        Err(problems
            .into_iter()
            .map(|(step, message)| diag(step.and_then(|s| step_line(text, &s)), message))
            .collect())
    }
}

/// A tool template written as a JSON object, as opposed to plain text that
/// may begin with a `{{placeholder}}`.
pub(crate) fn is_json_template(template: &str) -> bool {
    let t = template.trim_start();
    t.starts_with('{') && !t.starts_with("{{")
}

/// Structural checks. Each problem carries the step it concerns, if any.
pub fn validate(skill: &Skill) -> Vec<(Option<String>, String)> {
    let mut problems = Vec::new();
    if skill.name.trim().is_empty() {
        problems.push((None, "skill name is empty".into()));
    }
    if skill.steps.is_empty() {
        problems.push((None, "skill has no steps".into()));
    }
    let mut earlier: HashSet<&str> = HashSet::new();
    let mut outputs: HashSet<&str> = HashSet::new();
    for step in &skill.steps {
        let at = Some(step.name.clone());
        let mut bad = |message: String| problems.push((at.clone(), message));
        let name = step.name.as_str();
        if name.trim().is_empty() {
            bad("step name is empty".into());
        }
        if earlier.contains(name) {
            bad(format!("duplicate step name `{name}`"));
        }
        match (step.kind.uses_tool(), &step.tool) {
            (true, None) => bad(format!("step `{name}` needs a `tool`")),
            (false, Some(_)) => bad(format!("step `{name}` of this kind must not name a tool")),
            _ => {}
        }
        for required in &step.requires {
            if !earlier.contains(required.as_str()) {
                bad(format!(
                    "step `{name}` requires `{required}`, which is not an earlier step"
                ));
            }
        }
        match (step.kind, &step.condition) {
            (StepKind::IterateUntil, None) => bad(format!("step `{name}` needs a `condition`")),
            (StepKind::IterateUntil, Some(c)) if c.max_iterations == 0 => {
                bad(format!("step `{name}`: max_iterations must be at least 1"))
            }
            (StepKind::IterateUntil, _) => {}
            (_, Some(_)) => bad(format!("only iterate_until steps take a `condition`")),
            (_, None) => {}
        }
        if !step.expansions.is_empty() && step.kind != StepKind::IterateUntil {
            bad(format!("only iterate_until steps take `expansions`"));
        }
        if step.kind == StepKind::Gate && step.requires.is_empty() {
            bad(format!("gate `{name}` must require at least one step"));
        }
        if step.kind.uses_tool() && is_json_template(&step.input_template) {
            if let Err(e) = serde_json::from_str::<serde_json::Value>(&step.input_template) {
                bad(format!("step `{name}`: input_template is not valid JSON: {e}"));
            }
        }
        let templates = std::iter::once(&step.input_template).chain(&step.expansions);
        for placeholder in templates.flat_map(|t| template::placeholders(t)) {
            let known = match placeholder.as_str() {
                "query" | "expansion" | "keywords" | "iteration" | "policies" => true,
                p => match p.strip_prefix("policy.") {
                    Some(key) => skill.policies.contains_key(key),
                    None => earlier.contains(p),
                },
            };
            if !known {
                bad(format!("step `{name}`: unknown placeholder `{{{{{placeholder}}}}}`"));
            }
        }
        if let Some(out) = &step.output {
            if !outputs.insert(out) {
                bad(format!("output `{out}` is produced by more than one step"));
            }
        }
        earlier.insert(name);
    }
    problems
}

/// Loaded skills by name.
#[derive(Debug, Clone, Default)]
pub struct SkillRegistry {
    skills: BTreeMap<String, (Skill, PathBuf)>,
}

impl SkillRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a skill; a second skill with the same name is rejected.
    pub fn insert(&mut self, skill: Skill, source: PathBuf) -> Result<(), LoadError> {
        if let Some((_, first)) = self.skills.get(&skill.name) {
            return Err(LoadError::Duplicate {
                name: skill.name,
                first: first.clone(),
                second: source,
            });
        }
        self.skills.insert(skill.name.clone(), (skill, source));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Skill> {
        self.skills.get(name).map(|(s, _)| s)
    }

    pub fn source(&self, name: &str) -> Option<&Path> {
        self.skills.get(name).map(|(_, p)| p.as_path())
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    /// Skills in name order.
    pub fn iter(&self) -> impl Iterator<Item = &Skill> {
        self.skills.values().map(|(s, _)| s)
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub registry: SkillRegistry,
    /// Problems in files that were skipped.
    pub diagnostics: Vec<Diagnostic>,
}

/// Loads every `.toml` and `.json` skill file in `dir` (not recursive).
/// Malformed files are skipped and reported; duplicate names are an error.
pub fn load_skills(dir: &Path) -> Result<LoadReport, LoadError> {
    let unreadable = |source| LoadError::Unreadable {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(unreadable)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(unreadable)?;
    paths.sort();

    let mut report = LoadReport::default();
    for path in paths {
        let Some(format) = SkillFormat::from_path(&path) else { continue };
        if !path.is_file() {
            continue;
        }
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                report.diagnostics.push(Diagnostic {
                    file: path,
                    line: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        match parse_skill(&text, format, &path) {
            Ok(skill) => report.registry.insert(skill, path)?,
            Err(diags) => {
                for d in &diags {
                    tracing::warn!("skipping skill file: {d}");
                }
                report.diagnostics.extend(diags);
            }
        }
    }
    Ok(report)
}

/// Reads and validates a single skill file.
pub fn check_skill_file(path: &Path) -> Result<Skill, Vec<Diagnostic>> {
    let diag = |message: String| {
        vec![Diagnostic {
            file: path.to_path_buf(),
            line: None,
            message,
        }]
    };
    let format = SkillFormat::from_path(path)
        .ok_or_else(|| diag("expected a .toml or .json file".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| diag(e.to_string()))?;
    parse_skill(&text, format, path)
}

/// The skill whose trigger hints share the most distinct analyzed terms
/// with `task`. Ties go to the lexicographically first name; a skill with
/// no shared term is never chosen.
pub fn select_skill<'r>(registry: &'r SkillRegistry, analyzer: &Analyzer, task: &str) -> Option<&'r Skill> {
    let task_terms: BTreeSet<String> = analyzer.terms(task).into_iter().collect();
    let mut best: Option<(usize, &Skill)> = None;
    for skill in registry.iter() {
        let hint_terms: BTreeSet<String> = skill
            .trigger_hints
            .iter()
            .flat_map(|h| analyzer.terms(h))
            .collect();
        let score = task_terms.intersection(&hint_terms).count();
        // Iteration is in name order, so strict > keeps the first on ties.
        if score > 0 && best.is_none_or(|(s, _)| score > s) {
            best = Some((score, skill));
        }
    }
    best.map(|(_, skill)| skill)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn skill_text(name: &str, hints: &str) -> String {
        format!(
            "name = \"{name}\"\ntrigger_hints = [{hints}]\n\n[[steps]]\nname = \"a\"\nkind = \"synthesize\"\ninput_template = \"{{{{query}}}}\"\n"
        )
    }

    fn registry(skills: &[(&str, &str)]) -> SkillRegistry {
        let mut r = SkillRegistry::new();
        for (name, hints) in skills {
            let s = parse_skill(&skill_text(name, hints), SkillFormat::Toml, Path::new("x.toml")).unwrap();
            r.insert(s, PathBuf::from(format!("{name}.toml"))).unwrap();
        }
        r
    }

    #[test]
    fn placeholder_first_templates_are_plain_text() {
        assert!(is_json_template(r#" {"query": "{{query}}"}"#));
        assert!(!is_json_template("{{query}} timing"));
        assert!(!is_json_template("find {{query}}"));
    }

    #[test]
    fn shipped_skill_is_valid() {
        let skill = parse_skill(RESEARCH_CODE_SKILL, SkillFormat::Toml, Path::new("research-code.toml")).unwrap();
        assert_eq!(skill.name, "research-code");
        assert!(skill.required_tools().contains("search_internal"));
    }

    #[test]
    fn forward_requirement_reports_its_line() {
        let text = "name = \"s\"\n\n[[steps]]\nname = \"first\"\nkind = \"synthesize\"\nrequires = [\"second\"]\n\n[[steps]]\nname = \"second\"\nkind = \"synthesize\"\n";
        let diags = parse_skill(text, SkillFormat::Toml, Path::new("s.toml")).unwrap_err();
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].line, Some(4));
        assert!(diags[0].message.contains("not an earlier step"));
    }

    #[test]
    fn syntax_errors_carry_lines() {
        let text = "name = \"s\"\nsteps = [\n  { name = \"a\", kind = \"bogus\" },\n]\n";
        let diags = parse_skill(text, SkillFormat::Toml, Path::new("s.toml")).unwrap_err();
        assert_eq!(diags[0].line, Some(3));
        let diags = parse_skill("{\n  \"name\": 3\n}", SkillFormat::Json, Path::new("s.json")).unwrap_err();
        assert_eq!(diags[0].line, Some(2));
    }

    #[test]
    fn tool_presence_matches_kind() {
        let text = "name = \"s\"\n[[steps]]\nname = \"a\"\nkind = \"tool_call\"\n[[steps]]\nname = \"b\"\nkind = \"synthesize\"\ntool = \"x\"\n";
        let diags = parse_skill(text, SkillFormat::Toml, Path::new("s.toml")).unwrap_err();
        assert_eq!(diags.len(), 2);
    }

    #[test]
    fn unknown_placeholder_is_rejected() {
        let text = "name = \"s\"\n[policies]\nlogging = \"x\"\n[[steps]]\nname = \"a\"\nkind = \"synthesize\"\ninput_template = \"{{policy.logging}} {{policy.gpu}} {{later}}\"\n";
        let diags = parse_skill(text, SkillFormat::Toml, Path::new("s.toml")).unwrap_err();
        assert_eq!(diags.len(), 2);
    }

    #[test]
    fn selection_by_overlap() {
        let r = registry(&[("alpha", "\"summarize papers\""), ("beta", "\"design and simulate\", \"simulation code\"")]);
        let analyzer = Analyzer::default();
        let chosen = select_skill(&r, &analyzer, "design and simulate synchronization signals").unwrap();
        assert_eq!(chosen.name, "beta");
        assert!(select_skill(&r, &analyzer, "unrelated words").is_none());
        assert!(select_skill(&SkillRegistry::new(), &analyzer, "simulate").is_none());
    }

    #[test]
    fn selection_tie_goes_to_first_name() {
        let r = registry(&[("zeta", "\"simulate\""), ("eta", "\"simulate\"")]);
        let chosen = select_skill(&r, &Analyzer::default(), "simulate it").unwrap();
        assert_eq!(chosen.name, "eta");
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut r = registry(&[("a", "\"x\"")]);
        let again = parse_skill(&skill_text("a", "\"y\""), SkillFormat::Toml, Path::new("b.toml")).unwrap();
        assert!(matches!(r.insert(again, "b.toml".into()), Err(LoadError::Duplicate { .. })));
    }
}
