//! `{{name}}` placeholder substitution.

use serde_json::Value;

/// Placeholder names in `template`, in order of appearance.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut names = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        let after = &rest[open + 2..];
        let Some(close) = after.find("}}") else { break };
        names.push(after[..close].trim().to_string());
        rest = &after[close + 2..];
    }
    names
}

/// Replaces each placeholder with `lookup(name)`; unknown names render empty.
pub fn render(template: &str, lookup: &dyn Fn(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        let after = &rest[open + 2..];
        let Some(close) = after.find("}}") else { break };
        out.push_str(&rest[..open]);
        out.push_str(&lookup(after[..close].trim()).unwrap_or_default());
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    out
}

/// Renders every string inside a JSON value.
pub fn render_json(template: &Value, lookup: &dyn Fn(&str) -> Option<String>) -> Value {
    match template {
        Value::String(s) => Value::String(render(s, lookup)),
        Value::Array(items) => Value::Array(items.iter().map(|v| render_json(v, lookup)).collect()),
        Value::Object(map) => Value::Object(
            map.iter()
                .map(|(k, v)| (k.clone(), render_json(v, lookup)))
                .collect(),
        ),
        other => other.clone(),
    }
}

/// Collapses runs of whitespace to single spaces and trims.
pub fn squash_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Text form of a step output for use inside prompts. Search results are
/// listed one document per line.
pub fn value_to_text(value: &Value) -> String {
    match value {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Array(items) if items.iter().all(|i| i.get("filename").is_some()) && !items.is_empty() => items
            .iter()
            .map(|r| {
                let filename = r["filename"].as_str().unwrap_or("");
                let pages: Vec<String> = r["pages"]
                    .as_array()
                    .map(|p| p.iter().map(|n| n.to_string()).collect())
                    .unwrap_or_default();
                let snippet = r
                    .pointer("/snippets/0/text")
                    .and_then(Value::as_str)
                    .map(squash_whitespace)
                    .unwrap_or_default();
                format!("- {filename} (pages {}): {snippet}", pages.join(", "))
            })
            .collect::<Vec<_>>()
            .join("\n"),
        other => other.to_string(),
    }
}
