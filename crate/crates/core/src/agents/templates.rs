use std::collections::BTreeMap;
use std::path::Path;

use super::{AgentKind, ThinkingMode};

macro_rules! builtin {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../data/templates/", $name, ".txt")))),*]
    };
}

const BUILTIN: &[(&str, &str)] = builtin![
    "repair_assert_fast",
    "repair_assert_slow",
    "repair_modify_fast",
    "repair_modify_slow",
    "repair_replace_fast",
    "repair_replace_slow",
    "repair_knowledge_fast",
    "repair_knowledge_slow",
    "select",
    "summarize",
    "constraints",
    "synthesize",
];

/// Named prompt templates with `{placeholder}` slots.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    templates: BTreeMap<String, String>,
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        Self {
            templates: BUILTIN.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    /// Built-ins overridden by any `<name>.txt` found in `dir`.
    pub fn with_overrides(dir: &Path) -> std::io::Result<Self> {
        let mut t = Self::builtin();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "txt") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    t.templates.insert(stem.to_string(), std::fs::read_to_string(&path)?);
                }
            }
        }
        Ok(t)
    }

    pub fn repair_name(agent: AgentKind, mode: ThinkingMode) -> String {
        format!("repair_{agent}_{mode}")
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.templates.get(name).map(String::as_str)
    }

    /// Substitutes placeholders in one pass, so substituted values are never
    /// rescanned. Unknown placeholders are left as written.
    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> String {
        let template = self.get(name).unwrap_or_default();
        let mut out = String::with_capacity(template.len() + 256);
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) => {
                    let key = &after[..close];
                    match vars.iter().find(|(k, _)| *k == key) {
                        Some((_, v)) => out.push_str(v),
                        None => {
                            out.push('{');
                            out.push_str(key);
                            out.push('}');
                        }
                    }
                    rest = &after[close + 1..];
                }
                None => {
                    out.push_str(&rest[open..]);
                    rest = "";
                }
            }
        }
        out.push_str(rest);
        out
    }
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}
