use thiserror::Error;

use super::{Location, UbFinding};

/// Built-in ordered keyword rules.
pub const DEFAULT_UB_RULES: &str = include_str!("../../data/ub_rules.txt");

const UB_MARKER: &str = "error: Undefined Behavior";

#[derive(Debug, Error, PartialEq, Eq)]
#[error("rule file line {line}: expected `pattern = category`")]
pub struct RuleSyntaxError {
    pub line: usize,
}

/// Turns detector stderr into findings, one per `error: Undefined Behavior`
/// block, using an ordered first-match keyword rule list.
#[derive(Debug, Clone)]
pub struct DiagnosticParser {
    rules: Vec<(String, String)>,
}

impl DiagnosticParser {
    pub fn from_rules(text: &str) -> Result<Self, RuleSyntaxError> {
        let mut rules = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((p, c)) if !p.trim().is_empty() && !c.trim().is_empty() => {
                    rules.push((p.trim().to_ascii_lowercase(), c.trim().to_string()));
                }
                _ => return Err(RuleSyntaxError { line: idx + 1 }),
            }
        }
        Ok(Self { rules })
    }

    pub fn builtin() -> Self {
        Self::from_rules(DEFAULT_UB_RULES).expect("built-in rules are valid")
    }

    pub fn classify(&self, headline: &str) -> String {
        let lower = headline.to_ascii_lowercase();
        self.rules
            .iter()
            .find(|(p, _)| lower.contains(p.as_str()))
            .map(|(_, c)| c.clone())
            .unwrap_or_else(|| "unknown".to_string())
    }

    pub fn parse(&self, raw: &str) -> Vec<UbFinding> {
        let lines: Vec<&str> = raw.lines().collect();
        let mut findings = Vec::new();
        let mut i = 0;
        while i < lines.len() {
            let Some(rest) = lines[i].trim_start().strip_prefix(UB_MARKER) else {
                i += 1;
                continue;
            };
            let message = rest.trim_start_matches(':').trim().to_string();
            let mut location = None;
            let mut j = i + 1;
            while j < lines.len() && !is_block_start(lines[j]) {
                if location.is_none() {
                    location = parse_span(lines[j]);
                }
                j += 1;
            }
            findings.push(UbFinding {
                category: self.classify(&message),
                message,
                location,
            });
            i = j;
        }
        findings
    }
}

impl Default for DiagnosticParser {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Parses with the built-in rules.
pub fn parse_diagnostics(raw: &str) -> Vec<UbFinding> {
    DiagnosticParser::builtin().parse(raw)
}

fn is_block_start(line: &str) -> bool {
    line.starts_with("error") || line.starts_with("warning")
}

/// `  --> src/main.rs:12:5`
fn parse_span(line: &str) -> Option<Location> {
    let rest = line.trim_start().strip_prefix("-->")?.trim();
    let mut parts = rest.rsplitn(3, ':');
    let column = parts.next()?.parse().ok()?;
    let line_no = parts.next()?.parse().ok()?;
    let file = parts.next()?.to_string();
    Some(Location {
        file,
        line: line_no,
        column,
    })
}
