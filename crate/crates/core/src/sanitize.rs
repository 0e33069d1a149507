//! Turning a raw model reply into an executable plotting script.
//!
//! Stages run in a fixed order: [`extract_code`], [`strip_file_load`],
//! [`truncate_at_stop`], [`prefix_code_prompt`], [`safety_screen`]. Apart from
//! the code-prompt prefix and the stop truncation, every change is the removal
//! of whole lines; surviving lines are kept byte for byte.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::gateway::ModelKind;
use crate::prompt::CodePrompt;

const DEFAULT_POLICY: &str = include_str!("../policy/default_deny.txt");

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SanitizeError {
    #[error("reply contains no code")]
    NoCodeFound,
    #[error("policy line {line}: {message}")]
    Policy { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenialCategory {
    ProcessSpawn,
    Network,
    FilesystemWrite,
    EnvSecret,
    ImportDenied,
}

impl DenialCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            DenialCategory::ProcessSpawn => "process-spawn",
            DenialCategory::Network => "network",
            DenialCategory::FilesystemWrite => "filesystem-write",
            DenialCategory::EnvSecret => "env-secret",
            DenialCategory::ImportDenied => "import-denied",
        }
    }
}

impl fmt::Display for DenialCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DenialCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "process-spawn" => DenialCategory::ProcessSpawn,
            "network" => DenialCategory::Network,
            "filesystem-write" => DenialCategory::FilesystemWrite,
            "env-secret" => DenialCategory::EnvSecret,
            "import-denied" => DenialCategory::ImportDenied,
            other => return Err(format!("unknown category `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenialReason {
    pub category: DenialCategory,
    pub matched_text: String,
}

#[derive(Debug, Clone)]
struct DenyRule {
    category: DenialCategory,
    pattern: Regex,
}

/// Ordered deny rules, parsed from `<category> <regex>` lines.
#[derive(Debug, Clone)]
pub struct DenyPolicy {
    rules: Vec<DenyRule>,
}

impl DenyPolicy {
    pub fn parse(text: &str) -> Result<Self, SanitizeError> {
        let mut rules = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| SanitizeError::Policy {
                line: idx + 1,
                message,
            };
            let (category, pattern) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| err("expected `<category> <pattern>`".into()))?;
            let category = category.parse().map_err(err)?;
            let pattern = RegexBuilder::new(pattern.trim())
                .multi_line(true)
                .build()
                .map_err(|e| err(e.to_string()))?;
            rules.push(DenyRule { category, pattern });
        }
        Ok(Self { rules })
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

impl Default for DenyPolicy {
    fn default() -> Self {
        Self::parse(DEFAULT_POLICY).expect("built-in deny policy parses")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanitizedScript {
    pub text: String,
    pub removed_load_lines: Vec<String>,
    pub extracted_from_fence: bool,
    pub truncated_at_stop: bool,
    pub denied: Option<DenialReason>,
}

impl SanitizedScript {
    pub fn is_runnable(&self) -> bool {
        self.denied.is_none()
    }
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Statement starts that anchor the beginning of an unfenced script.
fn is_statement_start(line: &str) -> bool {
    static START: LazyLock<Regex> = LazyLock::new(|| {
        Regex::new(concat!(
            r"^(?:",
            r"(?:import|from)\s+[A-Za-z_]",
            r"|[A-Za-z_][\w.]*(?:\[[^\]]*\])*(?:\s*,\s*[A-Za-z_][\w.]*)*\s*(?:[-+*/%]|//)?=[^=]",
            r"|[A-Za-z_][\w.]*\s*\(",
            r")",
        ))
        .unwrap()
    });
    START.is_match(line)
}

/// Heuristic for lines that belong to a script rather than surrounding prose.
fn is_code_like(line: &str) -> bool {
    static KEYWORD: LazyLock<Regex> = LazyLock::new(|| {
        Regex::new(concat!(
            r"^(?:def|class|for|while|if|elif|else|try|except|finally|with|return|",
            r"pass|break|continue|lambda|del|global|nonlocal|assert|raise|yield|print)\b",
            r"(?:\s|:|\(|$)",
        ))
        .unwrap()
    });
    let body = line.trim_end_matches(['\n', '\r']);
    if body.trim().is_empty() {
        return true;
    }
    if body.starts_with([' ', '\t', '#', '@', '(', ')', '[', ']', '{', '}', '"', '\'']) {
        return true;
    }
    if body.trim_end().ends_with(['(', '[', '{', ',', '\\']) {
        return true;
    }
    is_statement_start(body) || KEYWORD.is_match(body)
}

/// Pull the script out of a model reply.
///
/// Completion replies are returned unchanged. Chat replies yield the contents
/// of the first fenced block; without a fence, prose lines before the first
/// statement and after the last code line are dropped.
pub fn extract_code(raw: &str, kind: ModelKind) -> Result<(String, bool), SanitizeError> {
    if kind == ModelKind::Completion {
        return Ok((raw.to_string(), false));
    }

    let lines: Vec<&str> = raw.split_inclusive('\n').collect();
    if let Some(open) = lines.iter().position(|l| is_fence(l)) {
        let body: Vec<&str> = lines[open + 1..]
            .iter()
            .take_while(|l| !is_fence(l))
            .map(|l| l.trim_end_matches(['\n', '\r']))
            .collect();
        let code = body.join("\n");
        if code.trim().is_empty() {
            return Err(SanitizeError::NoCodeFound);
        }
        return Ok((code, true));
    }

    let Some(first) = lines.iter().position(|l| is_statement_start(l)) else {
        return Err(SanitizeError::NoCodeFound);
    };
    let last = lines
        .iter()
        .rposition(|l| !l.trim().is_empty() && is_code_like(l))
        .unwrap_or(first);

    let mut code = String::with_capacity(raw.len());
    for (idx, line) in lines.iter().enumerate() {
        let keep = match idx {
            i if i < first => is_code_like(line),
            i if i > last => line.trim().is_empty(),
            _ => true,
        };
        if keep {
            code.push_str(line);
        } else {
            tracing::debug!(line = line.trim_end(), "dropping prose line");
        }
    }
    Ok((code, false))
}

/// Drop every line mentioning the expected data file.
pub fn strip_file_load(script: &str, expected_file_name: &str) -> (String, Vec<String>) {
    if expected_file_name.is_empty() {
        return (script.to_string(), Vec::new());
    }
    let mut kept = String::with_capacity(script.len());
    let mut removed = Vec::new();
    for line in script.split_inclusive('\n') {
        if line.contains(expected_file_name) {
            removed.push(line.trim_end_matches(['\n', '\r']).to_string());
        } else {
            kept.push_str(line);
        }
    }
    (kept, removed)
}

/// Cut the text just before the earliest occurrence of any stop string.
pub fn truncate_at_stop(text: &str, stop: &[String]) -> (String, bool) {
    match stop
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
    {
        Some(cut) => (text[..cut].to_string(), true),
        None => (text.to_string(), false),
    }
}

/// Put the code prompt in front of the body unless the model already echoed
/// it. Leading blank lines of the body are dropped first.
pub fn prefix_code_prompt(code_prompt: &CodePrompt, completion_body: &str) -> String {
    let mut completion_body = completion_body;
    while let Some((first, rest)) = completion_body.split_once('\n') {
        if !first.trim().is_empty() {
            break;
        }
        completion_body = rest;
    }
    if completion_body.starts_with(&code_prompt.text) {
        completion_body.to_string()
    } else {
        format!("{}{}", code_prompt.text, completion_body)
    }
}

/// Earliest deny-list match in the script; ties go to the rule listed first.
pub fn safety_screen(script: &str, policy: &DenyPolicy) -> Option<DenialReason> {
    policy
        .rules
        .iter()
        .enumerate()
        .filter_map(|(order, rule)| rule.pattern.find(script).map(|m| (m.start(), order, rule, m)))
        .min_by_key(|(start, order, _, _)| (*start, *order))
        .map(|(_, _, rule, m)| DenialReason {
            category: rule.category,
            matched_text: m.as_str().to_string(),
        })
}

/// Settings for the composed sanitizer.
#[derive(Debug, Clone)]
pub struct SanitizeOptions<'a> {
    pub code_prompt: &'a CodePrompt,
    pub expected_file_name: &'a str,
    pub stop: &'a [String],
    pub policy: &'a DenyPolicy,
}

/// Run every stage in order. The screen looks only at the model's part of
/// the script; the code prompt is ours.
pub fn sanitize(
    raw: &str,
    kind: ModelKind,
    options: &SanitizeOptions<'_>,
) -> Result<SanitizedScript, SanitizeError> {
    let (extracted, extracted_from_fence) = extract_code(raw, kind)?;
    let (stripped, removed_load_lines) = strip_file_load(&extracted, options.expected_file_name);
    let (body, truncated_at_stop) = truncate_at_stop(&stripped, options.stop);
    let text = prefix_code_prompt(options.code_prompt, &body);
    let denied = safety_screen(&body, options.policy);
    if let Some(reason) = &denied {
        tracing::warn!(category = %reason.category, matched = %reason.matched_text, "script denied");
    }
    for line in body.lines().filter(|l| l.contains("read_csv(") || l.contains("plt.figure(")) {
        tracing::debug!(line, "kept line that may conflict with the code prompt");
    }
    Ok(SanitizedScript {
        text,
        removed_load_lines,
        extracted_from_fence,
        truncated_at_stop,
        denied,
    })
}
