use std::fs;
use std::path::Path;
use std::sync::Mutex;

use regex::Regex;
use serde::Deserialize;

use super::{CompletionProvider, LlmError};

/// One scripted rule. Matches by substring unless `regex` is set.
#[derive(Debug, Clone, Deserialize)]
pub struct ScriptRule {
    #[serde(rename = "match")]
    pub pattern: String,
    #[serde(default)]
    pub regex: bool,
    #[serde(default)]
    pub response: String,
    /// Fire at most once.
    #[serde(default)]
    pub once: bool,
    /// Answer with a provider outage instead of a response.
    #[serde(default)]
    pub unavailable: bool,
}

impl ScriptRule {
    pub fn new(pattern: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            pattern: pattern.into(),
            regex: false,
            response: response.into(),
            once: false,
            unavailable: false,
        }
    }

    pub fn once(mut self) -> Self {
        self.once = true;
        self
    }

    pub fn regex(mut self) -> Self {
        self.regex = true;
        self
    }

    pub fn unavailable(pattern: impl Into<String>) -> Self {
        Self {
            unavailable: true,
            ..Self::new(pattern, "")
        }
    }
}

struct Compiled {
    rule: ScriptRule,
    re: Option<Regex>,
    spent: bool,
}

/// Offline completion provider driven by an ordered rule list. The first
/// rule that matches the prompt and is not spent answers; a prompt no rule
/// matches is an error.
pub struct ScriptedMock {
    rules: Mutex<Vec<Compiled>>,
    calls: Mutex<Vec<String>>,
    max_prompt_chars: usize,
}

pub const MOCK_MAX_PROMPT_CHARS: usize = 200_000;

impl ScriptedMock {
    pub fn new(rules: Vec<ScriptRule>) -> Result<Self, LlmError> {
        let compiled = rules
            .into_iter()
            .map(|rule| {
                let re = if rule.regex {
                    Some(Regex::new(&rule.pattern).map_err(|e| {
                        LlmError::Script(format!("bad regex `{}`: {e}", rule.pattern))
                    })?)
                } else {
                    None
                };
                Ok(Compiled { rule, re, spent: false })
            })
            .collect::<Result<_, LlmError>>()?;
        Ok(Self {
            rules: Mutex::new(compiled),
            calls: Mutex::new(Vec::new()),
            max_prompt_chars: MOCK_MAX_PROMPT_CHARS,
        })
    }

    pub fn with_max_prompt_chars(mut self, max: usize) -> Self {
        self.max_prompt_chars = max;
        self
    }

    /// Parses a JSON Lines script. Blank lines and lines starting with `#`
    /// are skipped.
    pub fn from_jsonl(text: &str) -> Result<Self, LlmError> {
        let mut rules = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let rule: ScriptRule = serde_json::from_str(line)
                .map_err(|e| LlmError::Script(format!("line {}: {e}", n + 1)))?;
            rules.push(rule);
        }
        Self::new(rules)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| LlmError::Script(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    /// Every prompt received so far, in order.
    pub fn prompts(&self) -> Vec<String> {
        self.calls.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap_or_else(|p| p.into_inner()).len()
    }
}

impl CompletionProvider for ScriptedMock {
    fn name(&self) -> &str {
        "scripted-mock"
    }

    fn max_prompt_chars(&self) -> usize {
        self.max_prompt_chars
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        self.calls
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(prompt.to_string());
        let mut rules = self.rules.lock().unwrap_or_else(|p| p.into_inner());
        let hit = rules.iter_mut().find(|c| {
            !c.spent
                && match &c.re {
                    Some(re) => re.is_match(prompt),
                    None => prompt.contains(&c.rule.pattern),
                }
        });
        let Some(hit) = hit else {
            let head: String = prompt.chars().take(120).collect();
            return Err(LlmError::UnmatchedPrompt(head));
        };
        if hit.rule.once {
            hit.spent = true;
        }
        if hit.rule.unavailable {
            return Err(LlmError::ProviderUnavailable(format!(
                "scripted outage for `{}`",
                hit.rule.pattern
            )));
        }
        Ok(hit.rule.response.clone())
    }
}
