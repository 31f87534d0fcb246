//! Layered configuration: built-in defaults, then `RELMEM_*` environment
//! variables, then the TOML file, then command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;

use relmem_core::llm::{CompletionProvider, HttpCompletionProvider, ScriptedMock};
use relmem_core::{EmbeddingProvider, HashingEmbedder, HttpEmbeddingProvider, PipelineConfig, ValueMemoryConfig};

use crate::error::CliError;

pub const DEFAULT_STORE: &str = "relmem-store";
pub const DEFAULT_PORT: u16 = 8000;
const DEFAULT_LLM_TIMEOUT_SECS: f64 = 120.0;
const DEFAULT_LLM_MAX_PROMPT_CHARS: usize = 48_000;
const DEFAULT_EMBEDDING_TIMEOUT_SECS: f64 = 30.0;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub k_databases: Option<usize>,
    pub k_values: Option<usize>,
    pub max_correction_attempts: Option<usize>,
    pub result_truncation_rows: Option<usize>,
    pub execution_timeout_secs: Option<f64>,
    pub use_value_memory: Option<bool>,
    pub trace_timings: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    /// `mock` or `http`.
    pub provider: Option<String>,
    pub url: Option<String>,
    pub script: Option<PathBuf>,
    pub max_prompt_chars: Option<usize>,
    pub timeout_secs: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSection {
    /// `hashing` or `http`.
    pub provider: Option<String>,
    pub url: Option<String>,
    pub dimension: Option<usize>,
    pub timeout_secs: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValuesSection {
    pub max_values_per_column: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSection {
    pub port: Option<u16>,
}

/// One configuration layer. Every field is optional; later layers win.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub store: Option<PathBuf>,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub llm: LlmSection,
    #[serde(default)]
    pub embedding: EmbeddingSection,
    #[serde(default)]
    pub values: ValuesSection,
    #[serde(default)]
    pub server: ServerSection,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($field:ident),+) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field; } )+
    };
}

impl Settings {
    /// Fields set in `top` replace the ones here.
    pub fn overlay(mut self, top: Settings) -> Settings {
        overlay!(self, top, store);
        overlay!(
            self.pipeline,
            top.pipeline,
            k_databases,
            k_values,
            max_correction_attempts,
            result_truncation_rows,
            execution_timeout_secs,
            use_value_memory,
            trace_timings
        );
        overlay!(self.llm, top.llm, provider, url, script, max_prompt_chars, timeout_secs);
        overlay!(self.embedding, top.embedding, provider, url, dimension, timeout_secs);
        overlay!(self.values, top.values, max_values_per_column);
        overlay!(self.server, top.server, port);
        self
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Settings, CliError> {
        let mut s: Settings =
            toml::from_str(text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message())))?;
        // Paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        s.store = s.store.map(|p| base.join(p));
        s.llm.script = s.llm.script.map(|p| base.join(p));
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Settings, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path)
    }

    /// Reads `RELMEM_<KEY>` variables through `get`.
    pub fn from_env(get: impl Fn(&str) -> Option<String>) -> Result<Settings, CliError> {
        fn parse<T: FromStr>(get: &impl Fn(&str) -> Option<String>, key: &str) -> Result<Option<T>, CliError>
        where
            T::Err: std::fmt::Display,
        {
            let name = format!("RELMEM_{key}");
            match get(&name) {
                None => Ok(None),
                Some(raw) if raw.is_empty() => Ok(None),
                Some(raw) => raw
                    .parse()
                    .map(Some)
                    .map_err(|e| CliError::config(format!("{name}={raw}: {e}"))),
            }
        }
        let g = &get;
        Ok(Settings {
            store: parse(g, "STORE")?,
            pipeline: PipelineSection {
                k_databases: parse(g, "K_DATABASES")?,
                k_values: parse(g, "K_VALUES")?,
                max_correction_attempts: parse(g, "MAX_CORRECTION_ATTEMPTS")?,
                result_truncation_rows: parse(g, "RESULT_TRUNCATION_ROWS")?,
                execution_timeout_secs: parse(g, "EXECUTION_TIMEOUT_SECS")?,
                use_value_memory: parse(g, "USE_VALUE_MEMORY")?,
                trace_timings: parse(g, "TRACE_TIMINGS")?,
            },
            llm: LlmSection {
                provider: parse(g, "LLM_PROVIDER")?,
                url: parse(g, "LLM_URL")?,
                script: parse(g, "MOCK_SCRIPT")?,
                max_prompt_chars: parse(g, "LLM_MAX_PROMPT_CHARS")?,
                timeout_secs: parse(g, "LLM_TIMEOUT_SECS")?,
            },
            embedding: EmbeddingSection {
                provider: parse(g, "EMBEDDING_PROVIDER")?,
                url: parse(g, "EMBEDDING_URL")?,
                dimension: parse(g, "EMBEDDING_DIMENSION")?,
                timeout_secs: parse(g, "EMBEDDING_TIMEOUT_SECS")?,
            },
            values: ValuesSection {
                max_values_per_column: parse(g, "MAX_VALUES_PER_COLUMN")?,
            },
            server: ServerSection {
                port: parse(g, "PORT")?,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LlmChoice {
    Mock { script: PathBuf },
    Http { url: String, timeout: Duration, max_prompt_chars: usize },
    Unconfigured,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingChoice {
    Hashing,
    Http { url: String, dimension: usize, timeout: Duration },
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub store: PathBuf,
    pub pipeline: PipelineConfig,
    pub llm: LlmChoice,
    pub embedding: EmbeddingChoice,
    pub values: ValueMemoryConfig,
    pub port: u16,
}

fn secs(v: f64, what: &str) -> Result<Duration, CliError> {
    Duration::try_from_secs_f64(v)
        .ok()
        .filter(|d| !d.is_zero())
        .ok_or_else(|| CliError::config(format!("{what} must be a positive number of seconds")))
}

impl CliConfig {
    pub fn resolve(s: Settings) -> Result<CliConfig, CliError> {
        let defaults = PipelineConfig::default();
        let p = &s.pipeline;
        let pipeline = PipelineConfig {
            k_databases: p.k_databases.unwrap_or(defaults.k_databases),
            k_values: p.k_values.unwrap_or(defaults.k_values),
            max_correction_attempts: p.max_correction_attempts.unwrap_or(defaults.max_correction_attempts),
            result_truncation_rows: p.result_truncation_rows.unwrap_or(defaults.result_truncation_rows),
            execution_timeout_secs: p.execution_timeout_secs.unwrap_or(defaults.execution_timeout_secs),
            use_value_memory: p.use_value_memory.unwrap_or(defaults.use_value_memory),
            trace_timings: p.trace_timings.unwrap_or(defaults.trace_timings),
        };
        pipeline.validate().map_err(CliError::config)?;

        let provider = s
            .llm
            .provider
            .clone()
            .or_else(|| s.llm.script.as_ref().map(|_| "mock".to_string()))
            .or_else(|| s.llm.url.as_ref().map(|_| "http".to_string()));
        let llm = match provider.as_deref() {
            None => LlmChoice::Unconfigured,
            Some("mock") => LlmChoice::Mock {
                script: s
                    .llm
                    .script
                    .clone()
                    .ok_or_else(|| CliError::config("llm.provider = \"mock\" needs llm.script"))?,
            },
            Some("http") => LlmChoice::Http {
                url: s
                    .llm
                    .url
                    .clone()
                    .ok_or_else(|| CliError::config("llm.provider = \"http\" needs llm.url"))?,
                timeout: secs(s.llm.timeout_secs.unwrap_or(DEFAULT_LLM_TIMEOUT_SECS), "llm.timeout_secs")?,
                max_prompt_chars: s.llm.max_prompt_chars.unwrap_or(DEFAULT_LLM_MAX_PROMPT_CHARS),
            },
            Some(other) => return Err(CliError::config(format!("unknown llm.provider `{other}`"))),
        };

        let provider = s
            .embedding
            .provider
            .clone()
            .or_else(|| s.embedding.url.as_ref().map(|_| "http".to_string()));
        let embedding = match provider.as_deref() {
            None | Some("hashing") => EmbeddingChoice::Hashing,
            Some("http") => EmbeddingChoice::Http {
                url: s
                    .embedding
                    .url
                    .clone()
                    .ok_or_else(|| CliError::config("embedding.provider = \"http\" needs embedding.url"))?,
                dimension: match s.embedding.dimension {
                    Some(0) | None => {
                        return Err(CliError::config("embedding.provider = \"http\" needs a positive embedding.dimension"))
                    }
                    Some(d) => d,
                },
                timeout: secs(
                    s.embedding.timeout_secs.unwrap_or(DEFAULT_EMBEDDING_TIMEOUT_SECS),
                    "embedding.timeout_secs",
                )?,
            },
            Some(other) => return Err(CliError::config(format!("unknown embedding.provider `{other}`"))),
        };

        if s.values.max_values_per_column == Some(0) {
            return Err(CliError::config("values.max_values_per_column must be positive"));
        }

        Ok(CliConfig {
            store: s.store.unwrap_or_else(|| PathBuf::from(DEFAULT_STORE)),
            pipeline,
            llm,
            embedding,
            values: ValueMemoryConfig {
                max_values_per_column: s.values.max_values_per_column,
            },
            port: s.server.port.unwrap_or(DEFAULT_PORT),
        })
    }

    pub fn embedder(&self) -> Arc<dyn EmbeddingProvider> {
        match &self.embedding {
            EmbeddingChoice::Hashing => Arc::new(HashingEmbedder::new()),
            EmbeddingChoice::Http { url, dimension, timeout } => {
                Arc::new(HttpEmbeddingProvider::new(url, *dimension, *timeout))
            }
        }
    }

    pub fn completion_provider(&self) -> Result<Arc<dyn CompletionProvider>, CliError> {
        match &self.llm {
            LlmChoice::Mock { script } => ScriptedMock::from_file(script)
                .map(|m| Arc::new(m) as Arc<dyn CompletionProvider>)
                .map_err(|e| CliError::config(e.to_string())),
            LlmChoice::Http {
                url,
                timeout,
                max_prompt_chars,
            } => Ok(Arc::new(HttpCompletionProvider::new(url, *timeout, *max_prompt_chars))),
            LlmChoice::Unconfigured => Err(CliError::config(
                "no completion provider configured; set llm.url or llm.script (or RELMEM_LLM_URL / RELMEM_MOCK_SCRIPT)",
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn env(pairs: &[(&str, &str)]) -> Settings {
        let map: HashMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        Settings::from_env(|k| map.get(k).cloned()).unwrap()
    }

    #[test]
    fn flags_beat_file_beat_env() {
        let env = env(&[("RELMEM_K_DATABASES", "7"), ("RELMEM_K_VALUES", "4"), ("RELMEM_STORE", "/env")]);
        let file = Settings::from_toml("store = \"s\"\n[pipeline]\nk_databases = 3\n", Path::new("/etc/relmem/relmem.conf")).unwrap();
        let flags = Settings {
            pipeline: PipelineSection {
                k_databases: Some(9),
                ..Default::default()
            },
            ..Default::default()
        };
        let merged = Settings::default().overlay(env.clone()).overlay(file.clone());
        let c = CliConfig::resolve(merged.clone()).unwrap();
        assert_eq!((c.pipeline.k_databases, c.pipeline.k_values), (3, 4));
        assert_eq!(c.store, PathBuf::from("/etc/relmem/s"));
        let c = CliConfig::resolve(merged.overlay(flags)).unwrap();
        assert_eq!(c.pipeline.k_databases, 9);
    }

    #[test]
    fn defaults() {
        let c = CliConfig::resolve(Settings::default()).unwrap();
        assert_eq!(c.pipeline, PipelineConfig::default());
        assert_eq!(c.llm, LlmChoice::Unconfigured);
        assert_eq!(c.embedding, EmbeddingChoice::Hashing);
        assert_eq!(c.store, PathBuf::from(DEFAULT_STORE));
        assert!(c.completion_provider().is_err());
    }

    #[test]
    fn bad_values_are_config_errors() {
        let p = Path::new("x.conf");
        assert!(Settings::from_toml("[pipeline]\nbogus = 1\n", p).is_err());
        assert!(Settings::from_toml("[pipeline]\nk_databases = \"five\"\n", p).is_err());
        let zero = Settings::from_toml("[pipeline]\nk_databases = 0\n", p).unwrap();
        assert_eq!(CliConfig::resolve(zero).unwrap_err().exit, crate::error::EXIT_CONFIG);
        assert!(Settings::from_env(|k| (k == "RELMEM_K_VALUES").then(|| "many".to_string())).is_err());
        let http = Settings::from_toml("[embedding]\nprovider = \"http\"\nurl = \"http://x\"\n", p).unwrap();
        assert!(CliConfig::resolve(http).is_err());
    }

    #[test]
    fn shipped_example_parses() {
        let path = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/relmem.conf"));
        let s = Settings::from_file(path).unwrap();
        let c = CliConfig::resolve(s).unwrap();
        assert_eq!(c.pipeline.k_databases, 5);
        assert_eq!(c.pipeline.k_values, 10);
        assert_eq!(c.pipeline.max_correction_attempts, 3);
    }
}
