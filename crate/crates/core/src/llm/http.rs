use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{CompletionProvider, LlmError};

/// Remote completion provider: `POST {base}/complete` with `{"prompt": ...}`,
/// answered by `{"text": ...}`.
pub struct HttpCompletionProvider {
    name: String,
    url: String,
    max_prompt_chars: usize,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct CompleteRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct CompleteResponse {
    text: String,
}

impl HttpCompletionProvider {
    pub fn new(base_url: &str, timeout: Duration, max_prompt_chars: usize) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            name: format!("http:{base_url}"),
            url: format!("{}/complete", base_url.trim_end_matches('/')),
            max_prompt_chars,
            agent: config.into(),
        }
    }
}

impl CompletionProvider for HttpCompletionProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn max_prompt_chars(&self) -> usize {
        self.max_prompt_chars
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(CompleteRequest { prompt })
            .map_err(|e| LlmError::ProviderUnavailable(e.to_string()))?;
        if resp.status() != 200 {
            return Err(LlmError::ProviderUnavailable(format!("HTTP {}", resp.status())));
        }
        let body: CompleteResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::ProviderUnavailable(format!("bad response body: {e}")))?;
        Ok(body.text)
    }
}
