use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::ParallelCorpus;
use crate::language::{LanguageRegistry, ENGLISH};

use super::DecodeParams;

/// Outcome of a single failed call.
#[derive(Debug, Clone, PartialEq)]
pub enum CallError {
    /// Worth retrying: connection failures, timeouts, 429 and 5xx.
    Retryable(String),
    /// Client errors with a response body; never retried.
    Rejected { status: u16, body: String },
}

pub trait Endpoint: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &str, params: &DecodeParams) -> Result<String, CallError>;
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    temperature: f64,
    max_tokens: usize,
    stop: &'a [String],
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
}

/// POSTs `{"prompt","temperature","max_tokens","stop"}` and reads `{"text"}`.
pub struct HttpEndpoint {
    name: String,
    url: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpEndpoint {
    pub fn new(name: &str, url: &str, token: Option<String>, timeout: Duration) -> crate::Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| crate::Error::Validation(format!("http client: {e}")))?;
        Ok(Self {
            name: name.to_string(),
            url: url.to_string(),
            token,
            client,
        })
    }
}

impl Endpoint for HttpEndpoint {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, prompt: &str, params: &DecodeParams) -> Result<String, CallError> {
        let body = serde_json::to_vec(&WireRequest {
            prompt,
            temperature: params.temperature,
            max_tokens: params.max_new_tokens,
            stop: &params.stop_sequences,
        })
        .map_err(|e| CallError::Retryable(e.to_string()))?;
        let mut request = self
            .client
            .post(&self.url)
            .header("content-type", "application/json")
            .body(body);
        if let Some(token) = &self.token {
            request = request.header("authorization", format!("Bearer {token}"));
        }
        let response = request.send().map_err(|e| CallError::Retryable(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| CallError::Retryable(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str::<WireResponse>(&text)
                .map(|r| r.text)
                .map_err(|e| CallError::Retryable(format!("bad response body: {e}"))),
            429 | 500..=599 => Err(CallError::Retryable(format!("status {status}: {text}"))),
            _ => Err(CallError::Rejected { status, body: text }),
        }
    }
}

type CompleteFn = dyn Fn(&str, &DecodeParams) -> Result<String, CallError> + Send + Sync;

/// Endpoint backed by a closure, for tests and dry runs.
pub struct FnEndpoint {
    name: String,
    f: Box<CompleteFn>,
}

impl FnEndpoint {
    pub fn new(
        name: &str,
        f: impl Fn(&str, &DecodeParams) -> Result<String, CallError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.to_string(),
            f: Box::new(f),
        }
    }
}

impl Endpoint for FnEndpoint {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, prompt: &str, params: &DecodeParams) -> Result<String, CallError> {
        (self.f)(prompt, params)
    }
}

/// Answers any prompt by looking up the last `English: ` line in the corpus and
/// returning the aligned sentence in the language named by the final label line.
///
/// Serves as an offline teacher (candidates are the corpus sentences) and as an
/// identity student (outputs equal the references).
pub struct CorpusLookupEndpoint {
    name: String,
    corpus: ParallelCorpus,
    index_of: HashMap<String, usize>,
    code_of: HashMap<String, String>,
}

impl CorpusLookupEndpoint {
    pub fn new(name: &str, corpus: ParallelCorpus, registry: &LanguageRegistry) -> crate::Result<Self> {
        let index_of = corpus
            .sentences(ENGLISH)?
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let code_of = registry
            .iter()
            .filter(|l| corpus.has_language(&l.code))
            .map(|l| (l.display_name.clone(), l.code.clone()))
            .collect();
        Ok(Self {
            name: name.to_string(),
            corpus,
            index_of,
            code_of,
        })
    }
}

impl Endpoint for CorpusLookupEndpoint {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, prompt: &str, _params: &DecodeParams) -> Result<String, CallError> {
        let miss = |what: String| CallError::Rejected { status: 404, body: what };
        let source = prompt
            .lines()
            .rev()
            .find_map(|l| l.strip_prefix("English: "))
            .ok_or_else(|| miss("no source line".into()))?;
        let label = prompt.lines().last().unwrap_or("").trim_end_matches(':');
        let language = ["Corrected ", "Reference "]
            .iter()
            .find_map(|p| label.strip_prefix(p))
            .unwrap_or(label);
        let code = self
            .code_of
            .get(language)
            .ok_or_else(|| miss(format!("unknown language {language:?}")))?;
        let index = self
            .index_of
            .get(source)
            .ok_or_else(|| miss(format!("unknown source {source:?}")))?;
        let sentence = self.corpus.sentence(code, *index).map_err(|e| miss(e.to_string()))?;
        Ok(format!(" {sentence}"))
    }
}
