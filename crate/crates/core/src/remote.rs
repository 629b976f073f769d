//! HTTP adapters for externally hosted models: embeddings, argument
//! extraction and planning. Each posts one JSON body and reads one JSON body.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::codegen::{ArgumentExtractor, CodegenError};
use crate::corpus::{ApiFunction, ValueType};
use crate::rag::{EmbeddingProvider, RagError};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// A JSON-over-HTTP endpoint with a hard per-request deadline.
#[derive(Clone)]
pub struct JsonEndpoint {
    url: String,
    agent: ureq::Agent,
}

impl JsonEndpoint {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        JsonEndpoint { url: url.into(), agent }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, String> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(body)
            .map_err(|e| format!("{}: {e}", self.url))?;
        resp.body_mut()
            .read_json::<Resp>()
            .map_err(|e| format!("{}: bad response: {e}", self.url))
    }
}

impl std::fmt::Debug for JsonEndpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonEndpoint").field("url", &self.url).finish()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
}

/// Embedding provider backed by `{texts} -> {vectors}` over HTTP.
#[derive(Debug, Clone)]
pub struct RemoteEmbeddingProvider {
    endpoint: JsonEndpoint,
    provider_id: String,
    dim: usize,
}

impl RemoteEmbeddingProvider {
    pub fn new(endpoint: JsonEndpoint, provider_id: impl Into<String>, dim: usize) -> Self {
        RemoteEmbeddingProvider {
            endpoint,
            provider_id: provider_id.into(),
            dim,
        }
    }
}

impl EmbeddingProvider for RemoteEmbeddingProvider {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, RagError> {
        let req = EmbedRequest {
            texts: texts.iter().map(|t| t.to_string()).collect(),
        };
        let resp: EmbedResponse = self.endpoint.post(&req).map_err(RagError::ProviderUnavailable)?;
        if resp.vectors.len() != texts.len() {
            return Err(RagError::ProviderUnavailable(format!(
                "asked for {} vectors, got {}",
                texts.len(),
                resp.vectors.len()
            )));
        }
        if let Some(v) = resp.vectors.iter().find(|v| v.len() != self.dim) {
            return Err(RagError::Incompatible(format!(
                "expected dimension {}, got {}",
                self.dim,
                v.len()
            )));
        }
        Ok(resp.vectors)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExtractParameter {
    pub name: String,
    pub value_type: ValueType,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExtractRequest {
    pub text: String,
    pub function_name: String,
    pub parameters: Vec<ExtractParameter>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExtractResponse {
    pub values: Vec<String>,
}

/// Argument extractor backed by a hosted fine-tuned model.
#[derive(Debug, Clone)]
pub struct RemoteExtractor {
    endpoint: JsonEndpoint,
}

impl RemoteExtractor {
    pub fn new(endpoint: JsonEndpoint) -> Self {
        RemoteExtractor { endpoint }
    }
}

impl ArgumentExtractor for RemoteExtractor {
    fn name(&self) -> &str {
        "remote"
    }

    fn extract_values(&self, text: &str, function: &ApiFunction) -> Result<Vec<String>, CodegenError> {
        let req = ExtractRequest {
            text: text.to_string(),
            function_name: function.name.clone(),
            parameters: function
                .parameters
                .iter()
                .map(|p| ExtractParameter {
                    name: p.name.clone(),
                    value_type: p.value_type,
                })
                .collect(),
        };
        let resp: ExtractResponse = self.endpoint.post(&req).map_err(CodegenError::Provider)?;
        Ok(resp.values)
    }
}
