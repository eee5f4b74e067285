use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{Backend, GatewayError, ProviderConfig, RoleRequest, Speaker};

/// Chat-completion client: POSTs `{model, messages, temperature, max_tokens}`
/// and reads `choices[0].message.content`.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key_env: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(config: &ProviderConfig) -> Result<Self, GatewayError> {
        let endpoint =
            config.endpoint_url.clone().ok_or_else(|| GatewayError::Config("http backend requires endpoint_url".into()))?;
        let api_key_env =
            config.api_key_env.clone().ok_or_else(|| GatewayError::Config("http backend requires api_key_env".into()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self { client, endpoint, api_key_env })
    }

    pub fn body(request: &RoleRequest) -> serde_json::Value {
        let messages: Vec<_> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.speaker {
                    Speaker::System => "system",
                    Speaker::User => "user",
                    Speaker::Assistant => "assistant",
                };
                json!({ "role": role, "content": m.text })
            })
            .collect();
        json!({
            "model": request.params.model_name,
            "messages": messages,
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_tokens,
        })
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &RoleRequest) -> Result<String, GatewayError> {
        let key = std::env::var(&self.api_key_env)
            .map_err(|_| GatewayError::Config(format!("environment variable {} is not set", self.api_key_env)))?;
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(key)
            .json(&Self::body(request))
            .send()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| GatewayError::Transport(e.to_string()))?;
        match status {
            200..=299 => {
                let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| GatewayError::BadResponse(e.to_string()))?;
                parsed
                    .choices
                    .into_iter()
                    .next()
                    .and_then(|c| c.message.content)
                    .ok_or_else(|| GatewayError::BadResponse("response has no choices".into()))
            }
            429 => Err(GatewayError::RateLimited),
            500..=599 => Err(GatewayError::Server { status, body: text }),
            _ => Err(GatewayError::Client { status, body: text }),
        }
    }
}
