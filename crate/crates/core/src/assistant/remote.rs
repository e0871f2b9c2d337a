use std::time::Duration;

use serde::Deserialize;

use super::{Assistant, AssistantCall, AssistantError};

fn template(call: &AssistantCall) -> &'static str {
    match call {
        AssistantCall::Reformulate { .. } => include_str!("../../prompts/reformulate.txt"),
        AssistantCall::Expand { .. } => include_str!("../../prompts/expand.txt"),
        AssistantCall::IdentifyResources { .. } => include_str!("../../prompts/identify_resources.txt"),
        AssistantCall::FillForm { .. } => include_str!("../../prompts/fill_form.txt"),
        AssistantCall::SynthesizeTable { .. } => include_str!("../../prompts/synthesize_table.txt"),
    }
}

/// Client for an OpenAI-compatible chat-completions endpoint in JSON mode.
pub struct RemoteAssistant {
    client: reqwest::blocking::Client,
    base_url: String,
    model: String,
    api_key: Option<String>,
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

impl RemoteAssistant {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("http client");
        Self {
            client,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
        }
    }

    pub(crate) fn request_body(&self, call: &AssistantCall, repair: Option<&str>) -> serde_json::Value {
        let mut messages = vec![
            serde_json::json!({ "role": "system", "content": template(call) }),
            serde_json::json!({ "role": "user", "content": serde_json::to_string(call).unwrap_or_default() }),
        ];
        if let Some(problem) = repair {
            messages.push(serde_json::json!({
                "role": "user",
                "content": format!("Your previous reply was rejected: {problem}. Reply again with valid JSON only."),
            }));
        }
        serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "response_format": { "type": "json_object" },
            "messages": messages,
        })
    }
}

impl Assistant for RemoteAssistant {
    fn id(&self) -> String {
        format!("remote:{}", self.model)
    }

    fn complete(&self, call: &AssistantCall, repair: Option<&str>) -> Result<String, AssistantError> {
        let mut req = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .json(&self.request_body(call, repair));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| AssistantError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(AssistantError::Transport(format!("status {status}")));
        }
        let body: ChatResponse = resp
            .json()
            .map_err(|e| AssistantError::Transport(format!("undecodable response: {e}")))?;
        Ok(body
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default())
    }
}
