//! Generative backend contract.
//!
//! Every call returns structured text (JSON) that is parsed and validated
//! against the call's response schema. A response that fails validation gets
//! exactly one repair attempt, with the validation error fed back to the
//! backend; a second failure is an error.

mod fixture;
mod remote;

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fixture::{CannedQuery, FixtureAssistant, FixtureRules, ReformulateMode, SourceRule};
pub use remote::RemoteAssistant;

use crate::wrapper::FormSchema;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssistantError {
    #[error("assistant transport error (retryable): {0}")]
    Transport(String),
    #[error("assistant output for `{call}` failed validation after repair: {detail}")]
    Schema { call: &'static str, detail: String },
    #[error("assistant configuration: {0}")]
    Config(String),
}

impl AssistantError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, AssistantError::Transport(_))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextDoc {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub link: String,
}

impl From<&crate::Document> for ContextDoc {
    fn from(d: &crate::Document) -> Self {
        Self {
            id: d.id.clone(),
            title: d.title.clone(),
            abstract_text: d.abstract_text.clone(),
            link: d.access_link.clone(),
        }
    }
}

/// One request to the generative backend.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "call", rename_all = "snake_case")]
pub enum AssistantCall {
    /// Turn the user query into a retrieval query plus keywords.
    Reformulate {
        query: String,
        knowledge: Option<String>,
    },
    /// Produce `k` expanded queries from the retrieval query and contexts.
    Expand {
        retrieval_query: String,
        contexts: Vec<ContextDoc>,
        k: usize,
    },
    /// Name the data sources described by the candidate papers.
    IdentifyResources {
        query: String,
        retrieval_query: String,
        knowledge: Option<String>,
        candidates: Vec<ContextDoc>,
    },
    /// Choose values for a search form.
    FillForm {
        retrieval_query: String,
        keywords: Vec<String>,
        forms: Vec<FormSchema>,
    },
    /// Turn the text of a result page without tables into rows.
    SynthesizeTable {
        retrieval_query: String,
        page_text: String,
    },
}

impl AssistantCall {
    pub fn kind(&self) -> &'static str {
        match self {
            AssistantCall::Reformulate { .. } => "reformulate",
            AssistantCall::Expand { .. } => "expand",
            AssistantCall::IdentifyResources { .. } => "identify_resources",
            AssistantCall::FillForm { .. } => "fill_form",
            AssistantCall::SynthesizeTable { .. } => "synthesize_table",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reformulation {
    pub retrieval_query: String,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expansions {
    pub queries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedResource {
    pub retrieval_query: String,
    pub source_name: String,
    pub data_link: String,
    pub paper_title: String,
    #[serde(default)]
    pub origin_doc: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedResources {
    pub resources: Vec<IdentifiedResource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormAssignment {
    pub form: usize,
    pub assignments: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesizedTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// A generative backend. Must be shareable across concurrent requests.
pub trait Assistant: Send + Sync {
    fn id(&self) -> String;

    /// Returns the raw structured text for `call`. `repair` carries the
    /// validation error of a previous attempt.
    fn complete(&self, call: &AssistantCall, repair: Option<&str>) -> Result<String, AssistantError>;
}

/// Calls the backend, parses the response as `T` and runs `validate`; one
/// repair retry on failure.
pub fn ask<T, F>(assistant: &dyn Assistant, call: &AssistantCall, validate: F) -> Result<T, AssistantError>
where
    T: DeserializeOwned,
    F: Fn(&T) -> Result<(), String>,
{
    let check = |raw: &str| -> Result<T, String> {
        let parsed: T = serde_json::from_str(raw).map_err(|e| format!("not valid {}: {e}", call.kind()))?;
        validate(&parsed)?;
        Ok(parsed)
    };
    let first = assistant.complete(call, None)?;
    match check(&first) {
        Ok(v) => Ok(v),
        Err(problem) => {
            tracing::warn!(call = call.kind(), %problem, "assistant output invalid, requesting repair");
            let second = assistant.complete(call, Some(&problem))?;
            check(&second).map_err(|detail| AssistantError::Schema {
                call: call.kind(),
                detail,
            })
        }
    }
}
