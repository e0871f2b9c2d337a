use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Assistant, AssistantCall, AssistantError, ContextDoc, Expansions, FormAssignment,
    IdentifiedResource, IdentifiedResources, Reformulation, SynthesizedTable,
};
use crate::text::{link_key, normalize_name};
use crate::wrapper::{FieldKind, FormSchema};

const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "access", "all", "also", "an", "and", "any", "are", "as", "associated", "at",
    "be", "by", "data", "do", "does", "every", "extract", "find", "for", "from", "get", "give",
    "how", "i", "in", "information", "into", "is", "it", "its", "list", "me", "of", "on", "or",
    "please", "related", "retrieve", "show", "some", "that", "the", "their", "them", "these",
    "this", "those", "to", "using", "was", "were", "what", "when", "where", "which", "who", "with",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReformulateMode {
    /// Retrieval query is the user query verbatim; expansion returns it alone.
    Identity,
    /// Retrieval query is the user query with stop-words removed.
    #[default]
    Keywords,
}

/// A query the fixture answers with authored output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CannedQuery {
    /// Case-insensitive substring of the user query that selects this entry.
    pub contains: String,
    pub retrieval_query: String,
    #[serde(default)]
    pub keywords: Option<Vec<String>>,
    #[serde(default)]
    pub expansions: Vec<String>,
}

/// A known data source, recognized by the host of a paper's access link.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceRule {
    pub host: String,
    pub name: String,
    pub data_link: String,
    /// Names under which a user query may mention the source.
    #[serde(default)]
    pub aliases: Vec<String>,
}

/// Rules of the deterministic fixture backend, loaded from a JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureRules {
    pub stopwords: Vec<String>,
    pub mode: ReformulateMode,
    pub canned: Vec<CannedQuery>,
    /// Expansion template; `{query}` and `{title}` are substituted per context.
    pub expand_template: String,
    pub sources: Vec<SourceRule>,
    /// Form field names (normalized) that receive the retrieval query first.
    pub field_hints: Vec<String>,
    /// Call kinds whose first attempt returns malformed output.
    pub faults: Vec<String>,
    /// Call kinds that always return malformed output.
    pub broken: Vec<String>,
}

impl Default for FixtureRules {
    fn default() -> Self {
        Self {
            stopwords: DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
            mode: ReformulateMode::default(),
            canned: Vec::new(),
            expand_template: "{query} {title}".into(),
            sources: Vec::new(),
            field_hints: ["query", "q", "search", "term", "keyword", "keywords"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            faults: Vec::new(),
            broken: Vec::new(),
        }
    }
}

/// Deterministic rule engine standing in for a generative model.
#[derive(Debug, Clone, Default)]
pub struct FixtureAssistant {
    rules: FixtureRules,
}

impl FixtureAssistant {
    pub fn new(rules: FixtureRules) -> Self {
        Self { rules }
    }

    pub fn identity() -> Self {
        Self::new(FixtureRules {
            mode: ReformulateMode::Identity,
            ..FixtureRules::default()
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, AssistantError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AssistantError::Config(format!("{}: {e}", path.display())))?;
        let rules = serde_json::from_str(&text)
            .map_err(|e| AssistantError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::new(rules))
    }

    pub fn rules(&self) -> &FixtureRules {
        &self.rules
    }

    fn is_stopword(&self, token: &str) -> bool {
        self.rules.stopwords.iter().any(|s| s.eq_ignore_ascii_case(token))
    }

    /// Alphanumeric tokens of `query` minus stop-words, original case kept.
    pub fn content_tokens(&self, query: &str) -> Vec<String> {
        query
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty() && !self.is_stopword(t))
            .map(str::to_string)
            .collect()
    }

    fn canned_for_query(&self, query: &str) -> Option<&CannedQuery> {
        let q = query.to_lowercase();
        self.rules
            .canned
            .iter()
            .find(|c| q.contains(&c.contains.to_lowercase()))
    }

    fn canned_for_retrieval(&self, retrieval_query: &str) -> Option<&CannedQuery> {
        self.rules
            .canned
            .iter()
            .find(|c| c.retrieval_query.eq_ignore_ascii_case(retrieval_query))
    }

    fn reformulate(&self, query: &str) -> Reformulation {
        let keywords = self.content_tokens(query);
        if let Some(c) = self.canned_for_query(query) {
            return Reformulation {
                retrieval_query: c.retrieval_query.clone(),
                keywords: c.keywords.clone().unwrap_or(keywords),
            };
        }
        let retrieval_query = match self.rules.mode {
            ReformulateMode::Identity => query.trim().to_string(),
            ReformulateMode::Keywords if keywords.is_empty() => query.trim().to_string(),
            ReformulateMode::Keywords => keywords.join(" "),
        };
        Reformulation {
            retrieval_query,
            keywords,
        }
    }

    fn expand(&self, retrieval_query: &str, contexts: &[ContextDoc], k: usize) -> Expansions {
        if let Some(c) = self.canned_for_retrieval(retrieval_query) {
            if !c.expansions.is_empty() {
                return Expansions {
                    queries: c.expansions.iter().take(k).cloned().collect(),
                };
            }
        }
        let queries = match self.rules.mode {
            ReformulateMode::Identity => vec![retrieval_query.to_string()],
            ReformulateMode::Keywords => contexts
                .iter()
                .take(k)
                .map(|c| {
                    self.rules
                        .expand_template
                        .replace("{query}", retrieval_query)
                        .replace("{title}", &c.title)
                })
                .collect(),
        };
        Expansions { queries }
    }

    fn source_rule(&self, link: &str) -> Option<&SourceRule> {
        let (host, _) = link_key(link)?;
        self.rules.sources.iter().find(|s| {
            let rule_host = s.host.to_lowercase();
            rule_host.strip_prefix("www.").unwrap_or(&rule_host) == host
        })
    }

    /// Papers whose source is mentioned in the query become descriptors; if
    /// none is mentioned, the top paper does.
    fn identify(&self, query: &str, retrieval_query: &str, candidates: &[ContextDoc]) -> IdentifiedResources {
        let q = query.to_lowercase();
        let mut resources: Vec<IdentifiedResource> = Vec::new();
        for doc in candidates {
            let Some(rule) = self.source_rule(&doc.link) else {
                continue;
            };
            let mentioned = rule
                .aliases
                .iter()
                .chain(std::iter::once(&rule.name))
                .any(|a| q.contains(&a.to_lowercase()));
            if mentioned && !resources.iter().any(|r| r.source_name == rule.name) {
                resources.push(IdentifiedResource {
                    retrieval_query: retrieval_query.to_string(),
                    source_name: rule.name.clone(),
                    data_link: rule.data_link.clone(),
                    paper_title: doc.title.clone(),
                    origin_doc: Some(doc.id.clone()),
                });
            }
        }
        if resources.is_empty() {
            if let Some(doc) = candidates.first() {
                let (name, link) = match self.source_rule(&doc.link) {
                    Some(rule) => (rule.name.clone(), rule.data_link.clone()),
                    None => (
                        doc.title.split(':').next().unwrap_or(&doc.title).trim().to_string(),
                        doc.link.clone(),
                    ),
                };
                resources.push(IdentifiedResource {
                    retrieval_query: retrieval_query.to_string(),
                    source_name: name,
                    data_link: link,
                    paper_title: doc.title.clone(),
                    origin_doc: Some(doc.id.clone()),
                });
            }
        }
        IdentifiedResources { resources }
    }

    /// Lone text field (or the hinted one) gets the retrieval query; a select
    /// takes the first option mentioning a keyword; everything else keeps its
    /// default.
    fn fill(&self, retrieval_query: &str, keywords: &[String], forms: &[FormSchema]) -> FormAssignment {
        let Some((index, form)) = forms
            .iter()
            .enumerate()
            .find(|(_, f)| f.fields.iter().any(|x| x.kind.is_fillable()))
        else {
            return FormAssignment {
                form: 0,
                assignments: BTreeMap::new(),
            };
        };
        let mut assignments = BTreeMap::new();
        let text_fields: Vec<_> = form.fields.iter().filter(|f| f.kind == FieldKind::Text).collect();
        let target = text_fields
            .iter()
            .find(|f| {
                let n = normalize_name(&f.name);
                self.rules.field_hints.iter().any(|h| normalize_name(h) == n)
            })
            .or_else(|| text_fields.first());
        if let Some(field) = target {
            assignments.insert(field.name.clone(), retrieval_query.to_string());
        }
        for field in form.fields.iter().filter(|f| f.kind == FieldKind::Select) {
            let hit = field.options.iter().find(|opt| {
                let o = opt.to_lowercase();
                keywords.iter().any(|k| o.contains(&k.to_lowercase()))
            });
            if let Some(opt) = hit {
                assignments.insert(field.name.clone(), opt.clone());
            }
        }
        FormAssignment {
            form: index,
            assignments,
        }
    }

    /// `Label: value` lines become (Field, Value) rows.
    fn synthesize(&self, page_text: &str) -> SynthesizedTable {
        let rows: Vec<Vec<String>> = page_text
            .lines()
            .filter_map(|l| l.split_once(':'))
            .map(|(k, v)| (k.trim(), v.trim()))
            .filter(|(k, v)| !k.is_empty() && !v.is_empty() && k.len() <= 40)
            .map(|(k, v)| vec![k.to_string(), v.to_string()])
            .collect();
        SynthesizedTable {
            columns: if rows.is_empty() {
                vec![]
            } else {
                vec!["Field".into(), "Value".into()]
            },
            rows,
        }
    }
}

impl Assistant for FixtureAssistant {
    fn id(&self) -> String {
        "fixture".into()
    }

    fn complete(&self, call: &AssistantCall, repair: Option<&str>) -> Result<String, AssistantError> {
        let kind = call.kind().to_string();
        if self.rules.broken.contains(&kind) || (repair.is_none() && self.rules.faults.contains(&kind)) {
            return Ok("{\"malformed\": true".into());
        }
        let value = match call {
            AssistantCall::Reformulate { query, .. } => serde_json::to_value(self.reformulate(query)),
            AssistantCall::Expand {
                retrieval_query,
                contexts,
                k,
            } => serde_json::to_value(self.expand(retrieval_query, contexts, *k)),
            AssistantCall::IdentifyResources {
                query,
                retrieval_query,
                candidates,
                ..
            } => serde_json::to_value(self.identify(query, retrieval_query, candidates)),
            AssistantCall::FillForm {
                retrieval_query,
                keywords,
                forms,
            } => serde_json::to_value(self.fill(retrieval_query, keywords, forms)),
            AssistantCall::SynthesizeTable { page_text, .. } => {
                serde_json::to_value(self.synthesize(page_text))
            }
        };
        value
            .map(|v| v.to_string())
            .map_err(|e| AssistantError::Config(e.to_string()))
    }
}
