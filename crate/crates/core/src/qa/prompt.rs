//! Answer prompt layout.

pub const GRAPH_CONTEXT: &str = "[GRAPH CONTEXT]";
pub const PASSAGES: &str = "[RETRIEVED PASSAGES]";
pub const HISTORY: &str = "[DIALOGUE HISTORY]";
pub const QUESTION: &str = "[QUESTION]";

const HEADERS: [&str; 4] = [GRAPH_CONTEXT, PASSAGES, HISTORY, QUESTION];

/// Body of the section introduced by the `header` line, up to the next
/// section header or the end of the prompt.
pub fn section_body<'a>(prompt: &'a str, header: &str) -> Option<&'a str> {
    let mut offset = 0;
    let mut start = None;
    for line in prompt.split_inclusive('\n') {
        let trimmed = line.trim_end();
        if let Some(s) = start {
            if HEADERS.contains(&trimmed) {
                return Some(prompt[s..offset].trim());
            }
        } else if trimmed == header {
            start = Some(offset + line.len());
        }
        offset += line.len();
    }
    start.map(|s| prompt[s..].trim())
}

/// `(chunk id, text)` for each `[chunk:<id>] ...` block of a passages body.
pub fn parse_passages(body: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, Vec<&str>)> = Vec::new();
    for line in body.lines() {
        if let Some(rest) = line.strip_prefix("[chunk:") {
            if let Some(end) = rest.find(']') {
                out.push((rest[..end].to_string(), Vec::new()));
                continue;
            }
        }
        if let Some((_, lines)) = out.last_mut() {
            lines.push(line);
        }
    }
    out.into_iter()
        .map(|(id, lines)| (id, lines.join("\n").trim().to_string()))
        .collect()
}

pub const SYSTEM: &str = "You answer questions about technical documentation. Use only the graph context and \
the retrieved passages below. Cite every passage you rely on with its [chunk:<id>] marker. If they do not \
contain the answer, say that no relevant knowledge was found.";

pub const DEFAULT_TEMPLATE: &str = "{system}\n\n{graph_context}{passages}{history}{question}";

/// Placeholders a template may use.
pub const PLACEHOLDERS: [&str; 5] = ["system", "graph_context", "passages", "history", "question"];

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("unknown placeholder {{{0}}} in prompt template")]
    Unknown(String),
    #[error("prompt template lacks the {{question}} placeholder")]
    MissingQuestion,
    #[error("cannot read prompt template {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            text: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let re = regex::Regex::new(r"\{([a-z_]+)\}").expect("static regex");
        for cap in re.captures_iter(text) {
            if !PLACEHOLDERS.contains(&&cap[1]) {
                return Err(TemplateError::Unknown(cap[1].to_string()));
            }
        }
        if !text.contains("{question}") {
            return Err(TemplateError::MissingQuestion);
        }
        Ok(PromptTemplate { text: text.to_string() })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Fills the placeholders. Section placeholders expand to header, body
    /// and a blank line, or to nothing when the body is empty.
    pub fn render(&self, graph_context: &str, passages: &str, history: &str, question: &str) -> String {
        let section = |header: &str, body: &str| {
            if body.trim().is_empty() {
                String::new()
            } else {
                format!("{header}\n{}\n\n", body.trim_end())
            }
        };
        let out = self
            .text
            .replace("{system}", SYSTEM)
            .replace("{graph_context}", &section(GRAPH_CONTEXT, graph_context))
            .replace("{passages}", &section(PASSAGES, passages))
            .replace("{history}", &section(HISTORY, history))
            .replace("{question}", &section(QUESTION, question));
        format!("{}\n", out.trim_end())
    }
}
