//! Tool-call codec.
//!
//! Everything that crosses the boundary between free model text and structured
//! tool traffic goes through here: the tool documentation block injected into
//! the system prompt, the `<use_mcp_tool>` invocation grammar, terminal
//! outputs (SOAP sections or the `<end>` token), and the advisory
//! decision-to-tool matcher used to generate branching candidates.

mod matcher;
mod parse;
mod tool_xml;

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use matcher::{match_tools, tokenize, ToolMatch};
pub use parse::{
    parse_structured_output, parse_tool_call, render_tool_call, strip_think, END_TOKEN,
};
pub use tool_xml::generate_tool_xml;

/// Coarse routing class of a tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolCategory {
    Vision,
    Text,
}

impl ToolCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ToolCategory::Vision => "vision",
            ToolCategory::Text => "text",
        }
    }
}

impl fmt::Display for ToolCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A tool advertised by a server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub server_name: String,
    pub tool_name: String,
    pub description: String,
    /// JSON-schema-like object: `{"type": "object", "properties": {...}, "required": [...]}`.
    pub input_schema: Value,
    pub category: ToolCategory,
}

impl ToolDescriptor {
    pub fn new(
        server_name: impl Into<String>,
        tool_name: impl Into<String>,
        description: impl Into<String>,
        input_schema: Value,
        category: ToolCategory,
    ) -> Result<Self, CodecError> {
        let tool = Self {
            server_name: server_name.into(),
            tool_name: tool_name.into(),
            description: description.into(),
            input_schema,
            category,
        };
        tool.check()?;
        Ok(tool)
    }

    /// Verifies the schema shape: an object whose `required` names all appear
    /// under `properties`.
    pub fn check(&self) -> Result<(), CodecError> {
        let invalid = |reason: &str| CodecError::InvalidDescriptor {
            tool: self.qualified_name(),
            reason: reason.to_string(),
        };
        if !is_identifier(&self.server_name) || !is_identifier(&self.tool_name) {
            return Err(invalid(
                "server and tool names must be non-empty identifiers",
            ));
        }
        let schema = self
            .input_schema
            .as_object()
            .ok_or_else(|| invalid("input_schema must be a JSON object"))?;
        let properties = match schema.get("properties") {
            None => None,
            Some(Value::Object(props)) => Some(props),
            Some(_) => return Err(invalid("`properties` must be an object")),
        };
        match schema.get("required") {
            None => {}
            Some(Value::Array(required)) => {
                for name in required {
                    let name = name
                        .as_str()
                        .ok_or_else(|| invalid("`required` entries must be strings"))?;
                    if !properties.is_some_and(|props| props.contains_key(name)) {
                        return Err(invalid(&format!(
                            "required property `{name}` is not declared"
                        )));
                    }
                }
            }
            Some(_) => return Err(invalid("`required` must be an array")),
        }
        Ok(())
    }

    pub fn qualified_name(&self) -> String {
        format!("{}/{}", self.server_name, self.tool_name)
    }

    pub fn properties(&self) -> impl Iterator<Item = (&String, &Value)> {
        self.input_schema
            .get("properties")
            .and_then(Value::as_object)
            .into_iter()
            .flat_map(|props| props.iter())
    }

    pub fn required(&self) -> impl Iterator<Item = &str> {
        self.input_schema
            .get("required")
            .and_then(Value::as_array)
            .into_iter()
            .flat_map(|req| req.iter().filter_map(Value::as_str))
    }

    /// True when every required property is present in `arguments` and no
    /// undeclared property is passed.
    pub fn accepts(&self, arguments: &Map<String, Value>) -> bool {
        let declared: Vec<&String> = self.properties().map(|(name, _)| name).collect();
        self.required().all(|name| arguments.contains_key(name))
            && arguments.keys().all(|key| declared.contains(&key))
    }
}

/// A parsed tool invocation.
///
/// Equality compares the routed tool and its arguments; the source span is
/// bookkeeping and does not take part.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToolCall {
    pub server_name: String,
    pub tool_name: String,
    pub arguments: Map<String, Value>,
    /// Byte range of the `<use_mcp_tool>` block in the text it was parsed from.
    #[serde(skip)]
    pub raw_span: Option<Range<usize>>,
}

impl ToolCall {
    pub fn new(
        server_name: impl Into<String>,
        tool_name: impl Into<String>,
        arguments: Map<String, Value>,
    ) -> Self {
        Self {
            server_name: server_name.into(),
            tool_name: tool_name.into(),
            arguments,
            raw_span: None,
        }
    }
}

impl PartialEq for ToolCall {
    fn eq(&self, other: &Self) -> bool {
        self.server_name == other.server_name
            && self.tool_name == other.tool_name
            && self.arguments == other.arguments
    }
}

impl Eq for ToolCall {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Soap,
    EndToken,
}

/// The four sections of a SOAP report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoapSections {
    pub subject: String,
    pub objective: String,
    pub assessment: String,
    pub plan: String,
}

impl SoapSections {
    pub fn render(&self) -> String {
        format!(
            "<S>\n{}\n</S>\n<O>\n{}\n</O>\n<A>\n{}\n</A>\n<P>\n{}\n</P>",
            self.subject, self.objective, self.assessment, self.plan
        )
    }
}

/// Terminal output of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredOutput {
    pub kind: OutputKind,
    /// Present iff `kind == Soap`.
    pub sections: Option<SoapSections>,
    /// Free text preceding the `<end>` token (empty for SOAP outputs).
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("duplicate tool {0}")]
    DuplicateTool(String),
    #[error("invalid descriptor for {tool}: {reason}")]
    InvalidDescriptor { tool: String, reason: String },
    #[error("MalformedBlock at bytes {}..{}: {reason}", span.start, span.end)]
    MalformedBlock { span: Range<usize>, reason: String },
    #[error("BadArguments at bytes {}..{}: {reason}", span.start, span.end)]
    BadArguments { span: Range<usize>, reason: String },
    #[error("MultipleBlocks: found {count} <use_mcp_tool> blocks, only one call per response is allowed")]
    MultipleBlocks { count: usize },
    #[error("PartialSoap: missing or empty sections {missing:?}")]
    PartialSoap { missing: Vec<char> },
    #[error("EmptyToolset: no tools to match against")]
    EmptyToolset,
}

impl CodecError {
    /// Stable short name of the variant, used in validation reports and
    /// error feedback.
    pub fn kind(&self) -> &'static str {
        match self {
            CodecError::DuplicateTool(_) => "DuplicateTool",
            CodecError::InvalidDescriptor { .. } => "InvalidDescriptor",
            CodecError::MalformedBlock { .. } => "MalformedBlock",
            CodecError::BadArguments { .. } => "BadArguments",
            CodecError::MultipleBlocks { .. } => "MultipleBlocks",
            CodecError::PartialSoap { .. } => "PartialSoap",
            CodecError::EmptyToolset => "EmptyToolset",
        }
    }
}

pub(crate) fn is_identifier(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}
