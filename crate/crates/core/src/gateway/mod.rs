//! Model backends for the think and vision roles, prompt assembly and token
//! accounting.

mod http;
mod scripted;
mod templates;

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::stack::{FrameKind, ReasoningFrame, ReasoningStack};

pub use http::{HttpChat, HttpChatConfig};
pub use scripted::{ScriptMode, ScriptedBackend, ScriptedResponse, ScriptedScript};
pub use templates::{render, Templates};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("BackendExhausted: no scripted {role} response left for round {round}")]
    BackendExhausted { role: BackendRole, round: usize },
    #[error("EndpointError: status {status}: {body}")]
    EndpointError { status: u16, body: String },
    #[error("Timeout: backend gave no answer within {0:?}")]
    Timeout(Duration),
    #[error("request failed: {0}")]
    Request(String),
    #[error("image not found: {0}")]
    MissingImage(String),
    #[error("prompt drift for {role} round {round}: expected hash {expected}, got {found}")]
    PromptDrift {
        role: BackendRole,
        round: usize,
        expected: String,
        found: String,
    },
    #[error("invalid prompt bundle: {0}")]
    InvalidBundle(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendRole {
    Think,
    Vision,
}

impl std::fmt::Display for BackendRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendRole::Think => "think",
            BackendRole::Vision => "vision",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<String>,
}

impl Turn {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            images: Vec::new(),
        }
    }

    pub fn with_image(mut self, path: impl Into<String>) -> Self {
        self.images.push(path.into());
        self
    }
}

/// One backend request: the system turn first, then the conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    /// Round the request belongs to; scripted backends key on it.
    pub round: usize,
    pub turns: Vec<Turn>,
}

impl PromptBundle {
    pub fn new(system_text: impl Into<String>, round: usize) -> Self {
        Self {
            round,
            turns: vec![Turn::new(Role::System, system_text)],
        }
    }

    pub fn push(&mut self, turn: Turn) {
        self.turns.push(turn);
    }

    pub fn system_text(&self) -> &str {
        &self.turns[0].content
    }

    pub fn image_refs(&self) -> Vec<&str> {
        self.turns
            .iter()
            .flat_map(|t| t.images.iter().map(String::as_str))
            .collect()
    }

    /// Estimated tokens of every turn.
    pub fn prompt_tokens(&self) -> usize {
        self.turns.iter().map(|t| estimate_tokens(&t.content)).sum()
    }

    /// Estimated tokens of every turn after the system turn.
    pub fn context_tokens(&self) -> usize {
        self.turns
            .iter()
            .skip(1)
            .map(|t| estimate_tokens(&t.content))
            .sum()
    }

    /// Hex SHA-256 over the JSON encoding of the turns.
    pub fn hash(&self) -> String {
        let encoded = serde_json::to_vec(&self.turns).expect("turns always serialize");
        hex(&Sha256::digest(encoded))
    }

    pub fn validate(&self, require_images: bool) -> Result<(), GatewayError> {
        self.validate_in(require_images, None)
    }

    /// As [`validate`](Self::validate), resolving relative image paths
    /// against `root` when given.
    pub fn validate_in(
        &self,
        require_images: bool,
        root: Option<&Path>,
    ) -> Result<(), GatewayError> {
        match self.turns.first() {
            Some(turn) if turn.role == Role::System => {}
            _ => {
                return Err(GatewayError::InvalidBundle(
                    "first turn must be the system turn".into(),
                ))
            }
        }
        if self.turns.iter().skip(1).any(|t| t.role == Role::System) {
            return Err(GatewayError::InvalidBundle(
                "more than one system turn".into(),
            ));
        }
        if require_images {
            for image in self.image_refs() {
                let path = match root {
                    Some(root) => root.join(image),
                    None => Path::new(image).to_path_buf(),
                };
                if !path.is_file() {
                    return Err(GatewayError::MissingImage(image.to_string()));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Raw backend output with its accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTurn {
    pub text: String,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
    pub latency: Duration,
    pub backend_id: String,
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, role: BackendRole, bundle: &PromptBundle)
        -> Result<ModelTurn, GatewayError>;
}

/// Token estimate: `ceil(bytes / 4)`. Monotone in length; not a tokenizer.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescribeMode {
    /// First look at the input image, category level only.
    Rough,
    /// Description of a tool-produced image.
    Detailed,
}

/// Asks the think backend for the next decision.
pub fn think(backend: &dyn Backend, bundle: &PromptBundle) -> Result<ModelTurn, GatewayError> {
    bundle.validate(true)?;
    backend.complete(BackendRole::Think, bundle)
}

/// Asks the vision backend to describe an image.
pub fn describe(
    backend: &dyn Backend,
    templates: &Templates,
    image: &str,
    mode: DescribeMode,
    context: &str,
    round: usize,
) -> Result<ModelTurn, GatewayError> {
    let bundle = describe_bundle(templates, image, mode, context, round);
    bundle.validate(true)?;
    backend.complete(BackendRole::Vision, &bundle)
}

pub fn describe_bundle(
    templates: &Templates,
    image: &str,
    mode: DescribeMode,
    context: &str,
    round: usize,
) -> PromptBundle {
    let template = match mode {
        DescribeMode::Rough => &templates.rough,
        DescribeMode::Detailed => &templates.detailed,
    };
    let mut bundle = PromptBundle::new(render(template, &[("user_context", context)]), round);
    bundle.push(Turn::new(Role::User, context).with_image(image));
    bundle
}

/// The think and vision backends of one run, plus the prompt texts.
#[derive(Clone)]
pub struct Gateway<'a> {
    pub think: &'a dyn Backend,
    pub vision: &'a dyn Backend,
    pub templates: &'a Templates,
    /// When false, image references are not checked on disk (trace replay).
    pub require_images: bool,
    /// Directory relative image paths resolve against; the process working
    /// directory when unset.
    pub image_root: Option<&'a Path>,
}

impl<'a> Gateway<'a> {
    pub fn new(think: &'a dyn Backend, vision: &'a dyn Backend, templates: &'a Templates) -> Self {
        Self {
            think,
            vision,
            templates,
            require_images: true,
            image_root: None,
        }
    }

    pub fn think(&self, bundle: &PromptBundle) -> Result<ModelTurn, GatewayError> {
        bundle.validate_in(self.require_images, self.image_root)?;
        self.think.complete(BackendRole::Think, bundle)
    }

    pub fn describe(
        &self,
        image: &str,
        mode: DescribeMode,
        context: &str,
        round: usize,
    ) -> Result<ModelTurn, GatewayError> {
        let bundle = describe_bundle(self.templates, image, mode, context, round);
        bundle.validate_in(self.require_images, self.image_root)?;
        self.vision.complete(BackendRole::Vision, &bundle)
    }
}

/// Turns a frame contributes to a prompt, in order.
///
/// Caption frames become the vision description as an assistant turn plus the
/// continue instruction; tool frames an assistant turn and the evidence as a
/// tool turn; feedback frames an assistant turn and the feedback as a user
/// turn. Think and terminal frames are a single assistant turn.
pub fn render_frame(frame: &ReasoningFrame, templates: &Templates, image: &str) -> Vec<Turn> {
    let assistant = Turn::new(Role::Assistant, frame.decision.clone());
    match frame.kind {
        FrameKind::Caption => vec![
            assistant,
            Turn::new(Role::User, continue_text(templates, image)),
        ],
        FrameKind::ToolCall => {
            let mut turns = vec![assistant];
            if let Some(evidence) = &frame.evidence {
                turns.push(Turn::new(Role::Tool, evidence.text.clone()));
            }
            turns
        }
        FrameKind::Feedback => vec![
            assistant,
            Turn::new(Role::User, frame.feedback.clone().unwrap_or_default()),
        ],
        FrameKind::Think | FrameKind::Terminal => vec![assistant],
    }
}

pub fn continue_text(templates: &Templates, image: &str) -> String {
    render(&templates.continue_prompt, &[("image_path", image)])
}

/// Estimated tokens a frame adds to any prompt it appears in.
pub fn frame_tokens(frame: &ReasoningFrame, templates: &Templates, image: &str) -> usize {
    render_frame(frame, templates, image)
        .iter()
        .map(|t| estimate_tokens(&t.content))
        .sum()
}

pub fn system_text(templates: &Templates, tools_xml: &str) -> String {
    render(
        &templates.system,
        &[("available_tools", tools_xml.trim_end())],
    )
}

/// System turn, the user's request with its image, then the top `k` frames.
pub fn assemble_context(
    stack: &ReasoningStack,
    k: usize,
    templates: &Templates,
    tools_xml: &str,
) -> PromptBundle {
    let mut bundle = PromptBundle::new(system_text(templates, tools_xml), stack.len());
    bundle.push(origin_turn(stack));
    for frame in stack.window(k) {
        for turn in render_frame(frame, templates, &stack.origin.image) {
            bundle.push(turn);
        }
    }
    bundle
}

pub fn origin_turn(stack: &ReasoningStack) -> Turn {
    Turn::new(Role::User, stack.origin.query.clone()).with_image(stack.origin.image.clone())
}
