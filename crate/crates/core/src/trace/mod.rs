//! Trajectory records: multi-role message sequences with XML tool calls and
//! a terminal report, as used for reasoning-trace datasets.

mod metrics;
mod replay;
mod stats;
pub mod synth;
mod validate;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agent::{AgentError, RunReport};
use crate::gateway::{continue_text, Role, Templates};
use crate::stack::{FrameKind, ReasoningStack};

pub use metrics::{bleu4, tool_accuracy};
pub use replay::{replay, replay_record, ReplayBundle};
pub use stats::{stats, DatasetStats};
pub use validate::{validate, ValidationReport, Violation};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("IncompleteRun: the stack does not end in a terminal frame")]
    IncompleteRun,
    #[error("InvalidRecord: {0}")]
    InvalidRecord(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Agent(#[from] AgentError),
}

/// One typed part of a message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ContentPart {
    /// Structured text bodies are accepted on input and kept as compact JSON.
    Text {
        #[serde(deserialize_with = "text_or_json")]
        text: String,
    },
    Image {
        image: String,
    },
}

fn text_or_json<'de, D: Deserializer<'de>>(deserializer: D) -> Result<String, D::Error> {
    Ok(match Value::deserialize(deserializer)? {
        Value::String(text) => text,
        other => other.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: Vec<ContentPart>,
}

impl Message {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            content: vec![ContentPart::Text { text: text.into() }],
        }
    }

    /// Text parts joined by newlines.
    pub fn joined_text(&self) -> String {
        self.content
            .iter()
            .filter_map(|part| match part {
                ContentPart::Text { text } => Some(text.as_str()),
                ContentPart::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn images(&self) -> impl Iterator<Item = &str> {
        self.content.iter().filter_map(|part| match part {
            ContentPart::Image { image } => Some(image.as_str()),
            ContentPart::Text { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: String,
    pub messages: Vec<Message>,
}

impl TrajectoryRecord {
    /// Pretty JSON, the form records are stored in.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("records always serialize")
    }
}

/// What a record needs beyond the stack itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunMeta {
    pub id: String,
    pub system_text: String,
    pub continue_text: String,
}

impl RunMeta {
    pub fn from_report(id: impl Into<String>, report: &RunReport, templates: &Templates) -> Self {
        Self {
            id: id.into(),
            system_text: report.system_text.clone(),
            continue_text: continue_text(templates, &report.stack.origin.image),
        }
    }
}

/// Converts a completed stack to a record.
///
/// Tool messages carry the result payload as compact JSON. Feedback frames
/// become the rejected reply followed by the feedback as a user message.
pub fn serialize_stack(
    stack: &ReasoningStack,
    meta: &RunMeta,
) -> Result<TrajectoryRecord, TraceError> {
    if stack.top().map(|f| f.kind) != Some(FrameKind::Terminal) {
        return Err(TraceError::IncompleteRun);
    }
    let mut messages = vec![
        Message::text(Role::System, meta.system_text.clone()),
        Message {
            role: Role::User,
            content: vec![
                ContentPart::Text {
                    text: stack.origin.query.clone(),
                },
                ContentPart::Image {
                    image: stack.origin.image.clone(),
                },
            ],
        },
    ];
    for frame in stack.frames() {
        messages.push(Message::text(Role::Assistant, frame.decision.clone()));
        match frame.kind {
            FrameKind::Caption => {
                messages.push(Message::text(Role::User, meta.continue_text.clone()))
            }
            FrameKind::ToolCall => {
                let payload = frame
                    .evidence
                    .as_ref()
                    .map(|e| e.payload.to_string())
                    .ok_or_else(|| {
                        TraceError::InvalidRecord(format!("frame {} has no evidence", frame.index))
                    })?;
                messages.push(Message::text(Role::Tool, payload));
            }
            FrameKind::Feedback => messages.push(Message::text(
                Role::User,
                frame.feedback.clone().unwrap_or_default(),
            )),
            FrameKind::Think | FrameKind::Terminal => {}
        }
    }
    Ok(TrajectoryRecord {
        id: meta.id.clone(),
        messages,
    })
}

/// Reads a dataset: a JSON array of records, or one record per line.
pub fn load_dataset(path: &Path) -> Result<Vec<TrajectoryRecord>, TraceError> {
    let text = std::fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&text).map_err(|message| TraceError::Parse {
        path: path.to_path_buf(),
        message,
    })
}

pub fn parse_dataset(text: &str) -> Result<Vec<TrajectoryRecord>, String> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).map_err(|e| e.to_string());
    }
    trimmed
        .lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(n, line)| serde_json::from_str(line).map_err(|e| format!("line {}: {e}", n + 1)))
        .collect()
}

/// Writes records as a pretty JSON array.
pub fn save_dataset(path: &Path, records: &[TrajectoryRecord]) -> Result<(), TraceError> {
    let mut text = serde_json::to_string_pretty(records).expect("records always serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;
    use crate::codec::{OutputKind, StructuredOutput, ToolCall};
    use crate::stack::{Evidence, Origin, ReasoningFrame};

    pub(crate) fn meta() -> RunMeta {
        RunMeta {
            id: "r1".into(),
            system_text: "system".into(),
            continue_text: "continue".into(),
        }
    }

    fn end() -> StructuredOutput {
        StructuredOutput {
            kind: OutputKind::EndToken,
            sections: None,
            answer: String::new(),
        }
    }

    fn stack() -> ReasoningStack {
        let mut stack = ReasoningStack::new(Origin {
            query: "q".into(),
            image: "a.png".into(),
        });
        stack.push(ReasoningFrame::caption(0, "caption")).unwrap();
        let payload = json!({"is_error": false, "content": [{"type": "text", "text": "ok"}]});
        let evidence = Evidence {
            text: payload.to_string(),
            payload,
            is_error: false,
            files: vec![],
            description: None,
            description_source: None,
        };
        let call = ToolCall::new("s", "t", serde_json::Map::new());
        stack
            .push(ReasoningFrame::tool_step(
                1,
                "<use_mcp_tool>...",
                call,
                evidence,
            ))
            .unwrap();
        stack
    }

    #[test]
    fn incomplete_stack_is_rejected() {
        assert!(matches!(
            serialize_stack(&stack(), &meta()),
            Err(TraceError::IncompleteRun)
        ));
    }

    #[test]
    fn roles_follow_the_frames() {
        let mut stack = stack();
        stack
            .push(ReasoningFrame::terminal(2, "<end>", end()))
            .unwrap();
        let record = serialize_stack(&stack, &meta()).unwrap();
        let roles: Vec<Role> = record.messages.iter().map(|m| m.role).collect();
        use Role::*;
        assert_eq!(
            roles,
            vec![System, User, Assistant, User, Assistant, Tool, Assistant]
        );
        assert_eq!(
            record.messages[1].images().collect::<Vec<_>>(),
            vec!["a.png"]
        );
        assert_eq!(
            record.messages[5].joined_text(),
            r#"{"is_error":false,"content":[{"type":"text","text":"ok"}]}"#
        );
    }

    #[test]
    fn object_text_is_read_as_compact_json() {
        let record: TrajectoryRecord = serde_json::from_value(json!({
            "id": "x",
            "messages": [{"role": "tool", "content": [{"type": "text", "text": {"b": 1, "a": [2]}}]}]
        }))
        .unwrap();
        assert_eq!(record.messages[0].joined_text(), r#"{"b":1,"a":[2]}"#);
    }

    #[test]
    fn dataset_accepts_array_and_lines() {
        let record = TrajectoryRecord {
            id: "x".into(),
            messages: vec![Message::text(Role::System, "s")],
        };
        let array = serde_json::to_string(&vec![record.clone(), record.clone()]).unwrap();
        let lines = format!(
            "{}\n\n{}\n",
            serde_json::to_string(&record).unwrap(),
            serde_json::to_string(&record).unwrap()
        );
        assert_eq!(parse_dataset(&array).unwrap().len(), 2);
        assert_eq!(parse_dataset(&lines).unwrap().len(), 2);
        assert!(parse_dataset("{oops").is_err());
    }

    #[test]
    fn dataset_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.json");
        let records = vec![TrajectoryRecord {
            id: "x".into(),
            messages: vec![Message::text(Role::System, "s")],
        }];
        save_dataset(&path, &records).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), records);
        assert!(matches!(
            load_dataset(&dir.path().join("none.json")),
            Err(TraceError::Io { .. })
        ));
    }
}
