use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Message, TrajectoryRecord};
use crate::agent::FORMAT_ERROR_MARKER;
use crate::codec::{parse_structured_output, parse_tool_call, strip_think, ToolCall};
use crate::gateway::Role;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Message index, absent for record-level problems.
    pub index: Option<usize>,
    pub rule: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub id: String,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn flag(&mut self, index: Option<usize>, rule: &str, message: impl Into<String>) {
        self.violations.push(Violation {
            index,
            rule: rule.into(),
            message: message.into(),
        });
    }
}

/// The tool call carried by an assistant message, if any.
pub(crate) fn assistant_call(
    message: &Message,
) -> Result<Option<ToolCall>, crate::codec::CodecError> {
    let (_, rest) = strip_think(&message.joined_text());
    parse_tool_call(&rest)
}

fn is_feedback(message: Option<&Message>) -> bool {
    message
        .is_some_and(|m| m.role == Role::User && m.joined_text().starts_with(FORMAT_ERROR_MARKER))
}

/// Collects every structural problem of a record. Never fails.
pub fn validate(record: &TrajectoryRecord) -> ValidationReport {
    let mut report = ValidationReport {
        id: record.id.clone(),
        violations: Vec::new(),
    };
    let messages = &record.messages;
    if messages.is_empty() {
        report.flag(None, "empty", "record has no messages");
        return report;
    }
    if messages[0].role != Role::System {
        report.flag(
            Some(0),
            "first_system",
            "first message must have role system",
        );
    }

    let mut declared: BTreeSet<String> = BTreeSet::new();
    let mut origin_seen = false;
    for (index, message) in messages.iter().enumerate() {
        for image in message.images() {
            if message.role == Role::User && !origin_seen {
                declared.insert(image.to_string());
            } else if !declared.contains(image) {
                report.flag(
                    Some(index),
                    "undeclared_image",
                    format!("image {image} was never declared"),
                );
            }
        }
        if message.role == Role::User {
            origin_seen = true;
        }

        match message.role {
            Role::Assistant => match assistant_call(message) {
                Err(err) if !is_feedback(messages.get(index + 1)) => {
                    report.flag(
                        Some(index),
                        "tool_call_parse",
                        format!("{}: {err}", err.kind()),
                    );
                }
                Ok(Some(_)) if messages.get(index + 1).map(|m| m.role) != Some(Role::Tool) => {
                    report.flag(
                        Some(index),
                        "call_without_result",
                        "tool call is not followed by a tool message",
                    );
                }
                _ => {}
            },
            Role::Tool => {
                let preceded = index
                    .checked_sub(1)
                    .map(|i| &messages[i])
                    .filter(|m| m.role == Role::Assistant)
                    .is_some_and(|m| matches!(assistant_call(m), Ok(Some(_))));
                if !preceded {
                    report.flag(
                        Some(index),
                        "tool_without_call",
                        "tool message must directly follow an assistant tool call",
                    );
                }
                match serde_json::from_str::<Value>(&message.joined_text()) {
                    Ok(body) => collect_paths(&body, &mut declared),
                    Err(err) => report.flag(
                        Some(index),
                        "tool_body_json",
                        format!("tool body is not JSON: {err}"),
                    ),
                }
            }
            Role::System if index > 0 => {
                report.flag(
                    Some(index),
                    "system_position",
                    "system message after the first position",
                );
            }
            _ => {}
        }
    }

    let last = messages.len() - 1;
    let terminal = messages[last].role == Role::Assistant
        && matches!(
            parse_structured_output(&messages[last].joined_text()),
            Ok(Some(_))
        );
    if !terminal {
        report.flag(
            Some(last),
            "terminal",
            "final message must be an assistant report with SOAP sections or <end>",
        );
    }
    report
}

/// Image paths a tool result declares: every string under a `*_path` key
/// and every image content item.
fn collect_paths(body: &Value, declared: &mut BTreeSet<String>) {
    match body {
        Value::Object(map) => {
            if map.get("type").and_then(Value::as_str) == Some("image") {
                if let Some(path) = map.get("path").and_then(Value::as_str) {
                    declared.insert(path.to_string());
                }
            }
            for (key, value) in map {
                if key.ends_with("_path") {
                    match value {
                        Value::String(path) => {
                            declared.insert(path.clone());
                        }
                        Value::Array(items) => declared
                            .extend(items.iter().filter_map(Value::as_str).map(String::from)),
                        _ => {}
                    }
                }
                collect_paths(value, declared);
            }
        }
        Value::Array(items) => items.iter().for_each(|v| collect_paths(v, declared)),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::ContentPart;

    const CALL: &str = "<think>x</think>\n<use_mcp_tool>\n<server_name>s</server_name>\n<tool_name>t</tool_name>\n<arguments>\n{\"image_path\": \"a.png\"}\n</arguments>\n</use_mcp_tool>";

    fn origin() -> Message {
        Message {
            role: Role::User,
            content: vec![
                ContentPart::Text { text: "q".into() },
                ContentPart::Image {
                    image: "a.png".into(),
                },
            ],
        }
    }

    fn record(messages: Vec<Message>) -> TrajectoryRecord {
        TrajectoryRecord {
            id: "r".into(),
            messages,
        }
    }

    fn rules(report: &ValidationReport) -> Vec<(Option<usize>, &str)> {
        report
            .violations
            .iter()
            .map(|v| (v.index, v.rule.as_str()))
            .collect()
    }

    #[test]
    fn well_formed_record_is_valid() {
        let r = record(vec![
            Message::text(Role::System, "sys"),
            origin(),
            Message::text(Role::Assistant, CALL),
            Message::text(Role::Tool, r#"{"result_image_path":"b.png"}"#),
            Message {
                role: Role::User,
                content: vec![ContentPart::Image {
                    image: "b.png".into(),
                }],
            },
            Message::text(Role::Assistant, "done <end>"),
        ]);
        assert!(validate(&r).is_valid(), "{:?}", validate(&r));
    }

    #[test]
    fn tool_before_any_call_is_flagged() {
        let r = record(vec![
            Message::text(Role::System, "sys"),
            origin(),
            Message::text(Role::Tool, "{}"),
            Message::text(Role::Assistant, "<end>"),
        ]);
        assert_eq!(rules(&validate(&r)), vec![(Some(2), "tool_without_call")]);
    }

    #[test]
    fn malformed_block_is_flagged_unless_fed_back() {
        let bad = "<use_mcp_tool><server_name>s</server_name>";
        let r = record(vec![
            Message::text(Role::System, "sys"),
            origin(),
            Message::text(Role::Assistant, bad),
            Message::text(Role::Assistant, "<end>"),
        ]);
        let report = validate(&r);
        assert_eq!(rules(&report), vec![(Some(2), "tool_call_parse")]);
        assert!(report.violations[0].message.starts_with("MalformedBlock"));

        let r = record(vec![
            Message::text(Role::System, "sys"),
            origin(),
            Message::text(Role::Assistant, bad),
            Message::text(Role::User, "[format error] MalformedBlock"),
            Message::text(Role::Assistant, "<end>"),
        ]);
        assert!(validate(&r).is_valid());
    }

    #[test]
    fn other_rules() {
        let r = record(vec![
            Message::text(Role::User, "hi"),
            Message::text(Role::Assistant, CALL),
            Message::text(Role::Tool, "not json"),
            Message {
                role: Role::Assistant,
                content: vec![ContentPart::Image {
                    image: "zzz.png".into(),
                }],
            },
        ]);
        assert_eq!(
            rules(&validate(&r)),
            vec![
                (Some(0), "first_system"),
                (Some(2), "tool_body_json"),
                (Some(3), "undeclared_image"),
                (Some(3), "terminal"),
            ]
        );
        assert_eq!(rules(&validate(&record(vec![]))), vec![(None, "empty")]);
    }
}
