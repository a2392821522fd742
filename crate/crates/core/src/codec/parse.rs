use std::ops::Range;

use serde_json::Value;

use super::{is_identifier, CodecError, OutputKind, SoapSections, StructuredOutput, ToolCall};

const BLOCK_OPEN: &str = "<use_mcp_tool>";
const BLOCK_CLOSE: &str = "</use_mcp_tool>";
const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";

/// Terminal token of the dataset prompt variant.
pub const END_TOKEN: &str = "<end>";

/// Extracts the single `<use_mcp_tool>` block from model output.
///
/// Returns `Ok(None)` when the text holds no block at all. A second block is
/// an error rather than being ignored.
pub fn parse_tool_call(text: &str) -> Result<Option<ToolCall>, CodecError> {
    let blocks = scan_blocks(text)?;
    match blocks.as_slice() {
        [] => Ok(None),
        [block] => parse_block(text, block.clone()).map(Some),
        _ => Err(CodecError::MultipleBlocks {
            count: blocks.len(),
        }),
    }
}

fn scan_blocks(text: &str) -> Result<Vec<Range<usize>>, CodecError> {
    let mut blocks = Vec::new();
    let mut cursor = 0;
    while let Some(found) = text[cursor..].find(BLOCK_OPEN) {
        let open = cursor + found;
        let body_start = open + BLOCK_OPEN.len();
        if let Some(stray) = text[cursor..open].find(BLOCK_CLOSE) {
            let at = cursor + stray;
            return Err(CodecError::MalformedBlock {
                span: at..at + BLOCK_CLOSE.len(),
                reason: "closing </use_mcp_tool> without an opening tag".into(),
            });
        }
        let close = text[body_start..].find(BLOCK_CLOSE).map(|i| body_start + i);
        let next_open = text[body_start..].find(BLOCK_OPEN).map(|i| body_start + i);
        match (close, next_open) {
            (Some(close), next) if next.is_none_or(|n| close < n) => {
                let end = close + BLOCK_CLOSE.len();
                blocks.push(open..end);
                cursor = end;
            }
            (_, next) => {
                return Err(CodecError::MalformedBlock {
                    span: open..next.unwrap_or(text.len()),
                    reason: "unclosed <use_mcp_tool>".into(),
                });
            }
        }
    }
    if let Some(stray) = text[cursor..].find(BLOCK_CLOSE) {
        let at = cursor + stray;
        return Err(CodecError::MalformedBlock {
            span: at..at + BLOCK_CLOSE.len(),
            reason: "closing </use_mcp_tool> without an opening tag".into(),
        });
    }
    Ok(blocks)
}

fn parse_block(text: &str, span: Range<usize>) -> Result<ToolCall, CodecError> {
    let body_start = span.start + BLOCK_OPEN.len();
    let body_end = span.end - BLOCK_CLOSE.len();
    let body = &text[body_start..body_end];

    let child = |name: &str| -> Result<Range<usize>, CodecError> {
        let open = format!("<{name}>");
        let close = format!("</{name}>");
        let malformed = |reason: String| CodecError::MalformedBlock {
            span: span.clone(),
            reason,
        };
        match (body.matches(&open).count(), body.matches(&close).count()) {
            (0, _) => return Err(malformed(format!("missing <{name}>"))),
            (1, 1) => {}
            (1, 0) => return Err(malformed(format!("unclosed <{name}>"))),
            _ => return Err(malformed(format!("<{name}> must appear exactly once"))),
        }
        let start = body.find(&open).unwrap() + open.len();
        let end = body.find(&close).unwrap();
        if end < start {
            return Err(malformed(format!("</{name}> precedes <{name}>")));
        }
        Ok(body_start + start..body_start + end)
    };

    let server = child("server_name")?;
    let tool = child("tool_name")?;
    let args = child("arguments")?;

    let name_field = |range: Range<usize>, field: &str| -> Result<String, CodecError> {
        let value = text[range].trim();
        if is_identifier(value) {
            Ok(value.to_string())
        } else {
            Err(CodecError::MalformedBlock {
                span: span.clone(),
                reason: format!("{field} {value:?} is not a plain identifier"),
            })
        }
    };
    let server_name = name_field(server, "server_name")?;
    let tool_name = name_field(tool, "tool_name")?;

    let raw_args = text[args.clone()].trim();
    let arguments = match serde_json::from_str::<Value>(raw_args) {
        Ok(Value::Object(map)) => map,
        Ok(other) => {
            return Err(CodecError::BadArguments {
                span: args,
                reason: format!("expected a JSON object, found {}", json_kind(&other)),
            })
        }
        Err(err) => {
            return Err(CodecError::BadArguments {
                span: args,
                reason: err.to_string(),
            })
        }
    };

    Ok(ToolCall {
        server_name,
        tool_name,
        arguments,
        raw_span: Some(span),
    })
}

fn json_kind(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

/// Renders a call in the canonical block shape.
///
/// `<` and `>` inside the JSON body are written as `\u003c` / `\u003e` so an
/// argument value can never terminate the block early.
pub fn render_tool_call(call: &ToolCall) -> String {
    let json = serde_json::to_string_pretty(&Value::Object(call.arguments.clone()))
        .expect("a JSON map always serializes");
    let json = json.replace('<', "\\u003c").replace('>', "\\u003e");
    format!(
        "<use_mcp_tool>\n<server_name>{}</server_name>\n<tool_name>{}</tool_name>\n<arguments>\n{}\n</arguments>\n</use_mcp_tool>",
        call.server_name, call.tool_name, json
    )
}

/// Splits the first `<think>` block from the text that follows it.
///
/// Without a think block the whole text is the remainder. An unclosed block
/// consumes the rest of the text.
pub fn strip_think(text: &str) -> (String, String) {
    let Some(open) = text.find(THINK_OPEN) else {
        return (String::new(), text.to_string());
    };
    let body_start = open + THINK_OPEN.len();
    match text[body_start..].find(THINK_CLOSE) {
        Some(close) => {
            let close = body_start + close;
            (
                text[body_start..close].trim().to_string(),
                text[close + THINK_CLOSE.len()..].trim_start().to_string(),
            )
        }
        None => (text[body_start..].trim().to_string(), String::new()),
    }
}

/// Detects a terminal output: four SOAP sections (in any order) or `<end>`.
///
/// SOAP wins when both are present. One to three sections, or a present but
/// empty section, is a `PartialSoap` error.
pub fn parse_structured_output(text: &str) -> Result<Option<StructuredOutput>, CodecError> {
    let sections: Vec<(char, Option<String>)> = ['S', 'O', 'A', 'P']
        .into_iter()
        .map(|tag| (tag, section(text, tag)))
        .collect();
    let present = sections.iter().filter(|(_, body)| body.is_some()).count();
    let missing: Vec<char> = sections
        .iter()
        .filter(|(_, body)| body.as_deref().is_none_or(str::is_empty))
        .map(|(tag, _)| *tag)
        .collect();

    if present > 0 {
        if !missing.is_empty() {
            return Err(CodecError::PartialSoap { missing });
        }
        let mut bodies = sections.into_iter().map(|(_, body)| body.unwrap());
        let soap = SoapSections {
            subject: bodies.next().unwrap(),
            objective: bodies.next().unwrap(),
            assessment: bodies.next().unwrap(),
            plan: bodies.next().unwrap(),
        };
        return Ok(Some(StructuredOutput {
            kind: OutputKind::Soap,
            sections: Some(soap),
            answer: String::new(),
        }));
    }

    if let Some(at) = text.find(END_TOKEN) {
        let before = &text[..at];
        let answer = if before.contains(THINK_OPEN) {
            strip_think(before).1
        } else {
            before.to_string()
        };
        return Ok(Some(StructuredOutput {
            kind: OutputKind::EndToken,
            sections: None,
            answer: answer.trim().to_string(),
        }));
    }
    Ok(None)
}

fn section(text: &str, tag: char) -> Option<String> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)? + open.len();
    let end = text[start..].find(&close)? + start;
    Some(text[start..end].trim().to_string())
}
