use std::collections::BTreeMap;

use serde_json::{json, Value};

use super::validate::assistant_call;
use super::{serialize_stack, validate, RunMeta, TraceError, TrajectoryRecord};
use crate::agent::{run, RunConfig, RunReport};
use crate::codec::{ToolCategory, ToolDescriptor};
use crate::gateway::{BackendRole, Gateway, Role, ScriptedBackend, Templates};
use crate::stack::Origin;
use crate::transport::{ScriptedResult, ScriptedTools};

/// Everything needed to run a record again without models or servers.
#[derive(Debug)]
pub struct ReplayBundle {
    pub think: ScriptedBackend,
    pub vision: ScriptedBackend,
    pub tools: ScriptedTools,
    pub origin: Origin,
    pub meta: RunMeta,
    /// Assistant turns after the caption, the number of frames to replay.
    pub steps: usize,
}

impl ReplayBundle {
    /// Templates that reproduce the record's fixed texts.
    pub fn templates(&self, base: &Templates) -> Templates {
        Templates {
            system: self.meta.system_text.clone(),
            continue_prompt: self.meta.continue_text.clone(),
            ..base.clone()
        }
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            max_rounds: self.steps + 2,
            retry_limit: self.steps + 1,
            state_search: false,
            ..RunConfig::default()
        }
    }

    /// Runs the agent against the scripted backends and tools.
    pub fn run(&self, base: &Templates) -> Result<RunReport, TraceError> {
        let templates = self.templates(base);
        let mut gateway = Gateway::new(&self.think, &self.vision, &templates);
        gateway.require_images = false;
        Ok(run(
            &self.origin.image,
            &self.origin.query,
            &self.tools,
            &gateway,
            &self.run_config(),
        )?)
    }
}

fn invalid(message: impl Into<String>) -> TraceError {
    TraceError::InvalidRecord(message.into())
}

/// Splits a record into scripted backends and recorded tool results.
///
/// The record must validate and open with system, user request, assistant
/// caption and user continue prompt. Tool messages the agent produced
/// itself (duplicate-call refusals) are not scripted, since the replayed
/// agent produces them again.
pub fn replay(record: &TrajectoryRecord) -> Result<ReplayBundle, TraceError> {
    let report = validate(record);
    if let Some(first) = report.violations.first() {
        return Err(invalid(format!(
            "{} violation(s), first: {} at {:?}: {}",
            report.violations.len(),
            first.rule,
            first.index,
            first.message
        )));
    }
    let m = &record.messages;
    let shape = [Role::System, Role::User, Role::Assistant, Role::User];
    if m.len() < 5 || m.iter().zip(shape).any(|(msg, role)| msg.role != role) {
        return Err(invalid(
            "record must open with system, user, assistant caption and user continue messages",
        ));
    }
    let image = m[1]
        .images()
        .next()
        .ok_or_else(|| invalid("the request message has no image"))?
        .to_string();
    let query = m[1].joined_text();

    let mut think = Vec::new();
    let mut results = Vec::new();
    let mut schemas: BTreeMap<(String, String), BTreeMap<String, ()>> = BTreeMap::new();
    let mut last_call = None;
    for message in &m[4..] {
        match message.role {
            Role::Assistant => {
                think.push(message.joined_text());
                last_call = assistant_call(message).ok().flatten();
                if let Some(call) = &last_call {
                    let keys = schemas
                        .entry((call.server_name.clone(), call.tool_name.clone()))
                        .or_default();
                    keys.extend(call.arguments.keys().map(|k| (k.clone(), ())));
                }
            }
            Role::Tool => {
                let call = last_call
                    .take()
                    .ok_or_else(|| invalid("tool message without a call"))?;
                let payload: Value = serde_json::from_str(&message.joined_text())
                    .map_err(|err| invalid(format!("tool body: {err}")))?;
                if payload.get("origin").and_then(Value::as_str) == Some("agent") {
                    continue;
                }
                results.push(ScriptedResult {
                    server_name: call.server_name,
                    tool_name: call.tool_name,
                    payload,
                });
            }
            Role::User | Role::System => {}
        }
    }

    let tools = schemas
        .into_iter()
        .map(|((server, tool), keys)| {
            let properties: serde_json::Map<String, Value> =
                keys.into_keys().map(|k| (k, json!({}))).collect();
            let category = if tool.starts_with("image") {
                ToolCategory::Vision
            } else {
                ToolCategory::Text
            };
            ToolDescriptor::new(
                server,
                tool.clone(),
                format!("Recorded tool {tool}."),
                json!({"type": "object", "properties": properties, "required": []}),
                category,
            )
            .map_err(|err| invalid(err.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(ReplayBundle {
        steps: think.len(),
        think: ScriptedBackend::sequential(
            format!("replay:{}", record.id),
            BackendRole::Think,
            think,
        ),
        vision: ScriptedBackend::sequential(
            format!("replay:{}", record.id),
            BackendRole::Vision,
            [m[2].joined_text()],
        ),
        tools: ScriptedTools::new(tools, results),
        origin: Origin { query, image },
        meta: RunMeta {
            id: record.id.clone(),
            system_text: m[0].joined_text(),
            continue_text: m[3].joined_text(),
        },
    })
}

/// Replays a record and serializes the resulting stack.
pub fn replay_record(
    record: &TrajectoryRecord,
    base: &Templates,
) -> Result<TrajectoryRecord, TraceError> {
    let bundle = replay(record)?;
    let report = bundle.run(base)?;
    serialize_stack(&report.stack, &bundle.meta)
}
