use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ToolHost, ToolResult, TransportError};
use crate::codec::{ToolCall, ToolDescriptor};

/// A recorded tool result, returned when the matching call comes in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedResult {
    pub server_name: String,
    pub tool_name: String,
    pub payload: Value,
}

/// Tool host that plays back recorded results in order.
///
/// A call that does not match the next recorded result, or arrives after the
/// queue is drained, gets an error result and leaves the queue untouched.
#[derive(Debug, Default)]
pub struct ScriptedTools {
    tools: Vec<ToolDescriptor>,
    queue: Mutex<VecDeque<ScriptedResult>>,
}

impl ScriptedTools {
    pub fn new(tools: Vec<ToolDescriptor>, results: Vec<ScriptedResult>) -> Self {
        Self {
            tools,
            queue: Mutex::new(results.into()),
        }
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }
}

impl ToolHost for ScriptedTools {
    fn tools(&self) -> Result<Vec<ToolDescriptor>, TransportError> {
        Ok(self.tools.clone())
    }

    fn call(&self, call: &ToolCall) -> Result<ToolResult, TransportError> {
        let mut queue = self.queue.lock().unwrap();
        let Some(next) = queue.front() else {
            return Ok(ToolResult::error(format!(
                "no recorded result left for {}.{}",
                call.server_name, call.tool_name
            )));
        };
        if next.server_name != call.server_name || next.tool_name != call.tool_name {
            return Ok(ToolResult::error(format!(
                "recorded result is for {}.{}, call was {}.{}",
                next.server_name, next.tool_name, call.server_name, call.tool_name
            )));
        }
        let next = queue.pop_front().expect("front checked above");
        Ok(ToolResult::from_payload(next.payload, Duration::ZERO))
    }
}
