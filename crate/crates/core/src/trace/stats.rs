use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::validate::assistant_call;
use super::TrajectoryRecord;
use crate::gateway::{estimate_tokens, Role};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_records: usize,
    /// Distinct origin images.
    pub n_images: usize,
    /// Step count to number of records with that count.
    pub steps_per_record: BTreeMap<usize, usize>,
    pub mean_steps: f64,
    pub total_tokens_est: usize,
    pub tool_call_counts: BTreeMap<String, usize>,
}

/// Steps of one record: assistant tool calls plus the terminal turn.
pub fn record_steps(record: &TrajectoryRecord) -> usize {
    record
        .messages
        .iter()
        .filter(|m| m.role == Role::Assistant)
        .filter(|m| matches!(assistant_call(m), Ok(Some(_))))
        .count()
        + 1
}

pub fn stats(records: &[TrajectoryRecord]) -> DatasetStats {
    let mut out = DatasetStats {
        n_records: records.len(),
        ..DatasetStats::default()
    };
    let mut images = BTreeSet::new();
    let mut step_sum = 0;
    for record in records {
        let steps = record_steps(record);
        step_sum += steps;
        *out.steps_per_record.entry(steps).or_default() += 1;
        if let Some(origin) = record.messages.iter().find(|m| m.role == Role::User) {
            images.extend(origin.images().map(String::from));
        }
        for message in &record.messages {
            out.total_tokens_est += estimate_tokens(&message.joined_text());
            if message.role == Role::Assistant {
                if let Ok(Some(call)) = assistant_call(message) {
                    *out.tool_call_counts.entry(call.tool_name).or_default() += 1;
                }
            }
        }
    }
    out.n_images = images.len();
    if !records.is_empty() {
        out.mean_steps = step_sum as f64 / records.len() as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Message;

    fn call(tool: &str) -> Message {
        Message::text(
            Role::Assistant,
            format!("<use_mcp_tool>\n<server_name>s</server_name>\n<tool_name>{tool}</tool_name>\n<arguments>\n{{}}\n</arguments>\n</use_mcp_tool>"),
        )
    }

    fn record(calls: usize) -> TrajectoryRecord {
        let mut messages = vec![Message::text(Role::System, "sys")];
        for i in 0..calls {
            messages.push(call(if i % 2 == 0 { "crop" } else { "detect" }));
            messages.push(Message::text(Role::Tool, "{}"));
        }
        messages.push(Message::text(Role::Assistant, "<end>"));
        TrajectoryRecord {
            id: calls.to_string(),
            messages,
        }
    }

    #[test]
    fn empty_dataset_is_all_zero() {
        assert_eq!(stats(&[]), DatasetStats::default());
    }

    #[test]
    fn known_step_counts() {
        let records: Vec<_> = [0, 1, 2, 3, 3, 4, 5, 5, 5, 6]
            .into_iter()
            .map(record)
            .collect();
        let s = stats(&records);
        assert_eq!(s.n_records, 10);
        let expected: BTreeMap<usize, usize> =
            [(1, 1), (2, 1), (3, 1), (4, 2), (5, 1), (6, 3), (7, 1)].into();
        assert_eq!(s.steps_per_record, expected);
        assert_eq!(s.mean_steps, 4.4);
        assert_eq!(s.tool_call_counts["crop"], 1 + 1 + 2 + 2 + 2 + 3 * 3 + 3);
        assert_eq!(s.tool_call_counts["detect"], 1 + 1 + 1 + 2 + 2 * 3 + 3);
    }
}
