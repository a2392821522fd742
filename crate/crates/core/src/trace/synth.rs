//! Seeded synthetic runs: scripted model replies over a small in-process
//! desk, used to generate demo trajectories.

use std::ops::RangeInclusive;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Map, Value};

use super::{serialize_stack, RunMeta, TraceError, TrajectoryRecord};
use crate::agent::{run, RunConfig, RunReport};
use crate::codec::{render_tool_call, ToolCall, ToolCategory};
use crate::gateway::{BackendRole, Gateway, ScriptedBackend, Templates};
use crate::transport::wire::WireTool;
use crate::transport::{error_payload, InProcessHost, ToolService};

pub const SYNTH_SERVER: &str = "synth_desk";
pub const SYNTH_IMAGE: &str = "scene.png";

/// Tools of the synthetic desk. Paths starting with `missing` fail.
#[derive(Debug, Default)]
pub struct SynthDesk;

fn schema(keys: &[&str]) -> Value {
    let properties: Map<String, Value> = keys
        .iter()
        .map(|k| (k.to_string(), json!({"type": "string"})))
        .collect();
    json!({"type": "object", "properties": properties, "required": keys})
}

impl ToolService for SynthDesk {
    fn tools(&self) -> Vec<WireTool> {
        let tool = |name: &str, description: &str, keys: &[&str], category| WireTool {
            name: name.into(),
            description: description.into(),
            input_schema: schema(keys),
            category,
        };
        vec![
            tool(
                "image_crop",
                "Crop a region of the image.",
                &["image_path", "region"],
                ToolCategory::Vision,
            ),
            tool(
                "image_detection",
                "Detect objects matching a prompt.",
                &["image_path", "txt_prompt"],
                ToolCategory::Vision,
            ),
            tool(
                "web_search",
                "Search the web for keywords.",
                &["keywords"],
                ToolCategory::Text,
            ),
        ]
    }

    fn call(&self, tool_name: &str, arguments: &Map<String, Value>) -> Value {
        let arg = |key: &str| {
            arguments
                .get(key)
                .and_then(Value::as_str)
                .unwrap_or_default()
        };
        let path = arg("image_path");
        if path.starts_with("missing") {
            return error_payload(format!(
                "Error: [Errno 2] No such file or directory: '{path}'"
            ));
        }
        match tool_name {
            "image_crop" => {
                let region = arg("region");
                json!({"is_error": false, "content": [
                    {"type": "image", "path": format!("crop_{region}.png")},
                    {"type": "text", "text": format!("cropped region {region}")},
                ]})
            }
            "image_detection" => json!({
                "is_error": false,
                "content": [{"type": "text", "text": format!("1 box for '{}'", arg("txt_prompt"))}],
                "boxes": [format!("{} 0.5 10 10 60 60", arg("txt_prompt"))],
            }),
            "web_search" => json!({"is_error": false, "content": [
                {"type": "text", "text": format!("3 results for '{}'", arg("keywords"))}]}),
            other => error_payload(format!("Error: unknown tool '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthStep {
    /// A call that succeeds, or fails when `fails` is set.
    Call { tool: String, fails: bool },
    /// A reply with a broken tool block.
    Malformed,
    /// A reply with neither a call nor a report.
    Think,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPlan {
    pub seed: u64,
    pub steps: Vec<SynthStep>,
    pub soap: bool,
}

impl SynthPlan {
    /// A plan with a call count drawn from `calls`. Format errors and think
    /// replies are interleaved but never two think replies in a row.
    pub fn random(seed: u64, calls: RangeInclusive<usize>) -> Self {
        let mut rng = StdRng::seed_from_u64(seed);
        let tools = ["image_crop", "image_detection", "web_search"];
        let n = rng.gen_range(calls);
        let mut steps = Vec::new();
        for _ in 0..n {
            if rng.gen_bool(0.15) {
                steps.push(SynthStep::Malformed);
            }
            if rng.gen_bool(0.15) && steps.last() != Some(&SynthStep::Think) {
                steps.push(SynthStep::Think);
            }
            steps.push(SynthStep::Call {
                tool: tools[rng.gen_range(0..tools.len())].to_string(),
                fails: rng.gen_bool(0.2),
            });
        }
        Self {
            seed,
            steps,
            soap: rng.gen_bool(0.5),
        }
    }

    pub fn calls(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s, SynthStep::Call { .. }))
            .count()
    }

    fn replies(&self) -> (Vec<String>, Vec<String>) {
        let mut think = Vec::new();
        let mut vision = vec![format!("A harbour scene, seed {}.", self.seed)];
        for (i, step) in self.steps.iter().enumerate() {
            match step {
                SynthStep::Call { tool, fails } => {
                    let path = if *fails { format!("missing_{i}.png") } else { SYNTH_IMAGE.to_string() };
                    let mut args = Map::new();
                    match tool.as_str() {
                        "web_search" => {
                            args.insert("keywords".into(), json!(format!("hull marking {i}")));
                        }
                        "image_detection" => {
                            args.insert("image_path".into(), json!(path));
                            args.insert("txt_prompt".into(), json!(format!("ship {i}")));
                        }
                        _ => {
                            args.insert("image_path".into(), json!(path));
                            args.insert("region".into(), json!(format!("r{i}")));
                            if !fails {
                                vision.push(format!("Close view of region r{i}."));
                            }
                        }
                    }
                    let call = ToolCall::new(SYNTH_SERVER, tool.as_str(), args);
                    think.push(format!(
                        "<think>\nStep {i}: use {tool} next.\n</think>\n{}",
                        render_tool_call(&call)
                    ));
                }
                SynthStep::Malformed => think.push(format!(
                    "<think>\nStep {i}.\n</think>\n<use_mcp_tool>\n<server_name>{SYNTH_SERVER}</server_name>\n</use_mcp_tool>"
                )),
                SynthStep::Think => think.push(format!("Step {i}: weighing the evidence so far.")),
            }
        }
        think.push(if self.soap {
            format!(
                "<S>Seed {} scene.</S><O>{} calls made.</O><A>A vessel in port.</A><P>No further action.</P>",
                self.seed,
                self.calls()
            )
        } else {
            format!("A vessel in port after {} calls. <end>", self.calls())
        });
        (think, vision)
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            max_rounds: self.steps.len() + 3,
            retry_limit: self.steps.len() + 1,
            ..RunConfig::default()
        }
    }

    /// Runs the plan and serializes the finished stack.
    pub fn execute(
        &self,
        templates: &Templates,
    ) -> Result<(RunReport, TrajectoryRecord), TraceError> {
        let (think, vision) = self.replies();
        let think = ScriptedBackend::sequential("synth-think", BackendRole::Think, think);
        let vision = ScriptedBackend::sequential("synth-vision", BackendRole::Vision, vision);
        let host = InProcessHost::new().with_server(SYNTH_SERVER, Arc::new(SynthDesk));
        let mut gateway = Gateway::new(&think, &vision, templates);
        gateway.require_images = false;
        let query = format!("What is in the scene? (case {})", self.seed);
        let report = run(SYNTH_IMAGE, &query, &host, &gateway, &self.run_config())?;
        let meta = RunMeta::from_report(format!("synth-{:06}", self.seed), &report, templates);
        let record = serialize_stack(&report.stack, &meta)?;
        Ok((report, record))
    }
}

/// `count` demo records from consecutive seeds.
pub fn demo_set(
    first_seed: u64,
    count: usize,
    calls: RangeInclusive<usize>,
    templates: &Templates,
) -> Result<Vec<TrajectoryRecord>, TraceError> {
    (first_seed..first_seed + count as u64)
        .map(|seed| {
            SynthPlan::random(seed, calls.clone())
                .execute(templates)
                .map(|(_, r)| r)
        })
        .collect()
}
