//! Synthetic scenario for comparing the windowed loop with the full-history
//! baseline. Every frame costs exactly `frame_tokens` estimated tokens, so
//! the expected per-round context has a closed form.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{
    account, run, run_plan_replan_baseline, AgentError, ComparisonTable, RunConfig, RunReport,
};
use crate::codec::{
    generate_tool_xml, render_tool_call, ToolCall, ToolCategory, ToolDescriptor, END_TOKEN,
};
use crate::gateway::{
    continue_text, estimate_tokens, render, BackendRole, Gateway, ScriptedBackend, Templates,
};
use crate::transport::wire::WireTool;
use crate::transport::{InProcessHost, ToolHost, ToolService};

pub const BENCH_SERVER: &str = "bench_server";

const BENCH_IMAGE: &str = "bench_scene.png";
const BENCH_QUERY: &str = "Survey the scene and report what the probes find.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Think calls in the run; all but the last call a tool.
    pub rounds: usize,
    /// Number of probe tools.
    pub tools: usize,
    /// Estimated tokens per frame.
    pub frame_tokens: usize,
    pub k: usize,
    /// Modelled think latency per 1000 prompt tokens.
    pub ms_per_1k_prompt_tokens: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            tools: 3,
            frame_tokens: 100,
            k: crate::stack::DEFAULT_WINDOW,
            ms_per_1k_prompt_tokens: 50.0,
        }
    }
}

/// Probe tools that answer every call with the same payload.
#[derive(Debug, Clone)]
pub struct ProbeDesk {
    pub count: usize,
}

impl ProbeDesk {
    pub fn payload() -> Value {
        json!({"is_error": false, "content": [{"type": "text", "text": "probe ok"}]})
    }

    pub fn descriptors(&self) -> Vec<ToolDescriptor> {
        self.tools()
            .into_iter()
            .map(|t| {
                t.into_descriptor(BENCH_SERVER)
                    .expect("probe descriptors are valid")
            })
            .collect()
    }
}

impl ToolService for ProbeDesk {
    fn tools(&self) -> Vec<WireTool> {
        (0..self.count)
            .map(|i| WireTool {
                name: format!("probe_{i}"),
                description: format!("Synthetic probe number {i}."),
                input_schema: json!({
                    "type": "object",
                    "properties": {"step": {"type": "integer"}},
                    "required": ["step"]
                }),
                category: ToolCategory::Text,
            })
            .collect()
    }

    fn call(&self, _tool_name: &str, _arguments: &Map<String, Value>) -> Value {
        Self::payload()
    }
}

/// Scripted inputs of one bench run.
#[derive(Debug, Clone)]
pub struct BenchScenario {
    pub config: BenchConfig,
    pub query: String,
    pub image: String,
    pub caption: String,
    pub decisions: Vec<String>,
}

fn padded(prefix: &str, suffix: &str, bytes: usize) -> Option<String> {
    let fill = bytes.checked_sub(prefix.len() + suffix.len())?;
    Some(format!("{prefix}{}{suffix}", ".".repeat(fill)))
}

impl BenchScenario {
    pub fn new(config: BenchConfig, templates: &Templates) -> Result<Self, AgentError> {
        if config.rounds == 0 || config.tools == 0 || config.k == 0 {
            return Err(AgentError::Config(
                "bench rounds, tools and k must be at least 1".into(),
            ));
        }
        let too_small =
            || AgentError::Config(format!("frame_tokens {} is too small", config.frame_tokens));
        let f = config.frame_tokens;

        let continue_cost = estimate_tokens(&continue_text(templates, BENCH_IMAGE));
        let caption_bytes = 4 * f.checked_sub(continue_cost).ok_or_else(too_small)?;
        let caption = padded("Synthetic scene ", "", caption_bytes).ok_or_else(too_small)?;

        let evidence_cost = estimate_tokens(&ProbeDesk::payload().to_string());
        let decision_bytes = 4 * f.checked_sub(evidence_cost).ok_or_else(too_small)?;
        let mut decisions = Vec::with_capacity(config.rounds);
        for t in 1..config.rounds {
            let mut arguments = Map::new();
            arguments.insert("step".into(), json!(t));
            let call = ToolCall::new(
                BENCH_SERVER,
                format!("probe_{}", t % config.tools),
                arguments,
            );
            let suffix = format!("\n</think>\n{}", render_tool_call(&call));
            decisions.push(padded("<think>\n", &suffix, decision_bytes).ok_or_else(too_small)?);
        }
        decisions.push(END_TOKEN.to_string());

        Ok(Self {
            config,
            query: BENCH_QUERY.into(),
            image: BENCH_IMAGE.into(),
            caption,
            decisions,
        })
    }

    pub fn host(&self) -> InProcessHost {
        InProcessHost::new().with_server(
            BENCH_SERVER,
            Arc::new(ProbeDesk {
                count: self.config.tools,
            }),
        )
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            k: self.config.k,
            max_rounds: self.config.rounds + 2,
            ..RunConfig::default()
        }
    }

    /// Expected context tokens of every think call, windowed and full.
    pub fn oracle(&self, templates: &Templates) -> (Vec<usize>, Vec<usize>) {
        let tools = ProbeDesk {
            count: self.config.tools,
        }
        .descriptors();
        let xml = generate_tool_xml(&tools).expect("probe tools are valid");
        let scan = estimate_tokens(&render(
            &templates.tool_scan,
            &[("available_tools", xml.trim_end())],
        ));
        let origin = estimate_tokens(&self.query);
        let f = self.config.frame_tokens;
        (1..=self.config.rounds)
            .map(|t| (origin + t.min(self.config.k) * f, origin + scan + t * f))
            .unzip()
    }

    fn execute(&self, templates: &Templates, baseline: bool) -> Result<RunReport, AgentError> {
        let think =
            ScriptedBackend::sequential("bench:think", BackendRole::Think, self.decisions.clone())
                .with_latency_model(self.config.ms_per_1k_prompt_tokens);
        let vision = ScriptedBackend::sequential(
            "bench:vision",
            BackendRole::Vision,
            [self.caption.clone()],
        );
        let mut gateway = Gateway::new(&think, &vision, templates);
        gateway.require_images = false;
        let host = self.host();
        let host: &dyn ToolHost = &host;
        let config = self.run_config();
        if baseline {
            run_plan_replan_baseline(&self.image, &self.query, host, &gateway, &config)
        } else {
            run(&self.image, &self.query, host, &gateway, &config)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub table: ComparisonTable,
    pub windowed: RunReport,
    pub full: RunReport,
    pub oracle_windowed: Vec<usize>,
    pub oracle_full: Vec<usize>,
    pub oracle_reduction_pct: f64,
}

/// Runs the scenario under both strategies and compares them.
pub fn run_bench(config: &BenchConfig, templates: &Templates) -> Result<BenchReport, AgentError> {
    let scenario = BenchScenario::new(config.clone(), templates)?;
    let windowed = scenario.execute(templates, false)?;
    let full = scenario.execute(templates, true)?;
    let table = account(&windowed, &full)?;
    let (oracle_windowed, oracle_full) = scenario.oracle(templates);
    let sum_w: usize = oracle_windowed.iter().sum();
    let sum_f: usize = oracle_full.iter().sum();
    Ok(BenchReport {
        table,
        windowed,
        full,
        oracle_reduction_pct: (1.0 - sum_w as f64 / sum_f as f64) * 100.0,
        oracle_windowed,
        oracle_full,
    })
}
