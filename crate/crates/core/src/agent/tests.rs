use std::sync::Arc;

use serde_json::{json, Map, Value};

use super::*;
use crate::codec::ToolCategory;
use crate::gateway::{BackendRole, ScriptedBackend, Templates};
use crate::transport::wire::WireTool;
use crate::transport::{error_payload, InProcessHost, ToolService};

struct Desk;

fn schema(key: &str) -> Value {
    json!({"type": "object", "properties": {key: {"type": "string"}}, "required": [key]})
}

impl ToolService for Desk {
    fn tools(&self) -> Vec<WireTool> {
        let tool = |name: &str, description: &str, key: &str, category| WireTool {
            name: name.into(),
            description: description.into(),
            input_schema: schema(key),
            category,
        };
        vec![
            tool(
                "image_crop",
                "Crop a region of the image.",
                "image_path",
                ToolCategory::Vision,
            ),
            tool(
                "image_zoom",
                "Zoom and crop a region of the image.",
                "image_path",
                ToolCategory::Vision,
            ),
            tool(
                "web_search",
                "Search the web for keywords.",
                "keywords",
                ToolCategory::Text,
            ),
        ]
    }

    fn call(&self, tool_name: &str, arguments: &Map<String, Value>) -> Value {
        match tool_name {
            "image_crop" => json!({"is_error": false, "content": [
                {"type": "image", "path": "crop.png"}, {"type": "text", "text": "cropped"}]}),
            "image_zoom" => error_payload("Error: zoom failed"),
            _ if arguments.get("keywords") == Some(&json!("fail")) => {
                error_payload("Error: search backend down")
            }
            _ => json!({"is_error": false, "content": [{"type": "text", "text": "hits"}]}),
        }
    }
}

fn host() -> InProcessHost {
    InProcessHost::new().with_server("desk", Arc::new(Desk))
}

fn call_text(think: &str, tool: &str, key: &str, value: &str) -> String {
    format!(
        "<think>{think}</think>\n<use_mcp_tool>\n<server_name>desk</server_name>\n<tool_name>{tool}</tool_name>\n<arguments>\n{{\"{key}\": \"{value}\"}}\n</arguments>\n</use_mcp_tool>"
    )
}

const SOAP: &str = "<S>s</S><O>o</O><A>a</A><P>p</P>";

struct Rig {
    think: ScriptedBackend,
    vision: ScriptedBackend,
    templates: Templates,
}

impl Rig {
    fn new(think: Vec<String>, vision: Vec<&str>) -> Self {
        Self {
            think: ScriptedBackend::sequential("t", BackendRole::Think, think),
            vision: ScriptedBackend::sequential("v", BackendRole::Vision, vision),
            templates: Templates::default(),
        }
    }

    fn run(&self, config: &RunConfig) -> RunReport {
        let mut gateway = Gateway::new(&self.think, &self.vision, &self.templates);
        gateway.require_images = false;
        run(
            "scene.png",
            "What is in the scene?",
            &host(),
            &gateway,
            config,
        )
        .unwrap()
    }
}

#[test]
fn immediate_report_is_two_frames() {
    let rig = Rig::new(vec![SOAP.into()], vec!["caption"]);
    let report = rig.run(&RunConfig::default());
    assert_eq!(report.outcome, Outcome::Completed);
    assert_eq!(report.rounds, 2);
    assert_eq!(report.stack.frames()[0].kind, FrameKind::Caption);
    assert_eq!(report.final_output.unwrap().kind, OutputKind::Soap);
}

#[test]
fn image_results_are_described_by_the_gateway() {
    let rig = Rig::new(
        vec![
            call_text("crop it", "image_crop", "image_path", "scene.png"),
            "done <end>".into(),
        ],
        vec!["caption", "a cropped hull"],
    );
    let report = rig.run(&RunConfig::default());
    let frame = &report.stack.frames()[1];
    let evidence = frame.evidence.as_ref().unwrap();
    assert_eq!(evidence.payload["vlm_response"], "a cropped hull");
    assert_eq!(evidence.payload["vlm_source"], "gateway");
    assert_eq!(
        evidence.description_source,
        Some(DescriptionSource::Gateway)
    );
    assert_eq!(evidence.files, vec!["crop.png".to_string()]);
    assert_eq!(report.final_output.unwrap().answer, "done");
    assert_eq!(report.totals.tool_calls, 1);
    assert_eq!(report.totals.vision_calls, 2);
}

#[test]
fn tool_errors_are_verbatim_evidence() {
    let rig = Rig::new(
        vec![
            call_text("search", "web_search", "keywords", "fail"),
            SOAP.into(),
        ],
        vec!["caption"],
    );
    let report = rig.run(&RunConfig::default());
    let evidence = report.stack.frames()[1].evidence.clone().unwrap();
    assert!(evidence.is_error);
    assert_eq!(evidence.text, "[tool error] Error: search backend down");
    assert_eq!(report.outcome, Outcome::Completed);
}

#[test]
fn malformed_reply_gets_feedback_then_recovers() {
    let rig = Rig::new(
        vec![
            "<use_mcp_tool><server_name>desk</server_name>".into(),
            SOAP.into(),
        ],
        vec!["caption"],
    );
    let report = rig.run(&RunConfig::default());
    let frame = &report.stack.frames()[1];
    assert_eq!(frame.kind, FrameKind::Feedback);
    assert!(frame
        .feedback
        .as_deref()
        .unwrap()
        .starts_with("[format error] MalformedBlock"));
    assert_eq!(report.outcome, Outcome::Completed);
}

#[test]
fn repeated_failures_abort() {
    let rig = Rig::new(vec!["<S>only subject</S>".into(); 3], vec!["caption"]);
    let report = rig.run(&RunConfig::default());
    assert_eq!(report.outcome, Outcome::ErrorAborted);
    assert_eq!(report.rounds, 4);
}

#[test]
fn round_limit_stops_the_run() {
    let texts = (0..10)
        .map(|i| call_text("search", "web_search", "keywords", &format!("q{i}")))
        .collect();
    let rig = Rig::new(texts, vec!["caption"]);
    let config = RunConfig {
        max_rounds: 4,
        ..RunConfig::default()
    };
    let report = rig.run(&config);
    assert_eq!(report.outcome, Outcome::RoundLimit);
    assert_eq!(report.rounds, 4);
    assert!(report.final_output.is_none());
}

#[test]
fn duplicate_call_is_refused_without_running() {
    let same = call_text("search", "web_search", "keywords", "ship");
    let rig = Rig::new(vec![same.clone(), same, SOAP.into()], vec!["caption"]);
    let report = rig.run(&RunConfig::default());
    let evidence = report.stack.frames()[2].evidence.clone().unwrap();
    assert!(evidence.is_error);
    assert_eq!(evidence.payload["origin"], "agent");
    assert!(evidence.text.starts_with("[tool error] duplicate call"));
    assert_eq!(report.totals.tool_calls, 1);
}

#[test]
fn window_limits_context() {
    let texts: Vec<String> = (0..5)
        .map(|i| call_text("search", "web_search", "keywords", &format!("q{i}")))
        .chain([SOAP.to_string()])
        .collect();
    let rig = Rig::new(texts, vec!["caption"]);
    let report = rig.run(&RunConfig {
        k: 2,
        ..RunConfig::default()
    });
    let stack = &report.stack;
    for stat in &report.per_round {
        let visible: usize = stack.frames()[stat.round.saturating_sub(2)..stat.round]
            .iter()
            .map(|f| f.token_count)
            .sum();
        assert_eq!(
            stat.context_tokens,
            crate::gateway::estimate_tokens("What is in the scene?") + visible
        );
    }
}

#[test]
fn stall_resumes_from_a_frame_with_alternatives() {
    let rig = Rig::new(
        vec![
            call_text(
                "crop a region of the image",
                "image_crop",
                "image_path",
                "scene.png",
            ),
            "<think>hmm</think>".into(),
            "<think>still unsure</think>".into(),
            SOAP.into(),
        ],
        vec!["caption", "crop description"],
    );
    let report = rig.run(&RunConfig {
        near_tie: 0.3,
        ..RunConfig::default()
    });
    let frames = report.stack.frames();
    assert_eq!(report.outcome, Outcome::Completed);
    assert_eq!(frames.len(), 3);
    let resumed = &frames[1];
    assert_eq!(resumed.tool_call.as_ref().unwrap().tool_name, "image_zoom");
    assert!(resumed
        .decision
        .contains("<tool_name>image_zoom</tool_name>"));
    assert!(resumed.alternatives.is_empty());
}

#[test]
fn stall_without_alternatives_asks_for_the_report() {
    let rig = Rig::new(
        vec![
            "<think>a</think>".into(),
            "<think>b</think>".into(),
            SOAP.into(),
        ],
        vec!["caption"],
    );
    let report = rig.run(&RunConfig::default());
    assert_eq!(report.outcome, Outcome::Completed);
    assert_eq!(report.rounds, 4);
}

#[test]
fn non_terminal_after_finalize_aborts() {
    let rig = Rig::new(vec!["<think>a</think>".into(); 3], vec!["caption"]);
    let report = rig.run(&RunConfig::default());
    assert_eq!(report.outcome, Outcome::ErrorAborted);
}

#[test]
fn branching_keeps_the_best_branch() {
    let rig = Rig::new(
        vec![
            call_text(
                "zoom crop a region of the image",
                "image_zoom",
                "image_path",
                "scene.png",
            ),
            SOAP.into(),
        ],
        vec!["caption", "crop description"],
    );
    let report = rig.run(&RunConfig {
        max_width: 3,
        near_tie: 0.5,
        ..RunConfig::default()
    });
    let kept = &report.stack.frames()[1];
    assert_eq!(kept.tool_call.as_ref().unwrap().tool_name, "image_crop");
    assert!(!kept.evidence.as_ref().unwrap().is_error);
    assert!(kept.decision.contains("<tool_name>image_crop</tool_name>"));
    assert_eq!(kept.alternatives.len(), 1);
    assert_eq!(report.totals.tool_calls, 2);
}

#[test]
fn terminal_mode_mismatch_is_a_format_error() {
    let rig = Rig::new(vec!["<end>".into(), SOAP.into()], vec!["caption"]);
    let report = rig.run(&RunConfig {
        terminal_mode: TerminalMode::Soap,
        ..RunConfig::default()
    });
    assert_eq!(report.stack.frames()[1].kind, FrameKind::Feedback);
    assert_eq!(report.outcome, Outcome::Completed);
}

#[test]
fn unavailable_tools_fail_the_run() {
    struct Down;
    impl ToolHost for Down {
        fn tools(&self) -> Result<Vec<ToolDescriptor>, TransportError> {
            Err(TransportError::TransportClosed("desk".into()))
        }
        fn call(&self, _: &ToolCall) -> Result<ToolResult, TransportError> {
            unreachable!()
        }
    }
    let rig = Rig::new(vec![], vec![]);
    let gateway = Gateway::new(&rig.think, &rig.vision, &rig.templates);
    let err = run("scene.png", "q", &Down, &gateway, &RunConfig::default()).unwrap_err();
    assert!(matches!(err, AgentError::ToolServerUnavailable(_)));
}

#[test]
fn zero_config_values_are_rejected() {
    let config = RunConfig {
        k: 0,
        ..RunConfig::default()
    };
    assert!(matches!(config.validate(), Err(AgentError::Config(_))));
}

#[test]
fn bench_matches_oracle() {
    let templates = Templates::default();
    let report = run_bench(&BenchConfig::default(), &templates).unwrap();
    let windowed: Vec<usize> = report
        .windowed
        .per_round
        .iter()
        .map(|s| s.context_tokens)
        .collect();
    let full: Vec<usize> = report
        .full
        .per_round
        .iter()
        .map(|s| s.context_tokens)
        .collect();
    assert_eq!(windowed, report.oracle_windowed);
    assert_eq!(full, report.oracle_full);
    assert!(report.table.reductions.context_pct >= 60.0);
    assert!((report.table.reductions.context_pct - report.oracle_reduction_pct).abs() < 1e-9);
}

#[test]
fn account_rejects_different_scenarios() {
    let templates = Templates::default();
    let report = run_bench(&BenchConfig::default(), &templates).unwrap();
    let mut other = report.full.clone();
    other.scenario = "elsewhere".into();
    assert!(matches!(
        account(&report.windowed, &other),
        Err(AgentError::ScenarioMismatch(..))
    ));
}
