//! The think/act loop over a reasoning stack.
//!
//! Each round the think backend sees the system prompt, the user's request
//! and the top `k` frames. Its reply is classified as a tool call, a terminal
//! report, a think-only step or a format error, and exactly one frame is
//! pushed. Tool calls run through a [`ToolHost`]; result images are described
//! by the vision backend before they enter the stack.

mod account;
mod bench;

use std::collections::BTreeMap;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{
    generate_tool_xml, match_tools, parse_structured_output, parse_tool_call, render_tool_call,
    strip_think, CodecError, OutputKind, StructuredOutput, ToolCall, ToolDescriptor,
};
use crate::gateway::{
    assemble_context, frame_tokens, hex, render, DescribeMode, Gateway, GatewayError, ModelTurn,
    PromptBundle, Role, Turn,
};
use crate::stack::{
    DescriptionSource, Evidence, FrameKind, Origin, ReasoningFrame, ReasoningStack, ScoredCall,
    StackError,
};
use crate::transport::{ToolHost, ToolResult, TransportError};

pub use account::{account, ComparisonRow, ComparisonTable, Reductions};
pub use bench::{run_bench, BenchConfig, BenchReport, BenchScenario, ProbeDesk, BENCH_SERVER};

/// Marker opening the evidence text of a failed tool call.
pub const TOOL_ERROR_MARKER: &str = "[tool error]";
/// Marker opening the feedback sent back after an unusable reply.
pub const FORMAT_ERROR_MARKER: &str = "[format error]";

/// Consecutive think-only rounds that trigger the state search.
const STALL_LIMIT: usize = 2;
/// Score given to the model's own call when branching.
const MODEL_CALL_SCORE: f64 = 2.0;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("ToolServerUnavailable: {0}")]
    ToolServerUnavailable(TransportError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Stack(#[from] StackError),
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("ScenarioMismatch: runs answer different inputs ({0} vs {1})")]
    ScenarioMismatch(String, String),
}

/// Which final forms end a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalMode {
    Soap,
    EndToken,
    #[default]
    Either,
}

impl TerminalMode {
    fn accepts(self, kind: OutputKind) -> bool {
        matches!(
            (self, kind),
            (TerminalMode::Either, _)
                | (TerminalMode::Soap, OutputKind::Soap)
                | (TerminalMode::EndToken, OutputKind::EndToken)
        )
    }
}

/// How parallel branches are ranked before pruning.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    /// One point each for a successful call, valid arguments and a tool not
    /// used before in the run.
    #[default]
    Heuristic,
    /// The think backend rates each branch with the judge prompt.
    Judge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Frames visible to the think backend.
    pub k: usize,
    /// Maximum stack length, caption included.
    pub max_rounds: usize,
    /// Branches kept when several calls are equally plausible; 1 disables
    /// branching.
    pub max_width: usize,
    /// Consecutive failed rounds tolerated before the run aborts.
    pub retry_limit: usize,
    pub terminal_mode: TerminalMode,
    /// Record per-round token and latency statistics.
    pub accounting: bool,
    pub scorer: ScorerKind,
    /// Match-score distance from the best tool within which another tool
    /// counts as an alternative.
    pub near_tie: f64,
    /// After a stall, resume from a frame with untried alternatives before
    /// asking for the final report.
    pub state_search: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: crate::stack::DEFAULT_WINDOW,
            max_rounds: 12,
            max_width: 1,
            retry_limit: 3,
            terminal_mode: TerminalMode::Either,
            accounting: true,
            scorer: ScorerKind::Heuristic,
            near_tie: 0.1,
            state_search: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        for (name, value) in [
            ("k", self.k),
            ("max_rounds", self.max_rounds),
            ("max_width", self.max_width),
            ("retry_limit", self.retry_limit),
        ] {
            if value == 0 {
                return Err(AgentError::Config(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.near_tie) {
            return Err(AgentError::Config("near_tie must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    RoundLimit,
    ErrorAborted,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::RoundLimit => "round_limit",
            Outcome::ErrorAborted => "error_aborted",
        }
    }
}

/// Accounting for one think call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStat {
    /// Stack length when the prompt was built.
    pub round: usize,
    pub prompt_tokens: usize,
    /// Prompt tokens excluding the system turn.
    pub context_tokens: usize,
    pub completion_tokens: usize,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub prompt_tokens: usize,
    pub context_tokens: usize,
    pub completion_tokens: usize,
    pub think_calls: usize,
    pub vision_calls: usize,
    pub tool_calls: usize,
    /// Think plus vision latency as reported by the backends.
    pub model_latency_ms: f64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub outcome: Outcome,
    pub final_output: Option<StructuredOutput>,
    /// Frames on the final stack, caption included.
    pub rounds: usize,
    pub stack: ReasoningStack,
    /// Fingerprint of the request and image; equal for runs on one input.
    pub scenario: String,
    /// System prompt the run used, with the tool list filled in.
    pub system_text: String,
    pub totals: Totals,
    pub per_round: Vec<RoundStat>,
}

/// Runs the agent with a sliding context window.
pub fn run(
    image: &str,
    query: &str,
    host: &dyn ToolHost,
    gateway: &Gateway<'_>,
    config: &RunConfig,
) -> Result<RunReport, AgentError> {
    drive(image, query, host, gateway, config, Strategy::Stack)
}

/// Baseline that resends the whole history plus a review of every tool each
/// round. Used only for comparison.
pub fn run_plan_replan_baseline(
    image: &str,
    query: &str,
    host: &dyn ToolHost,
    gateway: &Gateway<'_>,
    config: &RunConfig,
) -> Result<RunReport, AgentError> {
    drive(image, query, host, gateway, config, Strategy::PlanReplan)
}

pub fn scenario_id(query: &str, image: &str) -> String {
    let digest = Sha256::digest(format!("{query}\0{image}").as_bytes());
    hex(&digest)[..16].to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Strategy {
    Stack,
    PlanReplan,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

struct Session<'r, 'g> {
    host: &'r dyn ToolHost,
    gateway: &'r Gateway<'g>,
    config: &'r RunConfig,
    tools: Vec<ToolDescriptor>,
    totals: Totals,
    per_round: Vec<RoundStat>,
}

impl Session<'_, '_> {
    fn record_think(&mut self, bundle: &PromptBundle, turn: &ModelTurn) {
        self.totals.think_calls += 1;
        self.totals.prompt_tokens += turn.prompt_tokens;
        self.totals.context_tokens += bundle.context_tokens();
        self.totals.completion_tokens += turn.completion_tokens;
        self.totals.model_latency_ms += ms(turn.latency);
        if self.config.accounting {
            self.per_round.push(RoundStat {
                round: bundle.round,
                prompt_tokens: turn.prompt_tokens,
                context_tokens: bundle.context_tokens(),
                completion_tokens: turn.completion_tokens,
                latency_ms: ms(turn.latency),
            });
        }
    }

    fn record_vision(&mut self, turn: &ModelTurn) {
        self.totals.vision_calls += 1;
        self.totals.model_latency_ms += ms(turn.latency);
    }

    fn descriptor(&self, call: &ToolCall) -> Option<&ToolDescriptor> {
        self.tools
            .iter()
            .find(|t| t.server_name == call.server_name && t.tool_name == call.tool_name)
    }
}

/// Outcome of executing one call, before it is placed on a frame.
struct Executed {
    evidence: Evidence,
    vision: Option<ModelTurn>,
}

fn drive(
    image: &str,
    query: &str,
    host: &dyn ToolHost,
    gateway: &Gateway<'_>,
    config: &RunConfig,
    strategy: Strategy,
) -> Result<RunReport, AgentError> {
    config.validate()?;
    if query.trim().is_empty() {
        return Err(AgentError::Precondition("the request is empty".into()));
    }
    let started = Instant::now();
    let tools = host.tools().map_err(AgentError::ToolServerUnavailable)?;
    let tools_xml = generate_tool_xml(&tools)?;
    let templates = gateway.templates;
    let mut session = Session {
        host,
        gateway,
        config,
        tools,
        totals: Totals::default(),
        per_round: Vec::new(),
    };

    let mut stack = ReasoningStack::new(Origin {
        query: query.to_string(),
        image: image.to_string(),
    });
    let caption = gateway.describe(image, DescribeMode::Rough, query, 0)?;
    session.record_vision(&caption);
    let frame = ReasoningFrame::caption(0, caption.text);
    let tokens = frame_tokens(&frame, templates, image);
    stack.push(frame.with_token_count(tokens))?;

    let think_budget = config.max_rounds * 4;
    let mut failures = 0;
    let mut stalls = 0;
    let mut finalize = false;
    let mut final_output = None;

    let outcome = loop {
        if stack.len() >= config.max_rounds || session.totals.think_calls >= think_budget {
            break Outcome::RoundLimit;
        }
        let mut bundle = match strategy {
            Strategy::Stack => assemble_context(&stack, config.k, templates, &tools_xml),
            Strategy::PlanReplan => {
                let mut bundle = assemble_context(&stack, usize::MAX, templates, &tools_xml);
                bundle.push(Turn::new(
                    Role::User,
                    render(
                        &templates.tool_scan,
                        &[("available_tools", tools_xml.trim_end())],
                    ),
                ));
                bundle
            }
        };
        if finalize {
            bundle.push(Turn::new(Role::User, templates.finalize.clone()));
        }
        let turn = gateway.think(&bundle)?;
        session.record_think(&bundle, &turn);
        let decision = turn.text;
        let index = stack.len();

        let step = classify(&decision, config.terminal_mode);
        if finalize && !matches!(step, Step::Terminal(_)) {
            let frame = ReasoningFrame::think(index, decision);
            let tokens = frame_tokens(&frame, templates, image);
            stack.push(frame.with_token_count(tokens))?;
            break Outcome::ErrorAborted;
        }
        match step {
            Step::Terminal(output) => {
                let frame = ReasoningFrame::terminal(index, decision, output.clone());
                let tokens = frame_tokens(&frame, templates, image);
                stack.push(frame.with_token_count(tokens))?;
                final_output = Some(output);
                break Outcome::Completed;
            }
            Step::FormatError(message) => {
                stalls = 0;
                let feedback = format!(
                    "{FORMAT_ERROR_MARKER} {message}. Reply with exactly one <use_mcp_tool> block or a complete final report."
                );
                let frame = ReasoningFrame::feedback(index, decision, feedback);
                let tokens = frame_tokens(&frame, templates, image);
                stack.push(frame.with_token_count(tokens))?;
                failures += 1;
            }
            Step::Think => {
                let frame = ReasoningFrame::think(index, decision);
                let tokens = frame_tokens(&frame, templates, image);
                stack.push(frame.with_token_count(tokens))?;
                stalls += 1;
                if stalls >= STALL_LIMIT {
                    stalls = 0;
                    let resumed = if config.state_search {
                        resume_discoverable(&mut stack, &mut session)?
                    } else {
                        None
                    };
                    match resumed {
                        Some(failed) => failures = if failed { failures + 1 } else { 0 },
                        None => finalize = true,
                    }
                }
            }
            Step::Call { think, call } => {
                stalls = 0;
                let failed = if is_repeat(&stack, &call) {
                    let evidence = duplicate_evidence(&call);
                    let frame = ReasoningFrame::tool_step(index, decision, call, evidence);
                    let tokens = frame_tokens(&frame, templates, image);
                    stack.push(frame.with_token_count(tokens))?;
                    true
                } else {
                    let text = if think.is_empty() { &decision } else { &think };
                    let alternatives = alternatives(text, &call, &session.tools, config.near_tie);
                    if config.max_width > 1 && !alternatives.is_empty() {
                        stack = explore(stack, decision, think, call, alternatives, &mut session)?;
                    } else {
                        let executed = execute(&call, index, &mut session)?;
                        let frame =
                            ReasoningFrame::tool_step(index, decision, call, executed.evidence)
                                .with_alternatives(
                                    alternatives.into_iter().map(|a| a.call).collect(),
                                );
                        let tokens = frame_tokens(&frame, templates, image);
                        stack.push(frame.with_token_count(tokens))?;
                    }
                    stack
                        .top()
                        .and_then(|f| f.evidence.as_ref())
                        .is_some_and(|e| e.is_error)
                };
                failures = if failed { failures + 1 } else { 0 };
            }
        }
        if failures >= config.retry_limit {
            break Outcome::ErrorAborted;
        }
    };

    session.totals.wall_time_ms = ms(started.elapsed());
    Ok(RunReport {
        outcome,
        final_output,
        rounds: stack.len(),
        scenario: scenario_id(query, image),
        system_text: crate::gateway::system_text(templates, &tools_xml),
        stack,
        totals: session.totals,
        per_round: session.per_round,
    })
}

enum Step {
    Terminal(StructuredOutput),
    Call { think: String, call: ToolCall },
    Think,
    FormatError(String),
}

fn classify(decision: &str, mode: TerminalMode) -> Step {
    let (think, rest) = strip_think(decision);
    match parse_tool_call(&rest) {
        Err(err) => Step::FormatError(format!("{}: {err}", err.kind())),
        Ok(Some(call)) => Step::Call { think, call },
        Ok(None) => match parse_structured_output(decision) {
            Err(err) => Step::FormatError(format!("{}: {err}", err.kind())),
            Ok(Some(output)) if mode.accepts(output.kind) => Step::Terminal(output),
            Ok(Some(output)) => Step::FormatError(format!(
                "this run ends with {}, got {:?}",
                match mode {
                    TerminalMode::Soap => "a SOAP report",
                    _ => "the <end> token",
                },
                output.kind
            )),
            Ok(None) => Step::Think,
        },
    }
}

/// True when `call` repeats the most recent call on the stack.
fn is_repeat(stack: &ReasoningStack, call: &ToolCall) -> bool {
    stack
        .frames()
        .iter()
        .rev()
        .find_map(|f| f.tool_call.as_ref())
        .is_some_and(|last| last == call)
}

fn duplicate_evidence(call: &ToolCall) -> Evidence {
    let message = format!(
        "duplicate call: {}/{} was just run with the same arguments; change the arguments or pick another tool",
        call.server_name, call.tool_name
    );
    let payload = json!({
        "is_error": true,
        "origin": "agent",
        "content": [{"type": "text", "text": message}],
    });
    Evidence {
        text: format!("{TOOL_ERROR_MARKER} {message}"),
        payload,
        is_error: true,
        files: Vec::new(),
        description: None,
        description_source: None,
    }
}

/// Evidence for a failed tool call: the tool's own message behind the error
/// marker, with the raw payload kept for the trace.
pub fn feedback_error(result: &ToolResult) -> Evidence {
    Evidence {
        payload: result.raw.clone(),
        text: format!("{TOOL_ERROR_MARKER} {}", result.text()),
        is_error: true,
        files: Vec::new(),
        description: None,
        description_source: None,
    }
}

/// Other tools that match the reasoning almost as well as the best one,
/// with the call's arguments restricted to what each accepts.
fn alternatives(
    text: &str,
    call: &ToolCall,
    tools: &[ToolDescriptor],
    near_tie: f64,
) -> Vec<ScoredCall> {
    let Ok(matches) = match_tools(text, tools) else {
        return Vec::new();
    };
    let Some(best) = matches.first().map(|m| m.score) else {
        return Vec::new();
    };
    matches
        .into_iter()
        .filter(|m| m.score > 0.0 && m.score + near_tie >= best)
        .filter(|m| !(m.tool.server_name == call.server_name && m.tool.tool_name == call.tool_name))
        .filter_map(|m| {
            let arguments: Map<String, Value> = call
                .arguments
                .iter()
                .filter(|(key, _)| m.tool.properties().any(|(name, _)| name == *key))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            m.tool.accepts(&arguments).then(|| ScoredCall {
                call: ToolCall::new(
                    m.tool.server_name.clone(),
                    m.tool.tool_name.clone(),
                    arguments,
                ),
                score: m.score,
            })
        })
        .collect()
}

/// Runs a call and turns the result into evidence, describing the first
/// result image when the server did not.
fn execute(
    call: &ToolCall,
    round: usize,
    session: &mut Session<'_, '_>,
) -> Result<Executed, AgentError> {
    let executed = execute_detached(call, round, session.host, session.gateway)?;
    session.totals.tool_calls += 1;
    if let Some(turn) = &executed.vision {
        session.record_vision(turn);
    }
    Ok(executed)
}

fn execute_detached(
    call: &ToolCall,
    round: usize,
    host: &dyn ToolHost,
    gateway: &Gateway<'_>,
) -> Result<Executed, AgentError> {
    let result = host.call(call).unwrap_or_else(|err| {
        log::warn!(
            "{}/{} failed in transport: {err}",
            call.server_name,
            call.tool_name
        );
        ToolResult::error(err.to_string())
    });
    if result.is_error {
        return Ok(Executed {
            evidence: feedback_error(&result),
            vision: None,
        });
    }

    let files = result.image_paths();
    let mut payload = result.raw.clone();
    let mut description = result.server_description();
    let mut source = description.as_ref().map(|_| DescriptionSource::Server);
    let mut vision = None;
    if description.is_none() {
        if let Some(first) = files.first() {
            match gateway.describe(first, DescribeMode::Detailed, &result.text(), round) {
                Ok(turn) => {
                    if let Value::Object(map) = &mut payload {
                        map.insert("vlm_response".into(), Value::String(turn.text.clone()));
                        map.insert("vlm_source".into(), Value::String("gateway".into()));
                    }
                    description = Some(turn.text.clone());
                    source = Some(DescriptionSource::Gateway);
                    vision = Some(turn);
                }
                Err(GatewayError::MissingImage(path)) => {
                    log::warn!(
                        "tool reported image {path} that does not exist; leaving it undescribed"
                    );
                }
                Err(err) => return Err(err.into()),
            }
        }
    }
    Ok(Executed {
        evidence: Evidence {
            text: payload.to_string(),
            payload,
            is_error: false,
            files,
            description,
            description_source: source,
        },
        vision,
    })
}

fn rewrite_decision(think: &str, call: &ToolCall) -> String {
    format!("<think>\n{think}\n</think>\n{}", render_tool_call(call))
}

/// State search after a stall: resumes from the nearest frame with an
/// untried alternative, replacing it with a step that runs that
/// alternative. Returns whether the new step failed, or `None` when nothing
/// is left to explore.
fn resume_discoverable(
    stack: &mut ReasoningStack,
    session: &mut Session<'_, '_>,
) -> Result<Option<bool>, AgentError> {
    let Some(frame) = stack.pop_discoverable() else {
        return Ok(None);
    };
    stack.pop();
    let mut remaining = frame.alternatives.clone();
    let next = remaining.remove(0);
    let (think, _) = strip_think(&frame.decision);
    let executed = execute(&next, frame.index, session)?;
    let failed = executed.evidence.is_error;
    let step = ReasoningFrame::tool_step(
        frame.index,
        rewrite_decision(&think, &next),
        next,
        executed.evidence,
    )
    .with_alternatives(remaining);
    let tokens = frame_tokens(&step, session.gateway.templates, &stack.origin.image);
    stack.push(step.with_token_count(tokens))?;
    Ok(Some(failed))
}

/// Runs the model's call and its near-tie alternatives on parallel branches
/// and keeps the best-scoring one.
fn explore(
    mut stack: ReasoningStack,
    decision: String,
    think: String,
    call: ToolCall,
    alternatives: Vec<ScoredCall>,
    session: &mut Session<'_, '_>,
) -> Result<ReasoningStack, AgentError> {
    let index = stack.len();
    stack.push(ReasoningFrame::think(index, decision.clone()))?;
    let mut candidates = vec![ScoredCall {
        call: call.clone(),
        score: MODEL_CALL_SCORE,
    }];
    candidates.extend(alternatives);
    let pool = stack.branch(&candidates, session.config.max_width)?;

    let host = session.host;
    let gateway = session.gateway;
    let outcomes: Vec<Result<Executed, AgentError>> = thread::scope(|scope| {
        let handles: Vec<_> = pool
            .branches
            .iter()
            .map(|branch| {
                let chosen = branch
                    .top()
                    .and_then(|f| f.tool_call.clone())
                    .expect("branch top has a call");
                scope.spawn(move || execute_detached(&chosen, index, host, gateway))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("branch worker panicked"))
            .collect()
    });

    let mut branches = Vec::with_capacity(pool.branches.len());
    let mut scores = BTreeMap::new();
    for (mut branch, outcome) in pool.branches.into_iter().zip(outcomes) {
        let executed = outcome?;
        session.totals.tool_calls += 1;
        if let Some(turn) = &executed.vision {
            session.record_vision(turn);
        }
        let top = branch.top().expect("branch has a top").clone();
        let chosen = top.tool_call.clone().expect("branch top has a call");
        let rewritten = (chosen != call).then(|| rewrite_decision(&think, &chosen));
        let mut settled = top;
        settled.evidence = Some(executed.evidence.clone());
        if let Some(text) = &rewritten {
            settled.decision = text.clone();
        }
        let tokens = frame_tokens(&settled, gateway.templates, &branch.origin.image);
        branch.settle_top(executed.evidence, rewritten, tokens)?;
        let score = score_branch(&branch, session)?;
        branch.score = Some(score);
        scores.insert(branch.branch_id, score);
        branches.push(branch);
    }
    let pool = crate::stack::StackPool {
        branches,
        max_width: session.config.max_width,
    };
    Ok(pool.prune(&scores)?)
}

fn heuristic_score(branch: &ReasoningStack, session: &Session<'_, '_>) -> f64 {
    let frames = branch.frames();
    let Some((top, earlier)) = frames.split_last() else {
        return 0.0;
    };
    let Some(call) = &top.tool_call else {
        return 0.0;
    };
    let mut score = 0.0;
    if top.evidence.as_ref().is_some_and(|e| !e.is_error) {
        score += 1.0;
    }
    if session
        .descriptor(call)
        .is_some_and(|d| d.accepts(&call.arguments))
    {
        score += 1.0;
    }
    let novel = !earlier
        .iter()
        .filter(|f| f.kind == FrameKind::ToolCall)
        .filter_map(|f| f.tool_call.as_ref())
        .any(|c| c.server_name == call.server_name && c.tool_name == call.tool_name);
    if novel {
        score += 1.0;
    }
    score
}

fn score_branch(branch: &ReasoningStack, session: &mut Session<'_, '_>) -> Result<f64, AgentError> {
    let fallback = heuristic_score(branch, session);
    if session.config.scorer == ScorerKind::Heuristic {
        return Ok(fallback);
    }
    let templates = session.gateway.templates;
    let top = branch.top().expect("branch has a top");
    let step = crate::gateway::render_frame(top, templates, &branch.origin.image)
        .into_iter()
        .map(|t| t.content)
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = render(
        &templates.judge,
        &[
            ("user_query", branch.origin.query.as_str()),
            ("step", step.as_str()),
        ],
    );
    let mut bundle = PromptBundle::new(prompt, branch.len());
    bundle.push(Turn::new(Role::User, "Score:"));
    let turn = session.gateway.think(&bundle)?;
    session.totals.model_latency_ms += ms(turn.latency);
    let parsed = turn
        .text
        .split_whitespace()
        .find_map(|w| {
            w.trim_matches(|c: char| !c.is_ascii_digit() && c != '.')
                .parse::<f64>()
                .ok()
        })
        .filter(|s| (0.0..=1.0).contains(s));
    Ok(match parsed {
        Some(score) => score,
        None => {
            log::warn!(
                "judge reply {:?} is not a score in [0, 1]; using the heuristic",
                turn.text
            );
            fallback / 3.0
        }
    })
}

#[cfg(test)]
mod tests;
