//! The reasoning stack: the agent's only memory.
//!
//! Each round pushes one immutable frame holding the model's decision, the
//! tool call it matched (if any) and the evidence that came back. The prompt
//! is built from a sliding window over the top of the stack; deeper frames
//! stay available for serialization and for the state search that resumes
//! from a frame with unexplored alternative calls.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::codec::{StructuredOutput, ToolCall};

pub const DEFAULT_WINDOW: usize = 3;
pub const DEFAULT_POOL_WIDTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StackError {
    #[error("IndexMismatch: frame index {found} pushed onto a stack of length {expected}")]
    IndexMismatch { expected: usize, found: usize },
    #[error("TooFewCandidates: branching needs at least 2 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("cannot branch an empty stack")]
    EmptyStack,
    #[error("EmptyPool: no branches to prune")]
    EmptyPool,
    #[error("branch {0} has no score")]
    Unscored(u32),
    #[error("top frame cannot take evidence: {0}")]
    NotPending(&'static str),
}

/// User input the run started from. Always part of the assembled context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub query: String,
    pub image: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    /// Initial rough description of the input image.
    Caption,
    /// Decision with a matched call and its evidence.
    ToolCall,
    /// Decision whose tool block or terminal form could not be parsed.
    Feedback,
    /// Decision with neither a call nor a terminal output.
    Think,
    /// Decision carrying the structured final output.
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescriptionSource {
    /// `vlm_response` produced by the tool server itself.
    Server,
    /// Description produced by the gateway's vision backend.
    Gateway,
}

/// Tool output as it is pushed onto the stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    /// JSON object stored verbatim as the tool message of a trajectory.
    pub payload: Value,
    /// What the next think turn sees.
    pub text: String,
    pub is_error: bool,
    /// Result image paths reported by the tool.
    pub files: Vec<String>,
    pub description: Option<String>,
    pub description_source: Option<DescriptionSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningFrame {
    pub index: usize,
    pub kind: FrameKind,
    /// Raw model output for this round (the caption text for frame 0).
    pub decision: String,
    pub tool_call: Option<ToolCall>,
    pub evidence: Option<Evidence>,
    /// Error text returned to the model when its output could not be used.
    pub feedback: Option<String>,
    pub terminal: Option<StructuredOutput>,
    /// Plausible calls not taken this round; non-empty marks the frame as
    /// discoverable by the state search.
    pub alternatives: Vec<ToolCall>,
    pub token_count: usize,
}

impl ReasoningFrame {
    fn bare(index: usize, kind: FrameKind, decision: impl Into<String>) -> Self {
        Self {
            index,
            kind,
            decision: decision.into(),
            tool_call: None,
            evidence: None,
            feedback: None,
            terminal: None,
            alternatives: Vec::new(),
            token_count: 0,
        }
    }

    pub fn caption(index: usize, caption: impl Into<String>) -> Self {
        Self::bare(index, FrameKind::Caption, caption)
    }

    pub fn think(index: usize, decision: impl Into<String>) -> Self {
        Self::bare(index, FrameKind::Think, decision)
    }

    pub fn feedback(
        index: usize,
        decision: impl Into<String>,
        feedback: impl Into<String>,
    ) -> Self {
        let mut frame = Self::bare(index, FrameKind::Feedback, decision);
        frame.feedback = Some(feedback.into());
        frame
    }

    pub fn terminal(index: usize, decision: impl Into<String>, output: StructuredOutput) -> Self {
        let mut frame = Self::bare(index, FrameKind::Terminal, decision);
        frame.terminal = Some(output);
        frame
    }

    pub fn tool_step(
        index: usize,
        decision: impl Into<String>,
        call: ToolCall,
        evidence: Evidence,
    ) -> Self {
        let mut frame = Self::bare(index, FrameKind::ToolCall, decision);
        frame.tool_call = Some(call);
        frame.evidence = Some(evidence);
        frame
    }

    pub fn with_alternatives(mut self, alternatives: Vec<ToolCall>) -> Self {
        self.alternatives = alternatives;
        self
    }

    pub fn with_token_count(mut self, tokens: usize) -> Self {
        self.token_count = tokens;
        self
    }

    pub fn is_discoverable(&self) -> bool {
        !self.alternatives.is_empty()
    }
}

/// A candidate call with its match score, used to order branches.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCall {
    pub call: ToolCall,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningStack {
    pub origin: Origin,
    frames: Vec<ReasoningFrame>,
    pub branch_id: u32,
    pub score: Option<f64>,
}

impl ReasoningStack {
    pub fn new(origin: Origin) -> Self {
        Self {
            origin,
            frames: Vec::new(),
            branch_id: 0,
            score: None,
        }
    }

    pub fn frames(&self) -> &[ReasoningFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn top(&self) -> Option<&ReasoningFrame> {
        self.frames.last()
    }

    pub fn push(&mut self, frame: ReasoningFrame) -> Result<(), StackError> {
        if frame.index != self.frames.len() {
            return Err(StackError::IndexMismatch {
                expected: self.frames.len(),
                found: frame.index,
            });
        }
        self.frames.push(frame);
        Ok(())
    }

    /// Removes and returns the top frame.
    pub fn pop(&mut self) -> Option<ReasoningFrame> {
        self.frames.pop()
    }

    /// The last `min(k, len)` frames, oldest first.
    pub fn window(&self, k: usize) -> &[ReasoningFrame] {
        let k = k.max(1);
        &self.frames[self.frames.len().saturating_sub(k)..]
    }

    pub fn window_tokens(&self, k: usize) -> usize {
        self.window(k).iter().map(|f| f.token_count).sum()
    }

    pub fn total_tokens(&self) -> usize {
        self.frames.iter().map(|f| f.token_count).sum()
    }

    /// Duplicates the top frame once per candidate, best match first.
    ///
    /// Candidates are ranked by score, ties by tool name; only the first
    /// `max_width` become branches. Every branch top records the candidates
    /// it did not take as alternatives, and has its evidence cleared until
    /// [`settle_top`](Self::settle_top) runs the call.
    pub fn branch(
        &self,
        candidates: &[ScoredCall],
        max_width: usize,
    ) -> Result<StackPool, StackError> {
        if candidates.len() < 2 {
            return Err(StackError::TooFewCandidates(candidates.len()));
        }
        let top = self.top().ok_or(StackError::EmptyStack)?;
        let mut ranked: Vec<&ScoredCall> = candidates.iter().collect();
        ranked.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.call.tool_name.cmp(&b.call.tool_name))
                .then_with(|| a.call.server_name.cmp(&b.call.server_name))
        });
        let width = ranked.len().min(max_width.max(1));

        let branches = ranked
            .iter()
            .take(width)
            .enumerate()
            .map(|(id, chosen)| {
                let mut frame = top.clone();
                frame.kind = FrameKind::ToolCall;
                frame.tool_call = Some(chosen.call.clone());
                frame.evidence = None;
                frame.feedback = None;
                frame.terminal = None;
                frame.alternatives = ranked
                    .iter()
                    .enumerate()
                    .filter(|(other, _)| *other != id)
                    .map(|(_, c)| c.call.clone())
                    .collect();
                let mut stack = self.clone();
                stack.frames.pop();
                stack.frames.push(frame);
                stack.branch_id = id as u32;
                stack.score = None;
                stack
            })
            .collect();
        Ok(StackPool {
            branches,
            max_width: max_width.max(1),
        })
    }

    /// Attaches evidence to a top frame produced by [`branch`](Self::branch),
    /// optionally replacing its decision text.
    pub fn settle_top(
        &mut self,
        evidence: Evidence,
        decision: Option<String>,
        token_count: usize,
    ) -> Result<(), StackError> {
        let top = self
            .frames
            .last_mut()
            .ok_or(StackError::NotPending("stack is empty"))?;
        if top.tool_call.is_none() {
            return Err(StackError::NotPending("top frame has no call"));
        }
        if top.evidence.is_some() {
            return Err(StackError::NotPending("top frame already has evidence"));
        }
        top.evidence = Some(evidence);
        if let Some(decision) = decision {
            top.decision = decision;
        }
        top.token_count = token_count;
        Ok(())
    }

    /// Scans from the top for the first frame with unexplored alternatives.
    ///
    /// Frames above it are discarded and a copy of it is returned; it stays
    /// on the stack as the new top. Returns `None`, leaving the stack as it
    /// was, when no frame is discoverable.
    pub fn pop_discoverable(&mut self) -> Option<ReasoningFrame> {
        let position = self
            .frames
            .iter()
            .rposition(ReasoningFrame::is_discoverable)?;
        self.frames.truncate(position + 1);
        Some(self.frames[position].clone())
    }
}

/// Parallel stacks exploring equally plausible calls for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct StackPool {
    pub branches: Vec<ReasoningStack>,
    pub max_width: usize,
}

impl StackPool {
    pub fn width(&self) -> usize {
        self.branches.len()
    }

    /// Keeps the best-scoring branch; equal scores go to the lowest branch id.
    pub fn prune(self, scores: &BTreeMap<u32, f64>) -> Result<ReasoningStack, StackError> {
        if self.branches.is_empty() {
            return Err(StackError::EmptyPool);
        }
        let mut best: Option<(f64, ReasoningStack)> = None;
        for branch in self.branches {
            let score = *scores
                .get(&branch.branch_id)
                .ok_or(StackError::Unscored(branch.branch_id))?;
            let better = match &best {
                None => true,
                Some((top, current)) => {
                    score > *top || (score == *top && branch.branch_id < current.branch_id)
                }
            };
            if better {
                best = Some((score, branch));
            }
        }
        let (score, mut winner) = best.expect("pool is non-empty");
        winner.score = Some(score);
        Ok(winner)
    }
}
