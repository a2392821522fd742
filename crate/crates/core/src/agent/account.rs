use std::fmt;

use serde::{Deserialize, Serialize};

use super::{AgentError, RunReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub round: usize,
    pub windowed_context: Option<usize>,
    pub full_context: Option<usize>,
    pub windowed_prompt: Option<usize>,
    pub full_prompt: Option<usize>,
}

/// Percentage saved by the windowed run relative to the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reductions {
    pub context_pct: f64,
    pub prompt_pct: f64,
    pub model_latency_pct: f64,
    pub wall_time_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub scenario: String,
    pub rows: Vec<ComparisonRow>,
    pub windowed_context: usize,
    pub full_context: usize,
    pub windowed_prompt: usize,
    pub full_prompt: usize,
    pub windowed_latency_ms: f64,
    pub full_latency_ms: f64,
    pub reductions: Reductions,
}

fn reduction(windowed: f64, full: f64) -> f64 {
    if full <= 0.0 {
        0.0
    } else {
        (1.0 - windowed / full) * 100.0
    }
}

/// Compares a windowed run with a baseline run on the same input, round by
/// round.
pub fn account(windowed: &RunReport, full: &RunReport) -> Result<ComparisonTable, AgentError> {
    if windowed.scenario != full.scenario {
        return Err(AgentError::ScenarioMismatch(
            windowed.scenario.clone(),
            full.scenario.clone(),
        ));
    }
    let len = windowed.per_round.len().max(full.per_round.len());
    let rows = (0..len)
        .map(|i| {
            let w = windowed.per_round.get(i);
            let f = full.per_round.get(i);
            ComparisonRow {
                round: w.or(f).map(|s| s.round).unwrap_or(i),
                windowed_context: w.map(|s| s.context_tokens),
                full_context: f.map(|s| s.context_tokens),
                windowed_prompt: w.map(|s| s.prompt_tokens),
                full_prompt: f.map(|s| s.prompt_tokens),
            }
        })
        .collect();
    let (w, f) = (&windowed.totals, &full.totals);
    Ok(ComparisonTable {
        scenario: windowed.scenario.clone(),
        rows,
        windowed_context: w.context_tokens,
        full_context: f.context_tokens,
        windowed_prompt: w.prompt_tokens,
        full_prompt: f.prompt_tokens,
        windowed_latency_ms: w.model_latency_ms,
        full_latency_ms: f.model_latency_ms,
        reductions: Reductions {
            context_pct: reduction(w.context_tokens as f64, f.context_tokens as f64),
            prompt_pct: reduction(w.prompt_tokens as f64, f.prompt_tokens as f64),
            model_latency_pct: reduction(w.model_latency_ms, f.model_latency_ms),
            wall_time_pct: reduction(w.wall_time_ms, f.wall_time_ms),
        },
    })
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: Option<usize>| v.map_or_else(|| "-".to_string(), |n| n.to_string());
        writeln!(f, "scenario {}", self.scenario)?;
        writeln!(
            f,
            "{:>5}  {:>10}  {:>10}  {:>10}  {:>10}",
            "round", "ctx_win", "ctx_full", "prm_win", "prm_full"
        )?;
        for row in &self.rows {
            writeln!(
                f,
                "{:>5}  {:>10}  {:>10}  {:>10}  {:>10}",
                row.round,
                cell(row.windowed_context),
                cell(row.full_context),
                cell(row.windowed_prompt),
                cell(row.full_prompt)
            )?;
        }
        writeln!(
            f,
            "{:>5}  {:>10}  {:>10}  {:>10}  {:>10}",
            "total",
            self.windowed_context,
            self.full_context,
            self.windowed_prompt,
            self.full_prompt
        )?;
        writeln!(f, "context reduction: {:.1}%", self.reductions.context_pct)?;
        writeln!(f, "prompt reduction: {:.1}%", self.reductions.prompt_pct)?;
        write!(
            f,
            "model latency reduction: {:.1}%",
            self.reductions.model_latency_pct
        )
    }
}
