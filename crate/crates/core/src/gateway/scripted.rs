use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{estimate_tokens, Backend, BackendRole, GatewayError, ModelTurn, PromptBundle};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptMode {
    /// Responses per role are consumed in file order; rounds are ignored.
    #[default]
    Sequential,
    /// Responses are looked up by `(role, round)`.
    Keyed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedResponse {
    pub role: BackendRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<usize>,
    pub text: String,
    /// Expected [`PromptBundle::hash`] of the request; a mismatch is an error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
}

impl ScriptedResponse {
    pub fn new(role: BackendRole, text: impl Into<String>) -> Self {
        Self {
            role,
            round: None,
            text: text.into(),
            prompt_hash: None,
        }
    }

    pub fn at_round(mut self, round: usize) -> Self {
        self.round = Some(round);
        self
    }
}

/// On-disk form of a scripted backend.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedScript {
    #[serde(default)]
    pub mode: ScriptMode,
    /// Modelled latency per 1000 prompt tokens, reported but never slept.
    #[serde(default)]
    pub ms_per_1k_prompt_tokens: f64,
    pub responses: Vec<ScriptedResponse>,
}

type Key = (BackendRole, Option<usize>);

/// Backend that answers from canned responses.
///
/// Consumption is atomic per key, so concurrent callers never receive the
/// same response twice. Asking for more responses than were scripted is an
/// error.
#[derive(Debug)]
pub struct ScriptedBackend {
    id: String,
    mode: ScriptMode,
    ms_per_1k_prompt_tokens: f64,
    queues: Mutex<BTreeMap<Key, VecDeque<ScriptedResponse>>>,
}

impl ScriptedBackend {
    pub fn new(id: impl Into<String>, script: ScriptedScript) -> Result<Self, GatewayError> {
        let mut queues: BTreeMap<Key, VecDeque<ScriptedResponse>> = BTreeMap::new();
        for response in script.responses {
            let key = match script.mode {
                ScriptMode::Sequential => (response.role, None),
                ScriptMode::Keyed => {
                    let round = response.round.ok_or_else(|| {
                        GatewayError::Config("keyed scripts need a round on every response".into())
                    })?;
                    (response.role, Some(round))
                }
            };
            queues.entry(key).or_default().push_back(response);
        }
        Ok(Self {
            id: id.into(),
            mode: script.mode,
            ms_per_1k_prompt_tokens: script.ms_per_1k_prompt_tokens,
            queues: Mutex::new(queues),
        })
    }

    /// Sequential backend answering one role.
    pub fn sequential<I, S>(id: impl Into<String>, role: BackendRole, texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let script = ScriptedScript {
            responses: texts
                .into_iter()
                .map(|t| ScriptedResponse::new(role, t))
                .collect(),
            ..ScriptedScript::default()
        };
        Self::new(id, script).expect("sequential scripts need no rounds")
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|err| GatewayError::Config(format!("{}: {err}", path.display())))?;
        let script: ScriptedScript = serde_json::from_str(&text)
            .map_err(|err| GatewayError::Config(format!("{}: {err}", path.display())))?;
        let id = format!("scripted:{}", path.display());
        Self::new(id, script)
    }

    pub fn with_latency_model(mut self, ms_per_1k_prompt_tokens: f64) -> Self {
        self.ms_per_1k_prompt_tokens = ms_per_1k_prompt_tokens;
        self
    }

    pub fn remaining(&self, role: BackendRole) -> usize {
        self.queues
            .lock()
            .unwrap()
            .iter()
            .filter(|((r, _), _)| *r == role)
            .map(|(_, q)| q.len())
            .sum()
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(
        &self,
        role: BackendRole,
        bundle: &PromptBundle,
    ) -> Result<ModelTurn, GatewayError> {
        let key = match self.mode {
            ScriptMode::Sequential => (role, None),
            ScriptMode::Keyed => (role, Some(bundle.round)),
        };
        let response = self
            .queues
            .lock()
            .unwrap()
            .get_mut(&key)
            .and_then(VecDeque::pop_front)
            .ok_or(GatewayError::BackendExhausted {
                role,
                round: bundle.round,
            })?;
        if let Some(expected) = &response.prompt_hash {
            let found = bundle.hash();
            if *expected != found {
                return Err(GatewayError::PromptDrift {
                    role,
                    round: bundle.round,
                    expected: expected.clone(),
                    found,
                });
            }
        }
        let prompt_tokens = bundle.prompt_tokens();
        let modelled_ms = prompt_tokens as f64 * self.ms_per_1k_prompt_tokens / 1000.0;
        Ok(ModelTurn {
            completion_tokens: estimate_tokens(&response.text),
            text: response.text,
            prompt_tokens,
            latency: Duration::from_secs_f64(modelled_ms.max(0.0) / 1000.0),
            backend_id: self.id.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(round: usize) -> PromptBundle {
        PromptBundle::new("system", round)
    }

    #[test]
    fn sequential_consumes_in_order_then_exhausts() {
        let backend = ScriptedBackend::sequential("s", BackendRole::Think, ["one", "two"]);
        assert_eq!(
            backend
                .complete(BackendRole::Think, &bundle(5))
                .unwrap()
                .text,
            "one"
        );
        assert_eq!(
            backend
                .complete(BackendRole::Think, &bundle(1))
                .unwrap()
                .text,
            "two"
        );
        assert_eq!(
            backend.complete(BackendRole::Think, &bundle(2)),
            Err(GatewayError::BackendExhausted {
                role: BackendRole::Think,
                round: 2
            })
        );
        assert!(backend.complete(BackendRole::Vision, &bundle(0)).is_err());
    }

    #[test]
    fn keyed_looks_up_round_and_guards_hash() {
        let b = bundle(1);
        let mut guarded = ScriptedResponse::new(BackendRole::Think, "ok").at_round(1);
        guarded.prompt_hash = Some(b.hash());
        let mut drifting = ScriptedResponse::new(BackendRole::Think, "never").at_round(2);
        drifting.prompt_hash = Some("00".into());
        let script = ScriptedScript {
            mode: ScriptMode::Keyed,
            ms_per_1k_prompt_tokens: 0.0,
            responses: vec![drifting, guarded],
        };
        let backend = ScriptedBackend::new("k", script).unwrap();
        assert_eq!(backend.complete(BackendRole::Think, &b).unwrap().text, "ok");
        assert!(matches!(
            backend.complete(BackendRole::Think, &bundle(2)),
            Err(GatewayError::PromptDrift { .. })
        ));
    }

    #[test]
    fn keyed_without_round_is_rejected() {
        let script = ScriptedScript {
            mode: ScriptMode::Keyed,
            ms_per_1k_prompt_tokens: 0.0,
            responses: vec![ScriptedResponse::new(BackendRole::Think, "x")],
        };
        assert!(matches!(
            ScriptedBackend::new("k", script),
            Err(GatewayError::Config(_))
        ));
    }

    #[test]
    fn token_accounting_and_latency_model() {
        let backend = ScriptedBackend::sequential("s", BackendRole::Think, ["abcdefgh"])
            .with_latency_model(1000.0);
        let mut b = bundle(0);
        b.turns[0].content = "x".repeat(400);
        let turn = backend.complete(BackendRole::Think, &b).unwrap();
        assert_eq!(turn.prompt_tokens, 100);
        assert_eq!(turn.completion_tokens, 2);
        assert_eq!(turn.latency, Duration::from_millis(100));
    }
}
