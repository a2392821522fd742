use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::wire::{Frame, Kind, WireTool, PROTOCOL_VERSION};
use super::{ToolResult, TransportError, DEFAULT_CALL_TIMEOUT, DEFAULT_HANDSHAKE_TIMEOUT};
use crate::codec::{ToolCall, ToolDescriptor};

/// How to start one tool server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaunchSpec {
    pub name: String,
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub cwd: Option<PathBuf>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    #[serde(default = "default_handshake_ms")]
    pub handshake_timeout_ms: u64,
    #[serde(default = "default_call_ms")]
    pub call_timeout_ms: u64,
}

fn default_handshake_ms() -> u64 {
    DEFAULT_HANDSHAKE_TIMEOUT.as_millis() as u64
}

fn default_call_ms() -> u64 {
    DEFAULT_CALL_TIMEOUT.as_millis() as u64
}

impl LaunchSpec {
    pub fn new(name: impl Into<String>, command: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            command: command.into(),
            args: Vec::new(),
            cwd: None,
            env: BTreeMap::new(),
            handshake_timeout_ms: default_handshake_ms(),
            call_timeout_ms: default_call_ms(),
        }
    }

    pub fn arg(mut self, arg: impl Into<String>) -> Self {
        self.args.push(arg.into());
        self
    }

    pub fn handshake_timeout(&self) -> Duration {
        Duration::from_millis(self.handshake_timeout_ms)
    }

    pub fn call_timeout(&self) -> Duration {
        Duration::from_millis(self.call_timeout_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServerState {
    Spawned,
    Ready,
    Failed,
    Closed,
}

type Reply = Result<Frame, TransportError>;

struct Shared {
    name: String,
    state: Mutex<ServerState>,
    writer: Mutex<Option<ChildStdin>>,
    pending: Mutex<HashMap<u64, mpsc::Sender<Reply>>>,
    next_id: AtomicU64,
    tools: Mutex<Vec<ToolDescriptor>>,
    stderr: Mutex<Vec<String>>,
    transcript: Mutex<Vec<String>>,
    orphans: AtomicUsize,
}

impl Shared {
    fn fail_pending(&self) {
        let drained: Vec<_> = self.pending.lock().unwrap().drain().collect();
        for (_, tx) in drained {
            let _ = tx.send(Err(TransportError::TransportClosed(self.name.clone())));
        }
    }

    fn record(&self, direction: char, line: &str) {
        self.transcript
            .lock()
            .unwrap()
            .push(format!("{direction} {}", line.trim_end_matches('\n')));
    }
}

/// A connected tool server.
///
/// One reader thread routes responses to waiting callers by request id and
/// writes are serialized through a mutex, so a handle can be shared between
/// threads.
pub struct ServerHandle {
    spec: LaunchSpec,
    shared: Arc<Shared>,
    child: Mutex<Child>,
}

impl std::fmt::Debug for ServerHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServerHandle")
            .field("name", &self.spec.name)
            .field("state", &self.state())
            .finish()
    }
}

impl ServerHandle {
    /// Starts the server process and performs the hello handshake.
    pub fn spawn(spec: LaunchSpec) -> Result<Self, TransportError> {
        let mut command = Command::new(&spec.command);
        command
            .args(&spec.args)
            .envs(&spec.env)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        if let Some(cwd) = &spec.cwd {
            command.current_dir(cwd);
        }
        let mut child = command
            .spawn()
            .map_err(|err| TransportError::SpawnFailed(format!("{}: {err}", spec.command)))?;

        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let stderr = child.stderr.take().expect("stderr is piped");

        let shared = Arc::new(Shared {
            name: spec.name.clone(),
            state: Mutex::new(ServerState::Spawned),
            writer: Mutex::new(Some(stdin)),
            pending: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(0),
            tools: Mutex::new(Vec::new()),
            stderr: Mutex::new(Vec::new()),
            transcript: Mutex::new(Vec::new()),
            orphans: AtomicUsize::new(0),
        });

        let reader_shared = Arc::clone(&shared);
        thread::Builder::new()
            .name(format!("{}-reader", spec.name))
            .spawn(move || read_loop(BufReader::new(stdout), &reader_shared))
            .map_err(|err| TransportError::SpawnFailed(err.to_string()))?;

        let stderr_shared = Arc::clone(&shared);
        thread::Builder::new()
            .name(format!("{}-stderr", spec.name))
            .spawn(move || {
                for line in BufReader::new(stderr).lines().map_while(Result::ok) {
                    log::debug!(target: "vicot::server_stderr", "[{}] {line}", stderr_shared.name);
                    stderr_shared.stderr.lock().unwrap().push(line);
                }
            })
            .map_err(|err| TransportError::SpawnFailed(err.to_string()))?;

        let handle = Self {
            spec,
            shared,
            child: Mutex::new(child),
        };
        match handle.handshake() {
            Ok(()) => Ok(handle),
            Err(err) => {
                handle.set_state(ServerState::Failed);
                handle.kill();
                Err(err)
            }
        }
    }

    fn handshake(&self) -> Result<(), TransportError> {
        let timeout = self.spec.handshake_timeout();
        let reply = self
            .request(
                Kind::Hello,
                json!({ "protocol_version": PROTOCOL_VERSION }),
                timeout,
            )
            .map_err(|err| match err {
                TransportError::Timeout(_) => TransportError::HandshakeTimeout(timeout),
                other => other,
            })?;
        if reply.kind != Kind::Hello {
            return Err(TransportError::HandshakeFailed(format!(
                "expected hello, got {:?}",
                reply.kind
            )));
        }
        let version = reply
            .payload
            .get("protocol_version")
            .and_then(Value::as_u64);
        if version != Some(PROTOCOL_VERSION) {
            return Err(TransportError::HandshakeFailed(format!(
                "protocol version mismatch: client {PROTOCOL_VERSION}, server {version:?}"
            )));
        }
        let tools = self.decode_tools(&reply.payload)?;
        *self.shared.tools.lock().unwrap() = tools;
        self.set_state(ServerState::Ready);
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn spec(&self) -> &LaunchSpec {
        &self.spec
    }

    pub fn state(&self) -> ServerState {
        *self.shared.state.lock().unwrap()
    }

    fn set_state(&self, state: ServerState) {
        *self.shared.state.lock().unwrap() = state;
    }

    /// Tools from the most recent handshake or `list_tools`.
    pub fn discovered_tools(&self) -> Vec<ToolDescriptor> {
        self.shared.tools.lock().unwrap().clone()
    }

    /// Lines the server wrote to stderr so far.
    pub fn stderr_lines(&self) -> Vec<String> {
        self.shared.stderr.lock().unwrap().clone()
    }

    /// Every frame sent (`>`) and received (`<`), in order.
    pub fn transcript(&self) -> Vec<String> {
        self.shared.transcript.lock().unwrap().clone()
    }

    /// Responses that arrived for no waiting request.
    pub fn orphan_responses(&self) -> usize {
        self.shared.orphans.load(Ordering::SeqCst)
    }

    /// Re-queries the server and refreshes the cached descriptors.
    pub fn list_tools(&self) -> Result<Vec<ToolDescriptor>, TransportError> {
        self.ensure_ready()?;
        let reply = self.request(Kind::ListTools, json!({}), self.spec.call_timeout())?;
        let tools = self.decode_tools(&reply.payload)?;
        *self.shared.tools.lock().unwrap() = tools.clone();
        Ok(tools)
    }

    pub fn call_tool(
        &self,
        call: &ToolCall,
        timeout: Duration,
    ) -> Result<ToolResult, TransportError> {
        if call.server_name != self.spec.name {
            return Err(TransportError::WrongServer {
                expected: self.spec.name.clone(),
                found: call.server_name.clone(),
            });
        }
        self.ensure_ready()?;
        let started = Instant::now();
        let reply = self.request(
            Kind::CallTool,
            json!({ "tool_name": call.tool_name, "arguments": call.arguments }),
            timeout,
        )?;
        if reply.kind != Kind::Result {
            return Err(TransportError::Protocol(format!(
                "expected result, got {:?}",
                reply.kind
            )));
        }
        Ok(ToolResult::from_payload(reply.payload, started.elapsed()))
    }

    /// Closes stdin, gives the server a moment to exit, then kills it.
    pub fn close(&self) {
        self.set_state(ServerState::Closed);
        self.shared.writer.lock().unwrap().take();
        let deadline = Instant::now() + Duration::from_millis(500);
        loop {
            match self.child.lock().unwrap().try_wait() {
                Ok(Some(_)) | Err(_) => break,
                Ok(None) if Instant::now() >= deadline => {
                    self.kill();
                    break;
                }
                Ok(None) => thread::sleep(Duration::from_millis(10)),
            }
        }
        self.shared.fail_pending();
    }

    fn kill(&self) {
        let mut child = self.child.lock().unwrap();
        let _ = child.kill();
        let _ = child.wait();
    }

    fn ensure_ready(&self) -> Result<(), TransportError> {
        match self.state() {
            ServerState::Ready => Ok(()),
            _ => Err(TransportError::TransportClosed(self.spec.name.clone())),
        }
    }

    fn decode_tools(&self, payload: &Value) -> Result<Vec<ToolDescriptor>, TransportError> {
        let entries = match payload.get("tools") {
            None => return Ok(Vec::new()),
            Some(entries) => entries.clone(),
        };
        let wire: Vec<WireTool> = serde_json::from_value(entries)
            .map_err(|err| TransportError::Protocol(format!("bad tool list: {err}")))?;
        wire.into_iter()
            .map(|tool| {
                tool.into_descriptor(&self.spec.name)
                    .map_err(|err| TransportError::Protocol(err.to_string()))
            })
            .collect()
    }

    fn request(
        &self,
        kind: Kind,
        payload: Value,
        timeout: Duration,
    ) -> Result<Frame, TransportError> {
        let id = self.shared.next_id.fetch_add(1, Ordering::SeqCst);
        let (tx, rx) = mpsc::channel();
        self.shared.pending.lock().unwrap().insert(id, tx);

        let line = Frame::new(Some(id), kind, payload).to_line();
        let written = {
            let mut writer = self.shared.writer.lock().unwrap();
            match writer.as_mut() {
                Some(stdin) => {
                    self.shared.record('>', &line);
                    stdin
                        .write_all(line.as_bytes())
                        .and_then(|_| stdin.flush())
                        .is_ok()
                }
                None => false,
            }
        };
        if !written {
            self.shared.pending.lock().unwrap().remove(&id);
            if self.state() != ServerState::Closed {
                self.set_state(ServerState::Failed);
            }
            return Err(TransportError::TransportClosed(self.spec.name.clone()));
        }

        match rx.recv_timeout(timeout) {
            Ok(reply) => reply,
            Err(RecvTimeoutError::Timeout) => {
                self.shared.pending.lock().unwrap().remove(&id);
                Err(TransportError::Timeout(timeout))
            }
            Err(RecvTimeoutError::Disconnected) => {
                Err(TransportError::TransportClosed(self.spec.name.clone()))
            }
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.state() != ServerState::Closed {
            self.close();
        }
    }
}

fn read_loop(reader: impl BufRead, shared: &Shared) {
    for line in reader.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        shared.record('<', &line);
        let frame = match Frame::parse(&line) {
            Ok(frame) => frame,
            Err(err) => {
                log::warn!("[{}] undecodable frame: {err}", shared.name);
                shared.orphans.fetch_add(1, Ordering::SeqCst);
                continue;
            }
        };
        let waiter = frame
            .id
            .and_then(|id| shared.pending.lock().unwrap().remove(&id));
        match waiter {
            Some(tx) => {
                let _ = tx.send(Ok(frame));
            }
            None => {
                log::warn!(
                    "[{}] response without a waiting request: {line}",
                    shared.name
                );
                shared.orphans.fetch_add(1, Ordering::SeqCst);
            }
        }
    }
    {
        let mut state = shared.state.lock().unwrap();
        if *state != ServerState::Closed {
            *state = ServerState::Failed;
        }
    }
    shared.fail_pending();
}
