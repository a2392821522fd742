use std::collections::BTreeMap;
use std::thread;

use super::client::{LaunchSpec, ServerHandle};
use super::{ToolHost, ToolResult, TransportError};
use crate::codec::{ToolCall, ToolDescriptor};

/// Connected servers addressed by name.
#[derive(Debug, Default)]
pub struct ServerPool {
    handles: BTreeMap<String, ServerHandle>,
}

impl ServerPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Spawns every server; the first failure closes the ones already started.
    pub fn spawn_all(specs: &[LaunchSpec]) -> Result<Self, TransportError> {
        let mut pool = Self::new();
        for spec in specs {
            let handle = ServerHandle::spawn(spec.clone())?;
            pool.insert(handle);
        }
        Ok(pool)
    }

    pub fn insert(&mut self, handle: ServerHandle) {
        self.handles.insert(handle.name().to_string(), handle);
    }

    pub fn get(&self, name: &str) -> Option<&ServerHandle> {
        self.handles.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.handles.keys().map(String::as_str)
    }

    pub fn close_all(&self) {
        for handle in self.handles.values() {
            handle.close();
        }
    }

    /// Runs the calls and returns one result per call, in input order.
    ///
    /// Calls to different servers run concurrently; calls to the same server
    /// run one after another in input order. A call naming an unknown server
    /// yields an error result in its slot.
    pub fn call_batch(&self, calls: &[ToolCall]) -> Vec<ToolResult> {
        let mut by_server: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        let mut results: Vec<Option<ToolResult>> = vec![None; calls.len()];
        for (position, call) in calls.iter().enumerate() {
            if self.handles.contains_key(&call.server_name) {
                by_server
                    .entry(call.server_name.as_str())
                    .or_default()
                    .push(position);
            } else {
                let err = TransportError::UnknownServer(call.server_name.clone());
                results[position] = Some(ToolResult::error(err.to_string()));
            }
        }

        let finished: Vec<(usize, ToolResult)> = thread::scope(|scope| {
            let workers: Vec<_> = by_server
                .into_iter()
                .map(|(server, positions)| {
                    let handle = &self.handles[server];
                    scope.spawn(move || {
                        positions
                            .into_iter()
                            .map(|position| {
                                let call = &calls[position];
                                (position, call_or_error(handle, call))
                            })
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            workers
                .into_iter()
                .flat_map(|worker| worker.join().expect("batch worker panicked"))
                .collect()
        });
        for (position, result) in finished {
            results[position] = Some(result);
        }
        results
            .into_iter()
            .map(|r| r.expect("every slot filled"))
            .collect()
    }
}

fn call_or_error(handle: &ServerHandle, call: &ToolCall) -> ToolResult {
    match handle.call_tool(call, handle.spec().call_timeout()) {
        Ok(result) => result,
        Err(err) => ToolResult::error(err.to_string()),
    }
}

impl ToolHost for ServerPool {
    fn tools(&self) -> Result<Vec<ToolDescriptor>, TransportError> {
        let mut tools = Vec::new();
        for handle in self.handles.values() {
            tools.extend(handle.list_tools()?);
        }
        Ok(tools)
    }

    fn call(&self, call: &ToolCall) -> Result<ToolResult, TransportError> {
        let handle = self
            .handles
            .get(&call.server_name)
            .ok_or_else(|| TransportError::UnknownServer(call.server_name.clone()))?;
        handle.call_tool(call, handle.spec().call_timeout())
    }
}
