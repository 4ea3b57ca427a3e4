//! Line-delimited JSON protocol for node functions hosted outside the
//! engine.
//!
//! Requests are `{"id", "node", "input", "config", "seed"}`; responses are
//! `{"id", "output", "cost"?, "feedback"?}` or `{"id", "error"}`. Several
//! requests may be in flight at once and responses may arrive in any
//! order; they are matched by id.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ParamValue;
use crate::graph::{NodeFault, NodeFunction, NodeOutput, NodeParams, NodeRegistry};
use crate::value::Value;

/// Cost assumed when a response omits it.
pub const DEFAULT_COST: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub node: String,
    pub input: Value,
    #[serde(default)]
    pub config: BTreeMap<String, ParamValue>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub feedback: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    fn failure(id: u64, message: impl Into<String>) -> Self {
        Self {
            id,
            output: None,
            cost: None,
            feedback: Vec::new(),
            error: Some(message.into()),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("peer closed the session")]
    Closed,
    #[error("peer error: {0}")]
    Remote(String),
}

impl From<std::io::Error> for ProtocolError {
    fn from(e: std::io::Error) -> Self {
        ProtocolError::Io(e.to_string())
    }
}

/// Decodes one request line. A line that is JSON with a numeric `id` but
/// otherwise malformed yields `Err(Some(id))`; anything else `Err(None)`.
pub fn decode_request(line: &str) -> Result<Request, (Option<u64>, String)> {
    let raw: serde_json::Value = serde_json::from_str(line).map_err(|e| (None, e.to_string()))?;
    let id = raw.get("id").and_then(serde_json::Value::as_u64);
    serde_json::from_value(raw).map_err(|e| (id, e.to_string()))
}

/// Decodes one response line.
pub fn decode_response(line: &str) -> Result<Response, ProtocolError> {
    serde_json::from_str(line).map_err(|e| ProtocolError::ProtocolViolation(e.to_string()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub answered: u64,
    pub errors: u64,
}

fn send<W: Write>(writer: &mut W, frame: &impl Serialize) -> Result<(), ProtocolError> {
    let line = serde_json::to_string(frame).map_err(|e| ProtocolError::Io(e.to_string()))?;
    writeln!(writer, "{line}")?;
    writer.flush()?;
    Ok(())
}

/// Answers requests from `reader` with functions from `registry` until
/// end of input. A malformed request with a recoverable id gets an error
/// response and the session continues; a line without one is a protocol
/// violation and ends the session after an error frame.
pub fn serve_external_node<R: BufRead, W: Write>(
    reader: R,
    mut writer: W,
    registry: &NodeRegistry,
) -> Result<ServeStats, ProtocolError> {
    let mut stats = ServeStats::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let request = match decode_request(&line) {
            Ok(r) => r,
            Err((Some(id), reason)) => {
                send(
                    &mut writer,
                    &Response::failure(id, format!("malformed request: {reason}")),
                )?;
                stats.errors += 1;
                continue;
            }
            Err((None, reason)) => {
                send(
                    &mut writer,
                    &serde_json::json!({ "id": null, "error": format!("protocol violation: {reason}") }),
                )?;
                return Err(ProtocolError::ProtocolViolation(reason));
            }
        };
        let response = match registry.get(&request.node) {
            None => Response::failure(request.id, format!("unknown node function {}", request.node)),
            Some(f) => match f.call(&request.input, &NodeParams(request.config), request.seed) {
                Ok(out) => Response {
                    id: request.id,
                    output: Some(out.value),
                    cost: Some(out.cost),
                    feedback: out.notes,
                    error: None,
                },
                Err(fault) => Response::failure(request.id, fault.0),
            },
        };
        if response.error.is_some() {
            stats.errors += 1;
        } else {
            stats.answered += 1;
        }
        send(&mut writer, &response)?;
    }
    Ok(stats)
}

type Waiters = Arc<Mutex<HashMap<u64, Sender<Result<Response, ProtocolError>>>>>;

/// Client side of a session. Calls may be issued from many threads; a
/// reader thread routes each response to its caller by id.
pub struct ExternalPeer {
    writer: Mutex<Box<dyn Write + Send>>,
    waiters: Waiters,
    next_id: AtomicU64,
    reader: Mutex<Option<JoinHandle<()>>>,
}

impl ExternalPeer {
    pub fn new<R, W>(reader: R, writer: W) -> Arc<Self>
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        let waiters: Waiters = Arc::new(Mutex::new(HashMap::new()));
        let routed = waiters.clone();
        let handle = std::thread::spawn(move || {
            let mut failure = ProtocolError::Closed;
            for line in reader.lines() {
                let Ok(line) = line else {
                    failure = ProtocolError::Io("read failed".into());
                    break;
                };
                if line.trim().is_empty() {
                    continue;
                }
                match decode_response(&line) {
                    Ok(r) => {
                        if let Some(tx) = routed.lock().expect("waiters lock").remove(&r.id) {
                            let _ = tx.send(Ok(r));
                        }
                    }
                    Err(e) => {
                        failure = e;
                        break;
                    }
                }
            }
            for (_, tx) in routed.lock().expect("waiters lock").drain() {
                let _ = tx.send(Err(failure.clone()));
            }
        });
        Arc::new(Self {
            writer: Mutex::new(Box::new(writer)),
            waiters,
            next_id: AtomicU64::new(1),
            reader: Mutex::new(Some(handle)),
        })
    }

    /// Sends one request and blocks until its response arrives.
    pub fn call(
        &self,
        node: &str,
        input: &Value,
        config: &BTreeMap<String, ParamValue>,
        seed: u64,
    ) -> Result<Response, ProtocolError> {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let (tx, rx) = channel();
        self.waiters.lock().expect("waiters lock").insert(id, tx);
        let request = Request {
            id,
            node: node.to_string(),
            input: input.clone(),
            config: config.clone(),
            seed,
        };
        let sent = {
            let mut w = self.writer.lock().expect("writer lock");
            send(&mut *w, &request)
        };
        if let Err(e) = sent {
            self.waiters.lock().expect("waiters lock").remove(&id);
            return Err(e);
        }
        let response = rx.recv().map_err(|_| ProtocolError::Closed)??;
        match response.error {
            Some(e) => Err(ProtocolError::Remote(e)),
            None => Ok(response),
        }
    }

    /// Waits for the reader thread after the peer closes its stream.
    pub fn join(&self) {
        if let Some(h) = self.reader.lock().expect("reader lock").take() {
            let _ = h.join();
        }
    }
}

/// A node function that forwards every call to a peer.
pub struct ExternalNode {
    pub peer: Arc<ExternalPeer>,
    /// Function name on the peer's side.
    pub node: String,
}

impl ExternalNode {
    pub fn new(peer: Arc<ExternalPeer>, node: impl Into<String>) -> Self {
        Self {
            peer,
            node: node.into(),
        }
    }
}

impl NodeFunction for ExternalNode {
    fn call(&self, input: &Value, params: &NodeParams, seed: u64) -> Result<NodeOutput, NodeFault> {
        let r = self
            .peer
            .call(&self.node, input, &params.0, seed)
            .map_err(|e| NodeFault(e.to_string()))?;
        Ok(NodeOutput {
            value: r.output.unwrap_or(Value::Absent),
            cost: r.cost.unwrap_or(DEFAULT_COST),
            notes: r.feedback,
        })
    }
}
