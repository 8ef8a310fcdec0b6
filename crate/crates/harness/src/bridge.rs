//! Client side of the external model backend: newline-delimited JSON
//! requests and responses over a worker's standard streams.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{HarnessError, Result};

pub const PROTOCOL: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeCmd {
    Sample,
    GreedyEval,
    RlUpdate,
    Snapshot,
    Restore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeRequest {
    pub protocol: String,
    pub id: u64,
    pub cmd: BridgeCmd,
    pub payload: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BridgeStatus {
    Ok,
    Error,
}

/// Machine-readable failure carried by an error response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeFault {
    pub code: String,
    #[serde(default)]
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeResponse {
    pub protocol: String,
    pub id: u64,
    pub status: BridgeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<BridgeFault>,
}

impl BridgeResponse {
    pub fn ok(id: u64, payload: Value) -> Self {
        BridgeResponse {
            protocol: PROTOCOL.into(),
            id,
            status: BridgeStatus::Ok,
            payload: Some(payload),
            error: None,
        }
    }

    pub fn error(id: u64, code: &str, message: &str) -> Self {
        BridgeResponse {
            protocol: PROTOCOL.into(),
            id,
            status: BridgeStatus::Error,
            payload: None,
            error: Some(BridgeFault {
                code: code.into(),
                message: message.into(),
            }),
        }
    }
}

/// A question with its reference answer, as the worker sees it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeItem {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRequest {
    pub prompts: Vec<String>,
    pub n: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleResult {
    /// One list of `n` completions per prompt.
    pub completions: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GreedyEvalRequest {
    pub items: Vec<BridgeItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyEvalResult {
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RlUpdateRequest {
    pub items: Vec<BridgeItem>,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlUpdateResult {
    pub mean_reward: f64,
}

/// Opaque checkpoint token minted by the worker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointToken {
    pub token: String,
}

/// Serializes requests to one worker and checks every answer against its
/// request.
#[derive(Debug)]
pub struct BridgeClient<R, W> {
    reader: R,
    writer: W,
    next_id: u64,
}

impl<R: BufRead, W: Write> BridgeClient<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        BridgeClient {
            reader,
            writer,
            next_id: 1,
        }
    }

    /// Sends one request and returns the raw ok-payload.
    pub fn call(&mut self, cmd: BridgeCmd, payload: Value) -> Result<Value> {
        let id = self.next_id;
        self.next_id += 1;
        let req = BridgeRequest {
            protocol: PROTOCOL.into(),
            id,
            cmd,
            payload,
        };
        let mut line = serde_json::to_string(&req).map_err(|e| HarnessError::Bridge(e.to_string()))?;
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| HarnessError::Bridge(format!("write failed: {e}")))?;

        let mut reply = String::new();
        let n = self
            .reader
            .read_line(&mut reply)
            .map_err(|e| HarnessError::Bridge(format!("read failed: {e}")))?;
        if n == 0 {
            return Err(HarnessError::Bridge(format!(
                "worker closed the stream before answering request {id}"
            )));
        }
        let resp: BridgeResponse = serde_json::from_str(reply.trim_end())
            .map_err(|e| HarnessError::Bridge(format!("malformed response to request {id}: {e}")))?;
        if resp.protocol != PROTOCOL {
            return Err(HarnessError::Bridge(format!(
                "unsupported protocol {:?}",
                resp.protocol
            )));
        }
        if resp.id != id {
            return Err(HarnessError::Bridge(format!(
                "response id {} does not match request {id}",
                resp.id
            )));
        }
        match resp.status {
            BridgeStatus::Ok => Ok(resp.payload.unwrap_or(Value::Null)),
            BridgeStatus::Error => {
                let f = resp.error.unwrap_or(BridgeFault {
                    code: "unknown".into(),
                    message: String::new(),
                });
                Err(HarnessError::Bridge(format!(
                    "request {id} failed with {}: {}",
                    f.code, f.message
                )))
            }
        }
    }

    fn typed<P: Serialize, T: DeserializeOwned>(&mut self, cmd: BridgeCmd, payload: &P) -> Result<T> {
        let value = serde_json::to_value(payload).map_err(|e| HarnessError::Bridge(e.to_string()))?;
        let out = self.call(cmd, value)?;
        serde_json::from_value(out).map_err(|e| HarnessError::Bridge(format!("unexpected {cmd:?} payload: {e}")))
    }

    pub fn sample(&mut self, req: &SampleRequest) -> Result<SampleResult> {
        let out: SampleResult = self.typed(BridgeCmd::Sample, req)?;
        if out.completions.len() != req.prompts.len() || out.completions.iter().any(|c| c.len() != req.n) {
            return Err(HarnessError::Bridge(
                "sample response does not match prompts x n".into(),
            ));
        }
        Ok(out)
    }

    pub fn greedy_eval(&mut self, items: &[BridgeItem]) -> Result<f64> {
        let out: GreedyEvalResult = self.typed(BridgeCmd::GreedyEval, &GreedyEvalRequest { items: items.to_vec() })?;
        Ok(out.accuracy)
    }

    pub fn rl_update(&mut self, req: &RlUpdateRequest) -> Result<RlUpdateResult> {
        self.typed(BridgeCmd::RlUpdate, req)
    }

    pub fn snapshot(&mut self) -> Result<CheckpointToken> {
        self.typed(BridgeCmd::Snapshot, &serde_json::json!({}))
    }

    pub fn restore(&mut self, token: &CheckpointToken) -> Result<()> {
        let _: Value = self.typed(BridgeCmd::Restore, token)?;
        Ok(())
    }
}

/// A worker process with its client.
#[derive(Debug)]
pub struct BridgeProcess {
    child: Child,
    pub client: BridgeClient<BufReader<ChildStdout>, ChildStdin>,
}

impl BridgeProcess {
    /// Starts `program args...` with piped standard streams.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| HarnessError::Bridge(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(BridgeProcess {
            child,
            client: BridgeClient::new(BufReader::new(stdout), stdin),
        })
    }

    /// Closes the worker's input and waits for it to exit.
    pub fn shutdown(self) -> Result<()> {
        let BridgeProcess { mut child, client } = self;
        drop(client);
        child
            .wait()
            .map_err(|e| HarnessError::Bridge(format!("worker did not exit cleanly: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn request_wire_format_is_stable() {
        let req = BridgeRequest {
            protocol: PROTOCOL.into(),
            id: 3,
            cmd: BridgeCmd::GreedyEval,
            payload: serde_json::json!({"items": []}),
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"protocol":"v1","id":3,"cmd":"greedy_eval","payload":{"items":[]}}"#
        );
        let err = BridgeResponse::error(3, "bad_request", "x");
        assert_eq!(
            serde_json::to_string(&err).unwrap(),
            r#"{"protocol":"v1","id":3,"status":"error","error":{"code":"bad_request","message":"x"}}"#
        );
    }

    #[test]
    fn mismatched_id_is_rejected() {
        let reply = format!(
            "{}\n",
            serde_json::to_string(&BridgeResponse::ok(7, Value::Null)).unwrap()
        );
        let mut client = BridgeClient::new(Cursor::new(reply.into_bytes()), Vec::new());
        let err = client.snapshot().unwrap_err();
        assert!(err.to_string().contains("does not match"));
    }

    #[test]
    fn closed_stream_is_an_error() {
        let mut client = BridgeClient::new(Cursor::new(Vec::new()), Vec::new());
        assert!(matches!(client.snapshot(), Err(HarnessError::Bridge(_))));
    }

    #[test]
    fn error_response_carries_code() {
        let reply = format!(
            "{}\n",
            serde_json::to_string(&BridgeResponse::error(1, "oom", "")).unwrap()
        );
        let mut client = BridgeClient::new(Cursor::new(reply.into_bytes()), Vec::new());
        let err = client.greedy_eval(&[]).unwrap_err();
        assert!(err.to_string().contains("oom"));
    }
}
