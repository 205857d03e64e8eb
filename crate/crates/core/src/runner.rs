//! Client side of the slide-program runner protocol, and the checkers the
//! pipeline uses to validate generated code.
//!
//! The runner is a long-lived subprocess speaking line-delimited JSON on
//! stdio: one [`RunnerRequest`] per line in, exactly one [`RunnerReply`]
//! per line out, echoing the request's `id` and `op`.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inventory::ShapeRecord;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("failed to start runner {command}: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error("runner pipe failure: {0}")]
    Pipe(String),
    #[error("runner exited unexpectedly")]
    Exited,
    #[error("runner protocol violation: {0}")]
    Protocol(String),
    #[error("runner reported {kind}: {message}")]
    Failed {
        kind: String,
        message: String,
        traceback: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunnerOp {
    SyntaxCheck,
    Execute,
    Extract,
    Render,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerRequest {
    pub id: u64,
    pub op: RunnerOp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workdir: Option<String>,
    pub timeout_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerFailure {
    pub kind: String,
    pub message: String,
    #[serde(default)]
    pub traceback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerReply {
    pub id: u64,
    pub op: RunnerOp,
    pub ok: bool,
    #[serde(default)]
    pub error: Option<RunnerFailure>,
    #[serde(default)]
    pub payload: Option<serde_json::Value>,
}

impl RunnerReply {
    fn validate(&self, req: &RunnerRequest) -> Result<(), RunnerError> {
        if self.id != req.id || self.op != req.op {
            return Err(RunnerError::Protocol(format!(
                "reply {}/{:?} does not answer request {}/{:?}",
                self.id, self.op, req.id, req.op
            )));
        }
        if self.ok == self.error.is_some() {
            return Err(RunnerError::Protocol("reply must carry either ok or an error".into()));
        }
        Ok(())
    }

    fn into_result(self) -> Result<Option<serde_json::Value>, RunnerError> {
        match self.error {
            Some(f) => Err(RunnerError::Failed {
                kind: f.kind,
                message: f.message,
                traceback: f.traceback,
            }),
            None => Ok(self.payload),
        }
    }
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    next_id: u64,
}

/// Handle on one runner process. Requests are serialised through a mutex.
pub struct RunnerClient {
    session: Mutex<Session>,
    timeout_secs: f64,
}

impl RunnerClient {
    pub fn spawn(command: &[String], timeout_secs: f64) -> Result<Self, RunnerError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| RunnerError::Protocol("runner command is empty".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| RunnerError::Spawn {
                command: command.join(" "),
                source,
            })?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout piped"));
        Ok(Self {
            session: Mutex::new(Session {
                child,
                stdin,
                stdout,
                next_id: 1,
            }),
            timeout_secs,
        })
    }

    pub fn call(
        &self,
        op: RunnerOp,
        code: Option<&str>,
        path: Option<&Path>,
        workdir: Option<&Path>,
    ) -> Result<RunnerReply, RunnerError> {
        let mut s = self.session.lock().map_err(|_| RunnerError::Pipe("session poisoned".into()))?;
        let req = RunnerRequest {
            id: s.next_id,
            op,
            code: code.map(str::to_string),
            path: path.map(|p| p.display().to_string()),
            workdir: workdir.map(|p| p.display().to_string()),
            timeout_secs: self.timeout_secs,
        };
        s.next_id += 1;
        let mut line = serde_json::to_string(&req).map_err(|e| RunnerError::Protocol(e.to_string()))?;
        line.push('\n');
        s.stdin
            .write_all(line.as_bytes())
            .and_then(|_| s.stdin.flush())
            .map_err(|e| RunnerError::Pipe(e.to_string()))?;
        let mut reply_line = String::new();
        let n = s
            .stdout
            .read_line(&mut reply_line)
            .map_err(|e| RunnerError::Pipe(e.to_string()))?;
        if n == 0 {
            return Err(RunnerError::Exited);
        }
        let reply: RunnerReply = serde_json::from_str(reply_line.trim_end())
            .map_err(|e| RunnerError::Protocol(format!("unparseable reply: {e}")))?;
        reply.validate(&req)?;
        Ok(reply)
    }

    pub fn syntax_check(&self, code: &str) -> Result<(), RunnerError> {
        self.call(RunnerOp::SyntaxCheck, Some(code), None, None)?
            .into_result()
            .map(|_| ())
    }

    /// Runs a full program in `workdir`; returns the produced deck path.
    pub fn execute(&self, code: &str, workdir: &Path) -> Result<PathBuf, RunnerError> {
        let payload = self
            .call(RunnerOp::Execute, Some(code), None, Some(workdir))?
            .into_result()?;
        payload_path(payload)
    }

    pub fn extract(&self, deck: &Path) -> Result<Vec<ShapeRecord>, RunnerError> {
        let payload = self
            .call(RunnerOp::Extract, None, Some(deck), None)?
            .into_result()?
            .ok_or_else(|| RunnerError::Protocol("extract reply has no payload".into()))?;
        let shapes = payload.get("shapes").cloned().unwrap_or(payload);
        serde_json::from_value(shapes).map_err(|e| RunnerError::Protocol(format!("bad inventory: {e}")))
    }

    pub fn render(&self, deck: &Path) -> Result<PathBuf, RunnerError> {
        let payload = self
            .call(RunnerOp::Render, None, Some(deck), None)?
            .into_result()?;
        payload_path(payload)
    }
}

fn payload_path(payload: Option<serde_json::Value>) -> Result<PathBuf, RunnerError> {
    payload
        .as_ref()
        .and_then(|p| p.get("path").or(Some(p)))
        .and_then(|p| p.as_str())
        .map(PathBuf::from)
        .ok_or_else(|| RunnerError::Protocol("reply payload has no path".into()))
}

impl Drop for RunnerClient {
    fn drop(&mut self) {
        if let Ok(s) = self.session.get_mut() {
            let _ = s.child.kill();
            let _ = s.child.wait();
        }
    }
}

/// Validates a piece of generated code. `Err` carries the text fed back to
/// the model on the next attempt.
pub trait Checker: Send + Sync {
    fn check(&self, code: &str, workdir: &Path) -> Result<(), String>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AcceptAll;

impl Checker for AcceptAll {
    fn check(&self, _code: &str, _workdir: &Path) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RejectAll(pub String);

impl Checker for RejectAll {
    fn check(&self, _code: &str, _workdir: &Path) -> Result<(), String> {
        Err(self.0.clone())
    }
}

/// Returns queued outcomes in order, then `fallback` forever.
#[derive(Debug)]
pub struct ScriptedChecker {
    queue: Mutex<VecDeque<Result<(), String>>>,
    fallback: Result<(), String>,
}

impl ScriptedChecker {
    pub fn new(outcomes: Vec<Result<(), String>>, fallback: Result<(), String>) -> Self {
        Self {
            queue: Mutex::new(outcomes.into()),
            fallback,
        }
    }

    pub fn fail_then_pass(failures: usize, message: &str) -> Self {
        Self::new(vec![Err(message.to_string()); failures], Ok(()))
    }
}

impl Checker for ScriptedChecker {
    fn check(&self, _code: &str, _workdir: &Path) -> Result<(), String> {
        self.queue
            .lock()
            .expect("checker queue poisoned")
            .pop_front()
            .unwrap_or_else(|| self.fallback.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckMode {
    /// Parse the fragment in the runner's harness.
    Syntax,
    /// Execute the program and require a deck.
    Execute,
}

pub struct RunnerChecker<'a> {
    client: &'a RunnerClient,
    mode: CheckMode,
}

impl<'a> RunnerChecker<'a> {
    pub fn new(client: &'a RunnerClient, mode: CheckMode) -> Self {
        Self { client, mode }
    }
}

fn describe_failure(e: RunnerError) -> String {
    match e {
        RunnerError::Failed {
            message,
            traceback: Some(tb),
            ..
        } => format!("{message}\n{tb}"),
        RunnerError::Failed { message, .. } => message,
        other => other.to_string(),
    }
}

impl Checker for RunnerChecker<'_> {
    fn check(&self, code: &str, workdir: &Path) -> Result<(), String> {
        match self.mode {
            CheckMode::Syntax => self.client.syntax_check(code).map_err(describe_failure),
            CheckMode::Execute => self.client.execute(code, workdir).map(|_| ()).map_err(describe_failure),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_checker_sequence() {
        let c = ScriptedChecker::fail_then_pass(1, "boom");
        let wd = Path::new(".");
        assert_eq!(c.check("", wd), Err("boom".into()));
        assert_eq!(c.check("", wd), Ok(()));
        assert_eq!(c.check("", wd), Ok(()));
    }

    #[test]
    fn reply_validation() {
        let req = RunnerRequest {
            id: 3,
            op: RunnerOp::Execute,
            code: Some("x".into()),
            path: None,
            workdir: None,
            timeout_secs: 2.0,
        };
        let good = RunnerReply {
            id: 3,
            op: RunnerOp::Execute,
            ok: true,
            error: None,
            payload: None,
        };
        assert!(good.validate(&req).is_ok());
        let wrong_id = RunnerReply { id: 4, ..good.clone() };
        assert!(wrong_id.validate(&req).is_err());
        let both = RunnerReply {
            error: Some(RunnerFailure {
                kind: "x".into(),
                message: "y".into(),
                traceback: None,
            }),
            ..good.clone()
        };
        assert!(both.validate(&req).is_err());
    }

    #[test]
    fn request_wire_format() {
        let req = RunnerRequest {
            id: 1,
            op: RunnerOp::SyntaxCheck,
            code: Some("x = 1".into()),
            path: None,
            workdir: None,
            timeout_secs: 5.0,
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"id":1,"op":"syntax_check","code":"x = 1","timeout_secs":5.0}"#
        );
    }
}
