use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::types::{Concurrency, Model, SequenceInput, Task};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// One request line: `{"id":<u64>,"input":{"kind":"tokens","data":[...]}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub input: SequenceInput,
}

/// One response line: `{"id":<u64>,"output":<f64>}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub output: f64,
}

struct Process {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
}

/// A model served by a child process speaking line-delimited JSON.
///
/// Requests carry strictly increasing ids; responses may arrive in any order
/// and are matched back by id. One batch is in flight at a time.
pub struct ExternalModel {
    command: String,
    process: Mutex<Process>,
    task: Task,
    timeout: Duration,
}

impl std::fmt::Debug for ExternalModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalModel")
            .field("command", &self.command)
            .field("task", &self.task)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl ExternalModel {
    /// Starts `command` (program and whitespace-separated arguments).
    pub fn spawn(command: &str, task: Task) -> Result<Self, ModelError> {
        let mut parts = command.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| ModelError::ProcessExit("empty model command".into()))?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(ModelError::Spawn)?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            command: command.to_string(),
            process: Mutex::new(Process {
                child,
                stdin,
                lines: rx,
                next_id: 0,
            }),
            task,
            timeout: DEFAULT_TIMEOUT,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    fn exited(proc: &mut Process) -> ModelError {
        match proc.child.try_wait() {
            Ok(Some(status)) => ModelError::ProcessExit(status.to_string()),
            _ => ModelError::ProcessExit("output stream closed".into()),
        }
    }
}

impl Model for ExternalModel {
    fn predict(&self, input: &SequenceInput) -> Result<f64, ModelError> {
        Ok(self.predict_batch(std::slice::from_ref(input))?[0])
    }

    fn predict_batch(&self, inputs: &[SequenceInput]) -> Result<Vec<f64>, ModelError> {
        let mut proc = self.process.lock().unwrap_or_else(|e| e.into_inner());
        let mut pending: HashMap<u64, usize> = HashMap::with_capacity(inputs.len());
        let mut payload = String::new();
        for (idx, input) in inputs.iter().enumerate() {
            let id = proc.next_id;
            proc.next_id += 1;
            let line = serde_json::to_string(&Request {
                id,
                input: input.clone(),
            })
            .map_err(|e| ModelError::MalformedResponse(e.to_string()))?;
            payload.push_str(&line);
            payload.push('\n');
            pending.insert(id, idx);
        }
        if let Err(e) = proc.stdin.write_all(payload.as_bytes()).and_then(|_| proc.stdin.flush()) {
            return Err(match e.kind() {
                std::io::ErrorKind::BrokenPipe => Self::exited(&mut proc),
                _ => ModelError::Io(e),
            });
        }

        let deadline = Instant::now() + self.timeout;
        let mut outputs = vec![f64::NAN; inputs.len()];
        while !pending.is_empty() {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let line = match proc.lines.recv_timeout(remaining) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(ModelError::Io(e)),
                Err(RecvTimeoutError::Timeout) => return Err(ModelError::Timeout(self.timeout)),
                Err(RecvTimeoutError::Disconnected) => return Err(Self::exited(&mut proc)),
            };
            if line.trim().is_empty() {
                continue;
            }
            let resp: Response = serde_json::from_str(&line)
                .map_err(|e| ModelError::MalformedResponse(format!("{e}: {line}")))?;
            let idx = pending
                .remove(&resp.id)
                .ok_or_else(|| ModelError::MalformedResponse(format!("unexpected id {}", resp.id)))?;
            if !resp.output.is_finite() {
                return Err(ModelError::MalformedResponse(format!(
                    "non-finite output for id {}",
                    resp.id
                )));
            }
            outputs[idx] = resp.output;
        }
        Ok(outputs)
    }

    fn task(&self) -> Task {
        self.task
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Serial
    }
}

impl Drop for ExternalModel {
    fn drop(&mut self) {
        let proc = self.process.get_mut().unwrap_or_else(|e| e.into_inner());
        let _ = proc.child.kill();
        let _ = proc.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_line_format() {
        let line = serde_json::to_string(&Request {
            id: 3,
            input: SequenceInput::tokens(["he", "never"]),
        })
        .unwrap();
        assert_eq!(line, r#"{"id":3,"input":{"kind":"tokens","data":["he","never"]}}"#);
        let resp: Response = serde_json::from_str(r#"{"id":3,"output":-0.5}"#).unwrap();
        assert_eq!(resp, Response { id: 3, output: -0.5 });
    }

    #[test]
    fn missing_program_fails_to_spawn() {
        let err = ExternalModel::spawn("/nonexistent/model-binary", Task::Regression).unwrap_err();
        assert!(matches!(err, ModelError::Spawn(_)));
    }
}
