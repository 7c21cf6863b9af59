//! Client side of the model-server protocol over a child process's stdio.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;

use crate::classifier::protocol::{self, HelloInfo};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub handshake_timeout: Duration,
    pub request_timeout: Duration,
}

impl Default for ServerOptions {
    fn default() -> Self {
        ServerOptions {
            handshake_timeout: Duration::from_secs(10),
            request_timeout: Duration::from_secs(120),
        }
    }
}

struct Wire {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    timeout: Duration,
}

/// One request in flight at a time; concurrent callers queue on the mutex,
/// so observed behavior is some sequential interleaving.
pub(crate) struct ServerConnection {
    wire: Mutex<Wire>,
}

impl Wire {
    fn send(&mut self, line: &str) -> Result<()> {
        writeln!(self.stdin, "{line}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::Server(format!("write to server failed: {e}")))
    }

    fn recv_line(&self, deadline: Instant, budget: Duration) -> Result<String> {
        let left = deadline.saturating_duration_since(Instant::now());
        match self.lines.recv_timeout(left) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::Server(format!("read from server failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(budget)),
            Err(RecvTimeoutError::Disconnected) => {
                Err(Error::Server("server closed its output".into()))
            }
        }
    }

    /// Sends a request and waits for the reply carrying the same id.
    fn round_trip(&mut self, build: impl FnOnce(u64) -> String) -> Result<Value> {
        let id = self.next_id;
        self.next_id += 1;
        self.send(&build(id))?;
        let budget = self.timeout;
        let deadline = Instant::now() + budget;
        loop {
            let line = self.recv_line(deadline, budget)?;
            if line.trim().is_empty() {
                continue;
            }
            let v: Value = serde_json::from_str(&line)
                .map_err(|e| Error::Server(format!("malformed reply {line:?}: {e}")))?;
            match protocol::reply_id(&v) {
                Some(rid) if rid == id => return Ok(v),
                // Stale reply to an earlier, abandoned request.
                Some(rid) if rid < id => continue,
                _ if v.get("error").is_some() => {
                    return Err(Error::Server(v["error"].to_string()));
                }
                _ => return Err(Error::Server(format!("unexpected reply {line:?}"))),
            }
        }
    }
}

impl ServerConnection {
    pub(crate) fn spawn(cmd: &str, opts: ServerOptions) -> Result<(Self, HelloInfo)> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Server(format!("failed to spawn `{cmd}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut wire = Wire {
            child,
            stdin,
            lines: rx,
            next_id: 1,
            timeout: opts.request_timeout,
        };
        let hello = (|| {
            wire.send(&protocol::hello_request())?;
            let deadline = Instant::now() + opts.handshake_timeout;
            let line = wire.recv_line(deadline, opts.handshake_timeout)?;
            protocol::parse_hello_reply(&line)
        })();
        match hello {
            Ok(info) => Ok((
                ServerConnection {
                    wire: Mutex::new(wire),
                },
                info,
            )),
            Err(e) => {
                let _ = wire.child.kill();
                let _ = wire.child.wait();
                Err(e)
            }
        }
    }

    pub(crate) fn set_timeout(&self, timeout: Duration) {
        self.wire.lock().expect("server mutex poisoned").timeout = timeout;
    }

    pub(crate) fn predict(
        &self,
        data: &[f32],
        rows: usize,
        shape: [usize; 3],
    ) -> Result<Vec<Vec<f64>>> {
        let mut wire = self.wire.lock().expect("server mutex poisoned");
        let full = [rows, shape[0], shape[1], shape[2]];
        let v = wire.round_trip(|id| protocol::predict_request(id, full, data))?;
        let probs = protocol::parse_predict_reply(&v)?;
        if probs.len() != rows {
            return Err(Error::Server(format!(
                "expected {rows} rows, server returned {}",
                probs.len()
            )));
        }
        Ok(probs)
    }

    pub(crate) fn gradient(&self, x: &[f32], label: usize, shape: [usize; 3]) -> Result<Vec<f32>> {
        let mut wire = self.wire.lock().expect("server mutex poisoned");
        let full = [1, shape[0], shape[1], shape[2]];
        let v = wire.round_trip(|id| protocol::gradient_request(id, label, full, x))?;
        protocol::parse_gradient_reply(&v, x.len())
    }
}

impl Drop for ServerConnection {
    fn drop(&mut self) {
        if let Ok(wire) = self.wire.get_mut() {
            let _ = wire.child.kill();
            let _ = wire.child.wait();
        }
    }
}
