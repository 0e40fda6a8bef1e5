use std::fmt;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::types::Image;

use super::protocol::{self, Response};
use super::{check_batch, Embedder};

const STDERR_TAIL: usize = 8 * 1024;
const SHUTDOWN_GRACE: Duration = Duration::from_secs(2);

/// Where the external model lives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExternalTarget {
    /// Shell command spawned with `sh -c`; the protocol runs over its stdio.
    Command(String),
    /// `host:port` of a server speaking the protocol over TCP.
    Tcp(String),
}

impl fmt::Display for ExternalTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExternalTarget::Command(cmd) => write!(f, "ext:cmd={cmd}"),
            ExternalTarget::Tcp(addr) => write!(f, "ext:tcp={addr}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExternalOptions {
    /// Images per request.
    pub batch: usize,
    /// Size of the connection pool (processes or sockets).
    pub connections: usize,
}

impl Default for ExternalOptions {
    fn default() -> Self {
        ExternalOptions {
            batch: 64,
            connections: 1,
        }
    }
}

enum Link {
    Process {
        child: Child,
        stdin: Option<BufWriter<ChildStdin>>,
        stdout: BufReader<ChildStdout>,
        stderr: Arc<Mutex<Vec<u8>>>,
    },
    Tcp {
        reader: BufReader<TcpStream>,
        writer: BufWriter<TcpStream>,
    },
}

impl Link {
    fn open(target: &ExternalTarget) -> Result<Link> {
        match target {
            ExternalTarget::Command(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::piped())
                    .spawn()
                    .map_err(|e| Error::Transport {
                        message: format!("cannot spawn `{cmd}`: {e}"),
                        diagnostics: String::new(),
                    })?;
                let stderr = Arc::new(Mutex::new(Vec::new()));
                let mut pipe = child.stderr.take().expect("stderr is piped");
                let sink = Arc::clone(&stderr);
                thread::spawn(move || {
                    let mut buf = [0u8; 4096];
                    while let Ok(n) = pipe.read(&mut buf) {
                        if n == 0 {
                            break;
                        }
                        let mut tail = sink.lock().unwrap();
                        tail.extend_from_slice(&buf[..n]);
                        if tail.len() > STDERR_TAIL {
                            let cut = tail.len() - STDERR_TAIL;
                            tail.drain(..cut);
                        }
                    }
                });
                Ok(Link::Process {
                    stdin: Some(BufWriter::new(child.stdin.take().expect("stdin is piped"))),
                    stdout: BufReader::new(child.stdout.take().expect("stdout is piped")),
                    child,
                    stderr,
                })
            }
            ExternalTarget::Tcp(addr) => {
                let stream = TcpStream::connect(addr.as_str()).map_err(|e| Error::Transport {
                    message: format!("cannot connect to {addr}: {e}"),
                    diagnostics: String::new(),
                })?;
                let _ = stream.set_nodelay(true);
                let reader = stream.try_clone().map_err(|e| Error::Transport {
                    message: format!("cannot clone socket to {addr}: {e}"),
                    diagnostics: String::new(),
                })?;
                Ok(Link::Tcp {
                    reader: BufReader::new(reader),
                    writer: BufWriter::new(stream),
                })
            }
        }
    }

    fn diagnostics(&mut self) -> String {
        match self {
            Link::Process { child, stderr, .. } => {
                // give the reader thread a moment to drain a dying process
                thread::sleep(Duration::from_millis(50));
                let mut out = String::from_utf8_lossy(&stderr.lock().unwrap()).into_owned();
                if let Ok(Some(status)) = child.try_wait() {
                    out.push_str(&format!("\nprocess exited with {status}"));
                }
                out.trim().to_string()
            }
            Link::Tcp { .. } => String::new(),
        }
    }

    fn round_trip(&mut self, batch: &[Image]) -> Result<Response> {
        let (reader, writer): (&mut dyn Read, &mut dyn Write) = match self {
            Link::Process { stdin, stdout, .. } => {
                (stdout, stdin.as_mut().expect("open until drop"))
            }
            Link::Tcp { reader, writer } => (reader, writer),
        };
        protocol::write_request(writer, batch).map_err(|e| Error::Transport {
            message: format!("cannot send request: {e}"),
            diagnostics: String::new(),
        })?;
        protocol::read_response(reader)
    }
}

impl Drop for Link {
    fn drop(&mut self) {
        if let Link::Process { child, stdin, .. } = self {
            drop(stdin.take());
            let start = Instant::now();
            loop {
                match child.try_wait() {
                    Ok(Some(_)) => return,
                    Ok(None) if start.elapsed() < SHUTDOWN_GRACE => {
                        thread::sleep(Duration::from_millis(10))
                    }
                    _ => break,
                }
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Adapter for a model running outside this process.
///
/// Connections are opened lazily and pooled; each is used by one caller at a
/// time. A connection that fails at the transport level is discarded and
/// reopened on next use, while error frames sent by the model leave it open.
pub struct ExternalEmbedder {
    target: ExternalTarget,
    options: ExternalOptions,
    pool: Vec<Mutex<Option<Link>>>,
    next: AtomicUsize,
}

impl ExternalEmbedder {
    pub fn new(target: ExternalTarget, options: ExternalOptions) -> Result<Self> {
        if options.batch == 0 || options.batch > protocol::MAX_BATCH {
            return Err(Error::config(
                "batch",
                format!(
                    "must lie in [1, {}], got {}",
                    protocol::MAX_BATCH,
                    options.batch
                ),
            ));
        }
        if options.connections == 0 {
            return Err(Error::config("connections", "must be at least 1"));
        }
        let pool = (0..options.connections).map(|_| Mutex::new(None)).collect();
        Ok(ExternalEmbedder {
            target,
            options,
            pool,
            next: AtomicUsize::new(0),
        })
    }

    pub fn target(&self) -> &ExternalTarget {
        &self.target
    }

    fn request(&self, batch: &[Image]) -> Result<Vec<Vec<f64>>> {
        let slot = self
            .pool
            .iter()
            .find_map(|m| m.try_lock().ok())
            .unwrap_or_else(|| {
                let i = self.next.fetch_add(1, Ordering::Relaxed) % self.pool.len();
                self.pool[i].lock().unwrap_or_else(|p| p.into_inner())
            });
        let mut slot = slot;
        if slot.is_none() {
            *slot = Some(Link::open(&self.target)?);
        }
        let link = slot.as_mut().expect("just opened");
        match link.round_trip(batch) {
            Ok(Response::Features { rows, .. }) if rows.len() == batch.len() => Ok(rows
                .into_iter()
                .map(|r| r.into_iter().map(f64::from).collect())
                .collect()),
            Ok(Response::Features { rows, .. }) => {
                *slot = None;
                Err(Error::Protocol(format!(
                    "model answered {} embeddings for {} images",
                    rows.len(),
                    batch.len()
                )))
            }
            Ok(Response::Error(msg)) => Err(Error::Remote(msg)),
            Err(e) => {
                let diagnostics = link.diagnostics();
                *slot = None;
                Err(Error::Transport {
                    message: format!("{} failed: {e}", self.target),
                    diagnostics,
                })
            }
        }
    }
}

impl Embedder for ExternalEmbedder {
    fn spec(&self) -> String {
        self.target.to_string()
    }

    fn features(&self, batch: &[Image]) -> Result<Vec<Vec<f64>>> {
        check_batch(batch)?;
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(self.options.batch) {
            out.extend(self.request(chunk)?);
        }
        Ok(out)
    }

    fn preferred_batch(&self) -> usize {
        self.options.batch
    }
}
