//! TCP client for line-delimited JSON backends.
//!
//! Each pooled connection carries one request at a time. At most
//! `max_connections` requests are in flight; further callers wait.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use super::wire::{WireRequest, WireResponse};
use super::{Backend, EmbedItem, GenerateRequest, GenerateResponse, ScoreRequest, ScoreResponse};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub max_connections: usize,
    pub timeout: Duration,
    /// Extra attempts after a failed connect. A request is resent only when
    /// its pooled connection turns out to be closed; all ops are read-only.
    pub connect_retries: usize,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            max_connections: 4,
            timeout: Duration::from_secs(60),
            connect_retries: 2,
        }
    }
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

pub struct LineJsonClient {
    addr: String,
    opts: ClientOptions,
    idle: Mutex<Vec<Connection>>,
    in_flight: Mutex<usize>,
    slot_freed: Condvar,
    next_id: AtomicU64,
}

impl std::fmt::Debug for LineJsonClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LineJsonClient").field("addr", &self.addr).finish()
    }
}

impl LineJsonClient {
    /// `addr` is `host:port`, optionally prefixed with `tcp://`.
    pub fn new(addr: &str, opts: ClientOptions) -> Self {
        let addr = addr.strip_prefix("tcp://").unwrap_or(addr).to_string();
        Self {
            addr,
            opts: ClientOptions {
                max_connections: opts.max_connections.max(1),
                ..opts
            },
            idle: Mutex::new(Vec::new()),
            in_flight: Mutex::new(0),
            slot_freed: Condvar::new(),
            next_id: AtomicU64::new(1),
        }
    }

    fn unavailable(&self, started: Instant, reason: impl Into<String>) -> Error {
        Error::BackendUnavailable {
            endpoint: format!("tcp://{}", self.addr),
            elapsed: started.elapsed(),
            reason: reason.into(),
        }
    }

    fn connect(&self, started: Instant) -> Result<Connection> {
        let mut last = String::new();
        for attempt in 0..=self.opts.connect_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(50 * attempt as u64));
            }
            let addrs = match self.addr.to_socket_addrs() {
                Ok(a) => a.collect::<Vec<_>>(),
                Err(e) => return Err(self.unavailable(started, format!("resolve: {e}"))),
            };
            for addr in addrs {
                match TcpStream::connect_timeout(&addr, self.opts.timeout) {
                    Ok(stream) => {
                        let setup = stream
                            .set_read_timeout(Some(self.opts.timeout))
                            .and_then(|_| stream.set_write_timeout(Some(self.opts.timeout)))
                            .and_then(|_| stream.set_nodelay(true))
                            .and_then(|_| stream.try_clone());
                        match setup {
                            Ok(writer) => {
                                return Ok(Connection {
                                    reader: BufReader::new(stream),
                                    writer,
                                })
                            }
                            Err(e) => last = e.to_string(),
                        }
                    }
                    Err(e) => last = e.to_string(),
                }
            }
        }
        Err(self.unavailable(started, format!("connect: {last}")))
    }

    fn acquire_slot(&self) {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.opts.max_connections {
            n = self.slot_freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
    }

    fn release_slot(&self) {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.slot_freed.notify_one();
    }

    fn fresh_id(&self) -> String {
        self.next_id.fetch_add(1, Ordering::Relaxed).to_string()
    }

    /// Sends one request and returns its successful response.
    pub fn call(&self, req: &WireRequest) -> Result<WireResponse> {
        self.acquire_slot();
        let out = self.call_in_slot(req);
        self.release_slot();
        out
    }

    fn call_in_slot(&self, req: &WireRequest) -> Result<WireResponse> {
        let started = Instant::now();
        let mut line = serde_json::to_string(req).expect("wire request serializes");
        line.push('\n');

        let pooled = self.idle.lock().unwrap_or_else(|e| e.into_inner()).pop();
        if let Some(mut c) = pooled {
            // A pooled connection may have been closed by the backend while
            // idle. That shows up as a reset or an immediate EOF and is
            // retried below on a fresh connection; anything else is final.
            match exchange(&mut c, &line) {
                Ok(Some(reply)) => return self.finish(req, c, &reply),
                Ok(None) => {}
                Err(e) if is_stale(&e) => {}
                Err(e) => return Err(self.unavailable(started, format!("receive: {e}"))),
            }
        }
        let mut conn = self.connect(started)?;
        let reply = match exchange(&mut conn, &line) {
            Ok(Some(reply)) => reply,
            Ok(None) => return Err(self.unavailable(started, "connection closed by backend")),
            Err(e) => return Err(self.unavailable(started, format!("exchange: {e}"))),
        };
        self.finish(req, conn, &reply)
    }

    fn finish(&self, req: &WireRequest, conn: Connection, reply: &str) -> Result<WireResponse> {
        let resp: WireResponse = serde_json::from_str(reply.trim_end())
            .map_err(|e| Error::ProtocolViolation(format!("unparseable response: {e}")))?;
        if resp.id != req.id() {
            return Err(Error::ProtocolViolation(format!(
                "response id {:?} does not match request id {:?}",
                resp.id,
                req.id()
            )));
        }
        self.idle.lock().unwrap_or_else(|e| e.into_inner()).push(conn);

        if !resp.ok {
            let err = resp
                .error
                .ok_or_else(|| Error::ProtocolViolation("ok=false response without error object".into()))?;
            return Err(Error::BackendError {
                code: err.code,
                message: err.message,
            });
        }
        Ok(resp)
    }
}

/// Writes one line and reads one line. `Ok(None)` means the peer closed the
/// connection before replying.
fn exchange(conn: &mut Connection, line: &str) -> std::io::Result<Option<String>> {
    conn.writer.write_all(line.as_bytes())?;
    conn.writer.flush()?;
    let mut reply = String::new();
    match conn.reader.read_line(&mut reply)? {
        0 => Ok(None),
        _ => Ok(Some(reply)),
    }
}

fn is_stale(e: &std::io::Error) -> bool {
    use std::io::ErrorKind::*;
    matches!(
        e.kind(),
        BrokenPipe | ConnectionReset | ConnectionAborted | NotConnected
    )
}

impl Backend for LineJsonClient {
    fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse> {
        let resp = self.call(&WireRequest::Score {
            id: self.fresh_id(),
            prompt: req.prompt.clone(),
            images: req.images.clone(),
            candidates: req.candidates.clone(),
        })?;
        let results = resp
            .results
            .ok_or_else(|| Error::ProtocolViolation("score response without results".into()))?;
        Ok(ScoreResponse { results })
    }

    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse> {
        let resp = self.call(&WireRequest::Generate {
            id: self.fresh_id(),
            prompt: req.prompt.clone(),
            images: req.images.clone(),
            max_new_tokens: req.max_new_tokens,
            length_penalty: req.length_penalty,
        })?;
        let text = resp
            .text
            .ok_or_else(|| Error::ProtocolViolation("generate response without text".into()))?;
        Ok(GenerateResponse { text })
    }

    fn embed(&self, items: &[EmbedItem]) -> Result<Vec<Vec<f32>>> {
        let resp = self.call(&WireRequest::Embed {
            id: self.fresh_id(),
            items: items.to_vec(),
        })?;
        resp.vectors
            .ok_or_else(|| Error::ProtocolViolation("embed response without vectors".into()))
    }

    fn fingerprint(&self) -> String {
        format!("tcp://{}", self.addr)
    }
}
