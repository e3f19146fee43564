//! Protocol conformance checks runnable against any backend.
//!
//! Each fixture line holds a raw request and the expected outcome (`"ok"` or
//! an error code). Requests are sent twice so that determinism is checked
//! along with the schema.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::Value;

use super::wire::{WireResponse, ERROR_CODES};
use crate::error::{Error, Result};

/// Fixtures shipped with the crate.
pub const FIXTURES: &str = include_str!("../../conformance/requests.jsonl");

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub name: String,
    pub expect: String,
    pub request: Value,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

pub fn parse_fixtures(text: &str) -> Result<Vec<Fixture>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::ConfigInvalid(format!("fixture line {}: {e}", i + 1))))
        .collect()
}

/// Runs every fixture through `exchange`, which sends one request line and
/// returns the response line.
pub fn run<F>(fixtures: &[Fixture], mut exchange: F) -> Vec<Outcome>
where
    F: FnMut(&str) -> Result<String>,
{
    fixtures
        .iter()
        .map(|f| {
            let line = f.request.to_string();
            let result = exchange(&line)
                .and_then(|first| exchange(&line).map(|second| (first, second)))
                .map_err(|e| e.to_string())
                .and_then(|(first, second)| {
                    check(f, &first)?;
                    if first != second {
                        return Err("repeated request gave a different response".into());
                    }
                    Ok(())
                });
            Outcome {
                name: f.name.clone(),
                passed: result.is_ok(),
                detail: result.err().unwrap_or_default(),
            }
        })
        .collect()
}

/// Line exchange over one TCP connection, for use with [`run`].
pub fn tcp_exchange(addr: &str, timeout: Duration) -> Result<impl FnMut(&str) -> Result<String>> {
    let addr = addr.strip_prefix("tcp://").unwrap_or(addr).to_string();
    let started = Instant::now();
    let unavailable = |reason: String| Error::BackendUnavailable {
        endpoint: format!("tcp://{addr}"),
        elapsed: started.elapsed(),
        reason,
    };
    let stream = TcpStream::connect(&addr).map_err(|e| unavailable(format!("connect: {e}")))?;
    stream
        .set_read_timeout(Some(timeout))
        .map_err(|e| unavailable(e.to_string()))?;
    let mut writer = stream.try_clone().map_err(|e| unavailable(e.to_string()))?;
    let mut reader = BufReader::new(stream);
    Ok(move |line: &str| {
        writer
            .write_all(format!("{line}\n").as_bytes())
            .and_then(|_| writer.flush())
            .map_err(|e| Error::ProtocolViolation(format!("send: {e}")))?;
        let mut reply = String::new();
        match reader.read_line(&mut reply) {
            Ok(0) => Err(Error::ProtocolViolation("connection closed".into())),
            Ok(_) => Ok(reply.trim_end().to_string()),
            Err(e) => Err(Error::ProtocolViolation(format!("receive: {e}"))),
        }
    })
}

fn check(f: &Fixture, line: &str) -> std::result::Result<(), String> {
    let resp: WireResponse = serde_json::from_str(line).map_err(|e| format!("unparseable response: {e}"))?;
    let req = &f.request;
    let want_id = req.get("id").and_then(Value::as_str).unwrap_or_default();
    if resp.id != want_id {
        return Err(format!("id {:?}, expected {want_id:?}", resp.id));
    }
    if f.expect != "ok" {
        let err = resp
            .error
            .as_ref()
            .filter(|_| !resp.ok)
            .ok_or("expected an error response")?;
        if !ERROR_CODES.contains(&err.code.as_str()) {
            return Err(format!("unknown error code {:?}", err.code));
        }
        if err.code != f.expect {
            return Err(format!("error code {:?}, expected {:?}", err.code, f.expect));
        }
        return Ok(());
    }
    if !resp.ok {
        return Err(format!("error response: {:?}", resp.error));
    }
    match req.get("op").and_then(Value::as_str) {
        Some("score") => check_score(req, &resp),
        Some("generate") => check_generate(req, &resp),
        Some("embed") => check_embed(req, &resp),
        other => Err(format!("fixture has unexpected op {other:?}")),
    }
}

fn check_score(req: &Value, resp: &WireResponse) -> std::result::Result<(), String> {
    let results = resp.results.as_ref().ok_or("missing results")?;
    let wanted: HashSet<&str> = req["candidates"]
        .as_array()
        .map(|a| a.iter().filter_map(Value::as_str).collect())
        .unwrap_or_default();
    let mut seen = HashSet::new();
    for r in results {
        if !wanted.contains(r.candidate.as_str()) || !seen.insert(r.candidate.as_str()) {
            return Err(format!("unexpected or repeated candidate {:?}", r.candidate));
        }
        if r.tokens.is_empty() || r.tokens.len() != r.logprobs.len() {
            return Err(format!("{:?}: tokens and logprobs misaligned", r.candidate));
        }
        if r.logprobs.iter().any(|lp| !lp.is_finite() || *lp > 0.0) {
            return Err(format!("{:?}: invalid logprob", r.candidate));
        }
    }
    if seen.len() != wanted.len() {
        return Err("missing candidates".into());
    }
    Ok(())
}

fn check_generate(req: &Value, resp: &WireResponse) -> std::result::Result<(), String> {
    let text = resp.text.as_ref().ok_or("missing text")?;
    let budget = req["max_new_tokens"].as_u64().unwrap_or(0) as usize;
    let words = text.split_whitespace().count();
    if words > budget {
        return Err(format!("{words} words for a budget of {budget}"));
    }
    Ok(())
}

fn check_embed(req: &Value, resp: &WireResponse) -> std::result::Result<(), String> {
    let vectors = resp.vectors.as_ref().ok_or("missing vectors")?;
    let items = req["items"].as_array().map_or(0, Vec::len);
    if vectors.len() != items {
        return Err(format!("{} vectors for {items} items", vectors.len()));
    }
    let dims = vectors.first().map_or(0, Vec::len);
    for v in vectors {
        if v.len() != dims || dims == 0 {
            return Err("ragged or empty vectors".into());
        }
        let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-3 {
            return Err(format!("vector norm {norm}"));
        }
    }
    Ok(())
}
